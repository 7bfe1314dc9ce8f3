//! Content-addressed storage: identical bytes share one blob, every read is
//! re-hashed, and a flipped byte on disk is reported instead of returned.
//!
//! cargo run -p analogy-core --example blob_store

use analogy_core::store::StoreError;
use analogy_core::{FsStore, Store};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = tempfile::tempdir()?;
    let store = FsStore::open(data.path())?;

    let a = store.put_blob(b"two water tanks", "text/plain")?;
    println!("stored {} bytes as {}", a.byte_length, a.hash);
    println!("  at {}", store.blob_path(&a.hash).display());
    let before = store.blob_bytes_on_disk()?;
    let again = store.put_blob(b"two water tanks", "text/plain")?;
    println!(
        "second put: same ref = {}, bytes on disk {} -> {}",
        again == a,
        before,
        store.blob_bytes_on_disk()?
    );

    let path = store.blob_path(&a.hash);
    let mut bytes = std::fs::read(&path)?;
    bytes[0] ^= 0x01;
    std::fs::write(&path, bytes)?;
    match store.get_blob(&a) {
        Err(StoreError::Integrity { detail, .. }) => println!("tampering detected: {detail}"),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
