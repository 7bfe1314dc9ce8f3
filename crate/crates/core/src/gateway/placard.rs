//! Deterministic placard images for the mock image backend.
//!
//! A placard is a PNG with a background colour derived from the prompt hash,
//! the prompt and seed drawn as text, and a reserved trailing block after the
//! PNG `IEND` chunk carrying sidecar metadata:
//!
//! ```text
//! <png bytes> <sidecar json> <json length: u32 LE> "PLACARD1"
//! ```
//!
//! PNG decoders stop at `IEND`, so the file stays a valid image.

use std::io::Cursor;

use font8x8::UnicodeFonts;
use image::{ImageFormat, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SIDECAR_MAGIC: &[u8; 8] = b"PLACARD1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub prompt: String,
    pub seed: Option<u64>,
    /// Components the placard claims to depict.
    pub components: Vec<String>,
}

/// Appends a sidecar block to already-encoded image bytes.
pub fn append_sidecar(mut bytes: Vec<u8>, sidecar: &Sidecar) -> Vec<u8> {
    let json = serde_json::to_vec(sidecar).expect("sidecar serializes");
    let len = u32::try_from(json.len()).expect("sidecar under 4 GiB");
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&len.to_le_bytes());
    bytes.extend_from_slice(SIDECAR_MAGIC);
    bytes
}

pub fn read_sidecar(bytes: &[u8]) -> Option<Sidecar> {
    let tail = bytes.len().checked_sub(12)?;
    if &bytes[tail + 4..] != SIDECAR_MAGIC {
        return None;
    }
    let len = u32::from_le_bytes(bytes[tail..tail + 4].try_into().ok()?) as usize;
    let start = tail.checked_sub(len)?;
    serde_json::from_slice(&bytes[start..tail]).ok()
}

fn digest(prompt: &str, seed: Option<u64>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.unwrap_or(0).to_le_bytes());
    h.update([seed.is_some() as u8]);
    h.update(prompt.as_bytes());
    h.finalize().into()
}

/// Draws `text` with the 8x8 bitmap font at integer `scale`, wrapping at the
/// right margin. Returns the y coordinate below the last line.
pub fn draw_text(
    img: &mut RgbaImage,
    text: &str,
    x0: u32,
    y0: u32,
    max_width: u32,
    scale: u32,
    color: Rgba<u8>,
) -> u32 {
    let cell = 8 * scale;
    let per_line = (max_width / cell).max(1) as usize;
    let mut y = y0;
    for line in wrap(text, per_line) {
        if y + cell > img.height() {
            break;
        }
        for (i, ch) in line.chars().enumerate() {
            let glyph = font8x8::BASIC_FONTS
                .get(ch)
                .or_else(|| font8x8::BASIC_FONTS.get('?'))
                .unwrap_or([0; 8]);
            let gx = x0 + i as u32 * cell;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8u32 {
                    if bits & (1 << col) == 0 {
                        continue;
                    }
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let px = gx + col * scale + dx;
                            let py = y + row as u32 * scale + dy;
                            if px < img.width() && py < img.height() {
                                img.put_pixel(px, py, color);
                            }
                        }
                    }
                }
            }
        }
        y += cell + scale * 2;
    }
    y
}

/// Greedy word wrap at `width` characters; overlong words are split.
pub fn wrap(text: &str, width: usize) -> Vec<String> {
    let mut lines = Vec::new();
    let mut line = String::new();
    for word in text.split_whitespace() {
        let mut word: Vec<char> = word.chars().collect();
        while word.len() > width {
            if !line.is_empty() {
                lines.push(std::mem::take(&mut line));
            }
            lines.push(word.drain(..width).collect());
        }
        let word: String = word.into_iter().collect();
        if word.is_empty() {
            continue;
        }
        let needed = if line.is_empty() { word.chars().count() } else { line.chars().count() + 1 + word.chars().count() };
        if needed > width && !line.is_empty() {
            lines.push(std::mem::take(&mut line));
        }
        if !line.is_empty() {
            line.push(' ');
        }
        line.push_str(&word);
    }
    if !line.is_empty() {
        lines.push(line);
    }
    lines
}

pub fn encode_png(img: &RgbaImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out.into_inner()
}

/// Renders a placard for `prompt` and appends a sidecar naming `components`.
pub fn render(prompt: &str, seed: Option<u64>, width: u32, height: u32, components: Vec<String>) -> Vec<u8> {
    let d = digest(prompt, seed);
    // Pastel background keeps dark text legible.
    let bg = Rgba([128 + d[0] / 2, 128 + d[1] / 2, 128 + d[2] / 2, 255]);
    let ink = Rgba([24, 24, 32, 255]);
    let mut img = RgbaImage::from_pixel(width, height, bg);
    let border = Rgba([d[3] / 2, d[4] / 2, d[5] / 2, 255]);
    for x in 0..width {
        for t in 0..6 {
            img.put_pixel(x, t, border);
            img.put_pixel(x, height - 1 - t, border);
        }
    }
    for y in 0..height {
        for t in 0..6 {
            img.put_pixel(t, y, border);
            img.put_pixel(width - 1 - t, y, border);
        }
    }
    let scale = (width / 512).max(1) * 2;
    let mut y = draw_text(&mut img, prompt, 20, 20, width - 40, scale, ink);
    let seed_line = match seed {
        Some(s) => format!("seed {s}"),
        None => "unseeded".to_string(),
    };
    y = draw_text(&mut img, &seed_line, 20, y + 8, width - 40, scale, ink);
    if !components.is_empty() {
        let list = format!("shows: {}", components.join(", "));
        draw_text(&mut img, &list, 20, y + 8, width - 40, scale, ink);
    }
    let sidecar = Sidecar {
        prompt: prompt.to_string(),
        seed,
        components,
    };
    append_sidecar(encode_png(&img), &sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placard_is_valid_png_with_readable_sidecar() {
        let bytes = render("two water tanks", Some(3), 512, 512, vec!["two water tanks".into()]);
        let img = image::load_from_memory(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (512, 512));
        let sc = read_sidecar(&bytes).unwrap();
        assert_eq!(sc.components, vec!["two water tanks".to_string()]);
        assert_eq!(sc.seed, Some(3));
    }

    #[test]
    fn placard_is_deterministic_and_seed_sensitive() {
        let a = render("tank", Some(1), 512, 512, vec![]);
        assert_eq!(a, render("tank", Some(1), 512, 512, vec![]));
        assert_ne!(a, render("tank", Some(2), 512, 512, vec![]));
    }

    #[test]
    fn no_sidecar_on_plain_bytes() {
        assert_eq!(read_sidecar(b"short"), None);
        assert_eq!(read_sidecar(&[0u8; 64]), None);
    }

    #[test]
    fn wrap_respects_width() {
        let lines = wrap("alpha beta gamma delta epsilonepsilon", 6);
        assert!(lines.iter().all(|l| l.chars().count() <= 6), "{lines:?}");
        assert_eq!(lines.join(" ").replace(' ', ""), "alphabetagammadeltaepsilonepsilon");
    }
}
