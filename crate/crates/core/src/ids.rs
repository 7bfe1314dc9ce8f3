//! Opaque identifiers.
//!
//! Session and job ids are random 128-bit values rendered as 32 lowercase hex
//! characters. Analogy ids use the same rendering but are derived from content,
//! so a rerun under mock backends reproduces them exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed id `{0}`: expected 32 lowercase hex characters")]
pub struct MalformedId(pub String);

fn is_id_text(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

macro_rules! hex_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn random() -> Self {
                Self(format!("{:032x}", rand::random::<u128>()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl FromStr for $name {
            type Err = MalformedId;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                if is_id_text(s) {
                    Ok(Self(s.to_string()))
                } else {
                    Err(MalformedId(s.to_string()))
                }
            }
        }

        impl TryFrom<String> for $name {
            type Error = MalformedId;

            fn try_from(s: String) -> Result<Self, Self::Error> {
                s.parse()
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }
    };
}

hex_id!(
    /// Identifies a [`crate::session::PipelineSession`].
    SessionId
);
hex_id!(
    /// Identifies a [`crate::jobs::GenerationJob`].
    JobId
);
hex_id!(
    /// Identifies one analogy within a generated triple.
    AnalogyId
);

impl AnalogyId {
    /// Content-derived id: the first 128 bits of SHA-256 over the concept name
    /// and the case-folded title.
    pub fn derive(concept_name: &str, title: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"analogy\0");
        h.update(concept_name.trim().to_lowercase().as_bytes());
        h.update(b"\0");
        h.update(title.trim().to_lowercase().as_bytes());
        let digest = h.finalize();
        Self(hex::encode(&digest[..16]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_ids_are_lowercase_hex_and_distinct() {
        let a = SessionId::random();
        let b = SessionId::random();
        assert_ne!(a, b);
        assert!(is_id_text(a.as_str()));
    }

    #[test]
    fn rejects_malformed() {
        assert!("ABCDEF".parse::<JobId>().is_err());
        assert!("0123456789abcdef0123456789ABCDEF".parse::<JobId>().is_err());
        assert!("0123456789abcdef0123456789abcdef".parse::<JobId>().is_ok());
    }

    #[test]
    fn derived_analogy_ids_are_stable_and_case_insensitive() {
        let a = AnalogyId::derive("Newton's First Law", "Skating on Ice");
        let b = AnalogyId::derive("Newton's First Law", "skating on ice");
        assert_eq!(a, b);
        assert_ne!(a, AnalogyId::derive("Newton's First Law", "Pushing a stalled car"));
    }
}
