//! Content hashing shared by the vector and label stores.

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

/// Lowercase hex SHA-256 of the NFC-normalized UTF-8 bytes of `text`.
pub fn content_hash(text: &str) -> String {
    let normalized: String = text.nfc().collect();
    hex::encode(Sha256::digest(normalized.as_bytes()))
}

/// SHA-256 of raw bytes, used for report manifests.
pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_string_hash() {
        assert_eq!(
            content_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn nfc_and_nfd_forms_share_a_key() {
        // "é" precomposed vs. "e" + combining acute
        assert_eq!(content_hash("caf\u{e9}"), content_hash("cafe\u{301}"));
    }
}
