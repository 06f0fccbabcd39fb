//! The two system prompts (extractor and suggester), bundled into the
//! binary and optionally overridden from an assets directory. Either way
//! the text must match the recorded SHA-256 checksums byte for byte.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const EXTRACTOR_FILE: &str = "extractor_prompt.txt";
pub const SUGGESTER_FILE: &str = "suggester_prompt.txt";

pub const EXTRACTOR_SHA256: &str =
    "9a8f3c8e5805aad0555d8f056aef884dd1cc3bca436fa505bb8a798cf84d3b13";
pub const SUGGESTER_SHA256: &str =
    "dc27b45f2c13078d00b1b760c993c3fb56605f7a0313bf14e6ce2399b5e99429";

const BUNDLED_EXTRACTOR: &str = include_str!("../assets/extractor_prompt.txt");
const BUNDLED_SUGGESTER: &str = include_str!("../assets/suggester_prompt.txt");

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("missing prompt asset {path}: {source}")]
    Missing {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt asset {file} has checksum {actual}, expected {expected}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAssets {
    extractor: String,
    suggester: String,
}

impl PromptAssets {
    pub fn bundled() -> Self {
        Self {
            extractor: BUNDLED_EXTRACTOR.to_string(),
            suggester: BUNDLED_SUGGESTER.to_string(),
        }
    }

    /// Loads both prompt files from `dir` and verifies their checksums.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, AssetError> {
        let dir = dir.as_ref();
        let read = |file: &str, expected: &str| -> Result<String, AssetError> {
            let path = dir.join(file);
            let text = fs::read_to_string(&path).map_err(|source| AssetError::Missing {
                path: path.display().to_string(),
                source,
            })?;
            verify(file, &text, expected)?;
            Ok(text)
        };
        Ok(Self {
            extractor: read(EXTRACTOR_FILE, EXTRACTOR_SHA256)?,
            suggester: read(SUGGESTER_FILE, SUGGESTER_SHA256)?,
        })
    }

    /// Checks the in-memory texts against the recorded checksums.
    pub fn verify(&self) -> Result<(), AssetError> {
        verify(EXTRACTOR_FILE, &self.extractor, EXTRACTOR_SHA256)?;
        verify(SUGGESTER_FILE, &self.suggester, SUGGESTER_SHA256)
    }

    pub fn extractor(&self) -> &str {
        &self.extractor
    }

    pub fn suggester(&self) -> &str {
        &self.suggester
    }
}

impl Default for PromptAssets {
    fn default() -> Self {
        Self::bundled()
    }
}

fn verify(file: &str, text: &str, expected: &str) -> Result<(), AssetError> {
    let actual = sha256_hex(text);
    if actual != expected {
        return Err(AssetError::ChecksumMismatch {
            file: file.to_string(),
            expected: expected.to_string(),
            actual,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_assets_match_checksums() {
        PromptAssets::bundled().verify().unwrap();
    }

    #[test]
    fn checksums_file_agrees_with_constants() {
        let sums = include_str!("../assets/SHA256SUMS");
        assert!(sums.contains(&format!("{EXTRACTOR_SHA256}  {EXTRACTOR_FILE}")));
        assert!(sums.contains(&format!("{SUGGESTER_SHA256}  {SUGGESTER_FILE}")));
    }

    #[test]
    fn load_dir_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(EXTRACTOR_FILE), BUNDLED_EXTRACTOR).unwrap();
        std::fs::write(dir.path().join(SUGGESTER_FILE), BUNDLED_SUGGESTER).unwrap();
        assert_eq!(
            PromptAssets::load_dir(dir.path()).unwrap(),
            PromptAssets::bundled()
        );

        std::fs::write(
            dir.path().join(SUGGESTER_FILE),
            format!("{BUNDLED_SUGGESTER} "),
        )
        .unwrap();
        assert!(matches!(
            PromptAssets::load_dir(dir.path()),
            Err(AssetError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn load_dir_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            PromptAssets::load_dir(dir.path()),
            Err(AssetError::Missing { .. })
        ));
    }
}
