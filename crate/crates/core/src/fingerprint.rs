//! SHA-256 fingerprints that tie artifacts to the config and data that
//! produced them.

use sha2::{Digest, Sha256};

/// Incremental fingerprint over typed values. Floats are hashed by bit
/// pattern, so any change at all changes the digest.
#[derive(Default)]
pub struct Fingerprint(Sha256);

impl Fingerprint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, v: &[f64]) -> &mut Self {
        self.0.update((v.len() as u64).to_le_bytes());
        for x in v {
            self.0.update(x.to_bits().to_le_bytes());
        }
        self
    }

    /// Lower-case hex digest, truncated to 16 bytes.
    pub fn hex(&self) -> String {
        let d = self.0.clone().finalize();
        d[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn of_bytes(b: &[u8]) -> String {
    Fingerprint::new().bytes(b).hex()
}
