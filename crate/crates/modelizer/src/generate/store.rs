//! Uniqueness hashing and the persistent hash store.

use hmac::{Hmac, Mac};
use sha2::Sha384;
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Fixed key for the uniqueness digest. Any 32 bytes work; this one is
/// baked in so stores are comparable across machines. Set the
/// `MODELIZER_HMAC_KEY` environment variable to use a disjoint store.
const DEFAULT_HMAC_KEY: &[u8; 32] = b"modelizer.hashstore.default.key!";

/// HMAC-SHA-384 digest of a sample, hex-encoded (96 characters).
pub fn sample_digest(text: &str) -> String {
    let key = std::env::var("MODELIZER_HMAC_KEY")
        .map(String::into_bytes)
        .unwrap_or_else(|_| DEFAULT_HMAC_KEY.to_vec());
    let mut mac = Hmac::<Sha384>::new_from_slice(&key).expect("HMAC accepts any key length");
    mac.update(text.as_bytes());
    let out = mac.finalize().into_bytes();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// A set of sample digests with optional file persistence. Insertion is
/// an atomic insert-if-absent, the single serialization point between
/// generation workers.
#[derive(Debug)]
pub struct HashStore {
    digests: Mutex<BTreeSet<String>>,
    path: Option<PathBuf>,
}

impl HashStore {
    pub fn in_memory() -> Self {
        HashStore {
            digests: Mutex::new(BTreeSet::new()),
            path: None,
        }
    }

    /// Opens a store backed by a sorted digest-per-line file, creating it
    /// on first save if absent.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut digests = BTreeSet::new();
        if path.exists() {
            let f = BufReader::new(std::fs::File::open(path)?);
            for line in f.lines() {
                let line = line?;
                if !line.is_empty() {
                    digests.insert(line);
                }
            }
        }
        Ok(HashStore {
            digests: Mutex::new(digests),
            path: Some(path.to_path_buf()),
        })
    }

    /// Returns true when the digest was absent (and is now present).
    pub fn insert(&self, digest: &str) -> bool {
        self.digests.lock().unwrap().insert(digest.to_string())
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.digests.lock().unwrap().contains(digest)
    }

    pub fn len(&self) -> usize {
        self.digests.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the sorted digest list back to the backing file.
    pub fn save(&self) -> std::io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let digests = self.digests.lock().unwrap();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for d in digests.iter() {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_hex_sha384_sized() {
        let d = sample_digest("hello");
        assert_eq!(d.len(), 96);
        assert!(d.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(d, sample_digest("hello"));
        assert_ne!(d, sample_digest("hello!"));
    }

    #[test]
    fn insert_is_idempotent() {
        let store = HashStore::in_memory();
        assert!(store.insert("abc"));
        assert!(!store.insert("abc"));
        assert!(store.contains("abc"));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hashes.txt");
        {
            let store = HashStore::open(&path).unwrap();
            store.insert("bb");
            store.insert("aa");
            store.save().unwrap();
        }
        let contents = std::fs::read_to_string(&path).unwrap();
        assert_eq!(contents, "aa\nbb\n"); // sorted
        let reloaded = HashStore::open(&path).unwrap();
        assert!(reloaded.contains("aa"));
        assert_eq!(reloaded.len(), 2);
    }
}
