//! Output directory with per-file checksums.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files under one directory and remembers their digests.
#[derive(Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl ArtifactDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), files: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Digests of everything written so far, by file name.
    pub fn digests(&self) -> &BTreeMap<String, String> {
        &self.files
    }
}

/// In-memory CSV table.
pub struct Csv {
    w: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("writing to memory");
        Self { w }
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        self.w.write_record(fields.into_iter().collect::<Vec<_>>()).expect("writing to memory");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.w.into_inner().expect("flushing to memory")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_track_contents() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ArtifactDir::create(&dir.path().join("out")).unwrap();
        a.write("x.txt", b"abc").unwrap();
        assert_eq!(a.digests()["x.txt"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(std::fs::read(dir.path().join("out/x.txt")).unwrap(), b"abc");
    }

    #[test]
    fn csv_rows() {
        let mut c = Csv::new(&["a", "b"]);
        c.row(["1".to_string(), "2.5".to_string()]);
        assert_eq!(String::from_utf8(c.into_bytes()).unwrap(), "a,b\n1,2.5\n");
    }
}
