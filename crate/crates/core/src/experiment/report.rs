//! CSV emission, the artifact directory and its manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
/// Stage bookkeeping for resumption; not part of the manifest.
pub const PROGRESS: &str = "progress.json";

/// In-memory CSV table with a header row.
#[derive(Clone, Debug)]
pub struct Csv {
    columns: usize,
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            columns: header.len(),
            text: header.join(",") + "\n",
        }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        assert_eq!(cells.len(), self.columns, "CSV row width");
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::F(x) => write!(self.text, "{x:?}").expect("write to string"),
                Cell::U(x) => write!(self.text, "{x}").expect("write to string"),
                Cell::S(s) => self.text.push_str(s),
                Cell::B(b) => self.text.push_str(if *b { "1" } else { "0" }),
            }
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

pub enum Cell<'a> {
    F(f64),
    U(usize),
    S(&'a str),
    B(bool),
}

/// Parses a CSV written by [`Csv`] into its header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse {
            location: path.display().to_string(),
            message: "empty CSV".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

pub fn parse_f64(s: &str, location: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse {
        location: location.to_string(),
        message: format!("not a number: {s:?}"),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_fingerprint: String,
    pub completed_stages: Vec<String>,
    pub artifacts: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                name: MANIFEST.into(),
                dir: dir.to_path_buf(),
                expected: vec![MANIFEST.into()],
            });
        }
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.artifacts.iter().any(|a| a.path == path)
    }

    pub fn paths_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.artifacts
            .iter()
            .map(|a| a.path.as_str())
            .filter(move |p| p.starts_with(prefix))
    }
}

/// Writer rooted at an output directory.
#[derive(Clone, Debug)]
pub struct ArtifactDir {
    root: PathBuf,
}

impl ArtifactDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(ArtifactDir {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            std::fs::create_dir_all(d)?;
        }
        std::fs::write(p, bytes)?;
        Ok(())
    }

    pub fn write_csv(&self, rel: &str, csv: &Csv) -> Result<()> {
        self.write(rel, csv.as_str().as_bytes())
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(Error::MissingArtifact {
                name: rel.into(),
                dir: self.root.clone(),
                expected: vec![rel.into()],
            });
        }
        Ok(serde_json::from_slice(&std::fs::read(p)?)?)
    }

    /// All files under the root except the manifest and progress file,
    /// as sorted `/`-separated relative paths.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d)? {
                let p = e?.path();
                if p.is_dir() {
                    stack.push(p);
                    continue;
                }
                let rel = p
                    .strip_prefix(&self.root)
                    .expect("under root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                if rel != MANIFEST && rel != PROGRESS {
                    out.push(rel);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn manifest(&self, config_fingerprint: &str, completed: &[String]) -> Result<Manifest> {
        let artifacts = self
            .list()?
            .into_iter()
            .map(|path| {
                let bytes = std::fs::read(self.path(&path))?;
                Ok(ManifestEntry {
                    sha256: hex::encode(Sha256::digest(&bytes)),
                    bytes: bytes.len() as u64,
                    path,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Manifest {
            config_fingerprint: config_fingerprint.to_string(),
            completed_stages: completed.to_vec(),
            artifacts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut c = Csv::new(&["a", "b", "c"]);
        c.row(&[Cell::U(1), Cell::F(0.1), Cell::S("x")]);
        c.row(&[Cell::U(2), Cell::F(1e-20), Cell::B(true)]);
        assert_eq!(c.as_str(), "a,b,c\n1,0.1,x\n2,1e-20,1\n");
        let dir = tempfile::tempdir().unwrap();
        let a = ArtifactDir::create(dir.path()).unwrap();
        a.write_csv("sub/t.csv", &c).unwrap();
        let (h, rows) = read_csv(&a.path("sub/t.csv")).unwrap();
        assert_eq!(h, ["a", "b", "c"]);
        assert_eq!(rows.len(), 2);
        assert_eq!(parse_f64(&rows[1][1], "t").unwrap(), 1e-20);
    }

    #[test]
    fn manifest_lists_sorted_files_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let a = ArtifactDir::create(dir.path()).unwrap();
        a.write("b/x.txt", b"hello").unwrap();
        a.write("a.txt", b"").unwrap();
        a.write(PROGRESS, b"{}").unwrap();
        let m = a.manifest("f", &["data".into()]).unwrap();
        let paths: Vec<_> = m.artifacts.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["a.txt", "b/x.txt"]);
        assert_eq!(
            m.artifacts[1].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert!(matches!(Manifest::load(dir.path()), Err(Error::MissingArtifact { .. })));
    }
}
