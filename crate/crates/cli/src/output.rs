use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Hex SHA-256 of a file, or of every file under a directory (sorted by
/// relative path, each contributing its path and contents).
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        for f in files {
            h.update(f.strip_prefix(path).unwrap_or(&f).to_string_lossy().as_bytes());
            h.update([0]);
            h.update(fs::read(&f).with_context(|| format!("reading {}", f.display()))?);
        }
    } else {
        h.update(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex(&h.finalize()))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub cache_key: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

/// Collects the files one command writes and records them in a manifest.
pub struct Stage {
    dir: PathBuf,
    command: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<FileHash>,
    cache_key: String,
    outputs: Vec<String>,
}

impl Stage {
    pub fn new(dir: &Path, command: &str, seed: Option<u64>, config: &impl Serialize, inputs: &[&Path]) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let config = serde_json::to_value(config)?;
        if let Some(missing) = inputs.iter().find(|p| !p.exists()) {
            return Err(threadloop::Error::Config(format!("{} does not exist", missing.display())).into());
        }
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(FileHash {
                    path: p.display().to_string(),
                    sha256: hash_path(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        h.update(serde_json::to_vec(&config)?);
        for i in &inputs {
            h.update(i.sha256.as_bytes());
        }
        Ok(Stage {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            seed,
            config,
            inputs,
            cache_key: hex(&h.finalize()),
            outputs: Vec::new(),
        })
    }

    fn manifest_path(&self) -> PathBuf {
        self.dir.join(format!("{}.manifest.json", self.command.replace(' ', "-")))
    }

    /// True when a previous run with the same inputs and configuration left
    /// outputs that still hash to what its manifest records.
    pub fn is_cached(&self) -> bool {
        let Ok(text) = fs::read_to_string(self.manifest_path()) else {
            return false;
        };
        let Ok(m) = serde_json::from_str::<Manifest>(&text) else {
            return false;
        };
        m.cache_key == self.cache_key
            && m.outputs
                .iter()
                .all(|o| hash_path(&self.dir.join(&o.path)).is_ok_and(|h| h == o.sha256))
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV with an explicit header, for rows whose columns are only known at
    /// run time.
    pub fn csv_records(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let path = self.path(name);
        let mut w = BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        for r in rows {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn writer(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.path(name);
        Ok(BufWriter::new(
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        ))
    }

    pub fn finish(self) -> Result<Manifest> {
        let outputs = self
            .outputs
            .iter()
            .map(|name| {
                Ok(FileHash {
                    path: name.clone(),
                    sha256: hash_path(&self.dir.join(name))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = Manifest {
            tool: "threadloop".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            cache_key: self.cache_key.clone(),
            seed: self.seed,
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        fs::write(self.manifest_path(), text)?;
        Ok(m)
    }
}

/// Formats an optional number for a CSV cell.
pub fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_hits_only_with_unchanged_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "a").unwrap();
        let out = dir.path().join("out");
        let mut s = Stage::new(&out, "h1", Some(3), &"cfg", &[input.as_path()]).unwrap();
        assert!(!s.is_cached());
        s.csv("x.csv", &[(1, 2)]).unwrap();
        s.finish().unwrap();
        let s = Stage::new(&out, "h1", Some(3), &"cfg", &[input.as_path()]).unwrap();
        assert!(s.is_cached());
        fs::write(out.join("x.csv"), "tampered").unwrap();
        assert!(!s.is_cached());
        fs::write(&input, "b").unwrap();
        let s = Stage::new(&out, "h1", Some(3), &"cfg", &[input.as_path()]).unwrap();
        assert!(!s.is_cached());
    }
}
