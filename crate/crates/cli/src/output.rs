//! Run directories: `<outdir>/<experiment>/<unix seconds>[-k]/`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use stirring_core::stats::Verdict;

pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn create(outdir: &Path, experiment: &str) -> Result<Self> {
        let base = outdir.join(experiment);
        fs::create_dir_all(&base).with_context(|| format!("creating {}", base.display()))?;
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        for k in 0u32.. {
            let name = if k == 0 {
                secs.to_string()
            } else {
                format!("{secs}-{k}")
            };
            let path = base.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(Self { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
            }
        }
        unreachable!()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn writer(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path.join(name);
        Ok(BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        ))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = self.writer(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn verdict(&self, v: &Verdict) -> Result<()> {
        self.json("verdict.json", v)
    }
}

/// File-name-safe form of a label such as `bernoulli:0.6`.
pub fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collisions_get_suffixes() {
        let tmp = tempfile::tempdir().unwrap();
        let a = RunDir::create(tmp.path(), "x").unwrap();
        let b = RunDir::create(tmp.path(), "x").unwrap();
        assert_ne!(a.path(), b.path());
        assert!(b.path().starts_with(tmp.path().join("x")));
    }

    #[test]
    fn sanitizes_labels() {
        assert_eq!(sanitize("bernoulli:0.6"), "bernoulli-0.6");
        assert_eq!(sanitize("cos:1,2"), "cos-1-2");
    }
}
