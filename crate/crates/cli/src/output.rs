//! Output directory ownership and run manifests.

use anyhow::{bail, Context, Result};
use difflink::config::ExperimentConfig;
use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

pub const LOCK_NAME: &str = ".difflink.lock";
pub const MANIFEST_NAME: &str = "manifest.toml";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    path: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    pub fn claim(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let lock = path.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => bail!(
                "{} is in use by another run (remove {} if that run is dead)",
                path.display(),
                lock.display()
            ),
            Err(e) => return Err(e).with_context(|| format!("locking {}", path.display())),
        }
        Ok(OutputDir {
            path: path.to_path_buf(),
            lock,
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn create(&self, name: &str) -> Result<std::io::BufWriter<File>> {
        let p = self.file(name);
        Ok(std::io::BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        ))
    }

    /// Writes the manifest: provenance comments followed by the effective
    /// config, which parses back as an ordinary config file.
    pub fn write_manifest(&self, command: &str, config: &ExperimentConfig) -> Result<()> {
        let mut out = self.create(MANIFEST_NAME)?;
        writeln!(out, "# difflink {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(out, "# command: {command}")?;
        writeln!(out, "# seed: {}", config.seed)?;
        writeln!(out, "# config_hash: {}", config.hash())?;
        out.write_all(config.to_toml().as_bytes())?;
        out.flush()?;
        Ok(())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
