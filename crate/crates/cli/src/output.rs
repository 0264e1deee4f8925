//! Output directories are built under `<out>.partial` and renamed into
//! place only when the command succeeds; a failed run leaves the
//! `.partial` directory behind for inspection.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::Config;

pub const MANIFEST: &str = "manifest.txt";
pub const OUT_ENV: &str = "SEARCHKD_OUT";

pub struct OutputDir {
    target: PathBuf,
    partial: PathBuf,
}

impl OutputDir {
    /// Resolves `--out` (or `$SEARCHKD_OUT/<command>`) and creates the
    /// staging directory.
    pub fn create(out: Option<&Path>, command: &str) -> Result<Self> {
        let target = match out {
            Some(p) => p.to_path_buf(),
            None => match env::var_os(OUT_ENV) {
                Some(root) => PathBuf::from(root).join(command),
                None => bail!("no output directory: pass --out or set {OUT_ENV}"),
            },
        };
        if target.exists() {
            bail!("output directory {} already exists", target.display());
        }
        let mut name = target
            .file_name()
            .with_context(|| format!("output path {} has no final component", target.display()))?
            .to_os_string();
        name.push(".partial");
        let partial = target.with_file_name(name);
        if partial.exists() {
            fs::remove_dir_all(&partial)
                .with_context(|| format!("cannot clear stale {}", partial.display()))?;
        }
        fs::create_dir_all(&partial).with_context(|| format!("cannot create {}", partial.display()))?;
        Ok(OutputDir { target, partial })
    }

    /// Path inside the staging directory.
    pub fn path(&self, name: &str) -> PathBuf {
        self.partial.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&p, contents).with_context(|| format!("cannot write {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    pub fn commit(self) -> Result<PathBuf> {
        fs::rename(&self.partial, &self.target)
            .with_context(|| format!("cannot move {} to {}", self.partial.display(), self.target.display()))?;
        Ok(self.target)
    }
}

/// Flattens serialised arguments into manifest entries. `None` options are
/// omitted; paths are made absolute so the manifest works from anywhere.
pub fn manifest_for<T: Serialize>(command: &str, args: &T, path_keys: &[&str]) -> Result<Config> {
    let Value::Object(map) = serde_json::to_value(args)? else {
        bail!("arguments did not serialise to a map");
    };
    let mut entries = vec![("command".to_string(), command.to_string())];
    for (k, v) in map {
        let key = k.replace('_', "-");
        let text = match v {
            Value::Null => continue,
            Value::String(s) if path_keys.contains(&key.as_str()) => absolute(Path::new(&s))?,
            Value::String(s) => s,
            other => other.to_string(),
        };
        entries.push((key, text));
    }
    Ok(Config { entries })
}

fn absolute(p: &Path) -> Result<String> {
    let abs = fs::canonicalize(p).with_context(|| format!("{} does not exist", p.display()))?;
    Ok(abs.to_string_lossy().into_owned())
}
