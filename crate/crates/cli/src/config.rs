//! Flat `key=value` config files. Keys are long flag names without the
//! leading dashes; `#` starts a comment line. File values are spliced in
//! ahead of the command-line flags, so flags win.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::CommandFactory;

use crate::Cli;

/// Ordered `(key, value)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    pub entries: Vec<(String, String)>,
}

impl Config {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

pub fn parse_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config_str(&text).with_context(|| format!("config {}", path.display()))
}

pub fn parse_config_str(text: &str) -> Result<Config> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key=value, got `{line}`", i + 1);
        };
        let k = k.trim();
        if k.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        entries.push((k.to_string(), v.trim().to_string()));
    }
    Ok(Config { entries })
}

/// The value of `--config` in `argv`, if any.
pub fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// `argv` with the config entries inserted as flags right after the
/// subcommand. `command`, if present, must name that subcommand.
pub fn merge(argv: &[OsString], cfg: &Config) -> Result<Vec<OsString>, clap::Error> {
    let mut cmd = Cli::command();
    let fail = |msg: String| Cli::command().error(clap::error::ErrorKind::InvalidValue, msg);
    let Some(sub_name) = argv.get(1).map(|s| s.to_string_lossy().into_owned()) else {
        return Ok(argv.to_vec());
    };
    let Some(sub) = cmd.find_subcommand_mut(&sub_name) else {
        return Ok(argv.to_vec());
    };
    let known: Vec<String> = sub.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect();
    let mut flags = Vec::new();
    for (k, v) in &cfg.entries {
        if k == "command" {
            if *v != sub_name {
                return Err(fail(format!("config is for command `{v}`, not `{sub_name}`")));
            }
            continue;
        }
        if k == "config" || !known.iter().any(|n| n == k) {
            return Err(fail(format!("unknown config key `{k}` for command `{sub_name}`")));
        }
        flags.push(OsString::from(format!("--{k}")));
        flags.push(OsString::from(v));
    }
    let mut out = argv[..2].to_vec();
    out.extend(flags);
    out.extend(argv[2..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let c = parse_config_str("# a\n\nseed = 3\nalpha=0.5\n").unwrap();
        assert_eq!(c.get("seed"), Some("3"));
        assert_eq!(c.get("alpha"), Some("0.5"));
        assert!(parse_config_str("novalue\n").is_err());
    }

    #[test]
    fn flags_come_after_file_values() {
        let argv: Vec<OsString> = ["searchkd", "train", "--seed", "9"].iter().map(OsString::from).collect();
        let c = parse_config_str("seed=3\nepochs=2\n").unwrap();
        let merged = merge(&argv, &c).unwrap();
        let s: Vec<String> = merged.iter().map(|x| x.to_string_lossy().into_owned()).collect();
        assert_eq!(s, ["searchkd", "train", "--seed", "3", "--epochs", "2", "--seed", "9"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let argv: Vec<OsString> = ["searchkd", "train"].iter().map(OsString::from).collect();
        let c = parse_config_str("bogus=1\n").unwrap();
        assert!(merge(&argv, &c).unwrap_err().to_string().contains("bogus"));
    }
}
