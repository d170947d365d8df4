//! Flat `key = value` config files for `train`.
//!
//! Blank lines and `#` comments are ignored. Keys are the long flag names,
//! e.g. `embed-dim = 32`; underscores are accepted in place of dashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use deeprace::{Error, Result};

pub const KEYS: &[&str] = &[
    "epochs",
    "embed-dim",
    "filters",
    "windows",
    "dropout",
    "batch",
    "lr",
    "seed",
    "l-max",
    "threshold",
];

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<ConfigFile> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        ConfigFile::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ConfigFile> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected key = value", i + 1))
            })?;
            let k = k.trim().replace('_', "-");
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "config line {}: unknown key `{k}`",
                    i + 1
                )));
            }
            values.insert(k, (i + 1, v.trim().to_string()));
        }
        Ok(ConfigFile { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| {
                Error::InvalidArgument(format!("config line {line}: bad value `{v}` for {key}"))
            }),
        }
    }
}

/// `flag`, else config, else `default`.
pub fn pick<T: FromStr>(flag: Option<T>, config: &ConfigFile, key: &str, default: T) -> Result<T> {
    Ok(match flag {
        Some(v) => v,
        None => config.get(key)?.unwrap_or(default),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let cfg = ConfigFile::parse("# comment\nepochs = 7\nembed_dim=16\n\n").unwrap();
        assert_eq!(pick(Some(3usize), &cfg, "epochs", 40).unwrap(), 3);
        assert_eq!(pick(None, &cfg, "epochs", 40usize).unwrap(), 7);
        assert_eq!(pick(None, &cfg, "embed-dim", 64usize).unwrap(), 16);
        assert_eq!(pick(None, &cfg, "filters", 512usize).unwrap(), 512);
    }

    #[test]
    fn rejects_junk() {
        assert!(ConfigFile::parse("epochs 7").is_err());
        assert!(ConfigFile::parse("colour = red").is_err());
        let cfg = ConfigFile::parse("lr = fast").unwrap();
        assert!(cfg.get::<f64>("lr").is_err());
    }
}
