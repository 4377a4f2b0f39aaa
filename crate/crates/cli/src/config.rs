//! Options come from an optional `key = value` config file plus `--key value`
//! flags; flags win. Every command reads typed values out of the merged map.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct Options {
    values: BTreeMap<String, String>,
}

impl Options {
    /// Merge a config file (if `--config` is present) under the flags.
    pub fn from_args(args: &[String]) -> Result<Options, CliError> {
        let mut flags = BTreeMap::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let key = arg.strip_prefix("--").ok_or_else(|| {
                CliError::usage(format!("expected --flag, got '{arg}'"))
            })?;
            let value = args
                .get(i + 1)
                .ok_or_else(|| CliError::usage(format!("flag --{key} needs a value")))?;
            flags.insert(key.to_string(), value.clone());
            i += 2;
        }
        let mut values = BTreeMap::new();
        if let Some(path) = flags.get("config") {
            values.extend(parse_config_file(Path::new(path))?);
        }
        values.extend(flags);
        Ok(Options { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::usage(format!("missing required flag --{key}")))
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::usage(format!("flag --{key}: cannot parse '{raw}'"))),
        }
    }

    pub fn require_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| CliError::usage(format!("flag --{key}: cannot parse '{raw}'")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        Ok(PathBuf::from(self.require(key)?))
    }

    /// Comma-separated list, e.g. `--sizes 2,4,8,16`.
    pub fn parse_list<T: std::str::FromStr + Clone>(
        &self,
        key: &str,
        default: &[T],
    ) -> Result<Vec<T>, CliError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse()
                        .map_err(|_| CliError::usage(format!("flag --{key}: bad element '{part}'")))
                })
                .collect(),
        }
    }
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new("config-read", format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::new(
                "config-parse",
                format!("{}:{}: expected key = value", path.display(), lineno + 1),
            )
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}
