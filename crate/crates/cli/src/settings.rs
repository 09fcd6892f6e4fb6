//! Flag > config file > default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::ArgMatches;
use salnet_core::model::parse_kv;
use salnet_core::{Error, Result};

/// Effective values for one subcommand, with where each came from.
pub struct Settings<'a> {
    matches: &'a ArgMatches,
    file: BTreeMap<String, String>,
    used: Vec<String>,
    pub effective: Vec<(String, String, &'static str)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl<'a> Settings<'a> {
    pub fn new(matches: &'a ArgMatches, config: Option<&Path>) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
            for (k, v) in parse_kv(&text)? {
                file.insert(normalize(&k), v);
            }
        }
        Ok(Settings { matches, file, used: Vec::new(), effective: Vec::new() })
    }

    fn from_command_line(&self, id: &str) -> bool {
        self.matches.value_source(id) == Some(ValueSource::CommandLine)
    }

    fn from_file<T: FromStr>(&mut self, id: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.push(id.to_string());
        match self.file.get(id) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::Config { field: id.to_string(), detail: format!("{raw:?}: {e}") }),
        }
    }

    /// `flag` holds clap's value, which may be its default.
    pub fn get<T: FromStr + Display>(&mut self, id: &str, flag: T) -> Result<T>
    where
        T::Err: Display,
    {
        let (v, src) = if self.from_command_line(id) {
            self.used.push(id.to_string());
            (flag, "flag")
        } else if let Some(v) = self.from_file(id)? {
            (v, "config")
        } else {
            (flag, "default")
        };
        self.effective.push((id.to_string(), v.to_string(), src));
        Ok(v)
    }

    pub fn get_opt<T: FromStr + Display>(&mut self, id: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let (v, src) = match flag {
            Some(v) => {
                self.used.push(id.to_string());
                (Some(v), "flag")
            }
            None => match self.from_file(id)? {
                Some(v) => (Some(v), "config"),
                None => (None, "unset"),
            },
        };
        let shown = v.as_ref().map_or_else(|| "-".to_string(), ToString::to_string);
        self.effective.push((id.to_string(), shown, src));
        Ok(v)
    }

    /// Like [`Settings::get_opt`] but the value must come from somewhere.
    pub fn require<T: FromStr + Display>(&mut self, id: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.get_opt(id, flag)?
            .ok_or_else(|| Error::Usage(format!("--{} is required", id.replace('_', "-"))))
    }

    /// Logs every effective value and warns about config keys nobody read.
    pub fn log(&self, command: &str) {
        for (k, v, src) in &self.effective {
            log::info!("{command}: {k} = {v} ({src})");
        }
        for k in self.file.keys().filter(|k| !self.used.contains(k)) {
            log::warn!("{command}: config key `{k}` is not used by this command");
        }
    }
}

/// Path-like values: a `PathBuf` wrapper with `FromStr` and `Display`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathArg(pub std::path::PathBuf);

impl FromStr for PathArg {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(PathArg(s.into()))
    }
}

impl Display for PathArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0.display())
    }
}

impl AsRef<Path> for PathArg {
    fn as_ref(&self) -> &Path {
        &self.0
    }
}
