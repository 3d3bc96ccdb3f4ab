//! Merging of config files and flags into one fully-resolved key/value set.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use octforce::config::KeyValues;
use octforce::{DatasetError, NetError, PipelineError, SimError, StreamError, TrainError};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::UnknownPreset(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Sim(s) => s.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(DatasetError, NetError, StreamError);

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Reads keys from a config file overlaid with flag values, remembering every
/// value it hands out (defaults included) so the run can be echoed in full.
pub struct Resolver {
    kv: KeyValues,
    consumed: BTreeSet<String>,
    resolved: KeyValues,
}

impl Resolver {
    pub fn new(file: Option<&Path>, flags: Vec<(String, String)>) -> Result<Self, CliError> {
        let mut kv = match file {
            Some(p) => KeyValues::read(p)
                .map_err(|e| io_error(p, e))?
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
            None => KeyValues::default(),
        };
        for (k, v) in flags {
            kv.set(&k, v);
        }
        Ok(Self { kv, consumed: BTreeSet::new(), resolved: KeyValues::default() })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.kv.get(key).map(str::to_string)
    }

    fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        raw.parse::<T>().map_err(|e| CliError::Usage(format!("{key} = {raw:?}: {e}")))
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some(raw) => Self::parse(key, &raw)?,
            None => default,
        };
        self.resolved.set(key, v.to_string());
        Ok(v)
    }

    /// Absent keys and the literal `none` resolve to `None`.
    pub fn optional<T: FromStr + Display>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let v = self.raw(key).filter(|raw| raw != "none").map(|raw| Self::parse::<T>(key, &raw)).transpose()?;
        self.resolved.set(key, v.as_ref().map_or_else(|| "none".to_string(), T::to_string));
        Ok(v)
    }

    pub fn path(&mut self, key: &str) -> Result<PathBuf, CliError> {
        let raw = self.raw(key).ok_or_else(|| CliError::Usage(format!("missing required setting {key}")))?;
        self.resolved.set(key, raw.as_str());
        Ok(PathBuf::from(raw))
    }

    pub fn path_or(&mut self, key: &str, default: PathBuf) -> PathBuf {
        let p = self.raw(key).map(PathBuf::from).unwrap_or(default);
        self.resolved.set(key, p.display().to_string());
        p
    }

    /// All keys under `prefix` (kept with the prefix).
    pub fn prefixed(&mut self, prefix: &str) -> KeyValues {
        let mut out = KeyValues::default();
        let keys: Vec<(String, String)> =
            self.kv.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in keys {
            self.consumed.insert(k.clone());
            out.set(&k, v);
        }
        out
    }

    /// Records a value resolved outside the key/value set.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.resolved.set(key, value.to_string());
    }

    /// Rejects unknown keys and returns the resolved configuration.
    pub fn finish(self) -> Result<KeyValues, CliError> {
        let unknown: Vec<&str> = self.kv.iter().map(|(k, _)| k).filter(|k| !self.consumed.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(CliError::Usage(format!("unknown setting(s): {}", unknown.join(", "))));
        }
        Ok(self.resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_defaults_are_echoed() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "seed = 3\nepochs = 9 # from file\n").unwrap();
        let mut r = Resolver::new(Some(&file), vec![("seed".into(), "5".into())]).unwrap();
        assert_eq!(r.get("seed", 0u64).unwrap(), 5);
        assert_eq!(r.get("epochs", 1usize).unwrap(), 9);
        assert_eq!(r.get("lr", 0.001f64).unwrap(), 0.001);
        let echoed = r.finish().unwrap();
        assert_eq!(echoed.get("lr"), Some("0.001"));
        assert_eq!(echoed.get("seed"), Some("5"));
    }

    #[test]
    fn unknown_and_malformed_keys_are_usage_errors() {
        let mut r = Resolver::new(None, vec![("sede".into(), "1".into())]).unwrap();
        r.get("seed", 0u64).unwrap();
        assert!(matches!(r.finish(), Err(CliError::Usage(m)) if m.contains("sede")));

        let mut r = Resolver::new(None, vec![("epochs".into(), "many".into())]).unwrap();
        assert!(matches!(r.get("epochs", 1usize), Err(CliError::Usage(_))));
        assert!(matches!(r.path("data"), Err(CliError::Usage(_))));
        assert_eq!(r.optional::<usize>("t_s").unwrap(), None);
    }
}
