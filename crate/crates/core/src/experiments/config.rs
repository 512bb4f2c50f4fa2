use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use serde_json::Value;

use crate::error::{Error, Result};

/// Flat `key = value` settings. Lines starting with `#` and blank lines
/// are ignored; later assignments override earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    n + 1
                ))
            })?;
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }

    /// Reads the `parameters` object of a run manifest.
    pub fn from_manifest(json: &str) -> Result<(String, Self)> {
        let v: Value = serde_json::from_str(json)?;
        let sub = v["subcommand"]
            .as_str()
            .ok_or_else(|| Error::Config("manifest has no subcommand".into()))?;
        let params = v["parameters"]
            .as_object()
            .ok_or_else(|| Error::Config("manifest has no parameters".into()))?;
        let mut s = Settings::default();
        for (k, val) in params {
            let text = val
                .as_str()
                .ok_or_else(|| Error::Config(format!("manifest parameter {k} is not a string")))?;
            s.set(k, text)?;
        }
        Ok((sub.to_string(), s))
    }

    /// Parses a settings file or, if it holds a JSON object, a manifest.
    pub fn load(text: &str) -> Result<(Option<String>, Self)> {
        if text.trim_start().starts_with('{') {
            let (sub, s) = Self::from_manifest(text)?;
            Ok((Some(sub), s))
        } else {
            Ok((None, Self::parse(text)?))
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        {
            return Err(Error::Config(format!("invalid key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Values that can be read from and written back to a settings string
/// without loss.
pub trait Setting: Sized {
    fn parse_setting(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! via_fromstr {
    ($($t:ty),*) => {$(
        impl Setting for $t {
            fn parse_setting(s: &str) -> std::result::Result<Self, String> {
                <$t>::from_str(s).map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
via_fromstr!(usize, u64, i64, bool, String);

impl Setting for f64 {
    fn parse_setting(s: &str) -> std::result::Result<Self, String> {
        f64::from_str(s).map_err(|e| e.to_string())
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

fn render_list<T: Setting>(v: &[T]) -> String {
    v.iter().map(Setting::render).collect::<Vec<_>>().join(",")
}

/// Reads typed settings with defaults and records every resolved value.
pub struct Resolver<'a> {
    settings: &'a Settings,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(settings: &'a Settings) -> Self {
        Resolver {
            settings,
            used: BTreeSet::new(),
            resolved: BTreeMap::new(),
        }
    }

    fn bad(key: &str, raw: &str, e: impl Display) -> Error {
        Error::Config(format!("{key} = {raw:?}: {e}"))
    }

    pub fn get<T: Setting>(&mut self, key: &str, default: T) -> Result<T> {
        self.used.insert(key.into());
        let v = match self.settings.get(key) {
            Some(raw) => T::parse_setting(raw).map_err(|e| Self::bad(key, raw, e))?,
            None => default,
        };
        self.resolved.insert(key.into(), v.render());
        Ok(v)
    }

    /// Comma-separated list; must not be empty.
    pub fn list<T: Setting>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
    {
        self.used.insert(key.into());
        let v = match self.settings.get(key) {
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| T::parse_setting(s).map_err(|e| Self::bad(key, raw, e)))
                .collect::<Result<Vec<T>>>()?,
            None => default.to_vec(),
        };
        if v.is_empty() {
            return Err(Error::Config(format!("{key} must not be empty")));
        }
        self.resolved.insert(key.into(), render_list(&v));
        Ok(v)
    }

    /// Resolved parameters, or an error naming settings that no runner read.
    pub fn finish(self) -> Result<BTreeMap<String, String>> {
        let unknown: Vec<&String> = self
            .settings
            .values
            .keys()
            .filter(|k| !self.used.contains(*k))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown settings: {unknown:?}")));
        }
        Ok(self.resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let s = Settings::parse("# sweep\nseed = 7\nwidths = 50, 200,1000\n\nsigma=0.5\n").unwrap();
        let mut r = Resolver::new(&s);
        assert_eq!(r.get("seed", 0u64).unwrap(), 7);
        assert_eq!(r.list("widths", &[1usize]).unwrap(), vec![50, 200, 1000]);
        assert_eq!(r.get("sigma", 1.0).unwrap(), 0.5);
        assert_eq!(r.get("depth", 2usize).unwrap(), 2);
        let resolved = r.finish().unwrap();
        assert_eq!(resolved["widths"], "50,200,1000");
        assert_eq!(resolved["depth"], "2");
        assert_eq!(resolved["sigma"], "0.5");
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let s = Settings::parse("sigma = 1\ntypo = 3").unwrap();
        let mut r = Resolver::new(&s);
        r.get("sigma", 1.0).unwrap();
        assert!(matches!(r.finish(), Err(Error::Config(_))));
        assert!(Settings::parse("no equals sign").is_err());
        let s = Settings::parse("seed = -1").unwrap();
        assert!(Resolver::new(&s).get("seed", 0u64).is_err());
        let s = Settings::parse("widths = ,").unwrap();
        assert!(Resolver::new(&s).list("widths", &[1usize]).is_err());
    }

    #[test]
    fn floats_round_trip_through_manifest() {
        let mut s = Settings::default();
        s.set_pair("sigma=0.1").unwrap();
        let mut r = Resolver::new(&s);
        let v = r.get("sigma", 0.0).unwrap();
        r.get("lr", 1.0 / 3.0).unwrap();
        let resolved = r.finish().unwrap();
        let manifest =
            serde_json::json!({ "subcommand": "width", "parameters": resolved }).to_string();
        let (sub, back) = Settings::load(&manifest).unwrap();
        assert_eq!(sub.as_deref(), Some("width"));
        let mut r = Resolver::new(&back);
        assert_eq!(r.get("sigma", 0.0).unwrap(), v);
        assert_eq!(r.get("lr", 0.0).unwrap(), 1.0 / 3.0);
    }
}
