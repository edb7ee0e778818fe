//! `key = value` text used for config files and the model file header.
//! Blank lines and `#` comments are ignored; unknown keys are rejected once
//! the consumer calls [`KeyValues::finish`].

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    values: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            let key = key.trim().to_string();
            if values.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self { values })
    }

    /// Removes and parses `key` if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("line {line}: bad value `{v}` for `{key}`: {e}"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Errors on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.values.into_iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
        }
    }
}

/// Formats `key = value` lines in the given order.
pub fn render(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parses `on`/`off`/`true`/`false`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Switch(pub bool);

impl FromStr for Switch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" | "true" | "yes" | "1" => Ok(Switch(true)),
            "off" | "false" | "no" | "0" => Ok(Switch(false)),
            other => Err(Error::Config(format!("`{other}` is not on/off"))),
        }
    }
}

pub fn switch(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_reject() {
        let mut kv = KeyValues::parse("# c\n a = 3 # trailing\n\nb=on\n").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(3));
        assert_eq!(kv.take::<Switch>("b").unwrap(), Some(Switch(true)));
        assert_eq!(kv.take_or("c", 1.5).unwrap(), 1.5);
        kv.finish().unwrap();

        let kv = KeyValues::parse("a = 1\nzzz = 2\n").unwrap();
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("`a`"), "{err}");
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert!(KeyValues::parse("novalue").is_err());
        let mut kv = KeyValues::parse("a = x").unwrap();
        assert!(kv.take::<u32>("a").is_err());
    }
}
