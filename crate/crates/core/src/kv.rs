//! Flat `key = value` text files used for run configs, scene specs and
//! checkpoint metadata.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: invalid value `{value}` ({reason})")]
    Value { key: String, value: String, reason: String },
}

/// Parsed key/value pairs. Every key must be consumed through [`KvMap::take`]
/// or friends; [`KvMap::finish`] reports whatever is left as unknown.
#[derive(Debug, Clone, Default)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax { line: i + 1 })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(KvError::Syntax { line: i + 1 });
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(KvError::Duplicate { line: i + 1, key });
            }
        }
        Ok(Self { entries })
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, KvError>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e: T::Err| KvError::Value {
                key: key.to_string(),
                value: v.clone(),
                reason: e.to_string(),
            }),
        }
    }

    pub fn take_into<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), KvError>
    where
        T::Err: Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn take_list(&mut self, key: &str, slot: &mut Vec<usize>) -> Result<(), KvError> {
        if let Some(v) = self.entries.remove(key) {
            *slot =
                parse_list(&v).map_err(|reason| KvError::Value { key: key.to_string(), value: v.clone(), reason })?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), KvError> {
        match self.entries.into_keys().next() {
            Some(k) => Err(KvError::UnknownKey(k)),
            None => Ok(()),
        }
    }
}

pub fn parse_list(v: &str) -> Result<Vec<usize>, String> {
    v.split(',').map(|s| s.trim().parse::<usize>().map_err(|e| e.to_string())).collect()
}

pub fn join_list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Writes ordered `key = value` lines.
pub fn render(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_reported() {
        let mut kv = KvMap::parse("# c\na = 1\nb=2\n").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(1));
        assert_eq!(kv.finish(), Err(KvError::UnknownKey("b".into())));
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut kv = KvMap::parse("a = x").unwrap();
        assert!(matches!(kv.take::<u32>("a"), Err(KvError::Value { .. })));
    }

    #[test]
    fn duplicates_and_syntax_errors() {
        assert!(matches!(KvMap::parse("a=1\na=2"), Err(KvError::Duplicate { line: 2, .. })));
        assert_eq!(KvMap::parse("novalue").unwrap_err(), KvError::Syntax { line: 1 });
    }
}
