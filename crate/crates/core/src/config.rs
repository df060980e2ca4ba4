//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment. Values are integers,
//! reals, booleans (`true`/`false`, also `True`/`False`), bracketed lists
//! of integers, or strings (optionally double-quoted). The key `include`
//! splices another file, resolved relative to the including file; keys
//! assigned later win.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CoreError, Result};

const MAX_INCLUDE_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Bool(bool),
    List(Vec<i64>),
    Str(String),
}

impl Value {
    fn parse(raw: &str) -> Result<Self> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(CoreError::Format("empty value".into()));
        }
        if let Some(inner) = raw.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| CoreError::Format(format!("unterminated list {raw}")))?;
            let items = inner
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<i64>().map_err(|_| CoreError::Format(format!("list item {s} is not an integer"))))
                .collect::<Result<Vec<_>>>()?;
            return Ok(Value::List(items));
        }
        if let Some(inner) = raw.strip_prefix('"') {
            let inner = inner
                .strip_suffix('"')
                .ok_or_else(|| CoreError::Format(format!("unterminated string {raw}")))?;
            return Ok(Value::Str(inner.to_string()));
        }
        match raw {
            "true" | "True" => return Ok(Value::Bool(true)),
            "false" | "False" => return Ok(Value::Bool(false)),
            _ => {}
        }
        if let Ok(i) = raw.parse::<i64>() {
            return Ok(Value::Int(i));
        }
        if let Ok(r) = raw.parse::<f64>() {
            if r.is_finite() {
                return Ok(Value::Real(r));
            }
        }
        Ok(Value::Str(raw.to_string()))
    }
}

/// Parsed assignments, consumed by typed getters. Every key must be taken
/// by some getter; [`ConfigMap::finish`] reports leftovers as unknown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, Value>,
}

impl ConfigMap {
    /// Parses text without following `include` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::default();
        map.merge_text(text, None, 0)?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut map = Self::default();
        map.merge_file(path, 0)?;
        Ok(map)
    }

    fn merge_file(&mut self, path: &Path, depth: usize) -> Result<()> {
        if depth > MAX_INCLUDE_DEPTH {
            return Err(CoreError::Config(format!("includes nested deeper than {MAX_INCLUDE_DEPTH}")));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.merge_text(&text, path.parent(), depth)
    }

    fn merge_text(&mut self, text: &str, base: Option<&Path>, depth: usize) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Format(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(CoreError::Format(format!("line {}: bad key {key:?}", n + 1)));
            }
            let value = Value::parse(raw).map_err(|e| CoreError::Format(format!("line {}: {e}", n + 1)))?;
            if key == "include" {
                let Value::Str(p) = value else {
                    return Err(CoreError::Format(format!("line {}: include needs a path", n + 1)));
                };
                let base = base.ok_or_else(|| CoreError::Config("include is only allowed in files".into()))?;
                self.merge_file(&base.join(p), depth + 1)?;
            } else {
                self.values.insert(key.to_string(), value);
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.values.insert(key.to_string(), value);
    }

    /// Applies `key=value` overrides.
    pub fn set_raw(&mut self, key: &str, raw: &str) -> Result<()> {
        self.values.insert(key.to_string(), Value::parse(raw)?);
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.values.remove(key)
    }

    fn type_err(key: &str, want: &str, got: &Value) -> CoreError {
        CoreError::Config(format!("{key}: expected {want}, got {got:?}"))
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Int(i)) if i >= 0 => Ok(i as usize),
            Some(v) => Err(Self::type_err(key, "a nonnegative integer", &v)),
        }
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Int(i)) if i >= 0 => Ok(i as u64),
            Some(v) => Err(Self::type_err(key, "a nonnegative integer", &v)),
        }
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Int(i)) => Ok(i as f64),
            Some(Value::Real(r)) => Ok(r),
            Some(v) => Err(Self::type_err(key, "a number", &v)),
        }
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(b),
            Some(v) => Err(Self::type_err(key, "a boolean", &v)),
        }
    }

    pub fn string_or(&mut self, key: &str, default: &str) -> Result<String> {
        match self.take(key) {
            None => Ok(default.to_string()),
            Some(Value::Str(s)) => Ok(s),
            Some(Value::Int(i)) => Ok(i.to_string()),
            Some(v) => Err(Self::type_err(key, "a string", &v)),
        }
    }

    pub fn opt_string(&mut self, key: &str) -> Result<Option<String>> {
        if self.contains(key) {
            self.string_or(key, "").map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn index_list_or(&mut self, key: &str, default: &[u32]) -> Result<Vec<u32>> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(Value::List(items)) => items
                .iter()
                .map(|&i| u32::try_from(i).map_err(|_| CoreError::Config(format!("{key}: index {i} out of range"))))
                .collect(),
            Some(v) => Err(Self::type_err(key, "a list of indexes", &v)),
        }
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        if let Some(k) = self.values.keys().next() {
            return Err(CoreError::Config(format!("unknown configuration key {k}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_value_kinds() {
        let mut c = ConfigMap::parse(
            "# comment\nisize = 32\ndrop=0.1  # trailing\nuse_ams = False\nforbidden_indexes = [0, 1, 7]\nrun_id = \"r 1\"\nvariant = avg_attn\n",
        )
        .unwrap();
        assert_eq!(c.usize_or("isize", 0).unwrap(), 32);
        assert_eq!(c.f64_or("drop", 0.0).unwrap(), 0.1);
        assert!(!c.bool_or("use_ams", true).unwrap());
        assert_eq!(c.index_list_or("forbidden_indexes", &[]).unwrap(), vec![0, 1, 7]);
        assert_eq!(c.string_or("run_id", "").unwrap(), "r 1");
        assert_eq!(c.string_or("variant", "").unwrap(), "avg_attn");
        assert_eq!(c.usize_or("nlayer", 6).unwrap(), 6);
        c.finish().unwrap();
    }

    #[test]
    fn rejects_garbage() {
        assert!(ConfigMap::parse("no equals sign").is_err());
        assert!(ConfigMap::parse("a b = 1").is_err());
        assert!(ConfigMap::parse("x = [1, two]").is_err());
        assert!(ConfigMap::parse("x = \"open").is_err());
        let mut c = ConfigMap::parse("isize = -3\nextra = 1").unwrap();
        assert!(c.usize_or("isize", 1).is_err());
        assert!(c.finish().is_err());
    }

    #[test]
    fn include_resolves_relative() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("forbidden.cfg"), "forbidden_indexes = [0, 1, 9]\n").unwrap();
        std::fs::write(dir.path().join("main.cfg"), "isize = 8\ninclude = forbidden.cfg\n").unwrap();
        let mut c = ConfigMap::load(&dir.path().join("main.cfg")).unwrap();
        assert_eq!(c.index_list_or("forbidden_indexes", &[]).unwrap(), vec![0, 1, 9]);
        std::fs::write(dir.path().join("loop.cfg"), "include = loop.cfg\n").unwrap();
        assert!(ConfigMap::load(&dir.path().join("loop.cfg")).is_err());
    }
}
