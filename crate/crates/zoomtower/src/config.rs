//! Line-oriented `key = value` documents with `[section]` headers.
//!
//! Shared by map definitions and run configurations.  `#` starts a comment
//! anywhere on a line; blank lines are ignored; keys are case-sensitive.

use std::fmt;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Document {
    pub sections: Vec<Section>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub msg: String,
}

impl ConfigError {
    pub fn at(line: usize, msg: impl Into<String>) -> Self {
        Self { line: Some(line), field: None, msg: msg.into() }
    }

    pub fn field(field: impl Into<String>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Self { line, field: Some(field.into()), msg: msg.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.field {
            write!(f, "field '{k}': ")?;
        }
        write!(f, "{}", self.msg)
    }
}

impl std::error::Error for ConfigError {}

impl Document {
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let mut doc = Document::default();
        for (idx, raw) in src.lines().enumerate() {
            let line = idx + 1;
            let text = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if text.is_empty() {
                continue;
            }
            if let Some(rest) = text.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(line, "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(ConfigError::at(line, "empty section name"));
                }
                if doc.sections.iter().any(|s| s.name == name) {
                    return Err(ConfigError::at(line, format!("duplicate section [{name}]")));
                }
                doc.sections.push(Section { name: name.to_string(), line, entries: Vec::new() });
                continue;
            }
            let (k, v) = text.split_once('=').ok_or_else(|| ConfigError::at(line, "expected 'key = value'"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::at(line, "empty key"));
            }
            let sec = doc
                .sections
                .last_mut()
                .ok_or_else(|| ConfigError::at(line, "entry before any [section]"))?;
            if sec.entries.iter().any(|e| e.key == k) {
                return Err(ConfigError::field(k, Some(line), "duplicate key"));
            }
            sec.entries.push(Entry { key: k.to_string(), value: v.to_string(), line });
        }
        Ok(doc)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.get(key).map(|e| e.value.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&Entry, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::field(key, Some(self.line), format!("missing in [{}]", self.name)))
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key).map(|e| parse_number(&e.value).map_err(|m| ConfigError::field(key, Some(e.line), m))).transpose()
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.get(key)
            .map(|e| {
                let v = parse_number(&e.value).map_err(|m| ConfigError::field(key, Some(e.line), m))?;
                if v < 0.0 || v.fract() != 0.0 || v > 1.8e19 {
                    return Err(ConfigError::field(key, Some(e.line), "expected a non-negative integer"));
                }
                // integers above 2^53 must be read verbatim to stay exact
                Ok(e.value.trim().parse::<u64>().unwrap_or(v as u64))
            })
            .transpose()
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.get(key)
            .map(|e| {
                e.value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_number(s).map_err(|m| ConfigError::field(key, Some(e.line), m)))
                    .collect()
            })
            .transpose()
    }
}

/// Decimal with optional exponent, or a simple ratio `p/q`.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p: f64 = p.trim().parse().map_err(|_| format!("bad number '{s}'"))?;
        let q: f64 = q.trim().parse().map_err(|_| format!("bad number '{s}'"))?;
        return Ok(p / q);
    }
    s.parse::<f64>().map_err(|_| format!("bad number '{s}'"))
}
