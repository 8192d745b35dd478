//! Flat `key = value` text with `#` comments, the format used for run
//! configurations and for the configuration echoed into checkpoints.

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// 1-based source line.
    pub line: usize,
}

impl Entry {
    pub fn parse<T: FromStr>(&self) -> Result<T> {
        self.value.parse().map_err(|_| {
            Error::config(format!(
                "line {}: invalid value {:?} for key {}",
                self.line, self.value, self.key
            ))
        })
    }

    pub fn parse_bool(&self) -> Result<bool> {
        match self.value.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            _ => Err(Error::config(format!(
                "line {}: invalid boolean {:?} for key {}",
                self.line, self.value, self.key
            ))),
        }
    }

    /// Comma-separated list.
    pub fn parse_list<T: FromStr>(&self) -> Result<Vec<T>> {
        if self.value.trim().is_empty() {
            return Ok(Vec::new());
        }
        self.value
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| {
                    Error::config(format!(
                        "line {}: invalid list element {:?} for key {}",
                        self.line,
                        s.trim(),
                        self.key
                    ))
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvFile {
    entries: Vec<Entry>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<KvFile> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {line}: expected key=value, got {content:?}")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::config(format!("line {line}: missing key before '='")));
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::config(format!(
                    "line {line}: key {key} already set on line {}",
                    prev.line
                )));
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(KvFile { entries })
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Rejects any key outside `known`, naming the key and its line.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|e| !known.contains(&e.key.as_str())) {
            Some(e) => Err(Error::config(format!("line {}: unknown key {}", e.line, e.key))),
            None => Ok(()),
        }
    }
}
