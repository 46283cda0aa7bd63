use std::collections::BTreeMap;

use thiserror::Error;

/// A user-registered operator implementation, keyed by operator name or
/// full schema name (`ns::name.overload`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegistryEntry {
    pub key: String,
    /// Integer inputs of this op are lookup indices.
    pub lookup: bool,
    pub table_size: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Registry {
    entries: BTreeMap<String, RegistryEntry>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("registry line {line}: {message}")]
pub struct RegistryError {
    pub line: usize,
    pub message: String,
}

impl Registry {
    /// One entry per line: `<key> [lookup] [table_size=<n>]`; `#` comments.
    pub fn parse(text: &str) -> Result<Registry, RegistryError> {
        let mut reg = Registry::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let mut words = line.split_whitespace();
            let Some(key) = words.next() else { continue };
            let mut entry = RegistryEntry { key: key.to_string(), lookup: false, table_size: None };
            for w in words {
                if w == "lookup" {
                    entry.lookup = true;
                } else if let Some(n) = w.strip_prefix("table_size=") {
                    let n = n
                        .parse()
                        .map_err(|_| RegistryError { line: i + 1, message: format!("bad table size {n:?}") })?;
                    entry.table_size = Some(n);
                    entry.lookup = true;
                } else {
                    return Err(RegistryError { line: i + 1, message: format!("unknown attribute {w:?}") });
                }
            }
            reg.insert(entry);
        }
        Ok(reg)
    }

    pub fn insert(&mut self, entry: RegistryEntry) {
        self.entries.insert(entry.key.clone(), entry);
    }

    /// Looks up by the first key that is registered.
    pub fn find<'a>(&self, keys: impl IntoIterator<Item = &'a str>) -> Option<&RegistryEntry> {
        keys.into_iter().find_map(|k| self.entries.get(k))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
