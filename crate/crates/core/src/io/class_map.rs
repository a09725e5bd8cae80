use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::read_text;
use crate::error::{Error, Result};
use crate::geometry::ClassId;

/// Dense class table, id 0 reserved for `"unlabeled"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    names: Vec<String>,
}

pub const UNLABELED_NAME: &str = "unlabeled";

/// Splits a CSV line into exactly two trimmed fields.
fn two_fields<'a>(line: &'a str, context: &str, lineno: usize) -> Result<(&'a str, &'a str)> {
    let mut it = line.splitn(2, ',');
    match (it.next(), it.next()) {
        (Some(a), Some(b)) => Ok((a.trim(), b.trim())),
        _ => Err(Error::parse(context, lineno, format!("expected two comma-separated fields, got {line:?}"))),
    }
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

impl ClassMap {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.first().map(String::as_str) != Some(UNLABELED_NAME) {
            return Err(Error::parse("class map", 0, "class 0 must be named \"unlabeled\""));
        }
        let mut seen = HashSet::new();
        for (id, n) in names.iter().enumerate() {
            if n.is_empty() || !seen.insert(n.as_str()) {
                return Err(Error::parse("class map", 0, format!("class {id}: empty or duplicate name {n:?}")));
            }
        }
        if names.len() > (ClassId::MAX as usize) + 1 {
            return Err(Error::parse("class map", 0, "more than 65536 classes"));
        }
        Ok(Self { names })
    }

    /// Parses `id,name` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut entries: Vec<(usize, u32, String)> = Vec::new();
        let mut ids = HashSet::new();
        let mut names = HashSet::new();
        for (lineno, line) in data_lines(text) {
            let (id, name) = two_fields(line, context, lineno)?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::parse(context, lineno, format!("invalid class id {id:?}")))?;
            if name.is_empty() {
                return Err(Error::parse(context, lineno, "empty class name"));
            }
            if !ids.insert(id) {
                return Err(Error::parse(context, lineno, format!("duplicate class id {id}")));
            }
            if !names.insert(name.to_string()) {
                return Err(Error::parse(context, lineno, format!("duplicate class name {name:?}")));
            }
            if id == 0 && name != UNLABELED_NAME {
                return Err(Error::parse(context, lineno, format!("class 0 must be \"unlabeled\", got {name:?}")));
            }
            entries.push((lineno, id, name.to_string()));
        }
        entries.sort_by_key(|e| e.1);
        for (expected, (lineno, id, _)) in entries.iter().enumerate() {
            if *id as usize != expected {
                return Err(Error::parse(
                    context,
                    *lineno,
                    format!("class ids must be dense 0..C-1; missing id {expected}"),
                ));
            }
        }
        if entries.is_empty() {
            return Err(Error::parse(context, 0, "empty class map"));
        }
        Self::new(entries.into_iter().map(|e| e.2).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == name).map(|i| i as ClassId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn to_csv(&self) -> String {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{i},{n}\n"))
            .collect()
    }
}

pub fn read_class_map(path: &Path) -> Result<ClassMap> {
    ClassMap::parse(&read_text(path)?, &path.display().to_string())
}

/// Raw dataset id → dense train id table (`raw_id,train_id` lines).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelRemap {
    table: HashMap<u16, ClassId>,
}

impl LabelRemap {
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut table = HashMap::new();
        for (lineno, line) in data_lines(text) {
            let (raw, train) = two_fields(line, context, lineno)?;
            let raw: u16 = raw
                .parse()
                .map_err(|_| Error::parse(context, lineno, format!("invalid raw id {raw:?}")))?;
            let train: ClassId = train
                .parse()
                .map_err(|_| Error::parse(context, lineno, format!("invalid train id {train:?}")))?;
            if table.insert(raw, train).is_some() {
                return Err(Error::parse(context, lineno, format!("duplicate raw id {raw}")));
            }
        }
        Ok(Self { table })
    }

    pub fn map(&self, raw: u16) -> Option<ClassId> {
        self.table.get(&raw).copied()
    }
}

pub fn read_label_remap(path: &Path) -> Result<LabelRemap> {
    LabelRemap::parse(&read_text(path)?, &path.display().to_string())
}
