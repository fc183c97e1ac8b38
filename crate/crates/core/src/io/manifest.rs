//! Dataset manifests: a JSON object with an `entries` list.
//!
//! ```json
//! {"entries": [
//!   {"id": "q1", "role": "query", "domain_tag": "B", "path": "q1.xct", "group_id": "7", "area_ratio": 0.5},
//!   {"id": "d1", "role": "database", "domain_tag": "A", "path": "d1.png", "group_id": "7"}
//! ]}
//! ```
//!
//! Relative paths resolve against the manifest's directory. Group ids may be
//! strings or integers.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Query,
    Database,
}

fn group_id<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Text(String),
        Int(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::Text(s) => s,
        Id::Int(i) => i.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub role: Role,
    pub domain_tag: String,
    pub path: PathBuf,
    #[serde(deserialize_with = "group_id")]
    pub group_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_ratio: Option<f64>,
}

/// Input kind inferred from the file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Image,
    Tensor,
}

/// PNG and PGM/PNM files are images; anything else is read as a tensor file.
pub fn input_kind(path: &Path) -> InputKind {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png" | "pgm" | "pnm") => InputKind::Image,
        _ => InputKind::Tensor,
    }
}

impl ManifestEntry {
    pub fn kind(&self) -> InputKind {
        input_kind(&self.path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            entries,
            base: base.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn parse(text: &str, base: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Manifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(format!("invalid JSON: {e}")))?;
        m.base = base.into();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.id.is_empty() {
                return Err(Error::Manifest("entry with an empty id".into()));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id '{}'", e.id)));
            }
            if e.path.as_os_str().is_empty() {
                return Err(Error::Manifest(format!("entry '{}' has an empty path", e.id)));
            }
            if let Some(r) = e.area_ratio {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::Manifest(format!(
                        "entry '{}' has area_ratio {r} outside [0, 1]",
                        e.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that there are queries and database items and that every
    /// query's group occurs in the database.
    pub fn validate_closed_set(&self) -> Result<()> {
        let db: HashSet<&str> = self.database().map(|e| e.group_id.as_str()).collect();
        if db.is_empty() {
            return Err(Error::Manifest("no database entries".into()));
        }
        let mut any = false;
        for q in self.queries() {
            any = true;
            if !db.contains(q.group_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "query '{}' has group '{}' with no database member",
                    q.id, q.group_id
                )));
            }
        }
        if !any {
            return Err(Error::Manifest("no query entries".into()));
        }
        Ok(())
    }

    pub fn queries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.role == Role::Query)
    }

    pub fn database(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.role == Role::Database)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base.join(&entry.path)
        }
    }

    /// Dense group indices in order of first appearance, for every entry.
    pub fn group_index(&self) -> Vec<usize> {
        let mut names: Vec<&str> = vec![];
        self.entries
            .iter()
            .map(|e| match names.iter().position(|&n| n == e.group_id) {
                Some(i) => i,
                None => {
                    names.push(&e.group_id);
                    names.len() - 1
                }
            })
            .collect()
    }
}
