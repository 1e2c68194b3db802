//! On-disk formats.
//!
//! Every document is JSON and carries a `schema_version`. Floats are written
//! with shortest round-trip formatting and parsed exactly, so a load of a
//! saved file reproduces bit-identical values. Line-oriented files
//! (trajectories, preference pairs, training samples) hold one JSON record
//! per line.

use crate::kg::{ActionNode, Edge, KnowledgeGraph, StateNode, Trajectory, SCHEMA_VERSION};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error on line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{kind} schema_version {found} is not supported (expected {expected})")]
    SchemaMismatch {
        kind: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("invalid {kind}: {reason}")]
    Invalid { kind: &'static str, reason: String },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| FormatError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, FormatError> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    write_text(path, &to_json(value)?)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let f = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| FormatError::Line {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn check_schema(kind: &'static str, found: u32, expected: u32) -> Result<(), FormatError> {
    if found != expected {
        return Err(FormatError::SchemaMismatch {
            kind,
            found,
            expected,
        });
    }
    Ok(())
}

/// Serialized layout of a [`KnowledgeGraph`].
#[derive(Serialize, Deserialize)]
struct GraphDoc {
    schema_version: u32,
    feature_dim: usize,
    states: Vec<StateNode>,
    actions: Vec<ActionNode>,
    edges: Vec<Edge>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

impl KnowledgeGraph {
    pub fn to_json(&self) -> Result<String, FormatError> {
        to_json(&GraphDoc {
            schema_version: self.schema_version,
            feature_dim: self.feature_dim,
            states: self.states.values().cloned().collect(),
            actions: self.actions.values().cloned().collect(),
            edges: self.edges.iter().cloned().collect(),
        })
    }

    /// Parses a graph document. The result is not validated; call
    /// [`KnowledgeGraph::validate`] when the source is untrusted.
    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        check_schema("graph", probe.schema_version, SCHEMA_VERSION)?;
        let doc: GraphDoc = serde_json::from_str(text)?;
        if doc.feature_dim == 0 {
            return Err(FormatError::Invalid {
                kind: "graph",
                reason: "feature_dim must be positive".into(),
            });
        }
        let mut g = KnowledgeGraph::new(doc.feature_dim).expect("dimension checked");
        for s in doc.states {
            if g.states.contains_key(&s.state_id) {
                return Err(FormatError::Invalid {
                    kind: "graph",
                    reason: format!("duplicate state id {}", s.state_id),
                });
            }
            g.insert_state_unchecked(s);
        }
        for a in doc.actions {
            if g.actions.contains_key(&a.action_id) {
                return Err(FormatError::Invalid {
                    kind: "graph",
                    reason: format!("duplicate action id {}", a.action_id),
                });
            }
            g.insert_action_unchecked(a);
        }
        for e in doc.edges {
            g.insert_edge_unchecked(e);
        }
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        write_text(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_json(&read_text(path)?)
    }
}

impl Serialize for KnowledgeGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GraphDocRef {
            schema_version: self.schema_version,
            feature_dim: self.feature_dim,
            states: self.states.values().collect(),
            actions: self.actions.values().collect(),
            edges: self.edges.iter().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for KnowledgeGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        KnowledgeGraph::from_json(&v.to_string()).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize)]
struct GraphDocRef<'a> {
    schema_version: u32,
    feature_dim: usize,
    states: Vec<&'a StateNode>,
    actions: Vec<&'a ActionNode>,
    edges: Vec<&'a Edge>,
}

pub fn save_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<(), FormatError> {
    write_jsonl(path, trajectories)
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>, FormatError> {
    let ts: Vec<Trajectory> = read_jsonl(path)?;
    for (i, t) in ts.iter().enumerate() {
        t.check().map_err(|e| FormatError::Invalid {
            kind: "trajectory",
            reason: format!("record {}: {e}", i + 1),
        })?;
    }
    Ok(ts)
}
