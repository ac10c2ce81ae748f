//! JSON relation files, one per ordered node pair: `rel_<src>_<dst>.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relation::{ClockRelation, Direction, NodeId};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RelationFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: unsupported schema version {found}")]
    Schema { path: PathBuf, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub relation: ClockRelation,
}

pub fn file_name(direction: Direction) -> String {
    format!("rel_{}_{}.json", direction.probe, direction.responder)
}

/// Canonical text of a relation file. Identical relations give identical
/// bytes.
pub fn to_json(rel: &ClockRelation) -> String {
    let file = RelationFile {
        schema_version: SCHEMA_VERSION,
        relation: *rel,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("relation serializes");
    text.push('\n');
    text
}

pub fn from_json(text: &str, path: &Path) -> Result<ClockRelation, RelationFileError> {
    let file: RelationFile =
        serde_json::from_str(text).map_err(|source| RelationFileError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(RelationFileError::Schema {
            path: path.to_path_buf(),
            found: file.schema_version,
        });
    }
    Ok(file.relation)
}

pub fn write_relation(dir: &Path, rel: &ClockRelation) -> Result<PathBuf, RelationFileError> {
    let path = dir.join(file_name(rel.direction));
    let io_err = |source| RelationFileError::Io {
        path: path.clone(),
        source,
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    fs::write(&path, to_json(rel)).map_err(io_err)?;
    Ok(path)
}

pub fn read_relation(path: &Path) -> Result<ClockRelation, RelationFileError> {
    let text = fs::read_to_string(path).map_err(|source| RelationFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_json(&text, path)
}

/// Every `rel_*.json` in `dir`, keyed by direction.
pub fn load_dir(dir: &Path) -> Result<BTreeMap<Direction, ClockRelation>, RelationFileError> {
    let io_err = |source| RelationFileError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if name.starts_with("rel_") && name.ends_with(".json") {
            let rel = read_relation(&path)?;
            out.insert(rel.direction, rel);
        }
    }
    Ok(out)
}

/// Counter frequency of `node` as recorded by any relation it probed, else
/// the reference frequency of any relation.
pub fn node_frequency(
    relations: &BTreeMap<Direction, ClockRelation>,
    node: NodeId,
) -> Option<crate::clock::CounterFrequency> {
    relations
        .values()
        .find(|r| r.direction.probe == node)
        .map(|r| r.local_freq)
        .or_else(|| {
            relations
                .values()
                .find(|r| r.ref_node == node)
                .map(|r| r.ref_freq)
        })
}
