//! Versioned JSON checkpoints.
//!
//! A checkpoint stores the full [`TrainState`] together with the node ids
//! behind every embedding row and the edge count of every relation, so it is
//! only ever restored onto a graph with the same layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::HinGraph;
use crate::train::TrainState;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeRows {
    pub name: String,
    /// Node id of each row, in index order.
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationLayout {
    pub name: String,
    pub edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub node_types: Vec<TypeRows>,
    pub relations: Vec<RelationLayout>,
    pub meta_paths: Vec<String>,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(graph: &HinGraph, meta_paths: &[String], state: TrainState) -> Self {
        Checkpoint {
            version: FORMAT_VERSION,
            node_types: graph
                .node_types()
                .iter()
                .map(|t| TypeRows {
                    name: t.name().to_owned(),
                    ids: t.ids().to_vec(),
                })
                .collect(),
            relations: layout(graph),
            meta_paths: meta_paths.to_vec(),
            state,
        }
    }

    /// Checks that this checkpoint fits `graph` and `meta_paths`.
    pub fn check_compatible(&self, graph: &HinGraph, meta_paths: &[String]) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", self.version)));
        }
        for (ours, theirs) in self.node_types.iter().zip(graph.node_types()) {
            if ours.name != theirs.name() || ours.ids != theirs.ids() {
                return Err(Error::Checkpoint(format!("node type `{}` does not match the dataset", ours.name)));
            }
        }
        if self.node_types.len() != graph.node_types().len() {
            return Err(Error::Checkpoint("node types do not match the dataset".into()));
        }
        if self.relations != layout(graph) {
            return Err(Error::Checkpoint("relations do not match the dataset".into()));
        }
        if self.meta_paths != meta_paths {
            return Err(Error::Checkpoint("meta-paths differ from the configuration".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Embedding row of the node `id` of type `node_type`.
    pub fn embedding(&self, node_type: &str, id: &str) -> Option<&[f64]> {
        let t = self.node_types.iter().position(|t| t.name == node_type)?;
        let index = self.node_types[t].ids.iter().position(|x| x == id)?;
        Some(self.state.embed.row(t, index))
    }
}

fn layout(graph: &HinGraph) -> Vec<RelationLayout> {
    graph
        .relations()
        .iter()
        .map(|r| RelationLayout {
            name: r.name().to_owned(),
            edges: r.len(),
        })
        .collect()
}
