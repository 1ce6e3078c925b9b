//! Meta-paths: type-level walk templates from users to items.
//!
//! Written as arrow strings alternating node types and relation hops:
//!
//! ```text
//! user -click-> item <-click- user -click-> item
//! ```
//!
//! `-rel->` follows `rel` from its source type to its destination type and
//! `<-rel-` walks it backwards through the transposed matrix.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{HinGraph, ITEM, USER};
use crate::sparse::TransitionTemplate;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathStep {
    pub relation: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPath {
    steps: Vec<PathStep>,
    /// Node type visited at each position, `steps.len() + 1` entries.
    node_types: Vec<usize>,
    display_name: String,
}

impl MetaPath {
    pub fn parse(spec: &str, graph: &HinGraph) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidMetaPath {
            path: spec.to_owned(),
            reason,
        };
        let tokens: Vec<&str> = spec.split_whitespace().collect();
        if tokens.len() < 3 || tokens.len().is_multiple_of(2) {
            return Err(invalid("expected `type hop type [hop type ...]`".into()));
        }
        let mut steps = Vec::with_capacity(tokens.len() / 2);
        for (k, hop) in tokens.iter().skip(1).step_by(2).enumerate() {
            let (name, direction) = if let Some(rest) = hop.strip_prefix("<-") {
                let name = rest
                    .strip_suffix('-')
                    .ok_or_else(|| invalid(format!("malformed hop `{hop}`")))?;
                (name, Direction::Inverse)
            } else if let Some(rest) = hop.strip_prefix('-') {
                let name = rest
                    .strip_suffix("->")
                    .ok_or_else(|| invalid(format!("malformed hop `{hop}`")))?;
                (name, Direction::Forward)
            } else {
                return Err(invalid(format!("malformed hop `{hop}`")));
            };
            if name.is_empty() {
                return Err(invalid(format!("hop {} names no relation", k + 1)));
            }
            let relation = graph
                .relation_index(name)
                .ok_or_else(|| invalid(format!("unknown relation `{name}`")))?;
            steps.push(PathStep { relation, direction });
        }
        let path = Self::from_steps(graph, steps).map_err(|e| match e {
            Error::InvalidMetaPath { reason, .. } => invalid(reason),
            other => other,
        })?;
        // The spelled-out node types must agree with what the relations imply.
        for (k, ty) in tokens.iter().step_by(2).enumerate() {
            let expected = graph.node_type(path.node_types[k]).name();
            if *ty != expected {
                return Err(invalid(format!("position {k} is `{expected}`, not `{ty}`")));
            }
        }
        Ok(path)
    }

    pub fn from_steps(graph: &HinGraph, steps: Vec<PathStep>) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidMetaPath {
            path: format!("{steps:?}"),
            reason,
        };
        if steps.is_empty() {
            return Err(invalid("empty meta-path".into()));
        }
        let mut node_types = Vec::with_capacity(steps.len() + 1);
        for (k, step) in steps.iter().enumerate() {
            if step.relation >= graph.relations().len() {
                return Err(invalid(format!("relation index {} out of range", step.relation)));
            }
            let rel = graph.relation(step.relation);
            let (from, to) = match step.direction {
                Direction::Forward => (rel.src_type(), rel.dst_type()),
                Direction::Inverse => (rel.dst_type(), rel.src_type()),
            };
            if k == 0 {
                node_types.push(from);
            } else if node_types[k] != from {
                return Err(invalid(format!(
                    "hop {} starts at `{}` but the previous hop ends at `{}`",
                    k + 1,
                    graph.node_type(from).name(),
                    graph.node_type(node_types[k]).name()
                )));
            }
            node_types.push(to);
        }
        if graph.node_type(node_types[0]).name() != USER {
            return Err(invalid("meta-path must start at `user`".into()));
        }
        if graph.node_type(*node_types.last().expect("non-empty")).name() != ITEM {
            return Err(invalid("meta-path must end at `item`".into()));
        }

        let mut display_name = graph.node_type(node_types[0]).name().to_owned();
        for (k, step) in steps.iter().enumerate() {
            let rel = graph.relation(step.relation).name();
            let hop = match step.direction {
                Direction::Forward => format!(" -{rel}-> "),
                Direction::Inverse => format!(" <-{rel}- "),
            };
            display_name.push_str(&hop);
            display_name.push_str(graph.node_type(node_types[k + 1]).name());
        }
        Ok(MetaPath {
            steps,
            node_types,
            display_name,
        })
    }

    pub fn steps(&self) -> &[PathStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_types
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    /// Type sequence such as `user→item→genre→item`.
    pub fn type_signature(&self, graph: &HinGraph) -> String {
        self.node_types
            .iter()
            .map(|&t| graph.node_type(t).name())
            .collect::<Vec<_>>()
            .join("→")
    }

    /// Template walked at step `k` and the offset of its relation's parameters.
    pub fn step_template<'g>(&self, graph: &'g HinGraph, k: usize) -> (&'g TransitionTemplate, usize) {
        let step = self.steps[k];
        let rel = graph.relation(step.relation);
        (
            rel.template(step.direction == Direction::Inverse),
            graph.rho_offset(step.relation),
        )
    }
}

impl fmt::Display for MetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_name)
    }
}

pub fn parse_all(specs: &[String], graph: &HinGraph) -> Result<Vec<MetaPath>> {
    if specs.is_empty() {
        return Err(Error::Config("at least one meta-path is required".into()));
    }
    specs.iter().map(|s| MetaPath::parse(s, graph)).collect()
}
