//! The heterogeneous information network: typed node registries and typed
//! relations between them.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::sparse::{SparseMatrix, TransitionTemplate};
use crate::{Error, Result};

pub const USER: &str = "user";
pub const ITEM: &str = "item";
pub const DEFAULT_INTERACTION_RELATION: &str = "click";

/// Dense, first-seen-order index assignment for one node type.
#[derive(Debug, Clone, Default)]
pub struct NodeRegistry {
    name: String,
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl NodeRegistry {
    pub fn new(name: impl Into<String>) -> Self {
        NodeRegistry {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.lookup.get(id) {
            return idx;
        }
        let idx = self.ids.len();
        self.ids.push(id.to_owned());
        self.lookup.insert(id.to_owned(), idx);
        idx
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn id_of(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// A typed edge set `src_type -name-> dst_type`.
#[derive(Debug, Clone)]
pub struct Relation {
    name: String,
    src_type: usize,
    dst_type: usize,
    edges: Vec<(usize, usize)>,
    forward: TransitionTemplate,
    inverse: TransitionTemplate,
}

impl Relation {
    /// Edges are sorted and deduplicated; the position of an edge in the
    /// sorted list is its parameter slot.
    pub fn new(
        name: impl Into<String>,
        src_type: usize,
        dst_type: usize,
        src_count: usize,
        dst_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let edges: Vec<(usize, usize)> = edges.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let forward = TransitionTemplate::from_edges(src_count, dst_count, &edges, false);
        let inverse = TransitionTemplate::from_edges(src_count, dst_count, &edges, true);
        Relation {
            name: name.into(),
            src_type,
            dst_type,
            edges,
            forward,
            inverse,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn src_type(&self) -> usize {
        self.src_type
    }

    pub fn dst_type(&self) -> usize {
        self.dst_type
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Parameter slot of edge `(src, dst)`, if present.
    pub fn slot_of(&self, src: usize, dst: usize) -> Option<usize> {
        self.edges.binary_search(&(src, dst)).ok()
    }

    pub fn template(&self, transposed: bool) -> &TransitionTemplate {
        if transposed {
            &self.inverse
        } else {
            &self.forward
        }
    }
}

/// Builds the sparsity pattern of `relation`, or of its transpose.
pub fn build_transition_template(relation: &Relation, transposed: bool) -> TransitionTemplate {
    relation.template(transposed).clone()
}

/// Where to read one metadata relation from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSource {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub path: PathBuf,
}

/// In-memory counterpart of [`RelationSource`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationPairs {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Declared node types in addition to `user` and `item`.
    pub node_types: Vec<String>,
    pub interaction_relation: String,
    /// Users with fewer distinct interactions are dropped before indexing.
    pub min_user_interactions: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            node_types: Vec::new(),
            interaction_relation: DEFAULT_INTERACTION_RELATION.to_owned(),
            min_user_interactions: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HinGraph {
    types: Vec<NodeRegistry>,
    relations: Vec<Relation>,
    interaction: usize,
    user_type: usize,
    item_type: usize,
    rho_offsets: Vec<usize>,
}

impl HinGraph {
    /// Builds a graph from id pairs. The interaction pairs are `(user, item)`.
    pub fn from_pairs(
        interactions: &[(String, String)],
        metadata: &[RelationPairs],
        options: &LoadOptions,
    ) -> Result<Self> {
        let mut types = vec![NodeRegistry::new(USER), NodeRegistry::new(ITEM)];
        for name in &options.node_types {
            if types.iter().all(|t| t.name() != name) {
                types.push(NodeRegistry::new(name.clone()));
            }
        }
        let type_index = |name: &str, types: &[NodeRegistry]| -> Result<usize> {
            types
                .iter()
                .position(|t| t.name() == name)
                .ok_or_else(|| Error::UnknownNodeType(name.to_owned()))
        };

        let pairs = filter_active_users(interactions, options.min_user_interactions);
        if pairs.is_empty() {
            return Err(Error::NoInteractions);
        }
        let mut click_edges = Vec::with_capacity(pairs.len());
        for (u, i) in &pairs {
            let u = types[0].intern(u);
            let i = types[1].intern(i);
            click_edges.push((u, i));
        }

        let mut raw_relations = vec![(options.interaction_relation.clone(), 0usize, 1usize, click_edges)];
        for rel in metadata {
            if rel.name == options.interaction_relation || raw_relations.iter().any(|r| r.0 == rel.name) {
                return Err(Error::Config(format!("relation `{}` declared twice", rel.name)));
            }
            let src = type_index(&rel.src, &types)?;
            let dst = type_index(&rel.dst, &types)?;
            let mut edges = Vec::with_capacity(rel.pairs.len());
            for (a, b) in &rel.pairs {
                let a = types[src].intern(a);
                let b = types[dst].intern(b);
                edges.push((a, b));
            }
            raw_relations.push((rel.name.clone(), src, dst, edges));
        }

        let relations = raw_relations
            .into_iter()
            .map(|(name, src, dst, edges)| Relation::new(name, src, dst, types[src].len(), types[dst].len(), edges))
            .collect();
        Ok(Self::assemble(types, relations, 0))
    }

    fn assemble(types: Vec<NodeRegistry>, relations: Vec<Relation>, interaction: usize) -> Self {
        let mut rho_offsets = Vec::with_capacity(relations.len() + 1);
        let mut acc = 0;
        for rel in &relations {
            rho_offsets.push(acc);
            acc += rel.len();
        }
        rho_offsets.push(acc);
        HinGraph {
            types,
            relations,
            interaction,
            user_type: 0,
            item_type: 1,
            rho_offsets,
        }
    }

    /// Copy of this graph whose interaction relation holds exactly `edges`.
    /// Registries are untouched, so cold users and items keep their indices.
    pub fn with_interaction_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> HinGraph {
        let mut relations = self.relations.clone();
        let old = &relations[self.interaction];
        relations[self.interaction] = Relation::new(
            old.name.clone(),
            self.user_type,
            self.item_type,
            self.num_users(),
            self.num_items(),
            edges,
        );
        Self::assemble(self.types.clone(), relations, self.interaction)
    }

    pub fn node_types(&self) -> &[NodeRegistry] {
        &self.types
    }

    pub fn node_type(&self, index: usize) -> &NodeRegistry {
        &self.types[index]
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name() == name)
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation(&self, index: usize) -> &Relation {
        &self.relations[index]
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name() == name)
    }

    pub fn interaction_index(&self) -> usize {
        self.interaction
    }

    pub fn interaction_relation(&self) -> &Relation {
        &self.relations[self.interaction]
    }

    pub fn user_type(&self) -> usize {
        self.user_type
    }

    pub fn item_type(&self) -> usize {
        self.item_type
    }

    pub fn num_users(&self) -> usize {
        self.types[self.user_type].len()
    }

    pub fn num_items(&self) -> usize {
        self.types[self.item_type].len()
    }

    pub fn users(&self) -> &NodeRegistry {
        &self.types[self.user_type]
    }

    pub fn items(&self) -> &NodeRegistry {
        &self.types[self.item_type]
    }

    /// Offset of relation `r`'s edge parameters in a flat parameter vector.
    pub fn rho_offset(&self, relation: usize) -> usize {
        self.rho_offsets[relation]
    }

    /// Total number of edge parameters over all relations.
    pub fn num_edge_params(&self) -> usize {
        *self.rho_offsets.last().expect("offsets end with the total")
    }

    /// Distinct item sets per user from the interaction relation.
    pub fn user_items(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users()];
        for &(u, i) in self.interaction_relation().edges() {
            out[u].push(i);
        }
        out
    }

    /// Relation `r` with all edge weights set to one.
    pub fn adjacency(&self, relation: usize) -> SparseMatrix {
        let rel = &self.relations[relation];
        let ones = vec![1.0; rel.len()];
        rel.template(false).bind(&ones).expect("unit weights are valid")
    }
}

fn filter_active_users(pairs: &[(String, String)], min_interactions: usize) -> Vec<(String, String)> {
    if min_interactions <= 1 {
        return pairs.to_vec();
    }
    let mut per_user: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for (u, i) in pairs {
        per_user.entry(u).or_default().insert(i);
    }
    pairs
        .iter()
        .filter(|(u, _)| per_user[u.as_str()].len() >= min_interactions)
        .cloned()
        .collect()
}

/// Reads a tab-separated pair file. Blank lines and lines starting with `#`
/// are skipped; columns after the second are ignored.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split('\t').map(str::trim);
        match (fields.next(), fields.next()) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => pairs.push((a.to_owned(), b.to_owned())),
            _ => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: n + 1,
                    message: "expected two tab-separated ids".to_owned(),
                })
            }
        }
    }
    Ok(pairs)
}

/// Loads the interaction file and every metadata relation file.
pub fn load_relations(interaction_file: &Path, metadata: &[RelationSource], options: &LoadOptions) -> Result<HinGraph> {
    let interactions = read_pairs(interaction_file)?;
    if interactions.is_empty() {
        return Err(Error::NoInteractions);
    }
    let metadata = metadata
        .iter()
        .map(|src| {
            Ok(RelationPairs {
                name: src.name.clone(),
                src: src.src.clone(),
                dst: src.dst.clone(),
                pairs: read_pairs(&src.path)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    HinGraph::from_pairs(&interactions, &metadata, options)
}
