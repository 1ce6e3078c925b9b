//! Synthetic HIN with planted cluster structure.
//!
//! Items fall into `clusters` groups. Genres and directors are mostly drawn
//! from an item's own cluster, and users click mostly inside one or two
//! favourite clusters, so attribute meta-paths carry real preference signal.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{HinGraph, LoadOptions, RelationPairs, RelationSource, ITEM};
use crate::{Error, Result};

pub const GENRE: &str = "genre";
pub const DIRECTOR: &str = "director";
pub const HAS_GENRE: &str = "has_genre";
pub const DIRECTED_BY: &str = "directed_by";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub genres: usize,
    pub directors: usize,
    /// Mean clicks per user; actual counts vary by ±50%.
    pub clicks_per_user: usize,
    /// Probability that a click lands in the user's favourite clusters.
    pub affinity: f64,
    /// Probability that an attribute is drawn from the item's own cluster.
    pub attribute_purity: f64,
    /// Exponent of the Zipf-like item popularity inside a cluster.
    pub popularity_skew: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 300,
            items: 200,
            clusters: 8,
            genres: 16,
            directors: 40,
            clicks_per_user: 17,
            affinity: 0.8,
            attribute_purity: 0.9,
            popularity_skew: 0.8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthDataset {
    pub interactions: Vec<(String, String)>,
    pub relations: Vec<RelationPairs>,
}

fn user_id(u: usize) -> String {
    format!("u{u:04}")
}

fn item_id(i: usize) -> String {
    format!("m{i:04}")
}

/// Draws an attribute index, preferring those assigned to `cluster`.
fn draw_attribute(rng: &mut ChaCha8Rng, count: usize, clusters: usize, cluster: usize, purity: f64) -> usize {
    let own: Vec<usize> = (0..count).filter(|a| a % clusters == cluster).collect();
    if !own.is_empty() && rng.gen_bool(purity) {
        *own.choose(rng).expect("non-empty")
    } else {
        rng.gen_range(0..count)
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    let c = config;
    if c.users == 0 || c.items == 0 || c.clusters == 0 || c.genres == 0 || c.directors == 0 || c.clicks_per_user == 0 {
        return Err(Error::Config("synthetic dataset sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&c.affinity) || !(0.0..=1.0).contains(&c.attribute_purity) {
        return Err(Error::Config("probabilities must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

    let item_cluster: Vec<usize> = (0..c.items).map(|i| i % c.clusters).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c.clusters];
    for (i, &k) in item_cluster.iter().enumerate() {
        members[k].push(i);
    }
    for m in &mut members {
        m.shuffle(&mut rng);
    }
    // Rank-based popularity within each cluster.
    let mut popularity = vec![0.0; c.items];
    for m in &members {
        for (rank, &i) in m.iter().enumerate() {
            popularity[i] = 1.0 / ((rank + 1) as f64).powf(c.popularity_skew);
        }
    }
    let global = WeightedIndex::new(&popularity).expect("positive weights");
    let per_cluster: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|m| WeightedIndex::new(m.iter().map(|&i| popularity[i])).expect("non-empty cluster"))
        .collect();

    let mut genre_pairs = Vec::new();
    let mut director_pairs = Vec::new();
    for (i, &k) in item_cluster.iter().enumerate() {
        let first = draw_attribute(&mut rng, c.genres, c.clusters, k, c.attribute_purity);
        genre_pairs.push((item_id(i), format!("g{first:02}")));
        if rng.gen_bool(0.4) {
            let second = draw_attribute(&mut rng, c.genres, c.clusters, k, c.attribute_purity);
            if second != first {
                genre_pairs.push((item_id(i), format!("g{second:02}")));
            }
        }
        let d = draw_attribute(&mut rng, c.directors, c.clusters, k, c.attribute_purity);
        director_pairs.push((item_id(i), format!("d{d:03}")));
    }

    let mut interactions = Vec::new();
    for u in 0..c.users {
        let primary = rng.gen_range(0..c.clusters);
        let secondary = rng.gen_range(0..c.clusters);
        let lo = (c.clicks_per_user / 2).max(1);
        let hi = (c.clicks_per_user * 3 / 2).max(lo);
        let target = rng.gen_range(lo..=hi).min(c.items);
        let mut chosen = std::collections::BTreeSet::new();
        let mut attempts = 0;
        while chosen.len() < target && attempts < target * 50 {
            attempts += 1;
            let item = if rng.gen_bool(c.affinity) {
                let k = if rng.gen_bool(0.7) { primary } else { secondary };
                members[k][per_cluster[k].sample(&mut rng)]
            } else {
                global.sample(&mut rng)
            };
            chosen.insert(item);
        }
        let mut order: Vec<usize> = chosen.into_iter().collect();
        order.shuffle(&mut rng);
        interactions.extend(order.into_iter().map(|i| (user_id(u), item_id(i))));
    }

    Ok(SynthDataset {
        interactions,
        relations: vec![
            RelationPairs {
                name: HAS_GENRE.into(),
                src: ITEM.into(),
                dst: GENRE.into(),
                pairs: genre_pairs,
            },
            RelationPairs {
                name: DIRECTED_BY.into(),
                src: ITEM.into(),
                dst: DIRECTOR.into(),
                pairs: director_pairs,
            },
        ],
    })
}

impl SynthDataset {
    pub fn load_options() -> LoadOptions {
        LoadOptions {
            node_types: vec![GENRE.into(), DIRECTOR.into()],
            ..LoadOptions::default()
        }
    }

    pub fn graph(&self) -> Result<HinGraph> {
        HinGraph::from_pairs(&self.interactions, &self.relations, &Self::load_options())
    }

    /// Meta-paths that exercise every relation of the dataset.
    pub fn default_meta_paths() -> Vec<String> {
        vec![
            "user -click-> item <-click- user -click-> item".into(),
            "user -click-> item -has_genre-> genre <-has_genre- item".into(),
            "user -click-> item -directed_by-> director <-directed_by- item".into(),
        ]
    }

    /// Writes `interactions.tsv` plus one file per relation into `dir` and
    /// returns the relation sources pointing at them.
    pub fn write_tsv(&self, dir: &Path) -> Result<Vec<RelationSource>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_pairs(&dir.join("interactions.tsv"), "user\titem", &self.interactions)?;
        let mut sources = Vec::new();
        for rel in &self.relations {
            let path = dir.join(format!("{}.tsv", rel.name));
            write_pairs(&path, &format!("{}\t{}", rel.src, rel.dst), &rel.pairs)?;
            sources.push(RelationSource {
                name: rel.name.clone(),
                src: rel.src.clone(),
                dst: rel.dst.clone(),
                path,
            });
        }
        Ok(sources)
    }
}

fn write_pairs(path: &Path, header: &str, pairs: &[(String, String)]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# {header}").expect("write to memory");
    for (a, b) in pairs {
        writeln!(out, "{a}\t{b}").expect("write to memory");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
