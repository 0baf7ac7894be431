//! Mutually exclusive batch sampling over the query/tile bipartite graph.
//!
//! Every batch is a matching: no query and no tile appears twice. Selecting an
//! edge prunes all edges touching its endpoints until the batch is complete;
//! pruned edges that were not selected return to the pool afterwards, while
//! selected edges stay consumed for the rest of the epoch.
//!
//! The strict variant also prunes edges touching the neighbours of the
//! selected endpoints, so no edge of the graph links two different pairs of
//! the same batch.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::PairRecord;
use crate::tilemap::TileId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub query: usize,
    pub tile: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGraph {
    queries: Vec<String>,
    tiles: Vec<TileId>,
    edges: Vec<Edge>,
    by_query: Vec<Vec<usize>>,
    by_tile: Vec<Vec<usize>>,
}

impl PairGraph {
    /// Builds the graph from `(query_id, tile, iou)` triples in the given order.
    pub fn new<'a, I>(triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, TileId, f64)>,
    {
        let mut g = PairGraph {
            queries: Vec::new(),
            tiles: Vec::new(),
            edges: Vec::new(),
            by_query: Vec::new(),
            by_tile: Vec::new(),
        };
        let mut qidx: HashMap<String, usize> = HashMap::new();
        let mut tidx: HashMap<TileId, usize> = HashMap::new();
        let mut seen = HashSet::new();
        for (qid, tile, iou) in triples {
            let q = *qidx.entry(qid.to_string()).or_insert_with(|| {
                g.queries.push(qid.to_string());
                g.by_query.push(Vec::new());
                g.queries.len() - 1
            });
            let t = *tidx.entry(tile).or_insert_with(|| {
                g.tiles.push(tile);
                g.by_tile.push(Vec::new());
                g.tiles.len() - 1
            });
            if !seen.insert((q, t)) {
                return Err(Error::Domain(format!("duplicate edge {qid} -> {tile}")));
            }
            g.by_query[q].push(g.edges.len());
            g.by_tile[t].push(g.edges.len());
            g.edges.push(Edge { query: q, tile: t, iou });
        }
        Ok(g)
    }

    pub fn from_pairs(pairs: &[PairRecord]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| (p.query_id.as_str(), p.tile, p.iou)))
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn query_id(&self, q: usize) -> &str {
        &self.queries[q]
    }
    pub fn tile(&self, t: usize) -> TileId {
        self.tiles[t]
    }
    pub fn query_edges(&self, q: usize) -> &[usize] {
        &self.by_query[q]
    }
    pub fn tile_edges(&self, t: usize) -> &[usize] {
        &self.by_tile[t]
    }

    pub fn has_edge(&self, q: usize, t: usize) -> bool {
        let (short, other_is_tile) = if self.by_query[q].len() <= self.by_tile[t].len() {
            (&self.by_query[q], true)
        } else {
            (&self.by_tile[t], false)
        };
        short.iter().any(|&e| {
            let edge = &self.edges[e];
            if other_is_tile {
                edge.tile == t
            } else {
                edge.query == q
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPair {
    pub query_id: String,
    pub tile: TileId,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Edge indices into the source graph, in selection order.
    pub edges: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn pairs(&self, g: &PairGraph) -> Vec<BatchPair> {
        self.edges
            .iter()
            .map(|&e| {
                let edge = g.edges[e];
                BatchPair { query_id: g.queries[edge.query].clone(), tile: g.tiles[edge.tile], iou: edge.iou }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    #[default]
    Faithful,
    Strict,
}

/// One epoch of node-disjoint batches.
pub fn sample_epoch(g: &PairGraph, b: usize, seed: u64) -> Result<Vec<Batch>> {
    sample(g, b, seed, SamplingMode::Faithful)
}

/// One epoch of batches with no graph edge between different pairs.
pub fn strict_sample_epoch(g: &PairGraph, b: usize, seed: u64) -> Result<Vec<Batch>> {
    sample(g, b, seed, SamplingMode::Strict)
}

pub fn sample(g: &PairGraph, b: usize, seed: u64, mode: SamplingMode) -> Result<Vec<Batch>> {
    if b < 2 {
        return Err(Error::Domain(format!("batch size {b} must be at least 2")));
    }
    if g.edges.is_empty() {
        return Err(Error::InsufficientEdges("graph has no edges".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.edges.len();
    let mut consumed = vec![false; n];
    let mut pruned = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut current: Vec<usize> = Vec::with_capacity(b);
    let mut batches = Vec::new();

    let mut blocked_queries: Vec<usize> = Vec::new();
    let mut blocked_tiles: Vec<usize> = Vec::new();

    loop {
        let mut pool: Vec<usize> = (0..n).filter(|&e| !consumed[e] && !pruned[e]).collect();
        if pool.is_empty() {
            break;
        }
        pool.shuffle(&mut rng);
        let mut progressed = false;
        for e in pool {
            if consumed[e] || pruned[e] {
                continue;
            }
            progressed = true;
            consumed[e] = true;
            current.push(e);

            let Edge { query, tile, .. } = g.edges[e];
            blocked_queries.clear();
            blocked_tiles.clear();
            blocked_queries.push(query);
            blocked_tiles.push(tile);
            if mode == SamplingMode::Strict {
                blocked_tiles.extend(g.by_query[query].iter().map(|&x| g.edges[x].tile));
                blocked_queries.extend(g.by_tile[tile].iter().map(|&x| g.edges[x].query));
            }
            let incident = blocked_queries
                .iter()
                .flat_map(|&q| g.by_query[q].iter())
                .chain(blocked_tiles.iter().flat_map(|&t| g.by_tile[t].iter()));
            for &x in incident {
                if !consumed[x] && !pruned[x] {
                    pruned[x] = true;
                    stack.push(x);
                }
            }

            if current.len() == b {
                batches.push(Batch { edges: std::mem::replace(&mut current, Vec::with_capacity(b)) });
                for x in stack.drain(..) {
                    pruned[x] = false;
                }
            }
        }
        if !progressed {
            break;
        }
    }
    if batches.is_empty() {
        return Err(Error::InsufficientEdges(format!(
            "{n} edges admit no full batch of {b} exclusive pairs"
        )));
    }
    Ok(batches)
}

/// Checks the node-disjointness of a batch, and in strict mode the absence of
/// cross edges.
pub fn check_batch(g: &PairGraph, batch: &Batch, mode: SamplingMode) -> bool {
    let mut qs = HashSet::new();
    let mut ts = HashSet::new();
    for &e in &batch.edges {
        let edge = g.edges[e];
        if !qs.insert(edge.query) || !ts.insert(edge.tile) {
            return false;
        }
    }
    if mode == SamplingMode::Strict {
        for &i in &batch.edges {
            for &j in &batch.edges {
                if i != j && g.has_edge(g.edges[i].query, g.edges[j].tile) {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(edges: &[(&str, u32)]) -> PairGraph {
        PairGraph::new(edges.iter().map(|&(q, r)| (q, TileId::new(0, r, 0), 0.5))).unwrap()
    }

    fn ids(g: &PairGraph, b: &Batch) -> Vec<(String, u32)> {
        let mut v: Vec<_> = b.pairs(g).into_iter().map(|p| (p.query_id, p.tile.x)).collect();
        v.sort();
        v
    }

    #[test]
    fn single_edge_is_insufficient() {
        let g = graph(&[("q1", 1)]);
        assert!(matches!(sample_epoch(&g, 2, 0), Err(Error::InsufficientEdges(_))));
        assert!(matches!(sample_epoch(&g, 1, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn shared_query_edges_never_cooccur() {
        // the matchings of size 2 are {(q1,r1),(q2,r3)} and {(q1,r2),(q2,r3)}
        let g = graph(&[("q1", 1), ("q1", 2), ("q2", 3)]);
        let mut seen = HashSet::new();
        for seed in 0..64 {
            let batches = sample_epoch(&g, 2, seed).unwrap();
            assert_eq!(batches.len(), 1);
            let got = ids(&g, &batches[0]);
            assert!(got.contains(&("q2".to_string(), 3)));
            seen.insert(got);
        }
        let expected: HashSet<_> = [
            vec![("q1".to_string(), 1), ("q2".to_string(), 3)],
            vec![("q1".to_string(), 2), ("q2".to_string(), 3)],
        ]
        .into_iter()
        .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn diagonal_graph_is_one_batch() {
        let g = graph(&[("a", 0), ("b", 1), ("c", 2), ("d", 3)]);
        let faithful = sample_epoch(&g, 4, 7).unwrap();
        assert_eq!(faithful.len(), 1);
        assert_eq!(faithful[0].len(), 4);
        assert_eq!(strict_sample_epoch(&g, 4, 7).unwrap(), faithful);
    }

    #[test]
    fn strict_rejects_cross_edges() {
        let g = graph(&[("q1", 1), ("q1", 2), ("q2", 2)]);
        for seed in 0..32 {
            assert!(matches!(strict_sample_epoch(&g, 2, seed), Err(Error::InsufficientEdges(_))));
        }
        // the faithful sampler accepts {(q1,r1),(q2,r2)} despite the (q1,r2) edge
        assert!(sample_epoch(&g, 2, 0).is_ok());
    }

    #[test]
    fn edges_are_consumed_once() {
        let g = graph(&[("a", 0), ("a", 1), ("b", 0), ("b", 1), ("c", 2), ("d", 3), ("c", 3)]);
        for seed in 0..16 {
            let batches = sample_epoch(&g, 2, seed).unwrap();
            let mut all: Vec<usize> = batches.iter().flat_map(|b| b.edges.clone()).collect();
            let total = all.len();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), total);
            assert!(batches.iter().all(|b| check_batch(&g, b, SamplingMode::Faithful)));
        }
    }

    #[test]
    fn duplicate_edges_are_rejected() {
        let r = PairGraph::new([("q", TileId::new(1, 0, 0), 0.3), ("q", TileId::new(1, 0, 0), 0.4)]);
        assert!(r.is_err());
    }

    #[test]
    fn has_edge_matches_edge_list() {
        let g = graph(&[("q1", 1), ("q1", 2), ("q2", 2)]);
        assert!(g.has_edge(0, 0));
        assert!(g.has_edge(0, 1));
        assert!(g.has_edge(1, 1));
        assert!(!g.has_edge(1, 0));
    }
}
