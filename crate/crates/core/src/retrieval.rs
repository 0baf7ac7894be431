//! Exact cosine retrieval over reference tiles and the evaluation metrics.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeoPoint;
use crate::tilemap::TileId;

pub const DEFAULT_SDM_SCALE: f64 = 100.0;
pub const DEFAULT_RECALL_KS: [usize; 2] = [1, 5];
pub const DEFAULT_SDM_K: usize = 3;

/// Unit-norm reference embeddings with their tile ids and ground centers.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    ids: Vec<TileId>,
    dim: usize,
    embeddings: Vec<f32>,
    centers: Vec<GeoPoint>,
}

pub type Ranking = Vec<(TileId, f64)>;

impl RetrievalIndex {
    pub fn new(ids: Vec<TileId>, dim: usize, embeddings: Vec<f32>, centers: Vec<GeoPoint>) -> Result<Self> {
        if embeddings.len() != ids.len() * dim || centers.len() != ids.len() {
            return Err(Error::Shape(format!(
                "index with {} ids needs {} embedding values and {} centers, got {} and {}",
                ids.len(),
                ids.len() * dim,
                ids.len(),
                embeddings.len(),
                centers.len()
            )));
        }
        for (i, row) in embeddings.chunks(dim.max(1)).enumerate() {
            let n: f64 = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::Domain(format!("reference {} has norm {n}", ids[i])));
            }
        }
        Ok(Self { ids, dim, embeddings, centers })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn ids(&self) -> &[TileId] {
        &self.ids
    }
    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn center_of(&self, id: &TileId) -> Option<GeoPoint> {
        self.ids.iter().position(|t| t == id).map(|i| self.centers[i])
    }

    fn similarity(&self, i: usize, query: &[f32]) -> f64 {
        self.embedding(i).iter().zip(query).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
    }

    /// Top `k` references by descending dot product; ties go to the smaller
    /// tile id.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Ranking> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::Domain("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Shape(format!("query dim {} vs index dim {}", query.len(), self.dim)));
        }
        let mut scored: Vec<(TileId, f64)> =
            (0..self.len()).map(|i| (self.ids[i], self.similarity(i, query))).collect();
        let cmp = |a: &(TileId, f64), b: &(TileId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored)
    }
}

fn check_truth(rankings: &[Ranking], positives: &[BTreeSet<TileId>]) -> Result<()> {
    if rankings.len() != positives.len() {
        return Err(Error::Shape(format!("{} rankings vs {} truth sets", rankings.len(), positives.len())));
    }
    if let Some(i) = positives.iter().position(|p| p.is_empty()) {
        return Err(Error::MissingTruth(format!("query {i} has no positive reference")));
    }
    if rankings.is_empty() {
        return Err(Error::MissingTruth("no queries to score".into()));
    }
    Ok(())
}

/// Fraction of queries with at least one positive in the top `k`.
pub fn recall_at_k(rankings: &[Ranking], positives: &[BTreeSet<TileId>], k: usize) -> Result<f64> {
    check_truth(rankings, positives)?;
    let hits = rankings
        .iter()
        .zip(positives)
        .filter(|(r, p)| r.iter().take(k).any(|(t, _)| p.contains(t)))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// Mean over queries of the precision at each positive's rank, averaged over
/// that query's positives. Positives missing from the ranking count as zero.
pub fn average_precision(rankings: &[Ranking], positives: &[BTreeSet<TileId>]) -> Result<f64> {
    check_truth(rankings, positives)?;
    let mut total = 0.0;
    for (r, p) in rankings.iter().zip(positives) {
        let mut found = 0usize;
        let mut sum = 0.0;
        for (rank, (t, _)) in r.iter().enumerate() {
            if p.contains(t) {
                found += 1;
                sum += found as f64 / (rank + 1) as f64;
            }
        }
        total += sum / p.len() as f64;
    }
    Ok(total / rankings.len() as f64)
}

fn center_lookup<'a>(ids: &'a [TileId], centers: &'a [GeoPoint]) -> BTreeMap<&'a TileId, &'a GeoPoint> {
    ids.iter().zip(centers).collect()
}

/// Rank-weighted, distance-decayed score of the top `k` results:
/// `sum_i (k - i + 1) exp(-d_i / scale) / sum_i (k - i + 1)`.
pub fn sdm_at_k(
    rankings: &[Ranking],
    locations: &[GeoPoint],
    ids: &[TileId],
    centers: &[GeoPoint],
    k: usize,
    scale: f64,
) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::Domain(format!("SDM scale {scale} must be positive")));
    }
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    if rankings.len() != locations.len() {
        return Err(Error::Shape(format!("{} rankings vs {} locations", rankings.len(), locations.len())));
    }
    if rankings.is_empty() {
        return Err(Error::MissingTruth("no queries to score".into()));
    }
    let lookup = center_lookup(ids, centers);
    let mut total = 0.0;
    for (r, loc) in rankings.iter().zip(locations) {
        if r.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (i, (t, _)) in r.iter().take(k).enumerate() {
            let c = lookup.get(t).ok_or_else(|| Error::Domain(format!("no center for tile {t}")))?;
            let w = (k - i) as f64;
            num += w * (-loc.distance(c) / scale).exp();
            den += w;
        }
        total += num / den;
    }
    Ok(total / rankings.len() as f64)
}

/// Mean ground distance between each query and its rank-1 reference center.
pub fn dis_at_1(rankings: &[Ranking], locations: &[GeoPoint], ids: &[TileId], centers: &[GeoPoint]) -> Result<f64> {
    if rankings.len() != locations.len() {
        return Err(Error::Shape(format!("{} rankings vs {} locations", rankings.len(), locations.len())));
    }
    if rankings.is_empty() {
        return Err(Error::MissingTruth("no queries to score".into()));
    }
    let lookup = center_lookup(ids, centers);
    let mut total = 0.0;
    for (r, loc) in rankings.iter().zip(locations) {
        let (t, _) = r.first().ok_or(Error::EmptyIndex)?;
        let c = lookup.get(t).ok_or_else(|| Error::Domain(format!("no center for tile {t}")))?;
        total += loc.distance(c);
    }
    Ok(total / rankings.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub references: usize,
    pub recall_at: BTreeMap<usize, f64>,
    pub ap: f64,
    pub sdm_at: BTreeMap<usize, f64>,
    pub sdm_scale: f64,
    pub dis_at_1: f64,
}

/// A query to evaluate: embedding, ground location, positive references.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalQuery {
    pub embedding: Vec<f32>,
    pub location: GeoPoint,
    pub positives: BTreeSet<TileId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub recall_ks: Vec<usize>,
    pub sdm_ks: Vec<usize>,
    pub sdm_scale: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { recall_ks: DEFAULT_RECALL_KS.to_vec(), sdm_ks: vec![DEFAULT_SDM_K], sdm_scale: DEFAULT_SDM_SCALE }
    }
}

/// Ranks every query against the full index and computes all metrics.
pub fn evaluate(index: &RetrievalIndex, queries: &[EvalQuery], cfg: &EvalConfig) -> Result<MetricsReport> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let rankings: Vec<Ranking> =
        queries.par_iter().map(|q| index.top_k(&q.embedding, index.len())).collect::<Result<_>>()?;
    let positives: Vec<BTreeSet<TileId>> = queries.iter().map(|q| q.positives.clone()).collect();
    let locations: Vec<GeoPoint> = queries.iter().map(|q| q.location).collect();
    let mut recall_at = BTreeMap::new();
    for &k in &cfg.recall_ks {
        recall_at.insert(k, recall_at_k(&rankings, &positives, k)?);
    }
    let ap = average_precision(&rankings, &positives)?;
    let mut sdm_at = BTreeMap::new();
    for &k in &cfg.sdm_ks {
        sdm_at.insert(k, sdm_at_k(&rankings, &locations, &index.ids, &index.centers, k, cfg.sdm_scale)?);
    }
    let dis = dis_at_1(&rankings, &locations, &index.ids, &index.centers)?;
    Ok(MetricsReport {
        queries: queries.len(),
        references: index.len(),
        recall_at,
        ap,
        sdm_at,
        sdm_scale: cfg.sdm_scale,
        dis_at_1: dis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(i: u32) -> TileId {
        TileId::new(3, i, 0)
    }

    fn ranking(order: &[u32]) -> Ranking {
        order.iter().enumerate().map(|(r, &i)| (t(i), 1.0 - r as f64 * 0.1)).collect()
    }

    fn truth(ids: &[u32]) -> BTreeSet<TileId> {
        ids.iter().map(|&i| t(i)).collect()
    }

    #[test]
    fn top_k_basics() {
        let ids = vec![t(0), t(1), t(2)];
        let emb = vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0];
        let centers = vec![GeoPoint::default(); 3];
        let idx = RetrievalIndex::new(ids, 2, emb, centers).unwrap();
        let r = idx.top_k(&[0.0, 1.0], 1).unwrap();
        assert_eq!(r, vec![(t(1), 1.0)]);
        let all = idx.top_k(&[1.0, 0.0], 10).unwrap();
        assert_eq!(all.iter().map(|x| x.0).collect::<Vec<_>>(), vec![t(0), t(1), t(2)]);
        let empty = RetrievalIndex::new(vec![], 2, vec![], vec![]).unwrap();
        assert_eq!(empty.top_k(&[1.0, 0.0], 1), Err(Error::EmptyIndex));
    }

    #[test]
    fn ties_break_by_tile_order() {
        let ids = vec![t(5), t(2), t(9)];
        let emb = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let idx = RetrievalIndex::new(ids, 2, emb, vec![GeoPoint::default(); 3]).unwrap();
        let r = idx.top_k(&[1.0, 0.0], 2).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![t(2), t(5)]);
    }

    #[test]
    fn recall_examples() {
        let first = vec![ranking(&[0, 1, 2])];
        assert_eq!(recall_at_k(&first, &[truth(&[0])], 1).unwrap(), 1.0);
        let second = vec![ranking(&[1, 0, 2]), ranking(&[2, 1, 0])];
        let p = [truth(&[0]), truth(&[1])];
        assert_eq!(recall_at_k(&second, &p, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&second, &p, 5).unwrap(), 1.0);
        assert!(matches!(recall_at_k(&second, &[truth(&[0]), truth(&[])], 1), Err(Error::MissingTruth(_))));
    }

    #[test]
    fn recall_hand_count() {
        // positives sit at ranks 1,1,2,3,5,6,1,4,2,10 -> R@1 = 3/10, R@5 = 8/10
        let ranks = [1, 1, 2, 3, 5, 6, 1, 4, 2, 10];
        let rankings: Vec<Ranking> = ranks
            .iter()
            .map(|&r| {
                let mut order: Vec<u32> = (1..=10).collect();
                order[r - 1] = 0;
                ranking(&order)
            })
            .collect();
        let p: Vec<_> = ranks.iter().map(|_| truth(&[0])).collect();
        assert!((recall_at_k(&rankings, &p, 1).unwrap() - 0.3).abs() < 1e-12);
        assert!((recall_at_k(&rankings, &p, 5).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[ranking(&[0, 1])], &[truth(&[0])]).unwrap(), 1.0);
        assert_eq!(average_precision(&[ranking(&[1, 0])], &[truth(&[0])]).unwrap(), 0.5);
        let ap = average_precision(&[ranking(&[0, 1, 2])], &[truth(&[0, 2])]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn sdm_examples() {
        let s = 100.0;
        let ids = vec![t(0), t(1), t(2)];
        let at = |x: f64| GeoPoint::new(x, 0.0);
        let loc = [at(0.0)];
        let zero = sdm_at_k(&[ranking(&[0, 1, 2])], &loc, &ids, &[at(0.0); 3], 3, s).unwrap();
        assert!((zero - 1.0).abs() < 1e-15);
        let far = sdm_at_k(&[ranking(&[0, 1, 2])], &loc, &ids, &[at(1e9); 3], 3, s).unwrap();
        assert!(far < 1e-12);
        let graded = sdm_at_k(&[ranking(&[0, 1, 2])], &loc, &ids, &[at(0.0), at(s), at(2.0 * s)], 3, s).unwrap();
        let expected = (3.0 + 2.0 * (-1f64).exp() + (-2f64).exp()) / 6.0;
        assert!((graded - expected).abs() < 1e-12);
        assert!(matches!(sdm_at_k(&[ranking(&[0])], &loc, &ids, &[at(0.0); 3], 3, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn dis_examples() {
        let ids = vec![t(0), t(1)];
        let centers = vec![GeoPoint::new(300.0, 0.0), GeoPoint::new(0.0, 0.0)];
        let loc = [GeoPoint::new(0.0, 0.0)];
        assert_eq!(dis_at_1(&[ranking(&[1, 0])], &loc, &ids, &centers).unwrap(), 0.0);
        assert_eq!(dis_at_1(&[ranking(&[0, 1])], &loc, &ids, &centers).unwrap(), 300.0);
        // five queries, rank-1 distances 0, 300, 400 (3-4-5 triangle x100), 10, 90
        let centers = vec![GeoPoint::new(0.0, 0.0)];
        let ids = vec![t(0)];
        let locs = [
            GeoPoint::new(0.0, 0.0),
            GeoPoint::new(300.0, 0.0),
            GeoPoint::new(240.0, 320.0),
            GeoPoint::new(0.0, -10.0),
            GeoPoint::new(-90.0, 0.0),
        ];
        let rankings: Vec<Ranking> = (0..5).map(|_| ranking(&[0])).collect();
        assert!((dis_at_1(&rankings, &locs, &ids, &centers).unwrap() - 160.0).abs() < 1e-12);
        assert_eq!(dis_at_1(&[vec![]], &loc, &ids, &centers), Err(Error::EmptyIndex));
    }

    #[test]
    fn evaluate_composes() {
        let ids = vec![t(0), t(1)];
        let idx = RetrievalIndex::new(
            ids,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(300.0, 0.0)],
        )
        .unwrap();
        let qs = vec![
            EvalQuery { embedding: vec![1.0, 0.0], location: GeoPoint::new(0.0, 0.0), positives: truth(&[0]) },
            EvalQuery { embedding: vec![0.0, 1.0], location: GeoPoint::new(300.0, 0.0), positives: truth(&[1]) },
        ];
        let rep = evaluate(&idx, &qs, &EvalConfig::default()).unwrap();
        assert_eq!(rep.recall_at[&1], 1.0);
        assert_eq!(rep.ap, 1.0);
        assert_eq!(rep.dis_at_1, 0.0);
        let sdm = rep.sdm_at[&3];
        // two references only: weights 3 and 2
        let expected = (3.0 + 2.0 * (-3f64).exp()) / 5.0;
        assert!((sdm - expected).abs() < 1e-12);
    }

    #[test]
    fn index_rejects_unnormalised_rows() {
        assert!(RetrievalIndex::new(vec![t(0)], 2, vec![2.0, 0.0], vec![GeoPoint::default()]).is_err());
        assert!(RetrievalIndex::new(vec![t(0)], 2, vec![1.0], vec![GeoPoint::default()]).is_err());
    }
}
