//! End-to-end synthetic experiment: world, pairs, split, training, retrieval.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConvexPolygon;
use crate::pairing::{positives_by_query, split_area, AreaSplit, PairingConfig, SplitResult};
use crate::retrieval::{evaluate, EvalConfig, EvalQuery, MetricsReport, RetrievalIndex};
use crate::synthgen::{generate_dataset, world_pyramid, QueryFeatures, SyntheticDataset, SyntheticWorld, TileFeatures, WorldConfig};
use crate::tilemap::{TileId, TilePyramid};
use crate::trainer::{train, EmbedModel, TrainConfig, TrainOutput};

/// Reference gallery for a test split: kept tiles whose center lies outside
/// the training boundary (cross-area) or every tile (same-area).
pub fn gallery_tiles(pyr: &TilePyramid, tiles: &[TileId], split: &AreaSplit) -> Result<Vec<TileId>> {
    let mut out = Vec::new();
    for t in tiles {
        let keep = match split {
            AreaSplit::CrossArea { boundary } => !boundary.contains(&pyr.tile_center(t)?),
            AreaSplit::SameArea { .. } => true,
        };
        if keep {
            out.push(*t);
        }
    }
    Ok(out)
}

/// Embeds the gallery tiles into a retrieval index.
pub fn build_index(
    model: &EmbedModel,
    pyr: &TilePyramid,
    tile_features: &TileFeatures,
    gallery: &[TileId],
) -> Result<RetrievalIndex> {
    let pos: HashMap<TileId, usize> = tile_features.ids.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut emb = Vec::with_capacity(gallery.len() * model.d_out());
    let mut centers = Vec::with_capacity(gallery.len());
    for t in gallery {
        let i = *pos.get(t).ok_or_else(|| Error::Domain(format!("no features for tile {t}")))?;
        emb.extend(model.embed(crate::trainer::View::Reference, tile_features.row(i))?);
        centers.push(pyr.tile_center(t)?);
    }
    RetrievalIndex::new(gallery.to_vec(), model.d_out(), emb, centers)
}

/// Test queries that have at least one positive reference in the gallery.
pub fn eval_queries(
    model: &EmbedModel,
    split: &SplitResult,
    query_features: &QueryFeatures,
    gallery: &[TileId],
) -> Result<Vec<EvalQuery>> {
    let in_gallery: BTreeSet<TileId> = gallery.iter().copied().collect();
    let positives = positives_by_query(&split.test.pairs);
    let pos: HashMap<&str, usize> = query_features.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut out = Vec::new();
    for q in &split.test.queries {
        let Some(p) = positives.get(&q.query_id) else { continue };
        let p: BTreeSet<TileId> = p.intersection(&in_gallery).copied().collect();
        if p.is_empty() {
            continue;
        }
        let i = *pos
            .get(q.query_id.as_str())
            .ok_or_else(|| Error::Domain(format!("no features for query {:?}", q.query_id)))?;
        out.push(EvalQuery {
            embedding: model.embed(crate::trainer::View::Query, query_features.row(i))?,
            location: q.pose.ground_point,
            positives: p,
        });
    }
    if out.is_empty() {
        return Err(Error::MissingTruth("no test query has a positive reference".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub n_queries: usize,
    #[serde(default)]
    pub pairing: PairingConfig,
    /// Cross-area with the west half as training area when absent.
    #[serde(default)]
    pub split: Option<AreaSplit>,
    #[serde(default)]
    pub train: TrainConfig,
}

/// A generated dataset with its split, ready for training runs.
pub struct PreparedExperiment {
    pub world: SyntheticWorld,
    pub pyramid: TilePyramid,
    pub dataset: SyntheticDataset,
    pub split_spec: AreaSplit,
    pub split: SplitResult,
    pub gallery: Vec<TileId>,
}

impl PreparedExperiment {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let world = SyntheticWorld::new(cfg.world.clone())?;
        let pyramid = world_pyramid(&world, 0, cfg.pairing.max_level.max(7))?;
        let dataset = generate_dataset(&world, cfg.n_queries, &pyramid, &cfg.pairing)?;
        let split_spec = cfg.split.clone().unwrap_or_else(|| AreaSplit::west_half(&pyramid));
        split_spec.validate(Some(&pyramid))?;
        let split = split_area(&dataset.queries, &dataset.pairing.pairs, &split_spec)?;
        let gallery = gallery_tiles(&pyramid, &dataset.tile_features.ids, &split_spec)?;
        Ok(Self { world, pyramid, dataset, split_spec, split, gallery })
    }

    pub fn train(&self, cfg: &TrainConfig) -> Result<TrainOutput> {
        train(cfg, &self.split.train.pairs, &self.dataset.query_features, &self.dataset.tile_features)
    }

    pub fn evaluate(&self, model: &EmbedModel, eval: &EvalConfig) -> Result<MetricsReport> {
        let index = build_index(model, &self.pyramid, &self.dataset.tile_features, &self.gallery)?;
        let queries = eval_queries(model, &self.split, &self.dataset.query_features, &self.gallery)?;
        evaluate(&index, &queries, eval)
    }

    pub fn train_boundary(&self) -> Option<&ConvexPolygon> {
        match &self.split_spec {
            AreaSplit::CrossArea { boundary } => Some(boundary),
            AreaSplit::SameArea { .. } => None,
        }
    }
}
