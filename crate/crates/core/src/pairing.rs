//! Query-to-tile pairing by footprint IOU and train/test area splits.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, project_footprint, CameraIntrinsics, CameraPose, ConvexPolygon};
use crate::tilemap::{TileId, TilePyramid};

pub const DEFAULT_T_POS: f64 = 0.39;
pub const DEFAULT_T_SEMI: f64 = 0.14;

/// Boundary rule recorded in manifest headers.
pub const TIE_RULE: &str = "iou > t_pos is positive; t_semi < iou <= t_pos is semi-positive; iou <= t_semi is dropped";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub pose: CameraPose,
    pub intr: CameraIntrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairLabel {
    Positive,
    SemiPositive,
}

impl PairLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairLabel::Positive => "positive",
            PairLabel::SemiPositive => "semi-positive",
        }
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(PairLabel::Positive),
            "semi-positive" => Ok(PairLabel::SemiPositive),
            other => Err(Error::Format(format!("unknown pair label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub query_id: String,
    pub tile: TileId,
    pub iou: f64,
    pub label: PairLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingConfig {
    #[serde(default = "default_t_pos")]
    pub t_pos: f64,
    #[serde(default = "default_t_semi")]
    pub t_semi: f64,
    #[serde(default = "default_min_level")]
    pub min_level: u8,
    #[serde(default = "default_max_level")]
    pub max_level: u8,
}

fn default_t_pos() -> f64 {
    DEFAULT_T_POS
}
fn default_t_semi() -> f64 {
    DEFAULT_T_SEMI
}
fn default_min_level() -> u8 {
    4
}
fn default_max_level() -> u8 {
    7
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self { t_pos: DEFAULT_T_POS, t_semi: DEFAULT_T_SEMI, min_level: 4, max_level: 7 }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t_semi && self.t_semi < self.t_pos && self.t_pos <= 1.0) {
            return Err(Error::Config(format!(
                "thresholds must satisfy 0 <= t_semi < t_pos <= 1, got t_semi={} t_pos={}",
                self.t_semi, self.t_pos
            )));
        }
        if self.min_level > self.max_level {
            return Err(Error::Config(format!(
                "reference levels {}..={} are empty",
                self.min_level, self.max_level
            )));
        }
        Ok(())
    }

    /// Label for an IOU, or `None` when the pair is dropped.
    pub fn label(&self, iou: f64) -> Option<PairLabel> {
        if iou > self.t_pos {
            Some(PairLabel::Positive)
        } else if iou > self.t_semi {
            Some(PairLabel::SemiPositive)
        } else {
            None
        }
    }
}

/// A query left out of the manifest, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedQuery {
    pub query_id: String,
    pub error: Error,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairingOutput {
    pub pairs: Vec<PairRecord>,
    pub skipped: Vec<SkippedQuery>,
}

/// Pairs of one footprint against every overlapping reference tile.
pub fn pairs_for_footprint(
    query_id: &str,
    footprint: &ConvexPolygon,
    pyr: &TilePyramid,
    cfg: &PairingConfig,
) -> Result<Vec<PairRecord>> {
    let tiles = pyr.tiles_overlapping(footprint, cfg.min_level..=cfg.max_level)?;
    let mut out = Vec::new();
    for tile in tiles {
        let bounds = pyr.tile_bounds(&tile)?;
        let value = iou(footprint, &bounds);
        if let Some(label) = cfg.label(value) {
            out.push(PairRecord { query_id: query_id.to_string(), tile, iou: value, label });
        }
    }
    Ok(out)
}

/// Builds the pair manifest. Queries whose footprint cannot be projected are
/// reported in `skipped`; configuration problems abort.
pub fn build_pairs(queries: &[QueryRecord], pyr: &TilePyramid, cfg: &PairingConfig) -> Result<PairingOutput> {
    cfg.validate()?;
    if !pyr.levels().contains(&cfg.min_level) || !pyr.levels().contains(&cfg.max_level) {
        return Err(Error::OutOfRange(format!(
            "reference levels {}..={} outside pyramid levels {:?}",
            cfg.min_level, cfg.max_level,
            pyr.levels()
        )));
    }
    let mut seen = HashSet::new();
    for q in queries {
        if !seen.insert(q.query_id.as_str()) {
            return Err(Error::Domain(format!("duplicate query id {:?}", q.query_id)));
        }
    }
    let per_query: Vec<std::result::Result<Vec<PairRecord>, SkippedQuery>> = queries
        .par_iter()
        .map(|q| {
            let fp = project_footprint(&q.pose, &q.intr)
                .map_err(|error| SkippedQuery { query_id: q.query_id.clone(), error })?;
            pairs_for_footprint(&q.query_id, &fp, pyr, cfg)
                .map_err(|error| SkippedQuery { query_id: q.query_id.clone(), error })
        })
        .collect();
    let mut out = PairingOutput::default();
    for r in per_query {
        match r {
            Ok(p) => out.pairs.extend(p),
            Err(s) => out.skipped.push(s),
        }
    }
    out.pairs.sort_by(|a, b| a.query_id.cmp(&b.query_id).then(a.tile.cmp(&b.tile)));
    out.skipped.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AreaSplit {
    /// Queries whose ground point falls inside `boundary` train, the rest test.
    CrossArea { boundary: ConvexPolygon },
    /// Uniform random split of queries.
    SameArea { train_ratio: f64, seed: u64 },
}

impl AreaSplit {
    /// Cross-area split with the western half of the map as the training area.
    pub fn west_half(pyr: &TilePyramid) -> Self {
        let o = pyr.origin();
        let boundary = ConvexPolygon::rectangle(
            o.x_east,
            o.y_north,
            o.x_east + pyr.map_width() / 2.0,
            o.y_north + pyr.map_height(),
        )
        .expect("validated map size");
        AreaSplit::CrossArea { boundary }
    }

    /// Checks the split against the map extent.
    pub fn validate(&self, pyr: Option<&TilePyramid>) -> Result<()> {
        match self {
            AreaSplit::CrossArea { boundary } => {
                if let Some(p) = pyr {
                    let map = p.map_bounds();
                    let slack = 1e-9 * (p.map_width() + p.map_height());
                    let (mx0, my0, mx1, my1) = map.bounding_box();
                    let inside = boundary.vertices().iter().all(|v| {
                        v.x_east >= mx0 - slack
                            && v.x_east <= mx1 + slack
                            && v.y_north >= my0 - slack
                            && v.y_north <= my1 + slack
                    });
                    if !inside {
                        return Err(Error::Domain("split boundary extends past the map".into()));
                    }
                }
                Ok(())
            }
            AreaSplit::SameArea { train_ratio, .. } => {
                if !(0.0..=1.0).contains(train_ratio) {
                    return Err(Error::Domain(format!("train ratio {train_ratio} outside [0, 1]")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitSet {
    pub queries: Vec<QueryRecord>,
    pub pairs: Vec<PairRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: SplitSet,
    pub test: SplitSet,
}

/// Splits queries into train and test; every pair follows its query.
pub fn split_area(queries: &[QueryRecord], pairs: &[PairRecord], split: &AreaSplit) -> Result<SplitResult> {
    split.validate(None)?;
    let in_train: Vec<bool> = match split {
        AreaSplit::CrossArea { boundary } => {
            queries.iter().map(|q| boundary.contains(&q.pose.ground_point)).collect()
        }
        AreaSplit::SameArea { train_ratio, seed } => {
            let n = queries.len();
            let n_train = (train_ratio * n as f64).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let mut flags = vec![false; n];
            for &i in &order[..n_train.min(n)] {
                flags[i] = true;
            }
            flags
        }
    };
    let mut side: HashMap<&str, bool> = HashMap::with_capacity(queries.len());
    let mut result = SplitResult { train: SplitSet::default(), test: SplitSet::default() };
    for (q, &t) in queries.iter().zip(&in_train) {
        side.insert(q.query_id.as_str(), t);
        if t {
            result.train.queries.push(q.clone());
        } else {
            result.test.queries.push(q.clone());
        }
    }
    for p in pairs {
        match side.get(p.query_id.as_str()) {
            Some(true) => result.train.pairs.push(p.clone()),
            Some(false) => result.test.pairs.push(p.clone()),
            None => return Err(Error::Domain(format!("pair references unknown query {:?}", p.query_id))),
        }
    }
    if result.train.queries.is_empty() {
        return Err(Error::EmptySplit("training side has no queries".into()));
    }
    if result.test.queries.is_empty() {
        return Err(Error::EmptySplit("test side has no queries".into()));
    }
    Ok(result)
}

/// Positive tiles per query id.
pub fn positives_by_query(pairs: &[PairRecord]) -> HashMap<String, BTreeSet<TileId>> {
    let mut m: HashMap<String, BTreeSet<TileId>> = HashMap::new();
    for p in pairs.iter().filter(|p| p.label == PairLabel::Positive) {
        m.entry(p.query_id.clone()).or_default().insert(p.tile);
    }
    m
}
