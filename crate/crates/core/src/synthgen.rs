//! Synthetic worlds for desk-scale experiments.
//!
//! A world is a grid of ground cells, each with a random feature vector. A
//! view of a ground region pools the cells it covers, weighted by covered
//! area, so two views are similar roughly in proportion to their overlap.
//! Drone and satellite views additionally carry view-specific appearance
//! terms drawn from two fixed low-rank style bases, which a shared encoder
//! has to learn to suppress.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    convex_intersection, project_footprint, CameraIntrinsics, CameraPose, ConvexPolygon, GeoPoint,
};
use crate::pairing::{build_pairs, PairingConfig, PairingOutput, QueryRecord};
use crate::tilemap::{TileId, TilePyramid};

// stream ids keep the independent random sequences of a world apart
const STREAM_FIELD: u64 = 0;
const STREAM_STYLE: u64 = 1;
const STREAM_QUERY_BASE: u64 = 1 << 32;
const STREAM_TILE_BASE: u64 = 1 << 62;

/// Closed sampling interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.min..=self.max).contains(&v)
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseRanges {
    pub altitude: Interval,
    pub roll: Interval,
    pub pitch: Interval,
    pub yaw: Interval,
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            altitude: Interval::new(80.0, 650.0),
            roll: Interval::new(-10.0, 10.0),
            pitch: Interval::new(-100.0, -80.0),
            yaw: Interval::new(-180.0, 180.0),
        }
    }
}

impl PoseRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("altitude", self.altitude), ("roll", self.roll), ("pitch", self.pitch), ("yaw", self.yaw)] {
            if !(r.min <= r.max) || !r.min.is_finite() || !r.max.is_finite() {
                return Err(Error::Config(format!("{name} range [{}, {}] is empty", r.min, r.max)));
            }
        }
        if self.altitude.min <= 0.0 {
            return Err(Error::Config("altitude range must be positive".into()));
        }
        for (name, r) in [("roll", self.roll), ("pitch", self.pitch), ("yaw", self.yaw)] {
            if r.min < -180.0 || r.max > 180.0 {
                return Err(Error::Config(format!("{name} range must lie within [-180, 180]")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, pose: &CameraPose) -> bool {
        self.altitude.contains(pose.altitude)
            && self.roll.contains(pose.roll)
            && self.pitch.contains(pose.pitch)
            && self.yaw.contains(pose.yaw)
    }
}

/// Cross-view appearance model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewModel {
    /// Rank of each view's style basis.
    pub style_rank: usize,
    /// Style magnitude relative to the unit-norm pooled content.
    pub query_style: f64,
    pub tile_style: f64,
    /// Isotropic per-view noise magnitude.
    pub noise: f64,
}

impl Default for ViewModel {
    fn default() -> Self {
        Self { style_rank: 8, query_style: 1.0, tile_style: 1.0, noise: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub map_width: f64,
    pub map_height: f64,
    pub cell_size: f64,
    pub feature_dim: usize,
    pub hfov: f64,
    pub vfov: f64,
    #[serde(default)]
    pub poses: PoseRanges,
    #[serde(default)]
    pub view: ViewModel,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            map_width: 9016.0,
            map_height: 9016.0,
            cell_size: 64.0,
            feature_dim: 32,
            hfov: 60.0,
            vfov: 45.0,
            poses: PoseRanges::default(),
            view: ViewModel::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.map_width > 0.0 && self.map_height > 0.0 && self.cell_size > 0.0) {
            return Err(Error::Config("map and cell sizes must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        CameraIntrinsics::new(self.hfov, self.vfov).map_err(|e| Error::Config(e.to_string()))?;
        self.poses.validate()?;
        if self.view.query_style < 0.0 || self.view.tile_style < 0.0 || self.view.noise < 0.0 {
            return Err(Error::Config("view model magnitudes must be non-negative".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics { hfov: self.hfov, vfov: self.vfov }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    config: WorldConfig,
    cols: usize,
    rows: usize,
    /// `rows * cols * feature_dim`, row-major by (row, col).
    field: Vec<f32>,
    query_style_basis: Vec<f64>,
    tile_style_basis: Vec<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Degenerate("feature vector has zero norm".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// Builds a world with default pose ranges and view model.
pub fn generate_world(seed: u64, map_width: f64, map_height: f64, cell_size: f64, feature_dim: usize) -> Result<SyntheticWorld> {
    SyntheticWorld::new(WorldConfig { seed, map_width, map_height, cell_size, feature_dim, ..Default::default() })
}

impl SyntheticWorld {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let cols = (config.map_width / config.cell_size).ceil() as usize;
        let rows = (config.map_height / config.cell_size).ceil() as usize;
        let d = config.feature_dim;
        let mut rng = stream_rng(config.seed, STREAM_FIELD);
        let field: Vec<f32> = (0..rows * cols * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let mut style = stream_rng(config.seed, STREAM_STYLE);
        let r = config.view.style_rank;
        // basis columns have unit expected norm
        let scale = 1.0 / (d as f64).sqrt();
        let query_style_basis: Vec<f64> = gaussian_vec(&mut style, d * r).into_iter().map(|v| v * scale).collect();
        let tile_style_basis: Vec<f64> = gaussian_vec(&mut style, d * r).into_iter().map(|v| v * scale).collect();
        Ok(Self { config, cols, rows, field, query_style_basis, tile_style_basis })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }
    pub fn num_cells(&self) -> usize {
        self.cols * self.rows
    }
    pub fn grid(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }
    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn cell_feature(&self, col: usize, row: usize) -> &[f32] {
        let d = self.config.feature_dim;
        let i = (row * self.cols + col) * d;
        &self.field[i..i + d]
    }

    /// Multiplies every cell feature by `c`.
    pub fn scale_field(&mut self, c: f32) {
        self.field.iter_mut().for_each(|v| *v *= c);
    }

    pub fn cell_bounds(&self, col: usize, row: usize) -> ConvexPolygon {
        let s = self.config.cell_size;
        let x0 = col as f64 * s;
        let y0 = row as f64 * s;
        let x1 = (x0 + s).min(self.config.map_width);
        let y1 = (y0 + s).min(self.config.map_height);
        ConvexPolygon::rectangle(x0, y0, x1, y1).expect("cells have positive size")
    }

    /// Area-weighted mean of the cell features under `region`, unit-normalized.
    pub fn pooled_content(&self, region: &ConvexPolygon) -> Result<Vec<f64>> {
        let d = self.config.feature_dim;
        let s = self.config.cell_size;
        let (x0, y0, x1, y1) = region.bounding_box();
        let clamp_idx = |v: f64, n: usize| ((v / s).floor().max(0.0) as usize).min(n.saturating_sub(1));
        if x1 <= 0.0 || y1 <= 0.0 || x0 >= self.config.map_width || y0 >= self.config.map_height {
            return Err(Error::Degenerate("region does not intersect the map".into()));
        }
        let (c0, c1) = (clamp_idx(x0, self.cols), clamp_idx(x1, self.cols));
        let (r0, r1) = (clamp_idx(y0, self.rows), clamp_idx(y1, self.rows));
        let mut acc = vec![0.0f64; d];
        let mut covered = 0.0;
        for row in r0..=r1 {
            for col in c0..=c1 {
                let cell = self.cell_bounds(col, row);
                let area = convex_intersection(&cell, region).map_or(0.0, |p| p.area());
                if area <= 0.0 {
                    continue;
                }
                covered += area;
                for (a, &f) in acc.iter_mut().zip(self.cell_feature(col, row)) {
                    *a += area * f64::from(f);
                }
            }
        }
        if covered <= 0.0 {
            return Err(Error::Degenerate("region does not intersect the map".into()));
        }
        normalize(&mut acc)?;
        Ok(acc)
    }

    fn styled(&self, mut content: Vec<f64>, basis: &[f64], style: f64, rng: &mut impl Rng) -> Result<Vec<f32>> {
        let d = self.config.feature_dim;
        let r = self.config.view.style_rank;
        if style > 0.0 && r > 0 {
            let z = gaussian_vec(rng, r);
            let zs = 1.0 / (r as f64).sqrt();
            for (i, c) in content.iter_mut().enumerate() {
                let s: f64 = (0..r).map(|j| basis[i * r + j] * z[j]).sum();
                *c += style * zs * s;
            }
        }
        let noise = self.config.view.noise;
        if noise > 0.0 {
            let ns = noise / (d as f64).sqrt();
            for c in content.iter_mut() {
                *c += ns * rng.sample::<f64, _>(StandardNormal);
            }
        }
        normalize(&mut content)?;
        Ok(content.into_iter().map(|v| v as f32).collect())
    }

    /// Drone-view feature of query `index` looking at `footprint`.
    pub fn query_feature(&self, index: u64, footprint: &ConvexPolygon) -> Result<Vec<f32>> {
        let content = self.pooled_content(footprint)?;
        let mut rng = stream_rng(self.config.seed, STREAM_QUERY_BASE + index);
        // skip the words used by pose sampling so style draws are independent
        rng.set_word_pos(1 << 40);
        self.styled(content, &self.query_style_basis, self.config.view.query_style, &mut rng)
    }

    /// Satellite-view feature of a tile.
    pub fn tile_feature(&self, tile: &TileId, bounds: &ConvexPolygon) -> Result<Vec<f32>> {
        let content = self.pooled_content(bounds)?;
        let key = (u64::from(tile.level) << 56) ^ (u64::from(tile.y) << 28) ^ u64::from(tile.x);
        let mut rng = stream_rng(self.config.seed, STREAM_TILE_BASE ^ key);
        self.styled(content, &self.tile_style_basis, self.config.view.tile_style, &mut rng)
    }

    /// Pose of query `index`, resampled until the footprint is bounded.
    pub fn sample_pose(&self, index: u64) -> Result<CameraPose> {
        let mut rng = stream_rng(self.config.seed, STREAM_QUERY_BASE + index);
        let p = &self.config.poses;
        let intr = self.config.intrinsics();
        for _ in 0..1000 {
            let ground = GeoPoint::new(
                rng.random_range(0.0..self.config.map_width),
                rng.random_range(0.0..self.config.map_height),
            );
            let pose = CameraPose::new(
                ground,
                p.altitude.sample(&mut rng),
                p.roll.sample(&mut rng),
                p.pitch.sample(&mut rng),
                p.yaw.sample(&mut rng),
            )?;
            match project_footprint(&pose, &intr) {
                Ok(_) => return Ok(pose),
                Err(Error::Horizon(_)) | Err(Error::Degenerate(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Config("pose ranges never produce a bounded footprint".into()))
    }
}

/// Unit-norm area-weighted pooled feature of a region, without view effects.
pub fn view_features(world: &SyntheticWorld, region: &ConvexPolygon) -> Result<Vec<f32>> {
    Ok(world.pooled_content(region)?.into_iter().map(|v| v as f32).collect())
}

/// Row-major feature table keyed by string ids (queries).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatures {
    pub ids: Vec<String>,
    pub dim: usize,
    pub values: Vec<f32>,
}

/// Row-major feature or embedding table keyed by tile ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TileFeatures {
    pub ids: Vec<TileId>,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl QueryFeatures {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl TileFeatures {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub queries: Vec<QueryRecord>,
    pub query_features: QueryFeatures,
    pub tile_features: TileFeatures,
    pub pairing: PairingOutput,
}

pub fn query_id(index: usize) -> String {
    format!("q{index:06}")
}

/// Samples `n_queries` drone views, pairs them with the pyramid, and renders
/// features for every query and every kept tile at the reference levels.
pub fn generate_dataset(
    world: &SyntheticWorld,
    n_queries: usize,
    pyr: &TilePyramid,
    cfg: &PairingConfig,
) -> Result<SyntheticDataset> {
    if n_queries == 0 {
        return Err(Error::Domain("n_queries must be at least 1".into()));
    }
    let intr = world.config().intrinsics();
    let queries: Vec<QueryRecord> = (0..n_queries)
        .into_par_iter()
        .map(|i| {
            world
                .sample_pose(i as u64)
                .map(|pose| QueryRecord { query_id: query_id(i), pose, intr })
        })
        .collect::<Result<_>>()?;
    dataset_for_queries(world, queries, pyr, cfg)
}

/// Renders features and pairs for given queries. Query feature draws are
/// keyed by the query's position in `queries`.
pub fn dataset_for_queries(
    world: &SyntheticWorld,
    queries: Vec<QueryRecord>,
    pyr: &TilePyramid,
    cfg: &PairingConfig,
) -> Result<SyntheticDataset> {
    let d = world.feature_dim();
    let qrows: Vec<Vec<f32>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let fp = project_footprint(&q.pose, &q.intr)?;
            world.query_feature(i as u64, &fp)
        })
        .collect::<Result<_>>()?;
    let query_features = QueryFeatures {
        ids: queries.iter().map(|q| q.query_id.clone()).collect(),
        dim: d,
        values: qrows.into_iter().flatten().collect(),
    };
    let mut tiles = Vec::new();
    for level in cfg.min_level..=cfg.max_level {
        tiles.extend(pyr.tiles_at(level)?);
    }
    let trows: Vec<Vec<f32>> = tiles
        .par_iter()
        .map(|t| {
            let b = pyr.tile_bounds(t)?;
            world.tile_feature(t, &b)
        })
        .collect::<Result<_>>()?;
    let tile_features = TileFeatures { ids: tiles, dim: d, values: trows.into_iter().flatten().collect() };
    let pairing = build_pairs(&queries, pyr, cfg)?;
    Ok(SyntheticDataset { queries, query_features, tile_features, pairing })
}

/// The pyramid that matches a world's map.
pub fn world_pyramid(world: &SyntheticWorld, min_level: u8, max_level: u8) -> Result<TilePyramid> {
    let c = world.config();
    TilePyramid::new(GeoPoint::new(0.0, 0.0), c.map_width, c.map_height, 256, min_level, max_level)
}
