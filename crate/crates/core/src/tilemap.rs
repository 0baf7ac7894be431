//! Quadtree tile pyramid over a rectangular planar map.
//!
//! Level `L` splits the map into `2^L x 2^L` tiles. Column `x` grows east and
//! row `y` grows north from the south-west origin.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_intersection, ConvexPolygon, GeoPoint};

pub const MAX_LEVEL: u8 = 30;
pub const DEFAULT_TILE_PIXELS: u32 = 256;

/// Tile address. Orders by `(level, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileId {
    pub level: u8,
    pub x: u32,
    pub y: u32,
}

impl TileId {
    pub const fn new(level: u8, x: u32, y: u32) -> Self {
        Self { level, x, y }
    }

    fn sort_key(&self) -> (u8, u32, u32) {
        (self.level, self.y, self.x)
    }
}

impl Ord for TileId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for TileId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.level, self.x, self.y)
    }
}

impl FromStr for TileId {
    type Err = Error;

    /// Parses `level/x/y`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        let bad = || Error::Format(format!("bad tile id {s:?}, expected level/x/y"));
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(TileId {
            level: parts[0].parse().map_err(|_| bad())?,
            x: parts[1].parse().map_err(|_| bad())?,
            y: parts[2].parse().map_err(|_| bad())?,
        })
    }
}

/// On-disk pyramid description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PyramidConfig {
    #[serde(default)]
    pub origin_x: f64,
    #[serde(default)]
    pub origin_y: f64,
    pub map_width: f64,
    pub map_height: f64,
    #[serde(default = "default_tile_pixels")]
    pub tile_pixels: u32,
    #[serde(default)]
    pub min_level: u8,
    pub max_level: u8,
    /// Tiles to keep, as `level/x/y`; absent keeps every tile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep: Option<Vec<String>>,
}

fn default_tile_pixels() -> u32 {
    DEFAULT_TILE_PIXELS
}

#[derive(Debug, Clone, PartialEq)]
pub struct TilePyramid {
    origin: GeoPoint,
    map_width: f64,
    map_height: f64,
    tile_pixels: u32,
    min_level: u8,
    max_level: u8,
    keep: Option<BTreeSet<TileId>>,
}

impl TilePyramid {
    pub fn new(
        origin: GeoPoint,
        map_width: f64,
        map_height: f64,
        tile_pixels: u32,
        min_level: u8,
        max_level: u8,
    ) -> Result<Self> {
        if !origin.is_finite() {
            return Err(Error::Config("pyramid origin must be finite".into()));
        }
        if !(map_width > 0.0 && map_width.is_finite() && map_height > 0.0 && map_height.is_finite()) {
            return Err(Error::Config(format!("map size {map_width} x {map_height} must be positive")));
        }
        if tile_pixels == 0 {
            return Err(Error::Config("tile_pixels must be positive".into()));
        }
        if min_level > max_level || max_level > MAX_LEVEL {
            return Err(Error::Config(format!(
                "levels {min_level}..={max_level} must satisfy 0 <= min <= max <= {MAX_LEVEL}"
            )));
        }
        Ok(Self { origin, map_width, map_height, tile_pixels, min_level, max_level, keep: None })
    }

    /// Restricts the pyramid to an explicit set of tiles.
    pub fn with_keep_list(mut self, keep: impl IntoIterator<Item = TileId>) -> Result<Self> {
        let set: BTreeSet<TileId> = keep.into_iter().collect();
        for t in &set {
            self.check_tile(t)?;
        }
        self.keep = Some(set);
        Ok(self)
    }

    pub fn from_config(cfg: &PyramidConfig) -> Result<Self> {
        let pyr = Self::new(
            GeoPoint::new(cfg.origin_x, cfg.origin_y),
            cfg.map_width,
            cfg.map_height,
            cfg.tile_pixels,
            cfg.min_level,
            cfg.max_level,
        )?;
        match &cfg.keep {
            None => Ok(pyr),
            Some(list) => {
                let ids = list.iter().map(|s| s.parse()).collect::<Result<Vec<TileId>>>()?;
                pyr.with_keep_list(ids)
            }
        }
    }

    pub fn to_config(&self) -> PyramidConfig {
        PyramidConfig {
            origin_x: self.origin.x_east,
            origin_y: self.origin.y_north,
            map_width: self.map_width,
            map_height: self.map_height,
            tile_pixels: self.tile_pixels,
            min_level: self.min_level,
            max_level: self.max_level,
            keep: self.keep.as_ref().map(|k| k.iter().map(|t| t.to_string()).collect()),
        }
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }
    pub fn map_width(&self) -> f64 {
        self.map_width
    }
    pub fn map_height(&self) -> f64 {
        self.map_height
    }
    pub fn tile_pixels(&self) -> u32 {
        self.tile_pixels
    }
    pub fn levels(&self) -> RangeInclusive<u8> {
        self.min_level..=self.max_level
    }

    pub fn map_bounds(&self) -> ConvexPolygon {
        ConvexPolygon::rectangle(
            self.origin.x_east,
            self.origin.y_north,
            self.origin.x_east + self.map_width,
            self.origin.y_north + self.map_height,
        )
        .expect("validated map size")
    }

    pub fn is_kept(&self, t: &TileId) -> bool {
        self.keep.as_ref().is_none_or(|k| k.contains(t))
    }

    fn check_level(&self, level: u8) -> Result<()> {
        if level < self.min_level || level > self.max_level {
            return Err(Error::OutOfRange(format!(
                "level {level} outside pyramid levels {}..={}",
                self.min_level, self.max_level
            )));
        }
        Ok(())
    }

    fn check_tile(&self, t: &TileId) -> Result<()> {
        self.check_level(t.level)?;
        let n = 1u64 << t.level;
        if u64::from(t.x) >= n || u64::from(t.y) >= n {
            return Err(Error::OutOfRange(format!("tile {t} outside {n}x{n} grid")));
        }
        Ok(())
    }

    /// Tile edge lengths `(east, north)` at a level, in meters.
    pub fn tile_size(&self, level: u8) -> (f64, f64) {
        let n = (1u64 << level) as f64;
        (self.map_width / n, self.map_height / n)
    }

    pub fn tile_bounds(&self, t: &TileId) -> Result<ConvexPolygon> {
        self.check_tile(t)?;
        let (x0, y0, x1, y1) = self.tile_extent(t);
        ConvexPolygon::rectangle(x0, y0, x1, y1)
    }

    fn tile_extent(&self, t: &TileId) -> (f64, f64, f64, f64) {
        let (w, h) = self.tile_size(t.level);
        let x0 = self.origin.x_east + w * f64::from(t.x);
        let y0 = self.origin.y_north + h * f64::from(t.y);
        (x0, y0, x0 + w, y0 + h)
    }

    pub fn tile_center(&self, t: &TileId) -> Result<GeoPoint> {
        self.check_tile(t)?;
        let (x0, y0, x1, y1) = self.tile_extent(t);
        Ok(GeoPoint::new((x0 + x1) / 2.0, (y0 + y1) / 2.0))
    }

    /// Meters per pixel along the east axis.
    pub fn ground_resolution(&self, level: u8) -> f64 {
        self.map_width / ((1u64 << level) as f64 * f64::from(self.tile_pixels))
    }

    /// Every kept tile at `levels` whose bounds overlap `region` with positive
    /// area, sorted by `(level, y, x)`.
    pub fn tiles_overlapping(&self, region: &ConvexPolygon, levels: RangeInclusive<u8>) -> Result<Vec<TileId>> {
        if levels.is_empty() {
            return Ok(Vec::new());
        }
        self.check_level(*levels.start())?;
        self.check_level(*levels.end())?;
        let (rx0, ry0, rx1, ry1) = region.bounding_box();
        let mut out = Vec::new();
        for level in levels {
            let n = 1u64 << level;
            let (w, h) = self.tile_size(level);
            let idx_range = |lo: f64, hi: f64, origin: f64, step: f64| -> Option<(u32, u32)> {
                let a = ((lo - origin) / step).floor();
                let b = ((hi - origin) / step).floor();
                if b < 0.0 || a >= n as f64 {
                    return None;
                }
                // widen by one to absorb rounding at tile borders
                let a = (a - 1.0).max(0.0) as u64;
                let b = (b + 1.0).min(n as f64 - 1.0) as u64;
                Some((a as u32, b as u32))
            };
            let Some((cx0, cx1)) = idx_range(rx0, rx1, self.origin.x_east, w) else { continue };
            let Some((cy0, cy1)) = idx_range(ry0, ry1, self.origin.y_north, h) else { continue };
            for y in cy0..=cy1 {
                for x in cx0..=cx1 {
                    let t = TileId::new(level, x, y);
                    if !self.is_kept(&t) {
                        continue;
                    }
                    let (x0, y0, x1, y1) = self.tile_extent(&t);
                    let bounds = ConvexPolygon::rectangle(x0, y0, x1, y1)?;
                    if convex_intersection(&bounds, region).is_some() {
                        out.push(t);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// All kept tiles at a level, sorted.
    pub fn tiles_at(&self, level: u8) -> Result<Vec<TileId>> {
        self.check_level(level)?;
        let n = 1u32 << level;
        Ok((0..n)
            .flat_map(|y| (0..n).map(move |x| TileId::new(level, x, y)))
            .filter(|t| self.is_kept(t))
            .collect())
    }
}
