//! On-disk formats: pair manifests, query records, batch schedules, feature
//! tables, checkpoints, training traces and metric reports.
//!
//! Text formats are line-delimited with a JSON header carrying a format name
//! and version. Binary formats are little-endian and start with a 4-byte magic
//! that doubles as the version marker. No format records timestamps, so
//! rewriting identical data yields identical bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose};
use crate::pairing::{PairLabel, PairRecord, PairingConfig, QueryRecord, TIE_RULE};
use crate::retrieval::MetricsReport;
use crate::sampling::{BatchPair, SamplingMode};
use crate::synthgen::{QueryFeatures, TileFeatures};
use crate::tilemap::TileId;
use crate::trainer::{AffineLayer, EmbedModel, EpochStats};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

const PAIRS_FORMAT: &str = "partialgeo-pairs";
const QUERIES_FORMAT: &str = "partialgeo-queries";
const BATCHES_FORMAT: &str = "partialgeo-batches";

pub const EMBEDDING_MAGIC: &[u8; 4] = b"SKLE";
pub const QUERY_TABLE_MAGIC: &[u8; 4] = b"SKLQ";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SKL1";

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Writes a file through a buffered writer.
pub fn save(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a file through a buffered reader.
pub fn load<T>(path: &Path, f: impl FnOnce(&mut dyn BufRead) -> Result<T>) -> Result<T> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    f(&mut BufReader::new(file))
}

fn json_line<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: &str, lineno: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Format(format!("line {lineno}: {e}")))
}

fn check_header(format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Format(format!("expected {expected} file, found {format:?}")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported {format} version {version}")));
    }
    Ok(())
}

/// Non-empty lines with their 1-based line numbers.
fn lines(r: &mut dyn BufRead) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- manifests

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub toolkit: String,
    pub t_pos: f64,
    pub t_semi: f64,
    pub min_level: u8,
    pub max_level: u8,
    pub tie_rule: String,
}

impl ManifestHeader {
    pub fn new(cfg: &PairingConfig) -> Self {
        Self {
            format: PAIRS_FORMAT.into(),
            version: FORMAT_VERSION,
            toolkit: TOOLKIT_VERSION.into(),
            t_pos: cfg.t_pos,
            t_semi: cfg.t_semi,
            min_level: cfg.min_level,
            max_level: cfg.max_level,
            tie_rule: TIE_RULE.into(),
        }
    }

    pub fn pairing(&self) -> PairingConfig {
        PairingConfig { t_pos: self.t_pos, t_semi: self.t_semi, min_level: self.min_level, max_level: self.max_level }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub pairs: Vec<PairRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    query_id: String,
    level: u8,
    x: u32,
    y: u32,
    iou: f64,
    label: PairLabel,
}

/// One JSON object per pair; IOU is written with 6 decimals.
pub fn write_manifest(w: &mut dyn Write, header: &ManifestHeader, pairs: &[PairRecord]) -> Result<()> {
    writeln!(w, "{}", json_line(header)?)?;
    for p in pairs {
        writeln!(
            w,
            "{{\"query_id\":{},\"level\":{},\"x\":{},\"y\":{},\"iou\":{:.6},\"label\":\"{}\"}}",
            json_line(&p.query_id)?,
            p.tile.level,
            p.tile.x,
            p.tile.y,
            p.iou,
            p.label
        )?;
    }
    Ok(())
}

pub fn read_manifest(r: &mut dyn BufRead) -> Result<Manifest> {
    let mut it = lines(r)?.into_iter();
    let (n, first) = it.next().ok_or_else(|| Error::Format("empty manifest".into()))?;
    let header: ManifestHeader = parse_line(&first, n)?;
    check_header(&header.format, header.version, PAIRS_FORMAT)?;
    header.pairing().validate()?;
    let mut pairs = Vec::new();
    for (n, line) in it {
        let p: PairLine = parse_line(&line, n)?;
        if !(0.0..=1.0).contains(&p.iou) {
            return Err(Error::Format(format!("line {n}: iou {} outside [0, 1]", p.iou)));
        }
        pairs.push(PairRecord { query_id: p.query_id, tile: TileId::new(p.level, p.x, p.y), iou: p.iou, label: p.label });
    }
    Ok(Manifest { header, pairs })
}

// ------------------------------------------------------------------ queries

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimpleHeader {
    format: String,
    version: u32,
}

pub fn write_queries(w: &mut dyn Write, queries: &[QueryRecord]) -> Result<()> {
    writeln!(w, "{}", json_line(&SimpleHeader { format: QUERIES_FORMAT.into(), version: FORMAT_VERSION })?)?;
    for q in queries {
        writeln!(w, "{}", json_line(q)?)?;
    }
    Ok(())
}

/// Reads query records, re-validating poses and intrinsics.
pub fn read_queries(r: &mut dyn BufRead) -> Result<Vec<QueryRecord>> {
    let mut it = lines(r)?.into_iter();
    let (n, first) = it.next().ok_or_else(|| Error::Format("empty query file".into()))?;
    let header: SimpleHeader = parse_line(&first, n)?;
    check_header(&header.format, header.version, QUERIES_FORMAT)?;
    it.map(|(n, line)| {
        let q: QueryRecord = parse_line(&line, n)?;
        let p = q.pose;
        let pose = CameraPose::new(p.ground_point, p.altitude, p.roll, p.pitch, p.yaw)
            .map_err(|e| Error::Format(format!("line {n}: {e}")))?;
        let intr = CameraIntrinsics::new(q.intr.hfov, q.intr.vfov).map_err(|e| Error::Format(format!("line {n}: {e}")))?;
        Ok(QueryRecord { query_id: q.query_id, pose, intr })
    })
    .collect()
}

// ---------------------------------------------------------------- schedules

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub batch_size: usize,
    pub sampling: SamplingMode,
    /// Number of batches in each epoch, in file order.
    pub batches_per_epoch: Vec<usize>,
}

impl ScheduleHeader {
    pub fn new(seed: u64, batch_size: usize, sampling: SamplingMode, batches_per_epoch: Vec<usize>) -> Self {
        Self { format: BATCHES_FORMAT.into(), version: FORMAT_VERSION, seed, batch_size, sampling, batches_per_epoch }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub header: ScheduleHeader,
    /// Each batch as `(query_id, tile)` pairs.
    pub batches: Vec<Vec<(String, TileId)>>,
}

/// One batch per line, pairs written as `query_id:level/x/y` separated by spaces.
pub fn write_schedule(w: &mut dyn Write, header: &ScheduleHeader, batches: &[Vec<BatchPair>]) -> Result<()> {
    if header.batches_per_epoch.iter().sum::<usize>() != batches.len() {
        return Err(Error::Format("batches_per_epoch does not match the batch count".into()));
    }
    writeln!(w, "{}", json_line(header)?)?;
    for batch in batches {
        let mut line = String::new();
        for (i, p) in batch.iter().enumerate() {
            if p.query_id.is_empty() || p.query_id.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("query id {:?} cannot be written to a schedule", p.query_id)));
            }
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{}:{}", p.query_id, p.tile));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_schedule(r: &mut dyn BufRead) -> Result<Schedule> {
    let mut it = lines(r)?.into_iter();
    let (n, first) = it.next().ok_or_else(|| Error::Format("empty schedule".into()))?;
    let header: ScheduleHeader = parse_line(&first, n)?;
    check_header(&header.format, header.version, BATCHES_FORMAT)?;
    let mut batches = Vec::new();
    for (n, line) in it {
        let batch = line
            .split_whitespace()
            .map(|tok| {
                let (q, t) = tok.rsplit_once(':').ok_or_else(|| Error::Format(format!("line {n}: bad pair {tok:?}")))?;
                let tile: TileId = t.parse().map_err(|e| Error::Format(format!("line {n}: {e}")))?;
                Ok((q.to_string(), tile))
            })
            .collect::<Result<Vec<_>>>()?;
        batches.push(batch);
    }
    if header.batches_per_epoch.iter().sum::<usize>() != batches.len() {
        return Err(Error::Format("schedule is truncated or has extra batches".into()));
    }
    Ok(Schedule { header, batches })
}

// ----------------------------------------------------------- binary tables

fn put_u32(w: &mut dyn Write, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s(w: &mut dyn Write, vals: impl IntoIterator<Item = f32>) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Cursor<'a> {
    r: &'a mut dyn Read,
}

impl Cursor<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(|_| Error::Format("unexpected end of file".into()))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        (0..n).map(|_| self.f32()).collect()
    }
    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.bytes::<4>()?;
        if &m != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }
    fn finish(&mut self) -> Result<()> {
        let mut rest = [0u8; 1];
        match self.r.read(&mut rest)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after payload".into())),
        }
    }
}

fn check_table(len: usize, dim: usize, values: usize) -> Result<()> {
    if len.checked_mul(dim) != Some(values) {
        return Err(Error::Shape(format!("{len} rows of dim {dim} but {values} values")));
    }
    Ok(())
}

/// Tile-keyed table: magic, count, dim, values, then `(level u8, x u32, y u32)` per row.
pub fn write_embeddings(w: &mut dyn Write, t: &TileFeatures) -> Result<()> {
    check_table(t.ids.len(), t.dim, t.values.len())?;
    w.write_all(EMBEDDING_MAGIC)?;
    put_u32(w, t.ids.len(), "count")?;
    put_u32(w, t.dim, "dim")?;
    put_f32s(w, t.values.iter().copied())?;
    for id in &t.ids {
        w.write_all(&[id.level])?;
        w.write_all(&id.x.to_le_bytes())?;
        w.write_all(&id.y.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_embeddings(r: &mut dyn Read) -> Result<TileFeatures> {
    let mut c = Cursor { r };
    c.magic(EMBEDDING_MAGIC)?;
    let count = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let values = c.f32s(count * dim)?;
    let ids = (0..count)
        .map(|_| Ok(TileId::new(c.u8()?, c.u32()?, c.u32()?)))
        .collect::<Result<Vec<_>>>()?;
    c.finish()?;
    Ok(TileFeatures { ids, dim, values })
}

/// Query-keyed table: magic, count, dim, values, then length-prefixed UTF-8 ids.
pub fn write_query_table(w: &mut dyn Write, t: &QueryFeatures) -> Result<()> {
    check_table(t.ids.len(), t.dim, t.values.len())?;
    w.write_all(QUERY_TABLE_MAGIC)?;
    put_u32(w, t.ids.len(), "count")?;
    put_u32(w, t.dim, "dim")?;
    put_f32s(w, t.values.iter().copied())?;
    for id in &t.ids {
        put_u32(w, id.len(), "id length")?;
        w.write_all(id.as_bytes())?;
    }
    Ok(())
}

pub fn read_query_table(r: &mut dyn Read) -> Result<QueryFeatures> {
    let mut c = Cursor { r };
    c.magic(QUERY_TABLE_MAGIC)?;
    let count = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let values = c.f32s(count * dim)?;
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        let n = c.u32()? as usize;
        let mut buf = vec![0u8; n];
        c.r.read_exact(&mut buf).map_err(|_| Error::Format("unexpected end of file".into()))?;
        ids.push(String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?);
    }
    c.finish()?;
    Ok(QueryFeatures { ids, dim, values })
}

// -------------------------------------------------------------- checkpoints

/// Magic, `d_in`, `d_out`, view count, then per view the row-major weight and
/// the bias, then the temperature. Parameters are stored as f32.
pub fn write_checkpoint(w: &mut dyn Write, m: &EmbedModel) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, m.d_in(), "d_in")?;
    put_u32(w, m.d_out(), "d_out")?;
    let layers: Vec<&AffineLayer> = std::iter::once(&m.query).chain(m.reference.as_ref()).collect();
    put_u32(w, layers.len(), "views")?;
    for l in layers {
        put_f32s(w, l.weight.iter().chain(&l.bias).map(|&v| v as f32))?;
    }
    put_f32s(w, [m.tau as f32])
}

pub fn read_checkpoint(r: &mut dyn Read) -> Result<EmbedModel> {
    let mut c = Cursor { r };
    c.magic(CHECKPOINT_MAGIC)?;
    let d_in = c.u32()? as usize;
    let d_out = c.u32()? as usize;
    let views = c.u32()?;
    if d_in == 0 || d_out == 0 || !(1..=2).contains(&views) {
        return Err(Error::Format(format!("bad checkpoint dims {d_in}x{d_out} with {views} views")));
    }
    let mut layers = Vec::new();
    for _ in 0..views {
        let weight = c.f32s(d_in * d_out)?.into_iter().map(f64::from).collect();
        let bias = c.f32s(d_out)?.into_iter().map(f64::from).collect();
        layers.push(AffineLayer { d_in, d_out, weight, bias });
    }
    let tau = f64::from(c.f32()?);
    c.finish()?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Format(format!("bad temperature {tau}")));
    }
    let reference = if views == 2 { layers.pop() } else { None };
    let query = layers.pop().expect("one layer read");
    Ok(EmbedModel { query, reference, tau })
}

// ------------------------------------------------------------ trace, report

/// Tab-separated per-epoch statistics with a header row.
pub fn write_trace(w: &mut dyn Write, trace: &[EpochStats]) -> Result<()> {
    writeln!(w, "epoch\tbatches\tmean_loss\ttau")?;
    for s in trace {
        writeln!(w, "{}\t{}\t{}\t{}", s.epoch, s.batches, s.mean_loss, s.tau)?;
    }
    Ok(())
}

pub fn read_trace(r: &mut dyn BufRead) -> Result<Vec<EpochStats>> {
    let mut it = lines(r)?.into_iter();
    match it.next() {
        Some((_, h)) if h == "epoch\tbatches\tmean_loss\ttau" => {}
        _ => return Err(Error::Format("missing trace header".into())),
    }
    it.map(|(n, line)| {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Format(format!("line {n}: bad trace row"));
        if f.len() != 4 {
            return Err(bad());
        }
        Ok(EpochStats {
            epoch: f[0].parse().map_err(|_| bad())?,
            batches: f[1].parse().map_err(|_| bad())?,
            mean_loss: f[2].parse().map_err(|_| bad())?,
            tau: f[3].parse().map_err(|_| bad())?,
        })
    })
    .collect()
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_metrics(w: &mut dyn Write, report: &MetricsReport) -> Result<()> {
    let s = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w, "{s}")?;
    Ok(())
}

pub fn read_metrics(r: &mut dyn Read) -> Result<MetricsReport> {
    serde_json::from_reader(r).map_err(|e| Error::Format(e.to_string()))
}
