//! Spatiotemporal partition of (lat, lon, time) into discrete point intervals.
//!
//! Space is cut into a square lat/lon grid with edge `delta_deg`; time is cut
//! into intervals of `tau_sec` anchored at epoch 0. Cell indices come from
//! plain floor division, so every device that shares a [`GridConfig`] maps a
//! sample to the same [`PointInterval`] bit for bit.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Domain tag prefixed to every canonical interval encoding.
pub const ENCODING_TAG: &[u8] = b"PI-v1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180)")]
    Longitude(f64),
    #[error("region label must be non-empty ASCII without NUL bytes: {0:?}")]
    Region(String),
    #[error("invalid grid configuration: {0}")]
    Config(String),
    #[error("cell ({cell_x}, {cell_y}, {t_idx}) outside the grid")]
    Cell { cell_x: i32, cell_y: i32, t_idx: i64 },
}

/// A raw timestamped GPS sample. Only ever held on the client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsPoint {
    pub lat: f64,
    pub lon: f64,
    /// Epoch seconds.
    pub t: u64,
}

impl GpsPoint {
    pub fn new(lat: f64, lon: f64, t: u64) -> Result<Self, GridError> {
        let p = GpsPoint { lat, lon, t };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(GridError::Latitude(self.lat));
        }
        if !(-180.0..180.0).contains(&self.lon) {
            return Err(GridError::Longitude(self.lon));
        }
        Ok(())
    }
}

/// The shared logical map. Every client and the regional server must agree on
/// all of these fields exactly, or hashed intervals will never match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub delta_deg: f64,
    pub tau_sec: u64,
    pub region: String,
    pub temporal_k: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            delta_deg: 0.0005,
            tau_sec: 300,
            region: "bos".to_string(),
            temporal_k: 0,
        }
    }
}

impl GridConfig {
    pub fn new(delta_deg: f64, tau_sec: u64, region: &str, temporal_k: u32) -> Result<Self, GridError> {
        let cfg = GridConfig {
            delta_deg,
            tau_sec,
            region: region.to_string(),
            temporal_k,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.delta_deg.is_finite() && self.delta_deg > 0.0) {
            return Err(GridError::Config(format!(
                "delta_deg must be > 0, got {}",
                self.delta_deg
            )));
        }
        if 360.0 / self.delta_deg > i32::MAX as f64 {
            return Err(GridError::Config(format!("delta_deg {} too fine", self.delta_deg)));
        }
        if self.tau_sec == 0 {
            return Err(GridError::Config("tau_sec must be > 0".into()));
        }
        validate_region(&self.region)
    }

    /// Number of longitude cells, `ceil(360 / delta_deg)`.
    pub fn lon_cells(&self) -> i32 {
        (360.0 / self.delta_deg).ceil() as i32
    }

    /// Number of latitude cells, `ceil(180 / delta_deg)`.
    pub fn lat_cells(&self) -> i32 {
        (180.0 / self.delta_deg).ceil() as i32
    }
}

pub(crate) fn validate_region(region: &str) -> Result<(), GridError> {
    if region.is_empty() || !region.is_ascii() || region.bytes().any(|b| b == 0) {
        return Err(GridError::Region(region.to_string()));
    }
    Ok(())
}

/// A discrete 3-D grid cell: longitude index, latitude index, time index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointInterval {
    pub cell_x: i32,
    pub cell_y: i32,
    pub t_idx: i64,
}

impl PointInterval {
    pub fn new(cell_x: i32, cell_y: i32, t_idx: i64) -> Self {
        PointInterval { cell_x, cell_y, t_idx }
    }

    pub fn is_valid(&self, cfg: &GridConfig) -> bool {
        (0..cfg.lon_cells()).contains(&self.cell_x) && (0..cfg.lat_cells()).contains(&self.cell_y) && self.t_idx >= 0
    }

    /// Southern/western cell edges and the interval start, i.e. the inverse
    /// image corner of this cell.
    pub fn lat_range(&self, cfg: &GridConfig) -> (f64, f64) {
        let lo = self.cell_y as f64 * cfg.delta_deg - 90.0;
        (lo, lo + cfg.delta_deg)
    }

    pub fn lon_range(&self, cfg: &GridConfig) -> (f64, f64) {
        let lo = self.cell_x as f64 * cfg.delta_deg - 180.0;
        (lo, lo + cfg.delta_deg)
    }

    pub fn time_range(&self, cfg: &GridConfig) -> (u64, u64) {
        let start = self.t_idx as u64 * cfg.tau_sec;
        (start, start + cfg.tau_sec)
    }
}

/// Map a GPS sample onto its point interval.
pub fn quantize(point: &GpsPoint, cfg: &GridConfig) -> Result<PointInterval, GridError> {
    point.validate()?;
    // Float rounding at the upper edges can land exactly on the cell count.
    let cell_x = (((point.lon + 180.0) / cfg.delta_deg).floor() as i32).min(cfg.lon_cells() - 1);
    let cell_y = (((point.lat + 90.0) / cfg.delta_deg).floor() as i32).min(cfg.lat_cells() - 1);
    let t_idx = (point.t / cfg.tau_sec) as i64;
    Ok(PointInterval { cell_x, cell_y, t_idx })
}

/// The cell itself plus its (up to) eight spatial neighbours at the same time
/// index. Longitude wraps around the antimeridian; latitude is clamped.
pub fn neighbors_spatial(pi: &PointInterval, cfg: &GridConfig) -> BTreeSet<PointInterval> {
    let nx = cfg.lon_cells();
    let ny = cfg.lat_cells();
    let mut out = BTreeSet::new();
    for dy in -1..=1 {
        let y = pi.cell_y + dy;
        if y < 0 || y >= ny {
            continue;
        }
        for dx in -1..=1 {
            let x = (pi.cell_x + dx).rem_euclid(nx);
            out.insert(PointInterval::new(x, y, pi.t_idx));
        }
    }
    out
}

/// Spatial neighbourhood of every input, replicated across time offsets
/// `-temporal_k..=temporal_k` (clamped at index 0), deduplicated.
pub fn expand<'a, I>(set: I, cfg: &GridConfig) -> BTreeSet<PointInterval>
where
    I: IntoIterator<Item = &'a PointInterval>,
{
    let k = cfg.temporal_k as i64;
    let mut out = BTreeSet::new();
    for pi in set {
        for n in neighbors_spatial(pi, cfg) {
            for dt in -k..=k {
                out.insert(PointInterval::new(n.cell_x, n.cell_y, (n.t_idx + dt).max(0)));
            }
        }
    }
    out
}

/// `"PI-v1" || region || 0x00 || cell_x (BE32) || cell_y (BE32) || t_idx (BE64)`.
pub fn canonical_bytes(pi: &PointInterval, cfg: &GridConfig) -> Result<Vec<u8>, GridError> {
    validate_region(&cfg.region)?;
    let mut out = Vec::with_capacity(ENCODING_TAG.len() + cfg.region.len() + 17);
    out.extend_from_slice(ENCODING_TAG);
    out.extend_from_slice(cfg.region.as_bytes());
    out.push(0);
    out.extend_from_slice(&pi.cell_x.to_be_bytes());
    out.extend_from_slice(&pi.cell_y.to_be_bytes());
    out.extend_from_slice(&pi.t_idx.to_be_bytes());
    Ok(out)
}
