//! On-device removal of sensitive places and age-based purging.
//!
//! Nothing derived from a trace may leave the device unless it went through
//! [`redact`] first; the only way to obtain a [`RedactedTrace`] is through that
//! function.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{quantize, GpsPoint, GridConfig};

/// Mean Earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
pub const DEFAULT_HOME_RADIUS_M: f64 = 200.0;
pub const SECONDS_PER_DAY: u64 = 86_400;
const HOME_GRID_DELTA_DEG: f64 = 0.001;
const MIN_NIGHT_POINTS: usize = 10;

#[derive(Debug, Error)]
pub enum RedactionError {
    #[error("zone radius must be > 0, got {0}")]
    Radius(f64),
    #[error("zone centre out of range: ({0}, {1})")]
    Centre(f64, f64),
    #[error("retention must be at least one day")]
    Retention,
    #[error("night window hours must be in [0, 24): {0}..{1}")]
    NightWindow(u8, u8),
    #[error("zone file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneSource {
    AutoHome,
    Manual,
}

/// A disc around a sensitive place. Serialized flat as
/// `{lat, lon, radius_m, label, source}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedactionZone {
    pub lat: f64,
    pub lon: f64,
    pub radius_m: f64,
    pub label: String,
    pub source: ZoneSource,
}

impl RedactionZone {
    pub fn new(lat: f64, lon: f64, radius_m: f64, label: &str, source: ZoneSource) -> Result<Self, RedactionError> {
        let z = RedactionZone {
            lat,
            lon,
            radius_m,
            label: label.to_string(),
            source,
        };
        z.validate()?;
        Ok(z)
    }

    pub fn validate(&self) -> Result<(), RedactionError> {
        if !(self.radius_m > 0.0 && self.radius_m.is_finite()) {
            return Err(RedactionError::Radius(self.radius_m));
        }
        if GpsPoint::new(self.lat, self.lon, 0).is_err() {
            return Err(RedactionError::Centre(self.lat, self.lon));
        }
        Ok(())
    }

    pub fn contains(&self, p: &GpsPoint) -> bool {
        distance_m(self.lat, self.lon, p.lat, p.lon) <= self.radius_m
    }
}

/// Read a zone file (JSON array of zones).
pub fn read_zones<R: Read>(reader: R) -> Result<Vec<RedactionZone>, RedactionError> {
    let zones: Vec<RedactionZone> = serde_json::from_reader(reader)?;
    for z in &zones {
        z.validate()?;
    }
    Ok(zones)
}

pub fn write_zones<W: Write>(writer: W, zones: &[RedactionZone]) -> Result<(), RedactionError> {
    serde_json::to_writer_pretty(writer, zones)?;
    Ok(())
}

/// Equirectangular approximation of the great-circle distance.
pub fn distance_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let mut dlon = lon2 - lon1;
    if dlon > 180.0 {
        dlon -= 360.0;
    } else if dlon < -180.0 {
        dlon += 360.0;
    }
    let mean_lat = ((lat1 + lat2) / 2.0).to_radians();
    let x = dlon.to_radians() * mean_lat.cos();
    let y = (lat2 - lat1).to_radians();
    EARTH_RADIUS_M * x.hypot(y)
}

/// A trace with every in-zone point removed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RedactedTrace(Vec<GpsPoint>);

impl RedactedTrace {
    pub fn points(&self) -> &[GpsPoint] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Keep exactly the points strictly farther than every zone's radius from its
/// centre. Order is preserved.
pub fn redact(trace: &[GpsPoint], zones: &[RedactionZone]) -> RedactedTrace {
    RedactedTrace(
        trace
            .iter()
            .filter(|p| !zones.iter().any(|z| z.contains(p)))
            .copied()
            .collect(),
    )
}

/// Local-time window treated as "night" when inferring a home location.
/// `start_h > end_h` wraps midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NightWindow {
    pub start_h: u8,
    pub end_h: u8,
    /// Offset of local time from UTC, seconds.
    pub utc_offset_sec: i64,
}

impl Default for NightWindow {
    fn default() -> Self {
        NightWindow {
            start_h: 22,
            end_h: 6,
            utc_offset_sec: 0,
        }
    }
}

impl NightWindow {
    pub fn validate(&self) -> Result<(), RedactionError> {
        if self.start_h >= 24 || self.end_h >= 24 {
            return Err(RedactionError::NightWindow(self.start_h, self.end_h));
        }
        Ok(())
    }

    pub fn contains(&self, t: u64) -> bool {
        let local = t as i64 + self.utc_offset_sec;
        let hour = (local.rem_euclid(SECONDS_PER_DAY as i64) / 3600) as u8;
        if self.start_h <= self.end_h {
            (self.start_h..self.end_h).contains(&hour)
        } else {
            hour >= self.start_h || hour < self.end_h
        }
    }
}

/// Guess the user's home from where they spend the night.
///
/// Night-time points are bucketed on a 0.001° grid; the zone is centred on the
/// mean of the points in the most populated bucket. Fewer than ten night
/// points yields no zone.
pub fn infer_home_zone(trace: &[GpsPoint], window: &NightWindow, radius_m: f64) -> Option<RedactionZone> {
    if window.validate().is_err() || radius_m.is_nan() || radius_m <= 0.0 {
        return None;
    }
    let coarse = GridConfig {
        delta_deg: HOME_GRID_DELTA_DEG,
        tau_sec: 1,
        region: "home".into(),
        temporal_k: 0,
    };
    let night: Vec<&GpsPoint> = trace.iter().filter(|p| window.contains(p.t)).collect();
    if night.len() < MIN_NIGHT_POINTS {
        return None;
    }
    let mut buckets: HashMap<(i32, i32), Vec<&GpsPoint>> = HashMap::new();
    for p in night {
        if let Ok(pi) = quantize(p, &coarse) {
            buckets.entry((pi.cell_x, pi.cell_y)).or_default().push(p);
        }
    }
    // Most points wins; ties go to the smallest cell key.
    let (_, pts) = buckets
        .into_iter()
        .max_by(|(ka, va), (kb, vb)| va.len().cmp(&vb.len()).then(kb.cmp(ka)))?;
    let n = pts.len() as f64;
    let lat = pts.iter().map(|p| p.lat).sum::<f64>() / n;
    let lon = pts.iter().map(|p| p.lon).sum::<f64>() / n;
    Some(RedactionZone {
        lat,
        lon,
        radius_m,
        label: "home".into(),
        source: ZoneSource::AutoHome,
    })
}

/// How many days collected data may be kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    pub d_days: u32,
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        RetentionPolicy { d_days: 14 }
    }
}

impl RetentionPolicy {
    pub fn new(d_days: u32) -> Result<Self, RedactionError> {
        if d_days == 0 {
            return Err(RedactionError::Retention);
        }
        Ok(RetentionPolicy { d_days })
    }

    pub fn window_sec(&self) -> u64 {
        self.d_days as u64 * SECONDS_PER_DAY
    }

    /// Records stamped strictly before this instant are expired.
    pub fn cutoff(&self, now: u64) -> u64 {
        now.saturating_sub(self.window_sec())
    }
}

/// Anything that carries a collection time.
pub trait Timestamped {
    fn timestamp(&self) -> u64;
}

impl Timestamped for GpsPoint {
    fn timestamp(&self) -> u64 {
        self.t
    }
}

/// Drop every record older than the retention window. Returns how many were
/// removed.
pub fn purge_old<T: Timestamped>(store: &mut Vec<T>, now: u64, policy: &RetentionPolicy) -> usize {
    let cutoff = policy.cutoff(now);
    let before = store.len();
    store.retain(|r| r.timestamp() >= cutoff);
    before - store.len()
}
