//! JSON bodies exchanged between clients and a regional server.

use serde::{Deserialize, Serialize};

use crate::aggregation::CoarseCell;
use crate::crypto::{HashedInterval, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadInterval {
    pub digest_hex: HashedInterval,
    pub t_idx: i64,
}

/// A diagnosed carrier's hashed intervals, plus an optional stream of
/// on-device coarsened cells feeding the public heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadRequest {
    pub token: String,
    pub intervals: Vec<UploadInterval>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coarse_cells: Vec<CoarseCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub accepted: usize,
    pub skipped_stale: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiRequest {
    pub mode: Mode,
    /// Client-blinded elements, base64 of fixed-width big-endian bytes.
    pub elements: Vec<String>,
    pub client_key_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiResponse {
    pub epoch_id: u64,
    pub double_blinded: Vec<String>,
    pub carrier_blinded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsResponse {
    pub region: String,
    pub delta_deg: f64,
    pub tau_sec: u64,
    pub temporal_k: u32,
    pub group: String,
    pub byte_len: usize,
    pub d_days: u32,
    pub factor_space: u32,
    pub factor_time: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapQuery {
    /// Epoch seconds, inclusive.
    pub from: Option<u64>,
    /// Epoch seconds, exclusive.
    pub to: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub mod codes {
    pub const UNAUTHORIZED: &str = "unauthorized";
    pub const UNKNOWN_REGION: &str = "unknown_region";
    pub const TOO_MANY_ELEMENTS: &str = "too_many_elements";
    pub const QUOTA_EXHAUSTED: &str = "quota_exhausted";
    pub const BAD_REQUEST: &str = "bad_request";
    pub const STORAGE: &str = "storage_error";
}
