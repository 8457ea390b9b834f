//! The user-side pipeline.
//!
//! ```text
//! trace -> redact -> quantize -> dedupe (U) -> expand(U) -> hash -> to_group
//!       -> blind(a) -> [server] -> intersect -> map back onto U -> risk level
//! ```
//!
//! Only blinded group elements ever leave the device on the checking path.
//! The exponent `a` is drawn fresh for every exchange and dropped afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{coarsen, CoarseCell};
use crate::api::{ErrorBody, ParamsResponse, PsiRequest, PsiResponse, UploadInterval, UploadRequest, UploadResponse};
use crate::crypto::{
    blind, client_intersect, encode_elements_b64, hash_interval, keygen, to_group, GroupParams, HashedInterval,
    MatchResult, Mode, PsiError,
};
use crate::grid::{expand, quantize, GpsPoint, GridConfig, GridError, PointInterval};
use crate::redaction::{redact, RedactedTrace, RedactionZone};
use crate::server::{CarrierServer, ServerError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("server returned {status} {code}: {message}")]
    Server { status: u16, code: String, message: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("grid configuration differs from the server's: pinned {pinned:?}, server {server:?}")]
    GridMismatch {
        pinned: Box<GridConfig>,
        server: Box<GridConfig>,
    },
    #[error("unsupported group {0:?}")]
    UnsupportedGroup(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Psi(#[from] PsiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ClientError {
    pub fn from_error_body(status: u16, body: ErrorBody) -> Self {
        ClientError::Server {
            status,
            code: body.code,
            message: body.message,
        }
    }

    /// Machine-readable code for CLI error output.
    pub fn code(&self) -> &str {
        match self {
            ClientError::Server { code, .. } => code,
            ClientError::Transport(_) => "transport",
            ClientError::GridMismatch { .. } => "grid_mismatch",
            ClientError::UnsupportedGroup(_) => "unsupported_group",
            ClientError::Parse { .. } => "parse_error",
            ClientError::Grid(_) => "validation_error",
            ClientError::Psi(_) => "protocol_error",
            ClientError::Io(_) => "io_error",
        }
    }
}

impl From<ServerError> for ClientError {
    fn from(e: ServerError) -> Self {
        ClientError::from_error_body(e.status(), e.body())
    }
}

/// How the client reaches a regional server.
pub trait Transport {
    fn params(&mut self, region: &str) -> Result<ParamsResponse, ClientError>;
    fn upload(&mut self, region: &str, req: &UploadRequest) -> Result<UploadResponse, ClientError>;
    fn psi(&mut self, region: &str, req: &PsiRequest) -> Result<PsiResponse, ClientError>;
}

/// In-process transport that still round-trips every message through its
/// JSON wire form, optionally keeping a transcript of the bytes exchanged.
#[derive(Debug)]
pub struct LocalTransport<'a> {
    server: &'a CarrierServer,
    transcript: Option<Vec<String>>,
}

impl<'a> LocalTransport<'a> {
    pub fn new(server: &'a CarrierServer) -> Self {
        LocalTransport {
            server,
            transcript: None,
        }
    }

    pub fn recording(server: &'a CarrierServer) -> Self {
        LocalTransport {
            server,
            transcript: Some(Vec::new()),
        }
    }

    pub fn transcript(&self) -> &[String] {
        self.transcript.as_deref().unwrap_or(&[])
    }

    pub fn take_transcript(&mut self) -> Vec<String> {
        self.transcript.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn call<Req, Resp>(
        &mut self,
        label: &str,
        req: &Req,
        handler: impl FnOnce(&CarrierServer, Req) -> Result<Resp, ServerError>,
    ) -> Result<Resp, ClientError>
    where
        Req: Serialize + for<'de> Deserialize<'de>,
        Resp: Serialize + for<'de> Deserialize<'de>,
    {
        let wire_req = serde_json::to_string(req).map_err(|e| ClientError::Transport(e.to_string()))?;
        if let Some(t) = self.transcript.as_mut() {
            t.push(format!("> {label} {wire_req}"));
        }
        let parsed: Req = serde_json::from_str(&wire_req).map_err(|e| ClientError::Transport(e.to_string()))?;
        let (wire_resp, result) = match handler(self.server, parsed) {
            Ok(resp) => {
                let s = serde_json::to_string(&resp).map_err(|e| ClientError::Transport(e.to_string()))?;
                let back: Resp = serde_json::from_str(&s).map_err(|e| ClientError::Transport(e.to_string()))?;
                (s, Ok(back))
            }
            Err(e) => {
                let s = serde_json::to_string(&e.body()).map_err(|e| ClientError::Transport(e.to_string()))?;
                (s, Err(ClientError::from(e)))
            }
        };
        if let Some(t) = self.transcript.as_mut() {
            t.push(format!("< {label} {wire_resp}"));
        }
        result
    }
}

impl Transport for LocalTransport<'_> {
    fn params(&mut self, region: &str) -> Result<ParamsResponse, ClientError> {
        let region = region.to_string();
        self.call("params", &(), |s, ()| s.params(&region))
    }

    fn upload(&mut self, region: &str, req: &UploadRequest) -> Result<UploadResponse, ClientError> {
        let region = region.to_string();
        self.call("upload", req, |s, r| s.ingest_upload(&region, &r))
    }

    fn psi(&mut self, region: &str, req: &PsiRequest) -> Result<PsiResponse, ClientError> {
        let region = region.to_string();
        self.call("psi", req, |s, r| s.psi_exchange(&region, &r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    None,
    Low,
    Medium,
    High,
}

impl RiskLevel {
    pub fn is_elevated(&self) -> bool {
        *self >= RiskLevel::Medium
    }
}

/// Minimum match counts for each level above `none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskThresholds {
    pub low: usize,
    pub medium: usize,
    pub high: usize,
}

impl Default for RiskThresholds {
    fn default() -> Self {
        RiskThresholds {
            low: 1,
            medium: 3,
            high: 10,
        }
    }
}

impl RiskThresholds {
    pub fn new(low: usize, medium: usize, high: usize) -> Result<Self, String> {
        if low == 0 || low >= medium || medium >= high {
            return Err(format!(
                "thresholds must satisfy 0 < low < medium < high, got {low}/{medium}/{high}"
            ));
        }
        Ok(RiskThresholds { low, medium, high })
    }
}

pub fn assess_risk(match_count: usize, t: &RiskThresholds) -> RiskLevel {
    if match_count >= t.high {
        RiskLevel::High
    } else if match_count >= t.medium {
        RiskLevel::Medium
    } else if match_count >= t.low {
        RiskLevel::Low
    } else {
        RiskLevel::None
    }
}

/// Where and when a matched interval lies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactWindow {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub t_start: u64,
    pub t_end: u64,
}

impl ContactWindow {
    pub fn of(pi: &PointInterval, grid: &GridConfig) -> Self {
        let (lat_min, lat_max) = pi.lat_range(grid);
        let (lon_min, lon_max) = pi.lon_range(grid);
        let (t_start, t_end) = pi.time_range(grid);
        ContactWindow {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            t_start,
            t_end,
        }
    }
}

fn no_contacts(p: &Option<Vec<ContactWindow>>) -> bool {
    p.as_ref().is_none_or(|v| v.is_empty())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub match_count: usize,
    pub level: RiskLevel,
    #[serde(default, skip_serializing_if = "no_contacts")]
    pub points_of_contact: Option<Vec<ContactWindow>>,
}

impl RiskReport {
    pub fn none() -> Self {
        RiskReport {
            match_count: 0,
            level: RiskLevel::None,
            points_of_contact: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub region: String,
    /// Grid pinned by the operator. If set, it must equal the server's.
    pub grid: Option<GridConfig>,
    pub mode: Mode,
    pub thresholds: RiskThresholds,
    /// Opaque identifier the server meters quotas against.
    pub client_key_id: String,
    /// How often the device samples its position.
    pub collection_period_sec: u64,
    /// Query the 9-cell spatial neighbourhood (and temporal window) of each
    /// interval rather than the interval alone.
    pub expand_neighbors: bool,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            region: GridConfig::default().region,
            grid: None,
            mode: Mode::Ordered,
            thresholds: RiskThresholds::default(),
            client_key_id: "anonymous".into(),
            collection_period_sec: 300,
            expand_neighbors: true,
        }
    }
}

impl ClientConfig {
    /// Check the server's advertised parameters against this configuration.
    pub fn reconcile(&self, params: &ParamsResponse) -> Result<(GridConfig, GroupParams), ClientError> {
        let group =
            GroupParams::by_name(&params.group).ok_or_else(|| ClientError::UnsupportedGroup(params.group.clone()))?;
        if group.byte_len() != params.byte_len {
            return Err(ClientError::UnsupportedGroup(format!(
                "{} with byte_len {}",
                params.group, params.byte_len
            )));
        }
        let server = GridConfig {
            delta_deg: params.delta_deg,
            tau_sec: params.tau_sec,
            region: params.region.clone(),
            temporal_k: params.temporal_k,
        };
        server.validate()?;
        if let Some(pinned) = &self.grid {
            if pinned != &server {
                return Err(ClientError::GridMismatch {
                    pinned: Box::new(pinned.clone()),
                    server: Box::new(server),
                });
            }
        }
        Ok((server, group))
    }
}

/// The distinct raw intervals of a trace and their expanded neighbourhood.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub raw: Vec<PointInterval>,
    pub expanded: Vec<PointInterval>,
    /// For each expanded interval, the raw intervals it came from.
    origins: Vec<Vec<u32>>,
}

impl QueryPlan {
    pub fn build(trace: &RedactedTrace, grid: &GridConfig) -> Result<Self, GridError> {
        let raw: BTreeSet<PointInterval> = trace
            .points()
            .iter()
            .map(|p| quantize(p, grid))
            .collect::<Result<_, _>>()?;
        let raw: Vec<PointInterval> = raw.into_iter().collect();
        let mut origin_map: BTreeMap<PointInterval, Vec<u32>> = BTreeMap::new();
        for (i, r) in raw.iter().enumerate() {
            for e in expand(std::iter::once(r), grid) {
                origin_map.entry(e).or_default().push(i as u32);
            }
        }
        let (expanded, origins) = origin_map.into_iter().unzip();
        Ok(QueryPlan { raw, expanded, origins })
    }

    /// A plan that queries the raw intervals only.
    pub fn build_unexpanded(trace: &RedactedTrace, grid: &GridConfig) -> Result<Self, GridError> {
        let raw: BTreeSet<PointInterval> = trace
            .points()
            .iter()
            .map(|p| quantize(p, grid))
            .collect::<Result<_, _>>()?;
        let raw: Vec<PointInterval> = raw.into_iter().collect();
        let origins = (0..raw.len() as u32).map(|i| vec![i]).collect();
        Ok(QueryPlan {
            expanded: raw.clone(),
            raw,
            origins,
        })
    }

    /// Raw intervals whose neighbourhood contains any of the given expanded
    /// positions.
    pub fn raw_hits(&self, expanded_indices: &[usize]) -> BTreeSet<PointInterval> {
        expanded_indices
            .iter()
            .flat_map(|&i| self.origins[i].iter())
            .map(|&r| self.raw[r as usize])
            .collect()
    }
}

/// Everything learned from one exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureOutcome {
    pub report: RiskReport,
    /// Raw intervals with a point of contact; ordered mode only.
    pub matched_raw: Option<BTreeSet<PointInterval>>,
    /// Matched elements among those sent.
    pub matched_sent: usize,
    pub sent: usize,
    pub epoch_id: Option<u64>,
}

/// Full exposure check, returning intermediate detail as well as the report.
pub fn exposure_check<T, R>(
    trace: &[GpsPoint],
    zones: &[RedactionZone],
    cfg: &ClientConfig,
    transport: &mut T,
    rng: &mut R,
) -> Result<ExposureOutcome, ClientError>
where
    T: Transport + ?Sized,
    R: RngCore + CryptoRng,
{
    let redacted = redact(trace, zones);
    let (grid, group) = cfg.reconcile(&transport.params(&cfg.region)?)?;
    let plan = if cfg.expand_neighbors {
        QueryPlan::build(&redacted, &grid)?
    } else {
        QueryPlan::build_unexpanded(&redacted, &grid)?
    };
    if plan.raw.is_empty() {
        return Ok(ExposureOutcome {
            report: RiskReport::none(),
            matched_raw: (cfg.mode == Mode::Ordered).then(BTreeSet::new),
            matched_sent: 0,
            sent: 0,
            epoch_id: None,
        });
    }

    let elems = plan
        .expanded
        .iter()
        .map(|pi| Ok(to_group(&hash_interval(pi, &grid)?, &group)))
        .collect::<Result<Vec<_>, GridError>>()?;
    let key = keygen(&group, rng);
    let request = PsiRequest {
        mode: cfg.mode,
        elements: encode_elements_b64(&blind(&elems, &key, &group), &group),
        client_key_id: cfg.client_key_id.clone(),
    };
    drop(elems);
    let response = transport.psi(&cfg.region, &request)?;
    let double = group.decode_elements_b64(&response.double_blinded)?;
    let carrier = group.decode_elements_b64(&response.carrier_blinded)?;
    if double.len() != request.elements.len() {
        return Err(ClientError::Transport(format!(
            "server answered {} elements for {} sent",
            double.len(),
            request.elements.len()
        )));
    }
    let result = client_intersect(&double, &carrier, &key, cfg.mode, &group);
    drop(key);

    let (matched_raw, match_count, points) = match &result {
        MatchResult::Ordered { matched_indices } => {
            let hits = plan.raw_hits(matched_indices);
            let windows = hits.iter().map(|pi| ContactWindow::of(pi, &grid)).collect();
            (Some(hits.clone()), hits.len(), Some(windows))
        }
        MatchResult::Shuffled { match_count } => (None, *match_count, None),
    };
    Ok(ExposureOutcome {
        report: RiskReport {
            match_count,
            level: assess_risk(match_count, &cfg.thresholds),
            points_of_contact: points,
        },
        matched_raw,
        matched_sent: result.match_count(),
        sent: request.elements.len(),
        epoch_id: Some(response.epoch_id),
    })
}

/// Redact, transform and run one PSI exchange; summarize as a risk report.
///
/// In ordered mode `match_count` is the number of distinct raw intervals with
/// a point of contact; in shuffled mode the client only learns how many of the
/// elements it sent matched.
pub fn run_exposure_check<T, R>(
    trace: &[GpsPoint],
    zones: &[RedactionZone],
    cfg: &ClientConfig,
    transport: &mut T,
    rng: &mut R,
) -> Result<RiskReport, ClientError>
where
    T: Transport + ?Sized,
    R: RngCore + CryptoRng,
{
    exposure_check(trace, zones, cfg, transport, rng).map(|o| o.report)
}

/// Hash a carrier's redacted trace into an upload body. With `coarse` set to
/// `(factor_space, factor_time)`, one coarse cell per distinct interval is
/// attached for the heatmap.
pub fn prepare_upload(
    trace: &RedactedTrace,
    grid: &GridConfig,
    coarse: Option<(u32, u32)>,
    token: &str,
) -> Result<UploadRequest, GridError> {
    let raw: BTreeSet<PointInterval> = trace
        .points()
        .iter()
        .map(|p| quantize(p, grid))
        .collect::<Result<_, _>>()?;
    let intervals = raw
        .iter()
        .map(|pi| {
            Ok(UploadInterval {
                digest_hex: hash_interval(pi, grid)?,
                t_idx: pi.t_idx,
            })
        })
        .collect::<Result<_, GridError>>()?;
    let coarse_cells: Vec<CoarseCell> = match coarse {
        Some((fs, ft)) => raw.iter().map(|pi| coarsen(pi, fs, ft)).collect(),
        None => Vec::new(),
    };
    Ok(UploadRequest {
        token: token.to_string(),
        intervals,
        coarse_cells,
    })
}

/// Diagnosed-carrier path: redact, hash and upload.
pub fn upload_trace<T: Transport + ?Sized>(
    trace: &[GpsPoint],
    zones: &[RedactionZone],
    cfg: &ClientConfig,
    token: &str,
    with_heatmap: bool,
    transport: &mut T,
) -> Result<UploadResponse, ClientError> {
    let redacted = redact(trace, zones);
    let params = transport.params(&cfg.region)?;
    let (grid, _) = cfg.reconcile(&params)?;
    let coarse = with_heatmap.then_some((params.factor_space, params.factor_time));
    let req = prepare_upload(&redacted, &grid, coarse, token)?;
    transport.upload(&cfg.region, &req)
}

/// Check a trace against a downloaded flat file, entirely on the device.
pub fn check_against_flatfile(
    trace: &[GpsPoint],
    zones: &[RedactionZone],
    grid: &GridConfig,
    published: &BTreeSet<HashedInterval>,
    thresholds: &RiskThresholds,
) -> Result<RiskReport, GridError> {
    let plan = QueryPlan::build(&redact(trace, zones), grid)?;
    let mut hits = Vec::new();
    for (i, pi) in plan.expanded.iter().enumerate() {
        if published.contains(&hash_interval(pi, grid)?) {
            hits.push(i);
        }
    }
    let raw = plan.raw_hits(&hits);
    Ok(RiskReport {
        match_count: raw.len(),
        level: assess_risk(raw.len(), thresholds),
        points_of_contact: Some(raw.iter().map(|pi| ContactWindow::of(pi, grid)).collect()),
    })
}

/// Parse `user_id,lat,lon,epoch_seconds` rows (an optional header row
/// starting with `user_id` is skipped). Rows keep their user id.
pub fn read_trace_rows<R: Read>(reader: R) -> Result<Vec<(String, GpsPoint)>, ClientError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| ClientError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(i as u64 + 1),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if i == 0 && rec.get(0) == Some("user_id") {
            continue;
        }
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parse_err = |message: String| ClientError::Parse { line, message };
        if rec.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", rec.len())));
        }
        let lat: f64 = rec[1]
            .parse()
            .map_err(|e| parse_err(format!("latitude {:?}: {e}", &rec[1])))?;
        let lon: f64 = rec[2]
            .parse()
            .map_err(|e| parse_err(format!("longitude {:?}: {e}", &rec[2])))?;
        let t: u64 = rec[3]
            .parse()
            .map_err(|e| parse_err(format!("timestamp {:?}: {e}", &rec[3])))?;
        let p = GpsPoint::new(lat, lon, t).map_err(|e| parse_err(e.to_string()))?;
        out.push((rec[0].to_string(), p));
    }
    Ok(out)
}

/// All points of a trace file, sorted by time.
pub fn read_trace<R: Read>(reader: R) -> Result<Vec<GpsPoint>, ClientError> {
    let mut pts: Vec<GpsPoint> = read_trace_rows(reader)?.into_iter().map(|(_, p)| p).collect();
    pts.sort_by_key(|p| p.t);
    Ok(pts)
}

pub fn ingest_trace(path: &Path) -> Result<Vec<GpsPoint>, ClientError> {
    read_trace(File::open(path)?)
}

/// Group a multi-user trace file by user, each trace sorted by time.
pub fn read_traces_by_user<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<GpsPoint>>, ClientError> {
    let mut out: BTreeMap<String, Vec<GpsPoint>> = BTreeMap::new();
    for (u, p) in read_trace_rows(reader)? {
        out.entry(u).or_default().push(p);
    }
    for pts in out.values_mut() {
        pts.sort_by_key(|p| p.t);
    }
    Ok(out)
}

pub fn write_trace_csv<W: Write>(writer: W, traces: &BTreeMap<String, Vec<GpsPoint>>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "lat", "lon", "t"])?;
    for (user, pts) in traces {
        for p in pts {
            w.write_record([user.as_str(), &p.lat.to_string(), &p.lon.to_string(), &p.t.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
