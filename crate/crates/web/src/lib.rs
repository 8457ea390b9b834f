//! WebAssembly bindings behind the static demo page in `www/`.
//!
//! Every export takes plain values and returns a JSON string. The same
//! operations are available to native Rust through the non-wasm functions.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use contactpsi::aggregation::{coarsen, count_cells, CoarseCell, HeatmapCell};
use contactpsi::client::{
    exposure_check, read_trace, read_traces_by_user, upload_trace, write_trace_csv, ClientConfig, ContactWindow,
    LocalTransport, RiskReport,
};
use contactpsi::crypto::hash_interval;
use contactpsi::grid::{canonical_bytes, expand, neighbors_spatial, quantize, GpsPoint, GridConfig, PointInterval};
use contactpsi::server::{CarrierServer, ManualClock, ServerConfig};
use contactpsi::sim::{build_scenario, oracle_contacts, BoundingBox, SimConfig};
use contactpsi::{GroupParams, Mode};
use rand::rngs::OsRng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DEMO_TOKEN: &str = "demo";

#[derive(Debug, Clone, Serialize)]
pub struct StencilCell {
    pub interval: PointInterval,
    pub window: ContactWindow,
    pub digest_hex: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellView {
    pub interval: PointInterval,
    pub window: ContactWindow,
    pub canonical_hex: String,
    pub digest_hex: String,
    /// The 3 x 3 spatial neighbourhood at the same time index, row by row
    /// from north-west.
    pub stencil: Vec<StencilCell>,
    /// Intervals a client sends for this one interval, temporal window included.
    pub expanded_count: usize,
}

pub fn explore(lat: f64, lon: f64, t: u64, grid: &GridConfig) -> Result<CellView, String> {
    let point = GpsPoint::new(lat, lon, t).map_err(|e| e.to_string())?;
    grid.validate().map_err(|e| e.to_string())?;
    let pi = quantize(&point, grid).map_err(|e| e.to_string())?;
    let view = |pi: &PointInterval| -> Result<StencilCell, String> {
        Ok(StencilCell {
            interval: *pi,
            window: ContactWindow::of(pi, grid),
            digest_hex: hash_interval(pi, grid).map_err(|e| e.to_string())?.to_hex(),
        })
    };
    let mut stencil = neighbors_spatial(&pi, grid)
        .iter()
        .map(view)
        .collect::<Result<Vec<_>, _>>()?;
    stencil.sort_by_key(|c| (std::cmp::Reverse(c.interval.cell_y), c.interval.cell_x));
    let centre = view(&pi)?;
    Ok(CellView {
        interval: pi,
        window: centre.window,
        canonical_hex: hex::encode(canonical_bytes(&pi, grid).map_err(|e| e.to_string())?),
        digest_hex: centre.digest_hex,
        stencil,
        expanded_count: expand(std::iter::once(&pi), grid).len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WireMessage {
    pub direction: String,
    pub endpoint: String,
    pub bytes: usize,
    pub preview: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiDemo {
    pub group: String,
    pub mode: Mode,
    pub expand_neighbors: bool,
    pub carrier_intervals: usize,
    pub elements_sent: usize,
    pub report: RiskReport,
    /// What a plaintext comparison of the two traces finds.
    pub oracle_raw: usize,
    pub oracle_expanded: usize,
    pub wire: Vec<WireMessage>,
}

fn parse_trace(csv: &str) -> Result<Vec<GpsPoint>, String> {
    read_trace(csv.as_bytes()).map_err(|e| e.to_string())
}

/// Upload `carrier_csv` to a fresh in-memory server and check `user_csv`
/// against it, keeping a summary of every message on the wire.
pub fn psi_round(user_csv: &str, carrier_csv: &str, mode: Mode, group: &str, expand: bool) -> Result<PsiDemo, String> {
    let user = parse_trace(user_csv)?;
    let carrier = parse_trace(carrier_csv)?;
    let params = GroupParams::by_name(group).ok_or_else(|| format!("unknown group {group:?}"))?;
    let latest = user.iter().chain(&carrier).map(|p| p.t).max().unwrap_or(0);
    let cfg = ServerConfig {
        upload_token: DEMO_TOKEN.into(),
        ..ServerConfig::default()
    };
    let region = cfg.regions[0].clone();
    let grid = cfg.grid(&region);
    let server =
        CarrierServer::new(cfg, params.clone(), Arc::new(ManualClock::new(latest + 1))).map_err(|e| e.to_string())?;
    let mut transport = LocalTransport::recording(&server);
    let client = ClientConfig {
        region: region.clone(),
        mode,
        expand_neighbors: expand,
        ..ClientConfig::default()
    };
    let uploaded =
        upload_trace(&carrier, &[], &client, DEMO_TOKEN, false, &mut transport).map_err(|e| e.to_string())?;
    let outcome = exposure_check(&user, &[], &client, &mut transport, &mut OsRng).map_err(|e| e.to_string())?;

    let traces = BTreeMap::from([("carrier".to_string(), carrier), ("user".to_string(), user)]);
    let oracle =
        oracle_contacts(&traces, &BTreeSet::from(["carrier".to_string()]), &grid).map_err(|e| e.to_string())?;
    let wire = transport
        .take_transcript()
        .into_iter()
        .map(|line| {
            let mut parts = line.splitn(3, ' ');
            let arrow = parts.next().unwrap_or_default();
            let endpoint = parts.next().unwrap_or_default().to_string();
            let body = parts.next().unwrap_or_default();
            WireMessage {
                direction: if arrow == ">" {
                    "client to server"
                } else {
                    "server to client"
                }
                .into(),
                endpoint,
                bytes: body.len(),
                preview: body.chars().take(160).collect(),
            }
        })
        .collect();
    Ok(PsiDemo {
        group: params.name().to_string(),
        mode,
        expand_neighbors: expand,
        carrier_intervals: uploaded.accepted,
        elements_sent: outcome.sent,
        report: outcome.report,
        oracle_raw: oracle["user"].raw.len(),
        oracle_expanded: oracle["user"].expanded_count,
        wire,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HeatmapDemo {
    pub cells: Vec<HeatmapCell>,
    pub intervals: u64,
    pub published: u64,
    pub suppressed: u64,
}

/// Heatmap of every trace in `csv`, one count per distinct interval per user.
pub fn heatmap(csv: &str, factor_space: u32, factor_time: u32, k_suppress: u64) -> Result<HeatmapDemo, String> {
    if factor_space == 0 || factor_time == 0 || k_suppress == 0 {
        return Err("factors and k must be positive".into());
    }
    let grid = GridConfig::default();
    let traces = read_traces_by_user(csv.as_bytes()).map_err(|e| e.to_string())?;
    let mut coarse: Vec<CoarseCell> = Vec::new();
    for points in traces.values() {
        let distinct: BTreeSet<PointInterval> = points
            .iter()
            .map(|p| quantize(p, &grid))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        coarse.extend(distinct.iter().map(|pi| coarsen(pi, factor_space, factor_time)));
    }
    let cells = count_cells(coarse.iter().copied(), k_suppress);
    let published = cells.iter().map(|c| c.carrier_point_count).sum();
    Ok(HeatmapDemo {
        intervals: coarse.len() as u64,
        published,
        suppressed: coarse.len() as u64 - published,
        cells,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Samples {
    pub user_csv: String,
    pub carrier_csv: String,
    pub population_csv: String,
}

/// A small seeded scenario: one carrier, a user who crossed paths with it,
/// and the whole population for the heatmap.
pub fn samples(seed: u64) -> Result<Samples, String> {
    let cfg = SimConfig {
        n_users: 12,
        n_carriers: 1,
        duration_days: 0.05,
        n_contacts: 3,
        seed,
        bbox: BoundingBox {
            lat_min: 42.350,
            lat_max: 42.356,
            lon_min: -71.062,
            lon_max: -71.056,
        },
        ..SimConfig::default()
    };
    let s = build_scenario(&cfg).map_err(|e| e.to_string())?;
    let carrier = s.carriers.iter().next().ok_or("scenario has no carrier")?;
    let user = s
        .contacts
        .first()
        .map(|c| c.user.clone())
        .or_else(|| s.traces.keys().find(|u| !s.carriers.contains(*u)).cloned())
        .ok_or("scenario has no user")?;
    let csv = |traces: &BTreeMap<String, Vec<GpsPoint>>| -> Result<String, String> {
        let mut out = Vec::new();
        write_trace_csv(&mut out, traces).map_err(|e| e.to_string())?;
        String::from_utf8(out).map_err(|e| e.to_string())
    };
    let only = |id: &str| BTreeMap::from([(id.to_string(), s.traces[id].clone())]);
    Ok(Samples {
        user_csv: csv(&only(&user))?,
        carrier_csv: csv(&only(carrier))?,
        population_csv: csv(&s.traces)?,
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = exploreCell)]
pub fn explore_cell(
    lat: f64,
    lon: f64,
    t: f64,
    delta_deg: f64,
    tau_sec: u32,
    region: &str,
    temporal_k: u32,
) -> Result<String, JsError> {
    to_json(
        GridConfig::new(delta_deg, tau_sec as u64, region, temporal_k)
            .map_err(|e| e.to_string())
            .and_then(|grid| explore(lat, lon, t.max(0.0) as u64, &grid)),
    )
}

#[wasm_bindgen(js_name = runPsiRound)]
pub fn run_psi_round(
    user_csv: &str,
    carrier_csv: &str,
    mode: &str,
    group: &str,
    expand: bool,
) -> Result<String, JsError> {
    to_json(
        mode.parse::<Mode>()
            .and_then(|m| psi_round(user_csv, carrier_csv, m, group, expand)),
    )
}

#[wasm_bindgen(js_name = buildHeatmap)]
pub fn build_heatmap(csv: &str, factor_space: u32, factor_time: u32, k_suppress: u32) -> Result<String, JsError> {
    to_json(heatmap(csv, factor_space, factor_time, k_suppress as u64))
}

#[wasm_bindgen(js_name = sampleTraces)]
pub fn sample_traces(seed: u32) -> Result<String, JsError> {
    to_json(samples(seed as u64))
}
