//! Synthetic populations, a plaintext contact oracle, end-to-end checks of
//! the PSI pipeline against it, and the flat-file enumeration attack.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::OsRng;
use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{exposure_check, upload_trace, ClientConfig, ClientError, LocalTransport, QueryPlan};
use crate::crypto::{hash_interval, GroupParams, HashedInterval, Mode};
use crate::grid::{quantize, GpsPoint, GridConfig, GridError, PointInterval};
use crate::redaction::{redact, SECONDS_PER_DAY};
use crate::server::{CarrierServer, ManualClock, ServerConfig, ServerError, ServerLimits};

pub type Traces = BTreeMap<String, Vec<GpsPoint>>;

const METERS_PER_DEG_LAT: f64 = 111_195.0;
const SIM_TOKEN: &str = "sim-upload-token";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error("enumerating {estimate} intervals exceeds the budget of {budget}")]
    TooLarge { estimate: u128, budget: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for BoundingBox {
    fn default() -> Self {
        // central Boston
        BoundingBox {
            lat_min: 42.33,
            lat_max: 42.37,
            lon_min: -71.10,
            lon_max: -71.04,
        }
    }
}

impl BoundingBox {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = (-90.0..=90.0).contains(&self.lat_min)
            && (-90.0..=90.0).contains(&self.lat_max)
            && (-180.0..180.0).contains(&self.lon_min)
            && (-180.0..180.0).contains(&self.lon_max)
            && self.lat_min < self.lat_max
            && self.lon_min < self.lon_max;
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("bad bounding box {self:?}")))
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_users: usize,
    pub n_carriers: usize,
    pub bbox: BoundingBox,
    pub duration_days: f64,
    pub step_sec: u64,
    /// Random-waypoint speed range in metres per second.
    pub speed_mps: (f64, f64),
    pub n_contacts: usize,
    pub seed: u64,
    /// Timestamp of the first sample.
    pub start_t: u64,
    /// Share of waypoints pulled onto a cell boundary.
    pub edge_bias: f64,
    pub grid: GridConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_users: 200,
            n_carriers: 10,
            bbox: BoundingBox::default(),
            duration_days: 7.0,
            step_sec: 300,
            speed_mps: (0.5, 15.0),
            n_contacts: 50,
            seed: 42,
            start_t: 1_700_006_400,
            edge_bias: 0.3,
            grid: GridConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        self.bbox.validate()?;
        self.grid.validate()?;
        if self.n_carriers > self.n_users {
            return bad(format!("{} carriers but only {} users", self.n_carriers, self.n_users));
        }
        if self.step_sec == 0 {
            return bad("step_sec must be positive".into());
        }
        if !(self.duration_days.is_finite() && self.duration_days >= 0.0) {
            return bad("duration_days must be a non-negative number".into());
        }
        let (lo, hi) = self.speed_mps;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("speed range {lo}..{hi} is invalid"));
        }
        if !(0.0..=1.0).contains(&self.edge_bias) {
            return bad("edge_bias must lie in [0, 1]".into());
        }
        if self.n_contacts > 0 && (self.n_carriers == 0 || self.n_carriers == self.n_users || self.samples() == 0) {
            return bad("seeded contacts need carriers, non-carriers and at least one sample".into());
        }
        Ok(())
    }

    /// Samples per user.
    pub fn samples(&self) -> usize {
        (self.duration_days * SECONDS_PER_DAY as f64 / self.step_sec as f64).floor() as usize
    }

    pub fn end_t(&self) -> u64 {
        self.start_t + self.samples() as u64 * self.step_sec
    }
}

pub fn user_id(i: usize) -> String {
    format!("user{i:04}")
}

fn round7(x: f64) -> f64 {
    (x * 1e7).round() / 1e7
}

struct Walker {
    lat: f64,
    lon: f64,
    target: (f64, f64),
    speed: f64,
    pause: u32,
}

fn pick_waypoint(cfg: &SimConfig, rng: &mut ChaCha20Rng) -> (f64, f64) {
    let b = &cfg.bbox;
    let mut lat = rng.gen_range(b.lat_min..=b.lat_max);
    let mut lon = rng.gen_range(b.lon_min..=b.lon_max);
    if rng.gen_bool(cfg.edge_bias) {
        let d = cfg.grid.delta_deg;
        let jitter = |rng: &mut ChaCha20Rng| rng.gen_range(-2e-7..=2e-7);
        if rng.gen_bool(0.5) {
            lon = ((lon + 180.0) / d).round() * d - 180.0 + jitter(rng);
        } else {
            lat = ((lat + 90.0) / d).round() * d - 90.0 + jitter(rng);
        }
    }
    (lat.clamp(b.lat_min, b.lat_max), lon.clamp(b.lon_min, b.lon_max))
}

/// Random-waypoint traces sampled every `step_sec`, fully determined by the
/// seed.
pub fn generate_population(cfg: &SimConfig) -> Result<Traces, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut out = Traces::new();
    let n = cfg.samples();
    for u in 0..cfg.n_users {
        let (lat, lon) = pick_waypoint(cfg, &mut rng);
        let mut w = Walker {
            lat,
            lon,
            target: pick_waypoint(cfg, &mut rng),
            speed: rng.gen_range(cfg.speed_mps.0..=cfg.speed_mps.1),
            pause: 0,
        };
        let mut trace = Vec::with_capacity(n);
        for i in 0..n {
            let (lat, lon) = (round7(w.lat), round7(w.lon));
            trace.push(GpsPoint::new(lat, lon, cfg.start_t + i as u64 * cfg.step_sec)?);
            if w.pause > 0 {
                w.pause -= 1;
                continue;
            }
            let reach = w.speed * cfg.step_sec as f64;
            let dy = (w.target.0 - w.lat) * METERS_PER_DEG_LAT;
            let dx = (w.target.1 - w.lon) * METERS_PER_DEG_LAT * w.lat.to_radians().cos();
            let dist = dy.hypot(dx);
            if dist <= reach {
                (w.lat, w.lon) = w.target;
                w.target = pick_waypoint(cfg, &mut rng);
                w.speed = rng.gen_range(cfg.speed_mps.0..=cfg.speed_mps.1);
                w.pause = rng.gen_range(0..=6);
            } else {
                let f = reach / dist;
                w.lat = (w.lat + (w.target.0 - w.lat) * f).clamp(cfg.bbox.lat_min, cfg.bbox.lat_max);
                w.lon = (w.lon + (w.target.1 - w.lon) * f).clamp(cfg.bbox.lon_min, cfg.bbox.lon_max);
            }
        }
        out.insert(user_id(u), trace);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededContact {
    pub user: String,
    pub carrier: String,
    pub t: u64,
}

/// Copy carrier positions into non-carrier traces at `n_contacts` distinct
/// (user, time) slots. Both traces must hold a sample at the chosen time.
pub fn seed_contacts<R: Rng>(
    traces: &mut Traces,
    carriers: &BTreeSet<String>,
    n_contacts: usize,
    rng: &mut R,
) -> Result<Vec<SeededContact>, SimError> {
    if n_contacts == 0 {
        return Ok(Vec::new());
    }
    let users: Vec<String> = traces.keys().filter(|u| !carriers.contains(*u)).cloned().collect();
    let carrier_list: Vec<String> = carriers.iter().filter(|c| traces.contains_key(*c)).cloned().collect();
    if users.is_empty() || carrier_list.is_empty() {
        return Err(SimError::Config(
            "seeding contacts needs both carriers and non-carriers".into(),
        ));
    }
    let mut used = BTreeSet::new();
    let mut ledger = Vec::with_capacity(n_contacts);
    let mut attempts = 0usize;
    while ledger.len() < n_contacts {
        attempts += 1;
        if attempts > n_contacts * 100 {
            return Err(SimError::Config(format!(
                "could not place {n_contacts} distinct contacts"
            )));
        }
        let user = users.choose(rng).expect("non-empty");
        let carrier = carrier_list.choose(rng).expect("non-empty");
        let times: HashMap<u64, usize> = traces[user].iter().enumerate().map(|(i, p)| (p.t, i)).collect();
        let Some((ci, ui)) = traces[carrier]
            .iter()
            .enumerate()
            .filter_map(|(ci, p)| times.get(&p.t).map(|&ui| (ci, ui)))
            .choose(rng)
        else {
            continue;
        };
        if !used.insert((user.clone(), ui)) {
            continue;
        }
        let src = traces[carrier][ci];
        let dst = &mut traces.get_mut(user).expect("present")[ui];
        dst.lat = src.lat;
        dst.lon = src.lon;
        ledger.push(SeededContact {
            user: user.clone(),
            carrier: carrier.clone(),
            t: src.t,
        });
    }
    ledger.sort_by(|a, b| (&a.user, a.t).cmp(&(&b.user, b.t)));
    Ok(ledger)
}

/// A generated population with its carriers and contact ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SimConfig,
    pub traces: Traces,
    pub carriers: BTreeSet<String>,
    pub contacts: Vec<SeededContact>,
}

pub fn build_scenario(cfg: &SimConfig) -> Result<Scenario, SimError> {
    let mut traces = generate_population(cfg)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let carriers: BTreeSet<String> = traces
        .keys()
        .cloned()
        .choose_multiple(&mut rng, cfg.n_carriers)
        .into_iter()
        .collect();
    let contacts = seed_contacts(&mut traces, &carriers, cfg.n_contacts, &mut rng)?;
    Ok(Scenario {
        config: cfg.clone(),
        traces,
        carriers,
        contacts,
    })
}

/// What a non-carrier should learn from the carriers' data.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleEntry {
    /// Raw intervals with a point of contact (ordered-mode expectation).
    pub raw: BTreeSet<PointInterval>,
    /// Distinct carrier intervals inside the user's neighbourhood
    /// (shuffled-mode expectation).
    pub expanded_count: usize,
}

fn adjacent(u: &PointInterval, c: &PointInterval, k: i64, lon_cells: i32) -> bool {
    let dx = (u.cell_x - c.cell_x).rem_euclid(lon_cells);
    (u.t_idx - c.t_idx).abs() <= k && (u.cell_y - c.cell_y).abs() <= 1 && (dx <= 1 || dx == lon_cells - 1)
}

/// Plaintext ground truth: pairwise comparison of quantized intervals under
/// the spatial stencil and temporal window, for every non-carrier.
pub fn oracle_contacts(
    traces: &Traces,
    carriers: &BTreeSet<String>,
    grid: &GridConfig,
) -> Result<BTreeMap<String, OracleEntry>, SimError> {
    let mut carrier_set = BTreeSet::new();
    for c in carriers {
        for p in traces.get(c).map(Vec::as_slice).unwrap_or_default() {
            carrier_set.insert(quantize(p, grid)?);
        }
    }
    let mut by_time: HashMap<i64, Vec<PointInterval>> = HashMap::new();
    for c in &carrier_set {
        by_time.entry(c.t_idx).or_default().push(*c);
    }
    let k = grid.temporal_k as i64;
    let lon_cells = grid.lon_cells();
    let mut out = BTreeMap::new();
    for (user, trace) in traces.iter().filter(|(u, _)| !carriers.contains(*u)) {
        let raw: BTreeSet<PointInterval> = trace.iter().map(|p| quantize(p, grid)).collect::<Result<_, _>>()?;
        let mut entry = OracleEntry::default();
        let mut touched = BTreeSet::new();
        for u in &raw {
            for t in u.t_idx - k..=u.t_idx + k {
                for c in by_time.get(&t).map(Vec::as_slice).unwrap_or_default() {
                    if adjacent(u, c, k, lon_cells) {
                        entry.raw.insert(*u);
                        touched.insert(*c);
                    }
                }
            }
        }
        entry.expanded_count = touched.len();
        out.insert(user.clone(), entry);
    }
    Ok(out)
}

/// Options for an end-to-end run.
#[derive(Debug, Clone)]
pub struct E2eOptions {
    pub group: GroupParams,
    pub modes: Vec<Mode>,
    pub record_transcript: bool,
    /// Persist the server's store to this append-only log.
    pub log_path: Option<PathBuf>,
}

impl Default for E2eOptions {
    fn default() -> Self {
        E2eOptions {
            group: GroupParams::modp2048(),
            modes: vec![Mode::Ordered, Mode::Shuffled],
            record_transcript: false,
            log_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserResult {
    pub user: String,
    pub oracle_raw: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ordered: Option<usize>,
    pub oracle_expanded: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shuffled: Option<usize>,
    pub seeded_contacts: usize,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub user: String,
    pub mode: Mode,
    /// Oracle intervals the pipeline missed.
    pub missing: Vec<PointInterval>,
    /// Pipeline intervals the oracle does not have.
    pub extra: Vec<PointInterval>,
    pub expected_count: usize,
    pub got_count: usize,
}

/// Deterministic summary of an end-to-end run. Timing lives in [`E2eRun`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub group: String,
    pub carriers: Vec<String>,
    pub carrier_intervals: usize,
    pub seeded_contacts: usize,
    pub seeded_contacts_detected: usize,
    pub users: Vec<UserResult>,
    pub mismatches: Vec<Mismatch>,
    pub all_match: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timing {
    pub upload: Duration,
    pub checks: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone)]
pub struct E2eRun {
    pub report: SimReport,
    pub timing: Timing,
    pub transcript: Vec<String>,
    /// The in-process server, left available for inspection.
    pub server: Arc<CarrierServer>,
}

fn sim_server(cfg: &SimConfig, opts: &E2eOptions) -> Result<CarrierServer, SimError> {
    let grid = &cfg.grid;
    let server_cfg = ServerConfig {
        regions: vec![grid.region.clone()],
        delta_deg: grid.delta_deg,
        tau_sec: grid.tau_sec,
        temporal_k: grid.temporal_k,
        limits: ServerLimits {
            max_elems_per_exchange: (cfg.samples() * 9 * (2 * grid.temporal_k as usize + 1)).max(1),
            max_queries_per_day: 4,
        },
        upload_token: SIM_TOKEN.into(),
        ..ServerConfig::default()
    };
    if cfg.end_t().saturating_sub(cfg.start_t) > server_cfg.d_days as u64 * SECONDS_PER_DAY {
        return Err(SimError::Config("scenario is longer than the retention window".into()));
    }
    let clock = Arc::new(ManualClock::new(cfg.end_t()));
    let group = opts.group.clone();
    Ok(match &opts.log_path {
        Some(path) => CarrierServer::open(server_cfg, group, clock, path)?,
        None => CarrierServer::new(server_cfg, group, clock)?,
    })
}

/// Upload every carrier, run every non-carrier's exposure check and compare
/// each result with the oracle.
pub fn end_to_end_check(cfg: &SimConfig, opts: &E2eOptions) -> Result<E2eRun, SimError> {
    let started = Instant::now();
    let scenario = build_scenario(cfg)?;
    let oracle = oracle_contacts(&scenario.traces, &scenario.carriers, &cfg.grid)?;
    let server = Arc::new(sim_server(cfg, opts)?);
    let mut transport = if opts.record_transcript {
        LocalTransport::recording(&server)
    } else {
        LocalTransport::new(&server)
    };
    let base = ClientConfig {
        region: cfg.grid.region.clone(),
        grid: Some(cfg.grid.clone()),
        collection_period_sec: cfg.step_sec,
        ..ClientConfig::default()
    };

    let t_upload = Instant::now();
    for c in &scenario.carriers {
        upload_trace(&scenario.traces[c], &[], &base, SIM_TOKEN, true, &mut transport)?;
    }
    let upload = t_upload.elapsed();
    let carrier_intervals = server.with_store(&cfg.grid.region, |s| s.len())?;

    let mut seeded_per_user: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for c in &scenario.contacts {
        seeded_per_user.entry(&c.user).or_default().push(c.t);
    }

    let t_checks = Instant::now();
    let mut users = Vec::new();
    let mut mismatches = Vec::new();
    let mut detected = 0;
    for (user, expect) in &oracle {
        let trace = &scenario.traces[user];
        let client = ClientConfig {
            client_key_id: user.clone(),
            ..base.clone()
        };
        let mut result = UserResult {
            user: user.clone(),
            oracle_raw: expect.raw.len(),
            ordered: None,
            oracle_expanded: expect.expanded_count,
            shuffled: None,
            seeded_contacts: 0,
            ok: true,
        };
        for t in seeded_per_user
            .get(user.as_str())
            .map(Vec::as_slice)
            .unwrap_or_default()
        {
            let p = trace.iter().find(|p| p.t == *t).expect("seeded sample exists");
            if expect.raw.contains(&quantize(p, &cfg.grid)?) {
                result.seeded_contacts += 1;
            }
        }
        detected += result.seeded_contacts;
        for &mode in &opts.modes {
            let outcome = exposure_check(
                trace,
                &[],
                &ClientConfig { mode, ..client.clone() },
                &mut transport,
                &mut OsRng,
            )?;
            let mismatch = match mode {
                Mode::Ordered => {
                    let got = outcome.matched_raw.unwrap_or_default();
                    result.ordered = Some(got.len());
                    (got != expect.raw).then(|| Mismatch {
                        user: user.clone(),
                        mode,
                        missing: expect.raw.difference(&got).copied().collect(),
                        extra: got.difference(&expect.raw).copied().collect(),
                        expected_count: expect.raw.len(),
                        got_count: got.len(),
                    })
                }
                Mode::Shuffled => {
                    let got = outcome.report.match_count;
                    result.shuffled = Some(got);
                    (got != expect.expanded_count).then(|| Mismatch {
                        user: user.clone(),
                        mode,
                        missing: Vec::new(),
                        extra: Vec::new(),
                        expected_count: expect.expanded_count,
                        got_count: got,
                    })
                }
            };
            if let Some(m) = mismatch {
                result.ok = false;
                mismatches.push(m);
            }
        }
        users.push(result);
    }
    let checks = t_checks.elapsed();

    let report = SimReport {
        config: cfg.clone(),
        group: opts.group.name().to_string(),
        carriers: scenario.carriers.iter().cloned().collect(),
        carrier_intervals,
        seeded_contacts: scenario.contacts.len(),
        seeded_contacts_detected: detected,
        all_match: mismatches.is_empty(),
        users,
        mismatches,
    };
    let transcript = transport.take_transcript();
    drop(transport);
    Ok(E2eRun {
        report,
        timing: Timing {
            upload,
            checks,
            total: started.elapsed(),
        },
        transcript,
        server,
    })
}

/// Modular exponentiations an end-to-end run of this scenario performs with
/// the given modes: client blinding, server blinding, the server's one-off
/// carrier blinding and the client's pass over the carrier set.
pub fn modpow_count(scenario: &Scenario, modes: usize) -> Result<u64, SimError> {
    let grid = &scenario.config.grid;
    let mut carrier = BTreeSet::new();
    for c in &scenario.carriers {
        for p in &scenario.traces[c] {
            carrier.insert(quantize(p, grid)?);
        }
    }
    let c = carrier.len() as u64;
    let mut total = c;
    for (user, trace) in &scenario.traces {
        if scenario.carriers.contains(user) {
            continue;
        }
        let plan = QueryPlan::build(&redact(trace, &[]), grid)?;
        if plan.raw.is_empty() {
            continue;
        }
        total += modes as u64 * (2 * plan.expanded.len() as u64 + c);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    /// Intervals hashed by the attacker.
    pub enumerated: u64,
    pub published: usize,
    pub recovered: usize,
    /// Recovered share of the published digests.
    pub recovery_fraction: f64,
    pub recovered_intervals: Vec<PointInterval>,
    pub elapsed_ms: u64,
}

pub const DEFAULT_ATTACK_BUDGET: u64 = 1_000_000;

/// Hash every interval in the box and time window and look each one up in a
/// published flat file. Refuses, with a cost estimate, when the enumeration
/// would exceed `budget` intervals.
pub fn flatfile_attack_demo(
    published: &BTreeSet<HashedInterval>,
    bbox: &BoundingBox,
    grid: &GridConfig,
    t_from: u64,
    t_to: u64,
    budget: u64,
) -> Result<AttackReport, SimError> {
    bbox.validate()?;
    grid.validate()?;
    if t_to <= t_from {
        return Err(SimError::Config("empty time window".into()));
    }
    let corner = |lat, lon, t| quantize(&GpsPoint { lat, lon, t }, grid);
    let lo = corner(bbox.lat_min, bbox.lon_min, t_from)?;
    let hi = corner(bbox.lat_max, bbox.lon_max, t_to - 1)?;
    let nx = (hi.cell_x - lo.cell_x + 1) as u128;
    let ny = (hi.cell_y - lo.cell_y + 1) as u128;
    let nt = (hi.t_idx - lo.t_idx + 1) as u128;
    let estimate = nx * ny * nt;
    if estimate > budget as u128 {
        return Err(SimError::TooLarge { estimate, budget });
    }
    let started = Instant::now();
    let mut recovered = Vec::new();
    for t in lo.t_idx..=hi.t_idx {
        for y in lo.cell_y..=hi.cell_y {
            for x in lo.cell_x..=hi.cell_x {
                let pi = PointInterval::new(x, y, t);
                if published.contains(&hash_interval(&pi, grid)?) {
                    recovered.push(pi);
                }
            }
        }
    }
    let fraction = if published.is_empty() {
        0.0
    } else {
        recovered.len() as f64 / published.len() as f64
    };
    Ok(AttackReport {
        enumerated: estimate as u64,
        published: published.len(),
        recovered: recovered.len(),
        recovery_fraction: fraction,
        recovered_intervals: recovered,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}
