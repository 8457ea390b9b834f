//! The semi-trusted regional authority.
//!
//! The server holds diagnosed carriers' hashed intervals per region, answers
//! PSI exchanges under per-client limits, and publishes the flat file and the
//! heatmap. It never sees an unblinded client value: the exchange endpoint
//! accepts group elements only.
//!
//! Each region has an *epoch*: a snapshot of its carrier set together with a
//! server exponent. Any change to the data set starts a new epoch with a fresh
//! exponent. Exchanges grab the current epoch up front and run entirely
//! against it, so a concurrent rotation can never mix two keys in one
//! response.

mod log;
mod store;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::rngs::OsRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::log::{AppendLog, LogRecord};
pub use self::store::{CarrierStore, CoarseEntry, InsertOutcome, StoreEntry};

use crate::aggregation::{CoarseCell, HeatmapCell, HeatmapConfig};
use crate::api::{self, codes, HeatmapQuery, ParamsResponse, PsiRequest, PsiResponse, UploadRequest, UploadResponse};
use crate::crypto::{
    blind_carrier_set, encode_elements_b64, keygen, respond_to_client, sha256, to_group, GroupElement, GroupParams,
    HashedInterval, PrivateExponent, PsiError,
};
use crate::grid::{validate_region, GridConfig};
use crate::redaction::{RetentionPolicy, SECONDS_PER_DAY};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("upload token rejected")]
    Unauthorized,
    #[error("no such region: {0}")]
    UnknownRegion(String),
    #[error("exchange of {got} elements exceeds the limit of {max}")]
    TooManyElements { got: usize, max: usize },
    #[error("daily quota of {limit} exchanges exhausted")]
    QuotaExhausted { limit: u32 },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
    #[error("configuration: {0}")]
    Config(String),
}

impl ServerError {
    pub fn code(&self) -> &'static str {
        match self {
            ServerError::Unauthorized => codes::UNAUTHORIZED,
            ServerError::UnknownRegion(_) => codes::UNKNOWN_REGION,
            ServerError::TooManyElements { .. } => codes::TOO_MANY_ELEMENTS,
            ServerError::QuotaExhausted { .. } => codes::QUOTA_EXHAUSTED,
            ServerError::BadRequest(_) | ServerError::Config(_) => codes::BAD_REQUEST,
            ServerError::Storage(_) => codes::STORAGE,
        }
    }

    /// HTTP status an HTTP front end should use.
    pub fn status(&self) -> u16 {
        match self {
            ServerError::Unauthorized => 401,
            ServerError::UnknownRegion(_) => 404,
            ServerError::TooManyElements { .. } => 413,
            ServerError::QuotaExhausted { .. } => 429,
            ServerError::BadRequest(_) | ServerError::Config(_) => 400,
            ServerError::Storage(_) => 500,
        }
    }

    pub fn body(&self) -> api::ErrorBody {
        api::ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
        }
    }
}

impl From<PsiError> for ServerError {
    fn from(e: PsiError) -> Self {
        match e {
            PsiError::TooManyElements { got, max } => ServerError::TooManyElements { got, max },
            other => ServerError::BadRequest(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerLimits {
    /// Largest client set accepted in one exchange.
    pub max_elems_per_exchange: usize,
    pub max_queries_per_day: u32,
}

impl Default for ServerLimits {
    fn default() -> Self {
        // 14 days x 288 intervals/day x 9 neighbours x 3 time offsets, rounded up
        ServerLimits {
            max_elems_per_exchange: 120_000,
            max_queries_per_day: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub regions: Vec<String>,
    pub delta_deg: f64,
    pub tau_sec: u64,
    pub temporal_k: u32,
    pub d_days: u32,
    pub limits: ServerLimits,
    pub heatmap: HeatmapConfig,
    /// Shared secret standing in for a health-authority diagnosis check.
    pub upload_token: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        let grid = GridConfig::default();
        ServerConfig {
            regions: vec![grid.region.clone()],
            delta_deg: grid.delta_deg,
            tau_sec: grid.tau_sec,
            temporal_k: grid.temporal_k,
            d_days: RetentionPolicy::default().d_days,
            limits: ServerLimits::default(),
            heatmap: HeatmapConfig::default(),
            upload_token: String::new(),
        }
    }
}

impl ServerConfig {
    pub fn grid(&self, region: &str) -> GridConfig {
        GridConfig {
            delta_deg: self.delta_deg,
            tau_sec: self.tau_sec,
            region: region.to_string(),
            temporal_k: self.temporal_k,
        }
    }

    pub fn retention(&self) -> Result<RetentionPolicy, ServerError> {
        RetentionPolicy::new(self.d_days).map_err(|e| ServerError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        if self.regions.is_empty() {
            return Err(ServerError::Config("at least one region is required".into()));
        }
        for r in &self.regions {
            validate_region(r).map_err(|e| ServerError::Config(e.to_string()))?;
            self.grid(r)
                .validate()
                .map_err(|e| ServerError::Config(e.to_string()))?;
        }
        if self.limits.max_elems_per_exchange == 0 || self.limits.max_queries_per_day == 0 {
            return Err(ServerError::Config("limits must be positive".into()));
        }
        if self.heatmap.factor_space == 0 || self.heatmap.factor_time == 0 || self.heatmap.k_suppress == 0 {
            return Err(ServerError::Config(
                "heatmap factors and k_suppress must be positive".into(),
            ));
        }
        self.retention()?;
        Ok(())
    }
}

/// Source of "now", in epoch seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(std::sync::atomic::AtomicU64);

impl ManualClock {
    pub fn new(now: u64) -> Self {
        ManualClock(std::sync::atomic::AtomicU64::new(now))
    }

    pub fn set(&self, now: u64) {
        self.0.store(now, std::sync::atomic::Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, std::sync::atomic::Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now(&self) -> u64 {
        (**self).now()
    }
}

struct Epoch {
    id: u64,
    key: PrivateExponent,
    digests: Vec<HashedInterval>,
    carrier_blinded: OnceLock<Vec<String>>,
}

impl Epoch {
    /// `H(P_I)^b`, computed once per epoch and reused for every client.
    fn carrier_blinded(&self, params: &GroupParams) -> &[String] {
        self.carrier_blinded.get_or_init(|| {
            let elems: Vec<GroupElement> = self.digests.iter().map(|h| to_group(h, params)).collect();
            encode_elements_b64(&blind_carrier_set(&elems, &self.key, params, &mut OsRng), params)
        })
    }
}

struct RegionState {
    grid: GridConfig,
    store: CarrierStore,
    epoch: Arc<Epoch>,
}

impl RegionState {
    fn rotate(&mut self, params: &GroupParams) {
        let id = self.store.bump_epoch();
        self.epoch = Arc::new(Epoch {
            id,
            key: keygen(params, &mut OsRng),
            digests: self.store.digests(),
            carrier_blinded: OnceLock::new(),
        });
    }
}

pub struct CarrierServer {
    cfg: ServerConfig,
    retention: RetentionPolicy,
    params: GroupParams,
    regions: RwLock<BTreeMap<String, RegionState>>,
    quotas: Mutex<HashMap<(String, String), (u64, u32)>>,
    clock: Arc<dyn Clock>,
    log: Mutex<Option<AppendLog>>,
}

impl std::fmt::Debug for CarrierServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CarrierServer")
            .field("regions", &self.cfg.regions)
            .field("group", &self.params.name())
            .finish()
    }
}

impl CarrierServer {
    /// In-memory server.
    pub fn new(cfg: ServerConfig, params: GroupParams, clock: Arc<dyn Clock>) -> Result<Self, ServerError> {
        cfg.validate()?;
        let retention = cfg.retention()?;
        let mut regions = BTreeMap::new();
        for r in &cfg.regions {
            let mut state = RegionState {
                grid: cfg.grid(r),
                store: CarrierStore::new(r, cfg.tau_sec, cfg.heatmap.factor_time),
                epoch: Arc::new(Epoch {
                    id: 0,
                    key: keygen(&params, &mut OsRng),
                    digests: Vec::new(),
                    carrier_blinded: OnceLock::new(),
                }),
            };
            state.rotate(&params);
            regions.insert(r.clone(), state);
        }
        Ok(CarrierServer {
            cfg,
            retention,
            params,
            regions: RwLock::new(regions),
            quotas: Mutex::new(HashMap::new()),
            clock,
            log: Mutex::new(None),
        })
    }

    /// Server backed by an append-only log at `path`: existing records are
    /// replayed, expired data is purged, and new writes are appended.
    pub fn open(
        cfg: ServerConfig,
        params: GroupParams,
        clock: Arc<dyn Clock>,
        path: &Path,
    ) -> Result<Self, ServerError> {
        let server = Self::new(cfg, params, clock)?;
        let records = AppendLog::read_all(path)?;
        {
            let mut regions = server.regions.write().expect("region lock");
            for rec in &records {
                match rec {
                    LogRecord::Upload {
                        region,
                        upload_time,
                        batch,
                        intervals,
                        coarse,
                    } => {
                        let Some(state) = regions.get_mut(region) else {
                            tracing::warn!(region = %region, "log names a region that is not configured; skipped");
                            continue;
                        };
                        let mut batch_id = [0u8; 32];
                        hex::decode_to_slice(batch, &mut batch_id)
                            .map_err(|e| ServerError::Config(format!("corrupt batch id in log: {e}")))?;
                        let out = state.store.insert_batch(intervals, coarse, batch_id, *upload_time, 0);
                        if out.changed() {
                            state.store.bump_epoch();
                        }
                    }
                    LogRecord::Purge { now } => {
                        for state in regions.values_mut() {
                            if state.store.purge(*now, &server.retention) > 0 {
                                state.store.bump_epoch();
                            }
                        }
                    }
                }
            }
            // Server exponents are never persisted: every restart is a new epoch.
            for state in regions.values_mut() {
                state.rotate(&server.params);
            }
        }
        *server.log.lock().expect("log lock") = Some(AppendLog::open(path)?);
        server.purge_job()?;
        tracing::info!(records = records.len(), path = %path.display(), "store replayed");
        Ok(server)
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn group(&self) -> &GroupParams {
        &self.params
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    fn append(&self, record: &LogRecord) -> Result<(), ServerError> {
        if let Some(log) = self.log.lock().expect("log lock").as_mut() {
            log.append(record)?;
        }
        Ok(())
    }

    pub fn params(&self, region: &str) -> Result<ParamsResponse, ServerError> {
        let regions = self.regions.read().expect("region lock");
        let state = regions
            .get(region)
            .ok_or_else(|| ServerError::UnknownRegion(region.to_string()))?;
        Ok(ParamsResponse {
            region: region.to_string(),
            delta_deg: state.grid.delta_deg,
            tau_sec: state.grid.tau_sec,
            temporal_k: state.grid.temporal_k,
            group: self.params.name().to_string(),
            byte_len: self.params.byte_len(),
            d_days: self.retention.d_days,
            factor_space: self.cfg.heatmap.factor_space,
            factor_time: self.cfg.heatmap.factor_time,
        })
    }

    pub fn epoch_id(&self, region: &str) -> Result<u64, ServerError> {
        let regions = self.regions.read().expect("region lock");
        regions
            .get(region)
            .map(|s| s.epoch.id)
            .ok_or_else(|| ServerError::UnknownRegion(region.to_string()))
    }

    /// Read-only view of a region's store.
    pub fn with_store<R>(&self, region: &str, f: impl FnOnce(&CarrierStore) -> R) -> Result<R, ServerError> {
        let regions = self.regions.read().expect("region lock");
        let state = regions
            .get(region)
            .ok_or_else(|| ServerError::UnknownRegion(region.to_string()))?;
        Ok(f(&state.store))
    }

    /// Accept a diagnosed carrier's hashed intervals.
    pub fn ingest_upload(&self, region: &str, req: &UploadRequest) -> Result<UploadResponse, ServerError> {
        let mut regions = self.regions.write().expect("region lock");
        let state = regions
            .get_mut(region)
            .ok_or_else(|| ServerError::UnknownRegion(region.to_string()))?;
        if self.cfg.upload_token.is_empty() || req.token != self.cfg.upload_token {
            return Err(ServerError::Unauthorized);
        }
        let now = self.clock.now();
        let cutoff = self.retention.cutoff(now);
        let intervals: Vec<(HashedInterval, i64)> = req.intervals.iter().map(|i| (i.digest_hex, i.t_idx)).collect();
        let batch_id = batch_fingerprint(&intervals, &req.coarse_cells);

        let out = state
            .store
            .insert_batch(&intervals, &req.coarse_cells, batch_id, now, cutoff);
        if out.changed() {
            let accepted: Vec<(HashedInterval, i64)> = intervals
                .iter()
                .filter(|(_, t)| (*t).max(0) as u64 * state.grid.tau_sec >= cutoff)
                .copied()
                .collect();
            self.append(&LogRecord::Upload {
                region: region.to_string(),
                upload_time: now,
                batch: hex::encode(batch_id),
                intervals: accepted,
                coarse: req.coarse_cells.clone(),
            })?;
            state.rotate(&self.params);
        }
        tracing::info!(
            region = %region,
            accepted = out.accepted,
            skipped_stale = out.skipped_stale,
            coarse = out.coarse_added,
            epoch = state.epoch.id,
            "carrier upload"
        );
        Ok(UploadResponse {
            accepted: out.accepted,
            skipped_stale: out.skipped_stale,
        })
    }

    fn charge_quota(&self, region: &str, client: &str) -> Result<(), ServerError> {
        let day = self.clock.now() / SECONDS_PER_DAY;
        let limit = self.cfg.limits.max_queries_per_day;
        let mut quotas = self.quotas.lock().expect("quota lock");
        let slot = quotas
            .entry((region.to_string(), client.to_string()))
            .or_insert((day, 0));
        if slot.0 != day {
            *slot = (day, 0);
        }
        if slot.1 >= limit {
            return Err(ServerError::QuotaExhausted { limit });
        }
        slot.1 += 1;
        Ok(())
    }

    /// Answer one PSI exchange with the current epoch's exponent.
    pub fn psi_exchange(&self, region: &str, req: &PsiRequest) -> Result<PsiResponse, ServerError> {
        let epoch = {
            let regions = self.regions.read().expect("region lock");
            let state = regions
                .get(region)
                .ok_or_else(|| ServerError::UnknownRegion(region.to_string()))?;
            Arc::clone(&state.epoch)
        };
        let max = self.cfg.limits.max_elems_per_exchange;
        if req.elements.len() > max {
            return Err(ServerError::TooManyElements {
                got: req.elements.len(),
                max,
            });
        }
        self.charge_quota(region, &req.client_key_id)?;
        let client = self.params.decode_elements_b64(&req.elements)?;
        let double = respond_to_client(&client, &epoch.key, req.mode, &self.params, max, &mut OsRng)?;
        let carrier = epoch.carrier_blinded(&self.params);
        tracing::info!(
            region = %region,
            mode = %req.mode,
            elements = client.len(),
            carrier = carrier.len(),
            epoch = epoch.id,
            "psi exchange"
        );
        Ok(PsiResponse {
            epoch_id: epoch.id,
            double_blinded: encode_elements_b64(&double, &self.params),
            carrier_blinded: carrier.to_vec(),
        })
    }

    pub fn flatfile_export(&self, region: &str) -> Result<String, ServerError> {
        self.with_store(region, |s| s.flatfile())
    }

    pub fn heatmap(&self, region: &str, q: &HeatmapQuery) -> Result<Vec<HeatmapCell>, ServerError> {
        let k = self.cfg.heatmap.k_suppress;
        self.with_store(region, |s| s.heatmap(q.from, q.to, k))
    }

    /// Drop expired data in every region; regions that lost anything move to a
    /// new epoch (and exponent).
    pub fn purge_job(&self) -> Result<usize, ServerError> {
        let now = self.clock.now();
        let mut regions = self.regions.write().expect("region lock");
        let mut removed = 0;
        let mut logged = false;
        for state in regions.values_mut() {
            let n = state.store.purge(now, &self.retention);
            if n > 0 {
                if !logged {
                    self.append(&LogRecord::Purge { now })?;
                    logged = true;
                }
                state.rotate(&self.params);
            }
            removed += n;
        }
        if removed > 0 {
            tracing::info!(removed, "retention purge");
        }
        Ok(removed)
    }
}

fn batch_fingerprint(intervals: &[(HashedInterval, i64)], coarse: &[CoarseCell]) -> [u8; 32] {
    let mut digests: Vec<&HashedInterval> = intervals.iter().map(|(h, _)| h).collect();
    digests.sort();
    let mut cells: Vec<&CoarseCell> = coarse.iter().collect();
    cells.sort();
    let mut buf = Vec::with_capacity(digests.len() * 32 + cells.len() * 16);
    for d in digests {
        buf.extend_from_slice(d.as_bytes());
    }
    for c in cells {
        buf.extend_from_slice(&c.coarse_x.to_be_bytes());
        buf.extend_from_slice(&c.coarse_y.to_be_bytes());
        buf.extend_from_slice(&c.day_idx.to_be_bytes());
    }
    sha256(&buf)
}
