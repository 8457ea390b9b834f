//! Argument parsing and subcommand dispatch.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use contactpsi::aggregation::write_heatmap_csv;
use contactpsi::api::HeatmapQuery;
use contactpsi::client::{
    check_against_flatfile, ingest_trace, run_exposure_check, upload_trace, write_trace_csv, ClientConfig, RiskReport,
};
use contactpsi::crypto::{GroupParams, MODP_2048_NAME};
use contactpsi::flatfile;
use contactpsi::redaction::{infer_home_zone, read_zones, NightWindow, RedactionZone, DEFAULT_HOME_RADIUS_M};
use contactpsi::server::{CarrierServer, SystemClock};
use contactpsi::sim::{
    build_scenario, end_to_end_check, flatfile_attack_demo, BoundingBox, E2eOptions, SimConfig, DEFAULT_ATTACK_BUDGET,
};
use contactpsi::{GridConfig, Mode};
use rand::rngs::OsRng;
use serde::Serialize;

use crate::config::{FileConfig, DEFAULT_BIND, DEFAULT_SERVER_URL};
use crate::http::HttpTransport;
use crate::CliError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ELEVATED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "contactpsi", version, about = "Privacy-preserving contact tracing toolkit")]
pub struct Cli {
    /// TOML settings file.
    #[arg(long, global = true, env = "CONTACTPSI_CONFIG")]
    pub config: Option<PathBuf>,
    /// Indent JSON output.
    #[arg(long, global = true)]
    pub pretty: bool,
    /// Base URL of the regional server.
    #[arg(long, global = true, env = "CONTACTPSI_SERVER")]
    pub server: Option<String>,
    /// Region identifier.
    #[arg(long, global = true, env = "CONTACTPSI_REGION")]
    pub region: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a regional carrier server.
    Serve(ServeArgs),
    /// Upload a diagnosed carrier's trace (hashed on this machine).
    Upload(UploadArgs),
    /// Check a trace for exposure; exit 2 on medium or high risk.
    Check(CheckArgs),
    /// Fetch the public heatmap.
    Heatmap(HeatmapArgs),
    /// Flat-file publication mode and the enumeration attack on it.
    #[command(subcommand)]
    Flatfile(FlatfileCommand),
    /// Synthetic populations and end-to-end verification.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Redaction helpers.
    #[command(subcommand)]
    Redact(RedactCommand),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on; port 0 picks a free port.
    #[arg(long, env = "CONTACTPSI_BIND")]
    pub bind: Option<String>,
    /// Append-only store log. Without it the store lives in memory only.
    #[arg(long, env = "CONTACTPSI_STORE")]
    pub store: Option<PathBuf>,
    /// Token carriers must present when uploading.
    #[arg(long, env = "CONTACTPSI_UPLOAD_TOKEN")]
    pub upload_token: Option<String>,
    /// Retention window in days.
    #[arg(long, env = "CONTACTPSI_D_DAYS")]
    pub d_days: Option<u32>,
    /// Largest number of elements accepted in one upload or exchange.
    #[arg(long, env = "CONTACTPSI_MAX_ELEMS")]
    pub max_elems: Option<usize>,
    /// Exposure checks allowed per client per region per UTC day.
    #[arg(long, env = "CONTACTPSI_MAX_QUERIES")]
    pub max_queries: Option<u32>,
    /// Heatmap cells with fewer carrier points are withheld.
    #[arg(long, env = "CONTACTPSI_K_SUPPRESS")]
    pub k_suppress: Option<u64>,
    /// Seconds between retention sweeps.
    #[arg(long, env = "CONTACTPSI_PURGE_INTERVAL_SEC")]
    pub purge_interval_sec: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// CSV trace: user_id,lat,lon,epoch_seconds.
    #[arg(long)]
    pub trace: PathBuf,
    /// JSON list of redaction zones.
    #[arg(long, env = "CONTACTPSI_ZONES")]
    pub zones: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UploadArgs {
    #[command(flatten)]
    pub input: TraceArgs,
    /// Upload token issued by the health authority.
    #[arg(long, env = "CONTACTPSI_TOKEN")]
    pub token: Option<String>,
    /// Do not attach the coarse-cell stream used for the heatmap.
    #[arg(long)]
    pub no_heatmap: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub input: TraceArgs,
    /// ordered or shuffled.
    #[arg(long, env = "CONTACTPSI_MODE", value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Identifier the server meters daily quotas against.
    #[arg(long, env = "CONTACTPSI_CLIENT_ID")]
    pub client_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Start, epoch seconds (inclusive).
    #[arg(long)]
    pub from: Option<u64>,
    /// End, epoch seconds (exclusive).
    #[arg(long)]
    pub to: Option<u64>,
    /// Print CSV instead of JSON.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Cell side in degrees; falls back to the settings file, then 0.0005.
    #[arg(long)]
    pub delta_deg: Option<f64>,
    /// Time slot length in seconds.
    #[arg(long)]
    pub tau_sec: Option<u64>,
    /// Neighbouring time slots queried on each side.
    #[arg(long)]
    pub temporal_k: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum FlatfileCommand {
    /// Download the server's flat file.
    Export {
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a trace against a downloaded flat file, offline.
    Check {
        /// Flat file written by `flatfile export`.
        #[arg(long)]
        file: PathBuf,
        #[command(flatten)]
        input: TraceArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Recover carrier intervals from a flat file by exhaustive enumeration.
    Attack {
        /// Flat file written by `flatfile export`.
        #[arg(long)]
        file: PathBuf,
        /// lat_min,lat_max,lon_min,lon_max
        #[arg(long, value_parser = parse_bbox)]
        bbox: BoundingBox,
        /// Window start, epoch seconds.
        #[arg(long)]
        from: u64,
        /// Window end, epoch seconds (exclusive).
        #[arg(long)]
        to: u64,
        /// Largest number of intervals to enumerate.
        #[arg(long, default_value_t = DEFAULT_ATTACK_BUDGET)]
        budget: u64,
        #[command(flatten)]
        grid: GridArgs,
    },
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Scenario JSON; flags override its fields.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Population size, carriers included.
    #[arg(long)]
    pub users: Option<usize>,
    /// Number of diagnosed carriers.
    #[arg(long)]
    pub carriers: Option<usize>,
    /// Simulated duration in days.
    #[arg(long)]
    pub days: Option<f64>,
    /// Seconds between samples of one trace.
    #[arg(long)]
    pub step: Option<u64>,
    /// Number of seeded carrier contacts.
    #[arg(long)]
    pub contacts: Option<usize>,
    #[arg(long, value_parser = parse_bbox)]
    pub bbox: Option<BoundingBox>,
    /// First sample time, epoch seconds.
    #[arg(long)]
    pub start: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Write a synthetic population as trace CSV.
    Generate {
        #[command(flatten)]
        sim: SimArgs,
        /// Trace CSV destination; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write carriers and the seeded-contact ledger here as JSON.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Run the full pipeline in-process and compare with the plaintext oracle.
    Run {
        #[command(flatten)]
        sim: SimArgs,
        /// Group for the exchange: modp2048, or toy64 for fast logic checks.
        #[arg(long, default_value = MODP_2048_NAME)]
        group: String,
        /// Modes to exercise.
        #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "ordered,shuffled")]
        modes: Vec<Mode>,
    },
}

#[derive(Debug, Subcommand)]
pub enum RedactCommand {
    /// Infer a home zone from night-time points.
    InferHome {
        /// CSV trace: user_id,lat,lon,epoch_seconds.
        #[arg(long)]
        trace: PathBuf,
        /// Radius of the inferred zone in metres.
        #[arg(long, default_value_t = DEFAULT_HOME_RADIUS_M)]
        radius_m: f64,
        /// Local hour the night window opens.
        #[arg(long, default_value_t = 22)]
        night_start: u8,
        /// Local hour the night window closes.
        #[arg(long, default_value_t = 6)]
        night_end: u8,
        /// Offset of local time from UTC, seconds.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        utc_offset_sec: i64,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_bbox(s: &str) -> Result<BoundingBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let [lat_min, lat_max, lon_min, lon_max] = v[..] else {
        return Err("expected lat_min,lat_max,lon_min,lon_max".into());
    };
    let b = BoundingBox {
        lat_min,
        lat_max,
        lon_min,
        lon_max,
    };
    b.validate().map_err(|e| e.to_string())?;
    Ok(b)
}

/// Settings shared by every subcommand after precedence is applied.
struct Ctx {
    file: FileConfig,
    pretty: bool,
    server: String,
    region: String,
    region_given: bool,
}

impl Ctx {
    fn emit<T: Serialize>(&self, value: &T) -> Result<(), CliError> {
        let text = if self.pretty {
            serde_json::to_string_pretty(value)
        } else {
            serde_json::to_string(value)
        }
        .map_err(|e| CliError::new("io_error", e.to_string()))?;
        let mut out = std::io::stdout().lock();
        writeln!(out, "{text}")?;
        out.flush()?;
        Ok(())
    }

    fn transport(&self) -> Result<HttpTransport, CliError> {
        Ok(HttpTransport::new(&self.server)?)
    }

    fn client_config(&self, mode: Option<Mode>, client_id: Option<String>) -> ClientConfig {
        let c = &self.file.client;
        let grid = c.delta_deg.map(|delta_deg| GridConfig {
            delta_deg,
            tau_sec: c.tau_sec.unwrap_or(GridConfig::default().tau_sec),
            region: self.region.clone(),
            temporal_k: c.temporal_k.unwrap_or(0),
        });
        let d = ClientConfig::default();
        ClientConfig {
            region: self.region.clone(),
            grid,
            mode: mode.or(c.mode).unwrap_or(d.mode),
            thresholds: c.thresholds.unwrap_or(d.thresholds),
            client_key_id: client_id.or_else(|| c.client_key_id.clone()).unwrap_or(d.client_key_id),
            ..d
        }
    }

    fn offline_grid(&self, g: &GridArgs) -> Result<GridConfig, CliError> {
        let c = &self.file.client;
        let d = GridConfig::default();
        Ok(GridConfig::new(
            g.delta_deg.or(c.delta_deg).unwrap_or(d.delta_deg),
            g.tau_sec.or(c.tau_sec).unwrap_or(d.tau_sec),
            &self.region,
            g.temporal_k.or(c.temporal_k).unwrap_or(d.temporal_k),
        )?)
    }

    fn zones(&self, path: Option<&Path>) -> Result<Vec<RedactionZone>, CliError> {
        match path.or(self.file.zones.as_deref()) {
            Some(p) => Ok(read_zones(File::open(p).map_err(|e| io_at(p, e))?)?),
            None => Ok(Vec::new()),
        }
    }
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::new("io_error", e.to_string())
}

fn io_at(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io_error", format!("{}: {e}", path.display()))
}

fn read_trace_file(path: &Path) -> Result<Vec<contactpsi::GpsPoint>, CliError> {
    ingest_trace(path).map_err(|e| match e {
        contactpsi::client::ClientError::Io(io) => io_at(path, io),
        other => CliError::new(other.code(), format!("{}: {other}", path.display())),
    })
}

fn risk_exit(report: &RiskReport) -> i32 {
    if report.level.is_elevated() {
        EXIT_ELEVATED
    } else {
        EXIT_OK
    }
}

fn init_logging(default: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_env("CONTACTPSI_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            EXIT_ERROR
        }
    }
}

pub fn run(cli: Cli) -> Result<i32, CliError> {
    init_logging(if matches!(cli.command, Command::Serve(_)) {
        "info"
    } else {
        "warn"
    });
    let file = FileConfig::load(cli.config.as_deref())?;
    let server = cli
        .server
        .or_else(|| file.server_url.clone())
        .unwrap_or_else(|| DEFAULT_SERVER_URL.to_string());
    let region_given = cli.region.is_some() || file.region.is_some();
    let region = cli
        .region
        .or_else(|| file.region.clone())
        .unwrap_or_else(|| GridConfig::default().region);
    let ctx = Ctx {
        file,
        pretty: cli.pretty,
        server,
        region,
        region_given,
    };
    match cli.command {
        Command::Serve(a) => serve(&ctx, a),
        Command::Upload(a) => upload(&ctx, a),
        Command::Check(a) => check(&ctx, a),
        Command::Heatmap(a) => heatmap(&ctx, a),
        Command::Flatfile(c) => flatfile_cmd(&ctx, c),
        Command::Sim(c) => sim(&ctx, c),
        Command::Redact(c) => redact(&ctx, c),
    }
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Result<i32, CliError> {
    let section = &ctx.file.server;
    let mut cfg = section.config.clone().unwrap_or_default();
    if ctx.region_given || cfg.regions.is_empty() {
        cfg.regions = vec![ctx.region.clone()];
    }
    if let Some(t) = a.upload_token {
        cfg.upload_token = t;
    }
    if let Some(d) = a.d_days {
        cfg.d_days = d;
    }
    if let Some(n) = a.max_elems {
        cfg.limits.max_elems_per_exchange = n;
    }
    if let Some(n) = a.max_queries {
        cfg.limits.max_queries_per_day = n;
    }
    if let Some(k) = a.k_suppress {
        cfg.heatmap.k_suppress = k;
    }
    if cfg.upload_token.is_empty() {
        tracing::warn!("no upload token configured: all uploads will be rejected");
    }
    let bind = a
        .bind
        .or_else(|| section.bind.clone())
        .unwrap_or_else(|| DEFAULT_BIND.to_string());
    let purge_every = Duration::from_secs(
        a.purge_interval_sec
            .or(section.purge_interval_sec)
            .unwrap_or(3600)
            .max(1),
    );
    let store = a.store.or_else(|| section.store.clone());

    let clock = Arc::new(SystemClock);
    let params = GroupParams::modp2048();
    let server = match &store {
        Some(path) => CarrierServer::open(cfg, params, clock, path)?,
        None => {
            tracing::warn!("no --store given: carrier data will not survive a restart");
            CarrierServer::new(cfg, params, clock)?
        }
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind).await?;
        #[derive(Serialize)]
        struct Listening {
            listening: String,
        }
        ctx.emit(&Listening {
            listening: listener.local_addr()?.to_string(),
        })?;
        crate::serve::run(Arc::new(server), listener, purge_every).await?;
        Ok::<_, CliError>(())
    })?;
    Ok(EXIT_OK)
}

fn upload(ctx: &Ctx, a: UploadArgs) -> Result<i32, CliError> {
    let token = a
        .token
        .or_else(|| ctx.file.token.clone())
        .ok_or_else(|| CliError::new("validation_error", "an upload token is required (--token)"))?;
    let trace = read_trace_file(&a.input.trace)?;
    let zones = ctx.zones(a.input.zones.as_deref())?;
    let cfg = ctx.client_config(None, None);
    let mut t = ctx.transport()?;
    let resp = upload_trace(&trace, &zones, &cfg, &token, !a.no_heatmap, &mut t)?;
    ctx.emit(&resp)?;
    Ok(EXIT_OK)
}

fn check(ctx: &Ctx, a: CheckArgs) -> Result<i32, CliError> {
    let trace = read_trace_file(&a.input.trace)?;
    let zones = ctx.zones(a.input.zones.as_deref())?;
    let cfg = ctx.client_config(a.mode, a.client_id);
    let mut t = ctx.transport()?;
    let report = run_exposure_check(&trace, &zones, &cfg, &mut t, &mut OsRng)?;
    ctx.emit(&report)?;
    Ok(risk_exit(&report))
}

fn heatmap(ctx: &Ctx, a: HeatmapArgs) -> Result<i32, CliError> {
    let cells = ctx
        .transport()?
        .heatmap(&ctx.region, &HeatmapQuery { from: a.from, to: a.to })?;
    if a.csv {
        let out = std::io::stdout().lock();
        write_heatmap_csv(out, &cells).map_err(|e| CliError::new("io_error", e.to_string()))?;
    } else {
        ctx.emit(&cells)?;
    }
    Ok(EXIT_OK)
}

fn read_flatfile(path: &Path) -> Result<BTreeSet<contactpsi::HashedInterval>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    flatfile::parse(&text).map_err(|e| CliError::new("parse_error", format!("{}: {e}", path.display())))
}

fn flatfile_cmd(ctx: &Ctx, c: FlatfileCommand) -> Result<i32, CliError> {
    match c {
        FlatfileCommand::Export { out } => {
            let text = ctx.transport()?.flatfile(&ctx.region)?;
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| io_at(&p, e))?,
                None => {
                    let mut o = std::io::stdout().lock();
                    o.write_all(text.as_bytes())?;
                    o.flush()?;
                }
            }
            Ok(EXIT_OK)
        }
        FlatfileCommand::Check { file, input, grid } => {
            let published = read_flatfile(&file)?;
            let trace = read_trace_file(&input.trace)?;
            let zones = ctx.zones(input.zones.as_deref())?;
            let grid = ctx.offline_grid(&grid)?;
            let thresholds = ctx.client_config(None, None).thresholds;
            let report = check_against_flatfile(&trace, &zones, &grid, &published, &thresholds)?;
            ctx.emit(&report)?;
            Ok(risk_exit(&report))
        }
        FlatfileCommand::Attack {
            file,
            bbox,
            from,
            to,
            budget,
            grid,
        } => {
            let published = read_flatfile(&file)?;
            let grid = ctx.offline_grid(&grid)?;
            let report = flatfile_attack_demo(&published, &bbox, &grid, from, to, budget)?;
            ctx.emit(&report)?;
            Ok(EXIT_OK)
        }
    }
}

fn sim_config(ctx: &Ctx, a: &SimArgs) -> Result<SimConfig, CliError> {
    let mut cfg = match &a.scenario {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_at(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::new("parse_error", format!("{}: {e}", p.display())))?
        }
        None => SimConfig::default(),
    };
    if a.scenario.is_none() {
        cfg.grid.region = ctx.region.clone();
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.users {
        cfg.n_users = v;
    }
    if let Some(v) = a.carriers {
        cfg.n_carriers = v;
    }
    if let Some(v) = a.days {
        cfg.duration_days = v;
    }
    if let Some(v) = a.step {
        cfg.step_sec = v;
    }
    if let Some(v) = a.contacts {
        cfg.n_contacts = v;
    }
    if let Some(v) = a.bbox {
        cfg.bbox = v;
    }
    if let Some(v) = a.start {
        cfg.start_t = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sim(ctx: &Ctx, c: SimCommand) -> Result<i32, CliError> {
    match c {
        SimCommand::Generate { sim, out, ledger } => {
            let cfg = sim_config(ctx, &sim)?;
            let scenario = build_scenario(&cfg)?;
            match &out {
                Some(p) => {
                    let f = BufWriter::new(File::create(p).map_err(|e| io_at(p, e))?);
                    write_trace_csv(f, &scenario.traces).map_err(csv_err)?;
                }
                None => write_trace_csv(std::io::stdout().lock(), &scenario.traces).map_err(csv_err)?,
            }
            if let Some(p) = &ledger {
                #[derive(Serialize)]
                struct Ledger<'a> {
                    config: &'a SimConfig,
                    carriers: &'a BTreeSet<String>,
                    contacts: &'a [contactpsi::sim::SeededContact],
                }
                let text = serde_json::to_string_pretty(&Ledger {
                    config: &cfg,
                    carriers: &scenario.carriers,
                    contacts: &scenario.contacts,
                })
                .map_err(|e| CliError::new("io_error", e.to_string()))?;
                std::fs::write(p, text + "\n").map_err(|e| io_at(p, e))?;
            }
            Ok(EXIT_OK)
        }
        SimCommand::Run { sim, group, modes } => {
            let cfg = sim_config(ctx, &sim)?;
            let group = GroupParams::by_name(&group)
                .ok_or_else(|| CliError::new("validation_error", format!("unknown group {group:?}")))?;
            let run = end_to_end_check(
                &cfg,
                &E2eOptions {
                    group,
                    modes,
                    ..E2eOptions::default()
                },
            )?;
            ctx.emit(&run.report)?;
            #[derive(Serialize)]
            struct TimingLine {
                timing_ms: TimingMs,
            }
            #[derive(Serialize)]
            struct TimingMs {
                upload: u128,
                checks: u128,
                total: u128,
            }
            eprintln!(
                "{}",
                serde_json::to_string(&TimingLine {
                    timing_ms: TimingMs {
                        upload: run.timing.upload.as_millis(),
                        checks: run.timing.checks.as_millis(),
                        total: run.timing.total.as_millis(),
                    },
                })
                .expect("serializable")
            );
            if run.report.all_match {
                Ok(EXIT_OK)
            } else {
                Err(CliError::new(
                    "oracle_mismatch",
                    format!("{} result(s) differ from the oracle", run.report.mismatches.len()),
                ))
            }
        }
    }
}

fn redact(ctx: &Ctx, c: RedactCommand) -> Result<i32, CliError> {
    match c {
        RedactCommand::InferHome {
            trace,
            radius_m,
            night_start,
            night_end,
            utc_offset_sec,
        } => {
            let window = NightWindow {
                start_h: night_start,
                end_h: night_end,
                utc_offset_sec,
            };
            window.validate()?;
            if radius_m.is_nan() || radius_m <= 0.0 {
                return Err(CliError::new("validation_error", "radius must be positive"));
            }
            let points = read_trace_file(&trace)?;
            ctx.emit(&infer_home_zone(&points, &window, radius_m))?;
            Ok(EXIT_OK)
        }
    }
}
