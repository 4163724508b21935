//! `phasorguard` command-line front end.

mod config;
mod report;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::iter::Peekable;
use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use phasorguard::analytics::{DerivedSample, LocalEngine};
use phasorguard::model::reduce_laterals;
use phasorguard::pipeline::{analyze, central_model_for, local_config_for};
use phasorguard::placement::{exhaustive_place, greedy_place, min_pairwise_hops, random_place, DEFAULT_BUDGET};
use phasorguard::synth::{generate, read_dir_streams, sensor_file, write_outputs, GroundTruth, TRUTH_FILE};
use phasorguard::time::{default_epoch, parse_epoch};
use phasorguard::transport::{replay_csv, serve_local, CentralServer};
use phasorguard::{bundled, BusId, EventLog, FeederModel, PhasorFrame, PlacementResult, Solver, SystemMatrix};

use config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] phasorguard::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use phasorguard::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                E::Placement(_) => 1,
                E::Config(_) | E::Budget { .. } => 2,
                E::Codec(_) | E::Network(_) => 4,
                _ => 3,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "phasorguard", version, about = "Anomaly detection on distribution-feeder phasor streams")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set cusum.h=6`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Choose sensor buses for a feeder.
    Place(PlaceArgs),
    /// Generate sensor CSVs and ground truth from a scenario.
    Simulate(SimulateArgs),
    /// Run the full pipeline over a directory of sensor CSVs.
    Analyze(AnalyzeArgs),
    /// Stream one sensor's CSV through its local engine to a central process.
    ServeLocal(ServeLocalArgs),
    /// Accept sensor connections, fuse them and log events.
    ServeCentral(ServeCentralArgs),
    /// Compare an event log with the injected ground truth.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Candidates {
    All,
    ThreePhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Both,
}

#[derive(Debug, Args)]
struct PlaceArgs {
    /// Bundled feeder name or feeder file.
    #[arg(long, default_value = "ieee34")]
    feeder: String,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value = "greedy", value_parser = parse_solver)]
    solver: Solver,
    #[arg(long, value_enum, default_value = "all")]
    candidates: Candidates,
    /// Collapse single-phase and two-phase laterals into their attachment buses first.
    #[arg(long)]
    reduce_laterals: bool,
    /// Most subsets the exhaustive solver may evaluate.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u128,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

fn parse_solver(s: &str) -> std::result::Result<Solver, String> {
    s.parse()
}

fn parse_bus(s: &str) -> std::result::Result<BusId, String> {
    s.trim().parse::<u32>().map(BusId).map_err(|e| format!("{s:?}: {e}"))
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Bundled scenario name or scenario JSON file.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    out: PathBuf,
    /// Replace the scenario's sensor buses, e.g. `7,19,31`.
    #[arg(long, value_parser = parse_bus, value_delimiter = ',')]
    sensors: Option<Vec<BusId>>,
}

#[derive(Debug, Args)]
struct Setup {
    /// Directory of `sensor_<bus>.csv` files, usually with `groundtruth.json`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Feeder; defaults to the one named in the ground truth.
    #[arg(long)]
    feeder: Option<String>,
    /// Sensor buses; default to those in the ground truth.
    #[arg(long, value_parser = parse_bus, value_delimiter = ',')]
    sensors: Option<Vec<BusId>>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    setup: Setup,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeLocalArgs {
    #[command(flatten)]
    setup: Setup,
    /// Bus of the sensor to serve.
    #[arg(long)]
    bus: u32,
    /// Central address; defaults to localhost on the configured port.
    #[arg(long)]
    central: Option<String>,
    /// Multiple of real time; 0 replays as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Also write this sensor's reports here as JSON lines.
    #[arg(long)]
    reports: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeCentralArgs {
    #[command(flatten)]
    setup: Setup,
    /// Listen address; defaults to all interfaces on the configured port.
    #[arg(long)]
    listen: Option<String>,
    /// Write `events.jsonl` and `central_metric.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Event log (JSON lines).
    #[arg(long)]
    events: PathBuf,
    /// `groundtruth.json`, or the directory holding it.
    #[arg(long)]
    truth: PathBuf,
    /// Samples of slack on either side of each injected event.
    #[arg(long, default_value_t = 120)]
    tolerance: u64,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref(), &cli.overrides)?;
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Place(a) => place(&a, cli.seed, &mut stdout),
        Command::Simulate(a) => simulate(&a, cli.seed, &mut stdout),
        Command::Analyze(a) => analyze_cmd(&a, &cfg, &mut stdout),
        Command::ServeLocal(a) => serve_local_cmd(&a, &cfg, &mut stdout),
        Command::ServeCentral(a) => serve_central_cmd(&a, &cfg, &mut stdout),
        Command::Report(a) => report_cmd(&a, &mut stdout),
    }
}

fn place(a: &PlaceArgs, seed: Option<u64>, out: &mut impl Write) -> Result<()> {
    let mut feeder = bundled::feeder(&a.feeder)?;
    if a.reduce_laterals {
        feeder = reduce_laterals(&feeder).0;
    }
    let candidates: Vec<BusId> = feeder
        .buses
        .iter()
        .map(|b| b.id)
        .filter(|&b| a.candidates == Candidates::All || feeder.bus_phases(b).is_full())
        .collect();
    let system = SystemMatrix::build(&feeder);
    let result = match a.solver {
        Solver::Greedy => greedy_place(&system, a.k, &candidates)?,
        Solver::Exhaustive => exhaustive_place(&system, a.k, &candidates, a.budget)?,
        Solver::Random => random_place(&system, a.k, &candidates, seed.unwrap_or(0))?,
    };
    let w = |out: &mut dyn Write, s: &str| out.write_all(s.as_bytes()).map_err(io_err(Path::new("stdout")));
    if a.format != Format::Json {
        w(out, &placement_table(&feeder, &result))?;
    }
    if a.format != Format::Table {
        let json = serde_json::to_string_pretty(&result).expect("placement serializes");
        w(out, &format!("{json}\n"))?;
    }
    Ok(())
}

fn placement_table(feeder: &FeederModel, r: &PlacementResult) -> String {
    let solver = serde_json::to_value(r.solver).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    let buses = r.placement.to_string();
    let mut s = format!(
        "{:<11} {:>12}  {:<20} {:>11} {:>12}\n",
        "solver", "cost", "buses", "evaluations", "run time (s)"
    );
    s += &format!(
        "{:<11} {:>12.7}  {:<20} {:>11} {:>12.3}\n",
        solver, r.objective, buses, r.evaluations, r.elapsed
    );
    if let Some(h) = min_pairwise_hops(feeder, &r.placement) {
        s += &format!("closest pair of sensors: {h} hops apart\n");
    }
    s
}

fn simulate(a: &SimulateArgs, seed: Option<u64>, out: &mut impl Write) -> Result<()> {
    let mut sc = bundled::scenario(&a.scenario)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(sensors) = &a.sensors {
        sc.sensors = sensors.clone();
    }
    let feeder = bundled::feeder(&sc.feeder)?;
    let g = generate(&sc, &feeder)?;
    for p in write_outputs(&a.out, &g)? {
        writeln!(out, "{}", p.display()).map_err(io_err(&p))?;
    }
    Ok(())
}

struct Resolved {
    feeder: FeederModel,
    sensors: Vec<BusId>,
    epoch: DateTime<Utc>,
}

fn read_truth(path: &Path) -> Result<GroundTruth> {
    let path = if path.is_dir() { path.join(TRUTH_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(GroundTruth::from_json(&text)?)
}

fn resolve(s: &Setup) -> Result<Resolved> {
    let truth = match &s.input {
        Some(dir) if dir.join(TRUTH_FILE).exists() => Some(read_truth(dir)?),
        _ => None,
    };
    let feeder_name = s
        .feeder
        .clone()
        .or_else(|| truth.as_ref().map(|t| t.feeder.clone()))
        .ok_or_else(|| CliError::Usage("no ground truth found; pass --feeder".into()))?;
    let sensors = s
        .sensors
        .clone()
        .or_else(|| truth.as_ref().map(|t| t.sensors.clone()))
        .ok_or_else(|| CliError::Usage("no ground truth found; pass --sensors".into()))?;
    let epoch = match &truth {
        Some(t) => parse_epoch(&t.epoch).ok_or_else(|| CliError::Data(format!("bad epoch {:?}", t.epoch)))?,
        None => default_epoch(),
    };
    Ok(Resolved {
        feeder: bundled::feeder(&feeder_name)?,
        sensors,
        epoch,
    })
}

fn input_dir(s: &Setup) -> Result<&Path> {
    s.input.as_deref().ok_or_else(|| CliError::Usage("--input is required".into()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_metric(path: &Path, x: &[(u64, Option<f64>)]) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::from("k,x\n");
    for (k, v) in x {
        body += &format!("{k},{}\n", opt(*v));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

const DERIVED_HEADER: &str =
    "k,vmag_a,vmag_b,vmag_c,beta_hat,line,imag_a,imag_b,imag_c,p_a,p_b,p_c,q_a,q_b,q_c,qss_residual\n";

/// One row per sample and line; samples without lines get one row with
/// the line columns empty.
fn write_derived(path: &Path, samples: &[DerivedSample]) -> Result<()> {
    let mut w = create(path)?;
    let join = |xs: &[f64; 3]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut put = |s: &str| w.write_all(s.as_bytes()).map_err(io_err(path));
    put(DERIVED_HEADER)?;
    for d in samples {
        let head = format!("{},{},{}", d.k, join(&d.vmag), opt(d.beta_hat));
        if d.lines.is_empty() {
            put(&format!("{head},,,,,,,,,,,\n"))?;
        }
        for l in &d.lines {
            put(&format!(
                "{head},{},{},{},{},{}\n",
                l.line.0,
                join(&l.imag),
                join(&l.p),
                join(&l.q),
                opt(l.qss_residual)
            ))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn write_log(path: &Path, log: &EventLog) -> Result<()> {
    let mut w = create(path)?;
    log.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn analyze_cmd(a: &AnalyzeArgs, cfg: &Config, out: &mut impl Write) -> Result<()> {
    let dir = input_dir(&a.setup)?;
    let r = resolve(&a.setup)?;
    let streams = read_dir_streams(dir, &r.sensors)?;
    let mut pcfg = cfg.pipeline().with_epoch(r.epoch);
    pcfg.keep_derived = true;
    let an = analyze(&r.feeder, &streams, &pcfg)?;
    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    write_log(&a.out.join("events.jsonl"), &an.log)?;
    write_metric(&a.out.join("central_metric.csv"), &an.x)?;
    for (bus, d) in &an.derived {
        write_derived(&a.out.join(format!("derived_{}.csv", bus.0)), d)?;
    }
    let summary = serde_json::json!({
        "incidents": an.log.incident_count(),
        "entries": an.log.entries.len(),
        "local_reports": an.local_reports.len(),
        "central_reports": an.central_reports.len(),
        "baseline": an.baseline,
        "fusion_gaps": an.fusion_gaps,
    });
    writeln!(out, "{summary}").map_err(io_err(Path::new("stdout")))
}

/// Raised on SIGINT/SIGTERM so serve loops can flush and exit.
fn shutdown_flag() -> Result<Arc<AtomicBool>> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    ctrlc::set_handler(move || f.store(true, Ordering::SeqCst))
        .map_err(|e| CliError::Data(format!("cannot install signal handler: {e}")))?;
    Ok(flag)
}

/// Pairs each measured frame with the uplink frame of the same sample,
/// falling back to the measured one where the uplink has none.
fn paired<I: Iterator<Item = PhasorFrame>>(
    clean: impl Iterator<Item = PhasorFrame>,
    mut uplink: Peekable<I>,
) -> impl Iterator<Item = (PhasorFrame, PhasorFrame)> {
    clean.map(move |c| {
        while uplink.peek().is_some_and(|u| u.k < c.k) {
            uplink.next();
        }
        let up = match uplink.peek() {
            Some(u) if u.k == c.k => uplink.next().expect("peeked"),
            _ => c.clone(),
        };
        (c, up)
    })
}

fn serve_local_cmd(a: &ServeLocalArgs, cfg: &Config, out: &mut impl Write) -> Result<()> {
    let dir = input_dir(&a.setup)?;
    let r = resolve(&a.setup)?;
    let bus = BusId(a.bus);
    if r.feeder.bus(bus).is_none() {
        return Err(CliError::Usage(format!("bus {bus} is not in feeder {}", r.feeder.name)));
    }
    if !(a.rate >= 0.0 && a.rate.is_finite()) {
        return Err(CliError::Usage(format!("--rate must be >= 0, got {}", a.rate)));
    }
    let clean_path = sensor_file(dir, bus, false);
    let up_path = sensor_file(dir, bus, true);
    let clean = replay_csv(&clean_path, a.rate)?;
    let uplink = replay_csv(if up_path.exists() { &up_path } else { &clean_path }, 0.0)?;
    let mut local = local_config_for(&cfg.local(), &r.feeder, bus);
    local.epoch = r.epoch;
    let central = a
        .central
        .clone()
        .unwrap_or_else(|| format!("127.0.0.1:{}", cfg.network.port));
    if central.to_socket_addrs().is_err() {
        return Err(CliError::Usage(format!("cannot resolve central address {central:?}")));
    }
    let shutdown = shutdown_flag()?;
    let run = serve_local(
        LocalEngine::new(bus, local),
        paired(clean, uplink.peekable()),
        &cfg.local_serve(central),
        shutdown,
    )?;
    if let Some(path) = &a.reports {
        let mut w = create(path)?;
        for rep in &run.reports {
            writeln!(w, "{}", rep.to_json_line()).map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))?;
    }
    let summary = serde_json::json!({
        "bus": bus.0,
        "frames": run.frames,
        "reports": run.reports.len(),
        "connections": run.connections,
        "unacknowledged": run.unacknowledged,
    });
    writeln!(out, "{summary}").map_err(io_err(Path::new("stdout")))?;
    if run.unacknowledged > 0 {
        return Err(phasorguard::Error::Network(format!("{} messages left unacknowledged", run.unacknowledged)).into());
    }
    Ok(())
}

fn serve_central_cmd(a: &ServeCentralArgs, cfg: &Config, out: &mut impl Write) -> Result<()> {
    let r = resolve(&a.setup)?;
    let model = central_model_for(&r.feeder, &r.sensors)?;
    let listen = a.listen.clone().unwrap_or_else(|| format!("0.0.0.0:{}", cfg.network.port));
    let mut scfg = cfg.central_serve();
    scfg.epoch = r.epoch;
    let server = CentralServer::bind(&listen, model, scfg)?;
    log::info!("listening on {}", server.local_addr()?);
    let run = server.run(shutdown_flag()?)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_log(&dir.join("events.jsonl"), &run.log)?;
        write_metric(&dir.join("central_metric.csv"), &run.x)?;
    } else {
        run.log.write_jsonl(&mut *out).map_err(io_err(Path::new("stdout")))?;
    }
    let summary = serde_json::json!({
        "incidents": run.log.incident_count(),
        "entries": run.log.entries.len(),
        "samples": run.x.len(),
        "fusion_gaps": run.fusion_gaps,
        "sensor_gaps": run.sessions.total_gaps(),
        "duplicates": run.sessions.total_duplicates(),
        "rejected_sessions": run.rejected,
    });
    if a.out.is_some() {
        writeln!(out, "{summary}").map_err(io_err(Path::new("stdout")))?;
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn report_cmd(a: &ReportArgs, out: &mut impl Write) -> Result<()> {
    let truth = read_truth(&a.truth)?;
    let f = File::open(&a.events).map_err(io_err(&a.events))?;
    let log = EventLog::read_jsonl(std::io::BufReader::new(f))?;
    let s = report::score(&log, &truth, a.tolerance);
    let mut text = String::new();
    if a.format != Format::Json {
        text += &report::table(&s);
    }
    if a.format != Format::Table {
        text += &serde_json::to_string_pretty(&s).expect("summary serializes");
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("stdout")))
}
