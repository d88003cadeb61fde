use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bubblescope_core::bubble::{self, ScalingConfig, DEFAULT_THRESHOLD};
use bubblescope_core::format::{self, Report, RunManifest};
use bubblescope_core::generators::{self, ReturnToMean};
use bubblescope_core::{
    DecouplingRule, EnsembleConfig, Error, ExternalStream, GameConfig, GameKind, Lookahead, Scoring, StrategyChoice,
    TieRule,
};

#[derive(Parser)]
#[command(name = "bubblescope", version, about = "Decoupling analysis and bubble-onset detection on binary price streams")]
struct Cli {
    /// Worker threads for the ensemble (0 picks one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stream file.
    Simulate(SimulateArgs),
    /// Run the decoupling ensemble on a stream and report bubble onsets.
    Analyze(AnalyzeArgs),
    /// Mean self-play bubble onset as a function of memory length.
    Scaling(ScalingArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Generator {
    Selfplay,
    ReturnToMean,
    Iid,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Dollar,
    Mg,
}

impl From<Kind> for GameKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Dollar => GameKind::Dollar,
            Kind::Mg => GameKind::Minority,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoringArg {
    External,
    Own,
}

#[derive(Clone, Copy, ValueEnum)]
enum TiesArg {
    Conservative,
    Realized,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    HalfN,
    Sharp,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once('-').unwrap_or((s, s));
    let lo = lo.trim().parse().map_err(|_| format!("bad range {s:?}"))?;
    let hi = hi.trim().parse().map_err(|_| format!("bad range {s:?}"))?;
    Ok((lo, hi))
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "selfplay")]
    generator: Generator,
    #[arg(long, value_enum, default_value = "dollar")]
    kind: Kind,
    #[arg(long, default_value_t = 11)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    m: u8,
    #[arg(long, default_value_t = 20)]
    s: usize,
    /// Stream length, seed history included.
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Up-run threshold range for return-to-mean traders, e.g. 5-6.
    #[arg(long, value_parser = parse_range, default_value = "5-6")]
    up_run: (usize, usize),
    #[arg(long, value_parser = parse_range, default_value = "3-4")]
    down_run: (usize, usize),
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Stream file to write; the manifest goes to `<out>.manifest.json`.
    #[arg(long, short)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    stream: PathBuf,
    #[arg(long, default_value_t = 11)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    m: u8,
    #[arg(long, default_value_t = EnsembleConfig::DEFAULT_S)]
    s: usize,
    #[arg(long, default_value_t = EnsembleConfig::DEFAULT_N_MC)]
    n_mc: usize,
    #[arg(long, value_enum, default_value = "dollar")]
    kind: Kind,
    /// Seed of ensemble game 0; game g uses seed + g.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "external")]
    scoring: ScoringArg,
    #[arg(long, value_enum, default_value = "conservative")]
    ties: TiesArg,
    #[arg(long, value_enum, default_value = "half-n")]
    rule: RuleArg,
    /// Play a uniformly random strategy instead of the best one.
    #[arg(long)]
    random_play: bool,
    /// Output directory (defaults to the stream's directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ScalingArgs {
    #[arg(long, value_enum, default_value = "dollar")]
    kind: Kind,
    /// Memory lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    m: Vec<u8>,
    #[arg(long, default_value_t = 200)]
    runs: usize,
    #[arg(long, default_value_t = 11)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    s: usize,
    /// Generated moves per run.
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV to write; the manifest goes to `<out>.manifest.json`. Without it
    /// the table goes to standard output.
    #[arg(long, short)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Runs the command line `args` (program name first) and returns the exit
/// code: 0 on success, 1 on I/O failure, 2 on a usage error.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let dispatch = move || match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Analyze(a) => analyze(&a),
        Command::Scaling(a) => scaling(&a),
    };
    let res = if cli.threads > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
            Ok(pool) => pool.install(dispatch),
            Err(e) => Err(Failure::Io(format!("cannot set up {} threads: {e}", cli.threads))),
        }
    } else {
        dispatch()
    };
    match res {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("bubblescope: {msg}");
            2
        }
        Err(Failure::Io(msg)) => {
            eprintln!("bubblescope: {msg}");
            1
        }
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn write_manifest(manifest: &RunManifest, path: &Path) -> CmdResult {
    format::write_file(path, format::to_json_pretty(manifest)?.as_bytes())?;
    Ok(())
}

fn simulate(a: &SimulateArgs) -> CmdResult {
    if a.steps == 0 {
        return Err(Failure::Usage("--steps must be at least 1".into()));
    }
    let mut stream: ExternalStream = match a.generator {
        Generator::Selfplay => generators::gen_selfplay_stream(
            GameConfig {
                kind: a.kind.into(),
                n_agents: a.n,
                m: a.m,
                s: a.s,
                seed: a.seed,
                choice: StrategyChoice::Best,
            },
            a.steps,
        )?,
        Generator::ReturnToMean => generators::gen_return_to_mean_stream(ReturnToMean {
            up_run: a.up_run,
            down_run: a.down_run,
            n_agents: a.n,
            length: a.steps,
            seed: a.seed,
            noise: a.noise,
        })?,
        Generator::Iid => generators::gen_iid_stream(a.steps, a.seed),
    };
    let mut manifest = RunManifest::new("simulate", a)?;
    manifest.outputs.insert("stream".into(), file_name(&a.out));
    manifest.outputs.insert("stream_sha256".into(), format::stream_digest(&stream));
    stream.meta.insert("tool".into(), format!("{} {}", format::TOOL_NAME, format::TOOL_VERSION));
    stream.meta.insert("manifest".into(), file_name(&manifest_path(&a.out)));
    format::write_file(&a.out, format::render_stream(&stream).as_bytes())?;
    write_manifest(&manifest, &manifest_path(&a.out))?;
    println!("wrote {} moves to {}", stream.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeEcho<'a> {
    ensemble: &'a EnsembleConfig,
    threshold: f64,
}

fn analyze(a: &AnalyzeArgs) -> CmdResult {
    let stream = format::read_stream(&a.stream)?;
    let mut cfg = EnsembleConfig::new(a.n, a.m);
    cfg.n_mc = a.n_mc;
    cfg.s = a.s;
    cfg.kind = a.kind.into();
    cfg.base_seed = a.seed;
    if a.random_play {
        cfg.choice = StrategyChoice::UniformRandom;
    }
    cfg.scoring = match a.scoring {
        ScoringArg::External => Scoring::ExternalMove,
        ScoringArg::Own => Scoring::OwnAttendance,
    };
    cfg.lookahead = Lookahead {
        rule: match a.rule {
            RuleArg::HalfN => DecouplingRule::HalfN,
            RuleArg::Sharp => DecouplingRule::Sharp,
        },
        ties: match a.ties {
            TiesArg::Conservative => TieRule::Conservative,
            TiesArg::Realized => TieRule::Realized,
        },
    };
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Failure::Usage("--threshold must lie in [0, 1]".into()));
    }
    let curves = bubblescope_core::ensemble::run_ensemble(&stream, &cfg)?;

    let onset = bubble::detect_t_b(&stream.moves);
    let decoup = bubble::detect_t_b_decoup(&curves, a.m);
    let alarms = bubble::naive_false_alarms(&stream.moves, a.m);
    let preds = bubble::predictions(&curves, a.threshold);
    let hits = bubble::score_predictions(&preds, &stream.moves)?;

    let stem = a.stream.file_stem().map_or_else(|| "stream".into(), |s| s.to_string_lossy().into_owned());
    let dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| a.stream.parent().map(Path::to_path_buf).unwrap_or_default());
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    let csv_path = dir.join(format!("{stem}.curves.csv"));
    let json_path = dir.join(format!("{stem}.report.json"));
    let mut manifest = RunManifest::new(
        "analyze",
        &AnalyzeEcho {
            ensemble: &cfg,
            threshold: a.threshold,
        },
    )?;
    manifest.input_sha256 = Some(format::stream_digest(&stream));
    manifest.outputs.insert("curves".into(), file_name(&csv_path));
    manifest.outputs.insert("report".into(), file_name(&json_path));

    let summary = format!(
        "t_b={} t_b_decoup={} hits={}/{}",
        opt(onset.map(|o| o.t)),
        opt(decoup.map(|o| o.t)),
        hits.hits,
        hits.total
    );
    let report = Report::new(onset, decoup, alarms, preds, hits, manifest.clone());
    format::write_file(&csv_path, format::curves_csv(&curves).as_bytes())?;
    format::write_file(&json_path, format::to_json_pretty(&report)?.as_bytes())?;
    write_manifest(&manifest, &manifest_path(&csv_path))?;
    println!("{summary}");
    Ok(())
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

fn scaling(a: &ScalingArgs) -> CmdResult {
    if a.runs == 0 {
        return Err(Failure::Usage("--runs must be at least 1".into()));
    }
    if a.steps == 0 {
        return Err(Failure::Usage("--steps must be at least 1".into()));
    }
    let cfg = ScalingConfig {
        kind: a.kind.into(),
        ms: a.m.clone(),
        runs: a.runs,
        n_agents: a.n,
        s: a.s,
        steps: a.steps,
        base_seed: a.seed,
    };
    let rows = bubble::tb_scaling_experiment(&cfg)?;
    let csv = format::scaling_csv(&rows);
    match &a.out {
        Some(out) => {
            let mut manifest = RunManifest::new("scaling", a)?;
            manifest.outputs.insert("table".into(), file_name(out));
            format::write_file(out, csv.as_bytes())?;
            write_manifest(&manifest, &manifest_path(out))?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}
