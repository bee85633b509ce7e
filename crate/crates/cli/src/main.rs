//! Command-line front end: simulation runs, correlation scans, inequality
//! evaluation on stored counts, efficiency-threshold optimization, the
//! two-process network demo, and a self-test.
//!
//! Exit codes: 0 success, 1 domain error (bad config file, model
//! constraint violation, network failure), 2 usage error. All randomness
//! is controlled by --seed; identical argv + seed gives byte-identical
//! stdout.

use std::f64::consts::PI;
use std::fs;
use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use detloophole::counts::{CountsTable, PairIndex};
use detloophole::harness::{
    counts_from_csv, report_to_csv, report_to_json, run_experiment, run_experiment_with_batches,
    scan_correlation,
    scan_to_csv, ExperimentConfig, Schedule,
};
use detloophole::inequalities::{
    binary_identity_check, ch_evaluate, ch_threshold, chsh_value, optimize_threshold,
    optimize_threshold_full_sphere, relevant_efficiency, renormalized_correlation,
    SettingQuadruple,
};
use detloophole::model::{planar_efficiencies, ModelVariant, Side};
use detloophole::net::{
    node_run, referee_serve, verify_no_signaling, SessionConfig, SettingMode,
};
use detloophole::quadrature::quadrature_correlation;
use detloophole::UnitVector3;

const DEFAULT_SEED: u64 = 17;

#[derive(Parser)]
#[command(
    name = "detloophole",
    about = "Local hidden variable model of the singlet correlation via the detection loophole",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    NoLoophole,
    Asymmetric,
    Symmetric,
    IndependentDetectors,
    PlanarSteiner,
}

impl From<VariantArg> for ModelVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::NoLoophole => ModelVariant::NoLoophole,
            VariantArg::Asymmetric => ModelVariant::Asymmetric,
            VariantArg::Symmetric => ModelVariant::Symmetric,
            VariantArg::IndependentDetectors => ModelVariant::IndependentDetectors,
            VariantArg::PlanarSteiner => ModelVariant::PlanarSteiner,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    /// Every trial uses the (a, b) pair.
    Fixed,
    /// Cycle through the quadruple.
    Cycle,
    /// Each side draws its setting from its private substream.
    Random,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Fixed => Schedule::FixedPair(PairIndex::AB),
            ScheduleArg::Cycle => Schedule::CycleQuadruple,
            ScheduleArg::Random => Schedule::RandomQuadruple,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Alice,
    Bob,
}

/// Four planar setting angles in degrees: a, a', b, b'.
fn parse_quad(s: &str) -> Result<SettingQuadruple, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected 4 comma-separated degrees, got {}", parts.len()));
    }
    let mut deg = [0.0; 4];
    for (i, p) in parts.iter().enumerate() {
        deg[i] = p
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("angle {:?}: {e}", p.trim()))?;
    }
    Ok(SettingQuadruple::from_planar_degrees(
        deg[0], deg[1], deg[2], deg[3],
    ))
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON config in the report schema; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Trials per setting pair.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    /// Planar setting angles in degrees: a,a',b,b'.
    #[arg(long, value_parser = parse_quad)]
    quad: Option<SettingQuadruple>,
    /// Worker batch count hint; never changes the result.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long, value_enum, default_value = "symmetric")]
    variant: VariantArg,
    /// Trials per angle.
    #[arg(long, default_value_t = 100_000)]
    n: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Grid points, evenly spaced over [0, 180] degrees.
    #[arg(long, default_value_t = 13)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InequalitiesArgs {
    /// Counts CSV (report layout); "-" reads stdin.
    #[arg(long)]
    counts: String,
    /// Planar quadruple a,a',b,b' in degrees; enables the CH threshold line.
    #[arg(long, value_parser = parse_quad)]
    quad: Option<SettingQuadruple>,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Search over general unit vectors instead of the planar grid.
    #[arg(long)]
    full_sphere: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    restarts: usize,
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long, value_enum, default_value = "symmetric")]
    variant: VariantArg,
    /// Trials per setting pair.
    #[arg(long, default_value_t = 100_000)]
    n: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Planar setting angles in degrees: a,a',b,b'.
    #[arg(long, value_parser = parse_quad)]
    quad: Option<SettingQuadruple>,
    /// Nodes draw their own settings (node-random) or follow the cycle.
    #[arg(long, value_enum, default_value = "node-random")]
    settings: SettingModeArg,
    #[arg(long, default_value_t = 1)]
    session_id: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingModeArg {
    RefereeScheduled,
    NodeRandom,
}

impl From<SettingModeArg> for SettingMode {
    fn from(m: SettingModeArg) -> Self {
        match m {
            SettingModeArg::RefereeScheduled => SettingMode::RefereeScheduled,
            SettingModeArg::NodeRandom => SettingMode::NodeRandom,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment and print the report.
    Simulate(SimulateArgs),
    /// Monte Carlo correlation vs angle, as CSV with analytic companions.
    Scan(ScanArgs),
    /// Evaluate CHSH and CH on a stored counts table.
    Inequalities(InequalitiesArgs),
    /// Detection-efficiency threshold for a CH violation with E = -a.b.
    Threshold(ThresholdArgs),
    /// Serve one two-node session and print the merged report.
    Referee {
        #[arg(long, default_value = "127.0.0.1:4763")]
        bind: String,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Run one measurement node against a referee.
    Node {
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long, default_value = "127.0.0.1:4763")]
        connect: String,
    },
    /// Internal consistency checks; exit 0 when all pass.
    Selftest,
}

fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        variant: ModelVariant::Symmetric,
        quad: SettingQuadruple::chsh_optimal(),
        n_trials: 100_000,
        seed: DEFAULT_SEED,
        schedule: Schedule::CycleQuadruple,
    }
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<(), String> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), String> {
    let mut config = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => default_config(),
    };
    if let Some(v) = args.variant {
        config.variant = v.into();
    }
    if let Some(n) = args.n {
        config.n_trials = n;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(s) = args.schedule {
        config.schedule = s.into();
    }
    if let Some(q) = args.quad {
        config.quad = q;
    }
    let report = match args.threads {
        Some(batches) => run_experiment_with_batches(&config, batches),
        None => run_experiment(&config),
    }
    .map_err(|e| e.to_string())?;
    let text = match args.format {
        FormatArg::Json => report_to_json(&report).map_err(|e| e.to_string())?,
        FormatArg::Csv => report_to_csv(&report),
    };
    emit(&text, &args.out)
}

fn cmd_scan(args: &ScanArgs) -> Result<(), String> {
    if args.points < 2 {
        return Err("need at least 2 grid points".into());
    }
    let thetas: Vec<f64> = (0..args.points)
        .map(|k| PI * k as f64 / (args.points - 1) as f64)
        .collect();
    let scan = scan_correlation(args.variant.into(), &thetas, args.n, args.seed)
        .map_err(|e| e.to_string())?;
    emit(scan_to_csv(&scan).trim_end(), &args.out)
}

fn load_counts(source: &str) -> Result<CountsTable<u64>, String> {
    let text = if source == "-" {
        let mut buf = String::new();
        std::io::stdin()
            .read_to_string(&mut buf)
            .map_err(|e| e.to_string())?;
        buf
    } else {
        fs::read_to_string(source).map_err(|e| format!("{source}: {e}"))?
    };
    counts_from_csv(&text).map_err(|e| e.to_string())
}

fn cmd_inequalities(args: &InequalitiesArgs) -> Result<(), String> {
    let counts = load_counts(&args.counts)?;
    counts.validate(0.0).map_err(|e| e.to_string())?;

    let mut es = [0.0; 4];
    for idx in PairIndex::ALL {
        es[idx as usize] =
            renormalized_correlation(&counts.pairs[idx as usize]).map_err(|e| e.to_string())?;
    }
    let chsh = chsh_value(es[0], es[1], es[2], es[3]).map_err(|e| e.to_string())?;
    println!(
        "CHSH  S = {:+.6}  (E = {:+.6} {:+.6} {:+.6} {:+.6})  violated: {}",
        chsh.s, chsh.e[0], chsh.e[1], chsh.e[2], chsh.e[3], chsh.violated
    );

    let ch = ch_evaluate(&counts);
    println!(
        "CH    lhs = {:.3}  rhs = {:.3}  violated: {}",
        ch.lhs, ch.rhs, ch.violated
    );

    if let Some(quad) = &args.quad {
        let eta = ch_threshold(quad).map_err(|e| e.to_string())?;
        println!("CH efficiency threshold at this quadruple: {eta:.6}");
    }
    Ok(())
}

fn describe_quad(quad: &SettingQuadruple) -> String {
    let deg = |v: &UnitVector3| v.azimuth().to_degrees();
    if quad.is_planar() {
        format!(
            "a = {:.3} deg, a' = {:.3} deg, b = {:.3} deg, b' = {:.3} deg",
            deg(&quad.a),
            deg(&quad.a_prime),
            deg(&quad.b),
            deg(&quad.b_prime)
        )
    } else {
        format!(
            "a = {:?}, a' = {:?}, b = {:?}, b' = {:?}",
            quad.a, quad.a_prime, quad.b, quad.b_prime
        )
    }
}

fn cmd_threshold(args: &ThresholdArgs) -> Result<(), String> {
    let (eta, quad) = if args.full_sphere {
        optimize_threshold_full_sphere(args.seed, args.restarts)
    } else {
        optimize_threshold()
    };
    println!("minimal detection efficiency for a CH violation: {eta:.5}");
    println!("optimal quadruple: {}", describe_quad(&quad));
    println!("exact optimum 2/(1+sqrt(2)) = {:.5}", 2.0 / (1.0 + 2.0_f64.sqrt()));
    Ok(())
}

fn session_config(args: &SessionArgs) -> SessionConfig {
    SessionConfig {
        session_id: args.session_id,
        seed: args.seed,
        variant: args.variant.into(),
        setting_mode: args.settings.into(),
        n_trials: args.n,
        quad: args.quad.unwrap_or_else(SettingQuadruple::chsh_optimal),
    }
}

fn cmd_referee(bind: &str, session: &SessionArgs) -> Result<(), String> {
    let cfg = session_config(session);
    cfg.to_experiment_config()
        .validate()
        .map_err(|e| e.to_string())?;
    eprintln!("listening on {bind}, waiting for alice and bob");
    let report = referee_serve(bind, &cfg).map_err(|e| e.to_string())?;
    let ns = verify_no_signaling(&report.counts);
    println!("{}", report_to_json(&report).map_err(|e| e.to_string())?);
    eprintln!(
        "no-signaling: max residual {:.5} ({:.2} sigma){}",
        ns.max_residual,
        ns.max_residual_sigmas,
        if ns.insufficient_statistics {
            " [insufficient statistics]"
        } else {
            ""
        }
    );
    Ok(())
}

fn cmd_node(role: RoleArg, connect: &str) -> Result<(), String> {
    let side = match role {
        RoleArg::Alice => Side::Alice,
        RoleArg::Bob => Side::Bob,
    };
    let done = node_run(side, connect).map_err(|e| e.to_string())?;
    println!(
        "sent {} records, checksum {:#018x}",
        done.record_count, done.checksum
    );
    Ok(())
}

fn cmd_selftest() -> Result<(), String> {
    if !binary_identity_check() {
        return Err("binary outcome identity failed".into());
    }
    println!("binary outcome identity over 16 tuples: ok");

    let b = UnitVector3::from_planar_angle(0.0);
    for (k, variant) in [
        ModelVariant::NoLoophole,
        ModelVariant::Asymmetric,
        ModelVariant::Symmetric,
        ModelVariant::IndependentDetectors,
        ModelVariant::PlanarSteiner,
    ]
    .into_iter()
    .enumerate()
    {
        let theta = 0.4 + 0.5 * k as f64;
        let a = UnitVector3::from_planar_angle(theta);
        let e = quadrature_correlation(variant, &a, &b, 512).map_err(|e| e.to_string())?;
        let expected = match variant {
            ModelVariant::NoLoophole => -1.0 + 2.0 * theta / PI,
            _ => -theta.cos(),
        };
        if (e - expected).abs() > 1e-6 {
            return Err(format!(
                "{variant:?}: quadrature {e} vs closed form {expected}"
            ));
        }
    }
    println!("quadrature vs closed-form correlations (512 grid, 1e-6): ok");

    let r = relevant_efficiency(0.5).map_err(|e| e.to_string())?;
    if (r - 2.0 / 3.0).abs() > 1e-15 {
        return Err(format!("relevant efficiency {r} != 2/3"));
    }
    let (mean_eff, relevant) = planar_efficiencies();
    println!(
        "efficiencies: spherical relevant {r:.6}, planar mean {mean_eff:.5}, planar relevant {relevant:.5}"
    );

    let report = run_experiment_with_batches(&default_config(), 2).map_err(|e| e.to_string())?;
    let chsh = report.chsh.ok_or("self-test run produced no CHSH value")?;
    if !chsh.violated || report.ch.violated {
        return Err(format!(
            "expected renormalized CHSH violation without CH violation, got S = {}, CH {:?}",
            chsh.s, report.ch
        ));
    }
    println!(
        "symmetric run (n = {}): S = {:+.4} (violated), CH lhs - rhs = {:.1} (not violated)",
        report.config.n_trials,
        chsh.s,
        report.ch.lhs - report.ch.rhs
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Scan(args) => cmd_scan(args),
        Command::Inequalities(args) => cmd_inequalities(args),
        Command::Threshold(args) => cmd_threshold(args),
        Command::Referee { bind, session } => cmd_referee(bind, session),
        Command::Node { role, connect } => cmd_node(*role, connect),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
