use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use polynode::convexity::{self, check_energy_grid, energy_grid, ConvexityReport, GridCheck};
use polynode::dataproto::{
    feasibility_violations, generate_synthetic, load_csv, save_csv, split, stress_errors, Dataset,
    ErrorSummary, LoadingProtocol, Protocol, SplitRule,
};
use polynode::kinematics::{stretch_from_strain, StructuralTensors};
use polynode::material::NodeMaterialModel;
use polynode::oracles::{fit_oracle, FitConfig, OracleKind, OracleModel};
use polynode::response::BiaxialModel;
use polynode::tangent::{tangent_sweep, TangentSweep};
use polynode::trainer::{mae_table, train, TrainConfig};
use polynode::Error;

const THREADS_VAR: &str = "POLYNODE_THREADS";

#[derive(Parser)]
#[command(
    name = "polynode",
    version,
    about = "Polyconvex neural-ODE hyperelastic material models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic biaxial dataset from a model document.
    Synth(SynthArgs),
    /// Train a neural-ODE material model on a dataset.
    Train(TrainArgs),
    /// Per-protocol stress errors of a model on a dataset.
    Eval(EvalArgs),
    /// Fit closed-form oracle models to a dataset.
    FitOracle(FitArgs),
    /// Monotonicity scan and energy-grid convexity check.
    ConvexityCheck(ConvexityArgs),
    /// Compare the consistent tangent with finite differences.
    TangentCheck(TangentArgs),
    /// Write the strain energy over an (Exx, Eyy) grid as CSV.
    EnergySurface(SurfaceArgs),
}

#[derive(Args)]
struct ReportArg {
    /// Write the machine-readable report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Oracle or node model document.
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated protocol tags.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "offx,offy,equibiaxial,stripx,stripy"
    )]
    protocols: Vec<Protocol>,
    #[arg(long, default_value_t = polynode::dataproto::DEFAULT_LAMBDA_MAX)]
    lambda_max: f64,
    #[arg(long, default_value_t = polynode::dataproto::DEFAULT_POINTS)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    report: ReportArg,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// `protocol:equibiaxial,stripx,stripy` or `fraction:0.8`.
    #[arg(long)]
    split: Option<SplitRule>,
    /// Training configuration document; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    report: ReportArg,
}

#[derive(Args)]
struct EvalArgs {
    /// Node model or oracle document.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: Option<SplitRule>,
    #[command(flatten)]
    report: ReportArg,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// One oracle kind, or `all`.
    #[arg(long, default_value = "all")]
    kind: String,
    #[arg(long)]
    split: Option<SplitRule>,
    #[arg(long, default_value_t = FitConfig::default().restarts)]
    restarts: usize,
    #[arg(long, default_value_t = FitConfig::default().max_evals)]
    max_evals: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output document for one kind; a directory receiving `<kind>.json` for `all`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    report: ReportArg,
}

#[derive(Args)]
struct ConvexityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = convexity::DEFAULT_GRID)]
    grid: usize,
    #[arg(long, default_value_t = convexity::DEFAULT_RANGE)]
    range: f64,
    #[command(flatten)]
    report: ReportArg,
}

#[derive(Args)]
struct TangentArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step on the components of C.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Minimum distance of a sampled state from any clamp or gate.
    #[arg(long, default_value_t = 1e-3)]
    margin: f64,
    #[command(flatten)]
    report: ReportArg,
}

#[derive(Args)]
struct SurfaceArgs {
    #[arg(long)]
    model: PathBuf,
    /// `N` or `NxN` points per axis.
    #[arg(long, default_value = "21")]
    grid: String,
    #[arg(long, default_value_t = convexity::DEFAULT_RANGE)]
    range: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    report: ReportArg,
}

/// Why a command stopped; each maps to one exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Evaluation(String),
    Diverged(String),
    CheckFailed(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Evaluation(_) => 3,
            Failure::Diverged(_) => 4,
            Failure::CheckFailed(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m)
            | Failure::Evaluation(m)
            | Failure::Diverged(m)
            | Failure::CheckFailed(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e.root() {
            Error::Config(_) | Error::Parse { .. } | Error::Io { .. } => Failure::Config(message),
            Error::Diverged { .. } => Failure::Diverged(message),
            _ => Failure::Evaluation(message),
        }
    }
}

type Outcome = Result<(), Failure>;

enum AnyModel {
    Node(NodeMaterialModel),
    Oracle(OracleModel),
}

impl AnyModel {
    fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read model {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let parsed = if value.get("kind").is_some() {
            OracleModel::from_document(&text).map(AnyModel::Oracle)
        } else {
            NodeMaterialModel::from_document(&text).map(AnyModel::Node)
        };
        parsed.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    fn name(&self) -> String {
        match self {
            AnyModel::Node(_) => "node".into(),
            AnyModel::Oracle(o) => o.kind().to_string(),
        }
    }

    fn biaxial(&self) -> &dyn BiaxialModel {
        match self {
            AnyModel::Node(m) => m,
            AnyModel::Oracle(o) => o,
        }
    }

    fn fibers(&self) -> StructuralTensors {
        match self {
            AnyModel::Node(m) => m.fibers(),
            AnyModel::Oracle(o) => o.fibers().unwrap_or_else(|| {
                StructuralTensors::from_angles(0.0, std::f64::consts::FRAC_PI_2)
            }),
        }
    }
}

fn load_data(path: &Path) -> Result<Dataset, Failure> {
    load_csv(path).map_err(|e| Failure::Config(e.to_string()))
}

fn emit<T: Serialize>(report: &T, target: &ReportArg) -> Outcome {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Failure::Evaluation(format!("cannot serialize report: {e}")))?;
    match &target.report {
        Some(path) => fs::write(path, text + "\n")
            .map_err(|e| Failure::Config(format!("cannot write report {}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn configure_threads() -> Outcome {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value.trim().parse().map_err(|_| {
        Failure::Config(format!(
            "{THREADS_VAR} must be a positive integer, got {value:?}"
        ))
    })?;
    if n == 0 {
        return Err(Failure::Config(format!(
            "{THREADS_VAR} must be a positive integer, got 0"
        )));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(e.to_string()))
}

fn synth(args: SynthArgs) -> Outcome {
    if !(args.lambda_max > 1.0) || !args.lambda_max.is_finite() {
        return Err(Failure::Config(format!(
            "--lambda-max must be finite and greater than 1, got {}",
            args.lambda_max
        )));
    }
    if args.points < 2 {
        return Err(Failure::Config(format!(
            "--points must be at least 2, got {}",
            args.points
        )));
    }
    let model = AnyModel::load(&args.model)?;
    let protocols: Vec<LoadingProtocol> = args
        .protocols
        .iter()
        .map(|&p| LoadingProtocol::new(p, args.lambda_max, args.points))
        .collect();
    let data = generate_synthetic(model.biaxial(), &protocols, &model.name())?;
    let infeasible = feasibility_violations(&data, &model.fibers())?;
    save_csv(&data, &args.out)?;

    println!("{:<14} {:>8}", "protocol", "records");
    for p in data.protocols() {
        let n = data.records.iter().filter(|r| r.protocol == p).count();
        println!("{:<14} {n:>8}", p.tag());
    }
    println!("peak stress {:.6e} MPa", data.peak_stress());
    if !infeasible.is_empty() {
        eprintln!(
            "warning: {} records fall outside the invariant domain",
            infeasible.len()
        );
    }
    emit(
        &json!({
            "command": "synth",
            "model": model.name(),
            "records": data.len(),
            "protocols": data.protocols(),
            "lambda_max": args.lambda_max,
            "points": args.points,
            "peak_stress": data.peak_stress(),
            "infeasible_records": infeasible,
            "out": args.out,
        }),
        &args.report,
    )
}

fn train_cmd(args: TrainArgs) -> Outcome {
    let config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Failure::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            TrainConfig::from_document(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    let data = load_data(&args.data)?;
    let (train_set, validation) = match &args.split {
        Some(rule) => {
            let s = split(&data, rule)?;
            (s.train, Some(s.validation))
        }
        None => (data, None),
    };
    train_set
        .require_non_empty("training")
        .map_err(|e| Failure::Config(e.to_string()))?;

    let mut init = NodeMaterialModel::new_random(config.seed);
    init.metadata.seed = Some(config.seed);
    init.metadata.training_provenance = Some(format!(
        "trained on {}{}",
        train_set.source,
        args.split
            .as_ref()
            .map(|r| format!(" with split {r}"))
            .unwrap_or_default()
    ));

    let (model, report) = match train(&init, &train_set, &config) {
        Ok(result) => result,
        Err(Error::Diverged {
            iteration,
            snapshot,
        }) => {
            snapshot.save(&args.out)?;
            emit(
                &json!({
                    "command": "train",
                    "status": "diverged",
                    "iteration": iteration,
                    "snapshot": args.out,
                }),
                &args.report,
            )?;
            return Err(Failure::Diverged(format!(
                "training diverged at iteration {iteration}; last finite snapshot written to {}",
                args.out.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    model.save(&args.out)?;

    let train_errors = stress_errors(&model, &train_set)?;
    let validation_errors = match &validation {
        Some(v) => Some(stress_errors(&model, v)?),
        None => None,
    };
    let mut rows = vec![("train".to_string(), &train_errors)];
    if let Some(v) = &validation_errors {
        rows.push(("validation".to_string(), v));
    }
    print!("{}", mae_table(&rows));
    println!(
        "iterations {} ({:?}), best at {}, mse {:.6e}, {:.1} s",
        report.iterations,
        report.stop_reason,
        report.best_iteration,
        report.total_mse,
        report.wall_clock_seconds
    );
    emit(
        &json!({
            "command": "train",
            "status": "ok",
            "split": args.split.as_ref().map(|r| r.to_string()),
            "training": report,
            "evaluation": {"train": train_errors, "validation": validation_errors},
            "out": args.out,
        }),
        &args.report,
    )
}

fn error_rows(
    model: &dyn BiaxialModel,
    data: Dataset,
    rule: Option<&SplitRule>,
) -> Result<Vec<(String, ErrorSummary)>, Failure> {
    Ok(match rule {
        Some(rule) => {
            let s = split(&data, rule)?;
            vec![
                ("train".to_string(), stress_errors(model, &s.train)?),
                (
                    "validation".to_string(),
                    stress_errors(model, &s.validation)?,
                ),
            ]
        }
        None => vec![("all".to_string(), stress_errors(model, &data)?)],
    })
}

fn eval_cmd(args: EvalArgs) -> Outcome {
    let model = AnyModel::load(&args.model)?;
    let data = load_data(&args.data)?;
    let rows = error_rows(model.biaxial(), data, args.split.as_ref())?;
    let table: Vec<(String, &ErrorSummary)> = rows.iter().map(|(n, e)| (n.clone(), e)).collect();
    print!("{}", mae_table(&table));
    let sides: serde_json::Map<String, serde_json::Value> = rows
        .iter()
        .map(|(n, e)| (n.clone(), serde_json::to_value(e).unwrap_or_default()))
        .collect();
    emit(
        &json!({
            "command": "eval",
            "model": model.name(),
            "split": args.split.as_ref().map(|r| r.to_string()),
            "errors": sides,
        }),
        &args.report,
    )
}

fn fit_cmd(args: FitArgs) -> Outcome {
    let kinds: Vec<OracleKind> = if args.kind == "all" {
        OracleKind::ALL.to_vec()
    } else {
        vec![args.kind.parse::<OracleKind>()?]
    };
    if args.restarts == 0 || args.max_evals == 0 {
        return Err(Failure::Config(
            "--restarts and --max-evals must be at least 1".into(),
        ));
    }
    let data = load_data(&args.data)?;
    let (fit_set, validation) = match &args.split {
        Some(rule) => {
            let s = split(&data, rule)?;
            (s.train, Some(s.validation))
        }
        None => (data, None),
    };
    fit_set
        .require_non_empty("fitting")
        .map_err(|e| Failure::Config(e.to_string()))?;
    let config = FitConfig {
        restarts: args.restarts,
        max_evals: args.max_evals,
        seed: args.seed,
        ..FitConfig::default()
    };

    let mut fits = Vec::new();
    for kind in kinds.iter().copied() {
        let (model, report) = fit_oracle(kind, &fit_set, &config)?;
        let validation_errors = match &validation {
            Some(v) => Some(stress_errors(&model, v)?),
            None => None,
        };
        fits.push((model, report, validation_errors));
    }

    if let Some(out) = &args.out {
        if kinds.len() == 1 {
            fits[0].0.save(out)?;
        } else {
            fs::create_dir_all(out)
                .map_err(|e| Failure::Config(format!("cannot create {}: {e}", out.display())))?;
            for (model, _, _) in &fits {
                model.save(&out.join(format!("{}.json", model.kind())))?;
            }
        }
    }

    let ranking_key = |f: &(
        OracleModel,
        polynode::oracles::FitReport,
        Option<ErrorSummary>,
    )| { f.2.as_ref().map(|e| e.mae).unwrap_or(f.1.errors.mae) };
    let mut ranking: Vec<usize> = (0..fits.len()).collect();
    ranking.sort_by(|&a, &b| {
        ranking_key(&fits[a])
            .total_cmp(&ranking_key(&fits[b]))
            .then(a.cmp(&b))
    });

    let rows: Vec<(String, &ErrorSummary)> = ranking
        .iter()
        .map(|&k| {
            let f = &fits[k];
            (f.1.kind.to_string(), f.2.as_ref().unwrap_or(&f.1.errors))
        })
        .collect();
    println!(
        "{} MAE (MPa)",
        if validation.is_some() {
            "validation"
        } else {
            "fit"
        }
    );
    print!("{}", mae_table(&rows));

    let entries: Vec<serde_json::Value> = fits
        .iter()
        .map(|(model, report, v)| {
            json!({
                "kind": report.kind,
                "parameters": serde_json::from_str::<serde_json::Value>(&model.to_document()).unwrap_or_default(),
                "fit": report,
                "validation": v,
            })
        })
        .collect();
    emit(
        &json!({
            "command": "fit-oracle",
            "split": args.split.as_ref().map(|r| r.to_string()),
            "fits": entries,
            "ranking": ranking.iter().map(|&k| fits[k].1.kind).collect::<Vec<_>>(),
        }),
        &args.report,
    )
}

fn print_grid_violations(check: &GridCheck) {
    for v in check.violations.iter().take(20) {
        println!(
            "  {:?} second difference {:.3e} at Exx {:.4}, Eyy {:.4}",
            v.axis, v.second_difference, v.exx, v.eyy
        );
    }
    if check.violations.len() > 20 {
        println!("  ... {} more", check.violations.len() - 20);
    }
}

fn convexity_cmd(args: ConvexityArgs) -> Outcome {
    let model = AnyModel::load(&args.model)?;
    let (passed, report) = match &model {
        AnyModel::Node(m) => {
            let r: ConvexityReport = convexity::check_node_model(m, args.grid, args.range)?;
            println!(
                "monotonicity violations {}",
                r.monotonicity_violations.len()
            );
            for v in r.monotonicity_violations.iter().take(20) {
                println!(
                    "  {} between {} and {}: {} -> {}",
                    v.term, v.x1, v.x2, v.y1, v.y2
                );
            }
            println!(
                "energy grid {}x{} over ±{}: min second difference {:.3e}, violations {}",
                args.grid,
                args.grid,
                args.range,
                r.energy.min_second_difference,
                r.energy.violations.len()
            );
            print_grid_violations(&r.energy);
            (r.passed(), serde_json::to_value(&r).unwrap_or_default())
        }
        AnyModel::Oracle(o) => {
            let grid = energy_grid(o, args.grid, args.range)?;
            let check = check_energy_grid(&grid, convexity::SECOND_DIFFERENCE_TOL);
            println!(
                "energy grid {}x{} over ±{}: min second difference {:.3e}, violations {}",
                args.grid,
                args.grid,
                args.range,
                check.min_second_difference,
                check.violations.len()
            );
            print_grid_violations(&check);
            (
                check.passed(),
                json!({"energy": check, "grid_points": args.grid, "strain_range": args.range}),
            )
        }
    };
    println!(
        "{}",
        if passed {
            "convex: pass"
        } else {
            "convex: FAIL"
        }
    );
    emit(
        &json!({"command": "convexity-check", "model": model.name(), "passed": passed, "result": report}),
        &args.report,
    )?;
    if passed {
        Ok(())
    } else {
        Err(Failure::CheckFailed(
            "convexity check found violations".into(),
        ))
    }
}

fn tangent_cmd(args: TangentArgs) -> Outcome {
    if args.samples == 0 {
        return Err(Failure::Config("--samples must be at least 1".into()));
    }
    if !(args.tol > 0.0) || !(args.step > 0.0) || !(args.margin >= 0.0) {
        return Err(Failure::Config(
            "--tol and --step must be positive, --margin non-negative".into(),
        ));
    }
    let model = AnyModel::load(&args.model)?;
    let dirs = model.fibers();
    let sweep: TangentSweep = match &model {
        AnyModel::Node(m) => {
            tangent_sweep(m, &dirs, args.samples, args.seed, args.margin, args.step)?
        }
        AnyModel::Oracle(o) => {
            tangent_sweep(o, &dirs, args.samples, args.seed, args.margin, args.step)?
        }
    };
    let passed = sweep.max_relative_error <= args.tol;
    println!(
        "{} states ({} rejected near kinks): max relative error {:.3e} (tol {:.1e}), max asymmetry {:.3e}",
        sweep.samples, sweep.rejected, sweep.max_relative_error, args.tol, sweep.max_asymmetry
    );
    println!(
        "{}",
        if passed {
            "tangent: pass"
        } else {
            "tangent: FAIL"
        }
    );
    emit(
        &json!({"command": "tangent-check", "model": model.name(), "tol": args.tol, "passed": passed, "result": sweep}),
        &args.report,
    )?;
    if passed {
        Ok(())
    } else {
        Err(Failure::CheckFailed(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            sweep.max_relative_error, args.tol
        )))
    }
}

fn parse_grid(text: &str) -> Result<usize, Failure> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Failure::Config(format!("--grid expects N or NxN, got {text:?}")))
    };
    match text.split_once(['x', 'X']) {
        Some((a, b)) => {
            let (n, m) = (parse(a)?, parse(b)?);
            if n != m {
                return Err(Failure::Config(format!(
                    "--grid must be square, got {n}x{m}"
                )));
            }
            Ok(n)
        }
        None => parse(text),
    }
}

fn surface_cmd(args: SurfaceArgs) -> Outcome {
    let n = parse_grid(&args.grid)?;
    let model = AnyModel::load(&args.model)?;
    let grid = energy_grid(model.biaxial(), n, args.range)?;
    let mut csv = String::from("exx,eyy,lambda_x,lambda_y,psi\n");
    for (i, &exx) in grid.strains.iter().enumerate() {
        for (j, &eyy) in grid.strains.iter().enumerate() {
            csv.push_str(&format!(
                "{exx},{eyy},{},{},{}\n",
                stretch_from_strain(exx)?,
                stretch_from_strain(eyy)?,
                grid.psi[i][j]
            ));
        }
    }
    fs::write(&args.out, csv)
        .map_err(|e| Failure::Config(format!("cannot write {}: {e}", args.out.display())))?;
    let (min, max) = grid
        .psi
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p), hi.max(p))
        });
    println!(
        "{n}x{n} grid over ±{}: psi in [{min:.6e}, {max:.6e}] MPa",
        args.range
    );
    emit(
        &json!({
            "command": "energy-surface",
            "model": model.name(),
            "grid_points": n,
            "strain_range": args.range,
            "psi_min": min,
            "psi_max": max,
            "out": args.out,
        }),
        &args.report,
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::FitOracle(a) => fit_cmd(a),
        Command::ConvexityCheck(a) => convexity_cmd(a),
        Command::TangentCheck(a) => tangent_cmd(a),
        Command::EnergySurface(a) => surface_cmd(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
