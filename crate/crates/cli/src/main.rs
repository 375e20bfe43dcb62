//! Command-line interface: fit the log-linear hierarchy, compute plug-in
//! identification bounds, invert bootstrap or profile-likelihood tests into
//! confidence intervals, and run coverage simulations.

mod output;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crc_bounds::ci::CiResult;
use crc_bounds::loglinear::fit_hierarchy;
use crc_bounds::profile::{invert_pl_ci, PlConfig};
use crc_bounds::restrictions::{or_lower_bounds, MeanVector, RestrictionSpec, DEFAULT_DELTA};
use crc_bounds::simulate::{run_coverage, CiMethod, NamedRestriction, SimConfig};
use crc_bounds::table::{parse_table, ContingencyTable, ParsedTable, TableFormat};
use crc_bounds::tib::{invert_ci, GridStrategy, TestConfig};
use output::{emit_csv, emit_json, sidecar_path, ManifestBuilder};
use serde::Serialize;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "crc-bounds",
    version,
    about = "Dependence-robust population-size estimation from capture-recapture tables"
)]
struct Cli {
    /// Worker threads (default: all cores; env CRC_BOUNDS_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the hierarchy of point-identified log-linear models.
    Fit(FitArgs),
    /// Plug-in identification interval and odds-ratio lower bounds.
    Bounds(BoundsArgs),
    /// Test-inversion bootstrap confidence interval.
    CiTib(CiTibArgs),
    /// Profile-likelihood confidence interval.
    CiPl(CiPlArgs),
    /// Monte Carlo coverage study.
    Simulate(SimArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GridArg {
    Exhaustive,
    Adaptive,
}

#[derive(Args)]
struct FitArgs {
    /// Table file (.json or .csv).
    #[arg(long)]
    input: PathBuf,
    /// Level for the per-model profile-likelihood intervals.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Skip the per-model confidence intervals (faster).
    #[arg(long)]
    no_ci: bool,
    #[arg(long, value_enum, default_value_t = OutFormat::Json)]
    format: OutFormat,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Restriction JSON or shorthand (gamma=G | agnostic=XI | positive=XI).
    #[arg(long)]
    restriction: String,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = OutFormat::Json)]
    format: OutFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CiTibArgs {
    #[arg(long)]
    input: PathBuf,
    /// Restriction JSON or shorthand (gamma=G | agnostic=XI | positive=XI).
    #[arg(long)]
    restriction: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// First-step level (default alpha/10).
    #[arg(long)]
    beta: Option<f64>,
    /// Bootstrap resamples.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compactness cap on the population size.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Report the interval truncated at the observed count (default on).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    truncate_at_observed: bool,
    #[arg(long, value_enum, default_value_t = GridArg::Adaptive)]
    grid: GridArg,
    #[arg(long, value_enum, default_value_t = OutFormat::Json)]
    format: OutFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CiPlArgs {
    #[arg(long)]
    input: PathBuf,
    /// Restriction JSON or shorthand (gamma=G | agnostic=XI | positive=XI).
    #[arg(long)]
    restriction: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Endpoint bisection resolution in individuals.
    #[arg(long, default_value_t = 0.5)]
    resolution: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Report the interval truncated at the observed count (default on).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    truncate_at_observed: bool,
    #[arg(long, value_enum, default_value_t = OutFormat::Json)]
    format: OutFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// True cell means, comma separated (default: the bundled example).
    #[arg(long)]
    means: Option<String>,
    #[arg(long, default_value_t = 500)]
    replications: usize,
    /// Methods to evaluate: tib | pl | bestbic | ind=[LABEL].
    #[arg(long = "method", required = true)]
    methods: Vec<String>,
    /// Restrictions as ID=SPEC with SPEC a JSON object or shorthand.
    #[arg(long = "restriction")]
    restrictions: Vec<String>,
    /// Candidate-size grid LO:HI:STEP for pointwise coverage.
    #[arg(long, default_value = "300:1500:10")]
    m_grid: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Truncate intervals at the observed count (default off).
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    truncate_at_observed: bool,
    /// Output prefix; writes PREFIX_points.csv, PREFIX_summary.csv,
    /// PREFIX_paired.csv and a manifest sidecar.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with status 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = setup_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let outcome = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Bounds(args) => run_bounds(args),
        Command::CiTib(args) => run_ci_tib(args),
        Command::CiPl(args) => run_ci_pl(args),
        Command::Simulate(args) => run_simulate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

fn classify(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<crc_bounds::Error>() {
        Some(err) if err.is_data_error() => 2,
        Some(_) => 3,
        // anyhow-wrapped IO/parse problems are data errors
        None => 2,
    }
}

fn setup_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let threads = flag.or_else(|| {
        std::env::var("CRC_BOUNDS_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn load_table(path: &PathBuf, warnings: &mut Vec<String>) -> anyhow::Result<ContingencyTable> {
    let text = std::fs::read_to_string(path)
        .map_err(crc_bounds::Error::from)
        .with_context(|| format!("reading {}", path.display()))?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => TableFormat::Csv,
        _ => TableFormat::Json,
    };
    let ParsedTable { table, defaulted_cells } = parse_table(&text, format)?;
    if !defaulted_cells.is_empty() {
        warnings.push(format!(
            "{} observed cell(s) missing from the input were defaulted to 0",
            defaulted_cells.len()
        ));
    }
    Ok(table)
}

/// Accept either the JSON form or the shorthands `gamma=G`, `agnostic=XI`,
/// `positive=XI` (shorthands apply to every sample pair).
fn parse_restriction(text: &str, k: usize, delta: f64) -> anyhow::Result<RestrictionSpec> {
    let trimmed = text.trim();
    let mut spec = if trimmed.starts_with('{') {
        RestrictionSpec::from_json(trimmed)?
    } else if let Some((key, value)) = trimmed.split_once('=') {
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| anyhow!("bad numeric value in restriction shorthand {trimmed:?}"))?;
        match key.trim() {
            "gamma" => RestrictionSpec::highest_order(value)?,
            "agnostic" => RestrictionSpec::all_pairs(k, 1.0 / value, value)?,
            "positive" => RestrictionSpec::all_pairs(k, 1.0, value)?,
            other => return Err(anyhow!("unknown restriction shorthand {other:?}")),
        }
    } else {
        return Err(anyhow!(
            "restriction must be JSON or one of gamma=G, agnostic=XI, positive=XI"
        ));
    };
    // an explicit JSON delta wins; the flag covers the shorthands
    if !trimmed.contains("delta") {
        spec.delta = delta;
    }
    spec.validate_for(k)?;
    Ok(spec)
}

#[derive(Serialize)]
struct FitRow {
    model: String,
    m_hat: Option<f64>,
    se: Option<f64>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    aic: Option<f64>,
    bic: Option<f64>,
    best_bic: bool,
    status: String,
}

fn run_fit(args: FitArgs) -> anyhow::Result<()> {
    let mut warnings = Vec::new();
    let table = load_table(&args.input, &mut warnings)?;
    let ci_alpha = if args.no_ci { None } else { Some(args.alpha) };
    let rows = fit_hierarchy(&table, ci_alpha)?;
    let result: Vec<FitRow> = rows
        .iter()
        .map(|r| match &r.outcome {
            Ok(fit) => FitRow {
                model: r.formula.label().to_string(),
                m_hat: Some(fit.m_hat),
                se: Some(fit.se),
                ci_lo: r.ci.map(|c| c.0),
                ci_hi: r.ci.map(|c| c.1),
                aic: Some(fit.aic),
                bic: Some(fit.bic),
                best_bic: r.best_bic,
                status: "ok".into(),
            },
            Err(e) => FitRow {
                model: r.formula.label().to_string(),
                m_hat: None,
                se: None,
                ci_lo: None,
                ci_hi: None,
                aic: None,
                bic: None,
                best_bic: false,
                status: e.clone(),
            },
        })
        .collect();

    let mut manifest = ManifestBuilder::new("fit")
        .input(&args.input)
        .config(&json!({ "alpha": args.alpha, "ci": !args.no_ci }));
    for w in warnings {
        manifest.warn(w);
    }
    let manifest = manifest.finish();
    match args.format {
        OutFormat::Json => emit_json(&manifest, &result, args.out.as_ref()),
        OutFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &result {
                w.serialize(row)?;
            }
            let text = String::from_utf8(w.into_inner()?)?;
            emit_csv(&manifest, &text, args.out.as_ref())
        }
    }
}

fn run_bounds(args: BoundsArgs) -> anyhow::Result<()> {
    let mut warnings = Vec::new();
    let table = load_table(&args.input, &mut warnings)?;
    let spec = parse_restriction(&args.restriction, table.k(), args.delta)?;
    let means = MeanVector::from_table(&table);
    let interval = spec.ident_interval(&means, table.k())?;
    let or_bounds = or_lower_bounds(&table)?;
    let result = json!({
        "ident_lo": interval.lo,
        "ident_hi": interval.hi,
        "empty": interval.is_empty(),
        "n_obs": table.n_obs(),
        "or_lower_bounds": or_bounds,
    });

    let mut manifest = ManifestBuilder::new("bounds")
        .input(&args.input)
        .restriction(&spec)
        .config(&json!({ "delta": spec.delta }));
    for w in warnings {
        manifest.warn(w);
    }
    emit_output(&manifest.finish(), &result, args.format, args.out.as_ref())
}

#[derive(Serialize)]
struct CiOutput {
    lo: Option<f64>,
    hi: Option<f64>,
    infinite_upper: bool,
    empty: bool,
    truncated_at_observed: bool,
    accepted_points: Option<Vec<f64>>,
    evaluations: usize,
    degenerate_redraws: usize,
    audit_anomalies: usize,
    non_interval: bool,
}

impl CiOutput {
    fn from_ci(ci: &CiResult, include_points: bool) -> Self {
        CiOutput {
            lo: ci.interval_lo,
            hi: ci.interval_hi,
            infinite_upper: ci.infinite_upper,
            empty: ci.empty,
            truncated_at_observed: ci.truncated_at_observed,
            accepted_points: include_points.then(|| ci.accepted_points.clone()),
            evaluations: ci.diagnostics.evaluated.len(),
            degenerate_redraws: ci.diagnostics.degenerate_redraws,
            audit_anomalies: ci.diagnostics.audit_anomalies,
            non_interval: ci.diagnostics.non_interval,
        }
    }
}

fn run_ci_tib(args: CiTibArgs) -> anyhow::Result<()> {
    let mut warnings = Vec::new();
    let table = load_table(&args.input, &mut warnings)?;
    let spec = parse_restriction(&args.restriction, table.k(), args.delta)?;
    let cfg = TestConfig {
        alpha: args.alpha,
        beta: args.beta,
        bootstrap: args.bootstrap,
        n_tables: 1,
        seed: args.seed,
        grid: match args.grid {
            GridArg::Exhaustive => GridStrategy::Exhaustive,
            GridArg::Adaptive => GridStrategy::Adaptive,
        },
        truncate_at_observed: args.truncate_at_observed,
        ..Default::default()
    };
    let ci = invert_ci(&spec, std::slice::from_ref(&table), &cfg)?;
    let result = CiOutput::from_ci(&ci, true);
    let mut manifest = ManifestBuilder::new("ci-tib")
        .input(&args.input)
        .restriction(&spec)
        .seed(args.seed)
        .config(&json!({
            "alpha": args.alpha,
            "beta": cfg.beta(),
            "bootstrap": args.bootstrap,
            "delta": spec.delta,
            "truncate_at_observed": args.truncate_at_observed,
            "grid": match args.grid { GridArg::Exhaustive => "exhaustive", GridArg::Adaptive => "adaptive" },
        }));
    for w in warnings {
        manifest.warn(w);
    }
    emit_output(&manifest.finish(), &result, args.format, args.out.as_ref())
}

fn run_ci_pl(args: CiPlArgs) -> anyhow::Result<()> {
    let mut warnings = Vec::new();
    let table = load_table(&args.input, &mut warnings)?;
    let spec = parse_restriction(&args.restriction, table.k(), args.delta)?;
    let cfg = PlConfig {
        alpha: args.alpha,
        resolution: args.resolution,
        truncate_at_observed: args.truncate_at_observed,
        ..Default::default()
    };
    let means = MeanVector::from_table(&table);
    let ci = invert_pl_ci(&means, &spec, &cfg)?;
    let result = CiOutput::from_ci(&ci, false);
    let mut manifest = ManifestBuilder::new("ci-pl")
        .input(&args.input)
        .restriction(&spec)
        .config(&json!({
            "alpha": args.alpha,
            "resolution": args.resolution,
            "delta": spec.delta,
            "truncate_at_observed": args.truncate_at_observed,
        }));
    for w in warnings {
        manifest.warn(w);
    }
    emit_output(&manifest.finish(), &result, args.format, args.out.as_ref())
}

fn parse_m_grid(text: &str) -> anyhow::Result<Vec<u64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(anyhow!("m-grid must be LO:HI:STEP, got {text:?}"));
    }
    let lo: u64 = parts[0].parse().context("m-grid LO")?;
    let hi: u64 = parts[1].parse().context("m-grid HI")?;
    let step: usize = parts[2].parse().context("m-grid STEP")?;
    if lo > hi || step == 0 {
        return Err(anyhow!("m-grid needs LO <= HI and STEP >= 1"));
    }
    Ok((lo..=hi).step_by(step).collect())
}

fn run_simulate(args: SimArgs) -> anyhow::Result<()> {
    let true_means = match &args.means {
        Some(text) => {
            let vals: Vec<f64> = text
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| anyhow!("bad mean {v:?}")))
                .collect::<anyhow::Result<_>>()?;
            MeanVector::new(vals)?
        }
        None => MeanVector::new(vec![21.0, 103.0, 13.0, 89.0, 29.0, 24.0, 27.0])?,
    };
    let k = true_means.infer_k()?;

    let mut methods = Vec::new();
    for m in &args.methods {
        let m = m.trim();
        methods.push(match m {
            "tib" => CiMethod::Tib,
            "pl" => CiMethod::Pl,
            "bestbic" => CiMethod::BestBic,
            other => match other.strip_prefix("ind=") {
                Some(label) => CiMethod::Independence(label.to_string()),
                None => return Err(anyhow!("unknown method {other:?}")),
            },
        });
    }
    let needs_restriction = methods.iter().any(|m| matches!(m, CiMethod::Tib | CiMethod::Pl));
    if needs_restriction && args.restrictions.is_empty() {
        return Err(anyhow!("tib/pl methods need at least one --restriction ID=SPEC"));
    }
    let mut restrictions = Vec::new();
    for r in &args.restrictions {
        let (id, spec_text) = r
            .split_once('=')
            .ok_or_else(|| anyhow!("restriction must be ID=SPEC, got {r:?}"))?;
        // the spec part may itself be a shorthand with '='
        let spec = parse_restriction(spec_text, k, DEFAULT_DELTA)?;
        restrictions.push(NamedRestriction { id: id.to_string(), spec });
    }

    let cfg = SimConfig {
        true_means,
        replications: args.replications,
        methods,
        restrictions,
        m_eval_grid: parse_m_grid(&args.m_grid)?,
        seed: args.seed,
        bootstrap: args.bootstrap,
        alpha: args.alpha,
        truncate_at_observed: args.truncate_at_observed,
    };
    let report = run_coverage(&cfg)?;

    let manifest = ManifestBuilder::new("simulate")
        .seed(args.seed)
        .config(&json!({
            "replications": args.replications,
            "bootstrap": args.bootstrap,
            "alpha": args.alpha,
            "m_grid": args.m_grid,
            "methods": args.methods,
            "restrictions": args.restrictions,
            "truncate_at_observed": args.truncate_at_observed,
            "rejected_draws": report.rejected_draws,
        }))
        .finish();

    let prefix = args.out.display().to_string();
    let points_path = PathBuf::from(format!("{prefix}_points.csv"));
    let summary_path = PathBuf::from(format!("{prefix}_summary.csv"));
    let paired_path = PathBuf::from(format!("{prefix}_paired.csv"));

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.per_point {
        w.serialize(row)?;
    }
    std::fs::write(&points_path, w.into_inner()?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.summary {
        w.serialize(row)?;
    }
    std::fs::write(&summary_path, w.into_inner()?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.paired {
        w.serialize(row)?;
    }
    std::fs::write(&paired_path, w.into_inner()?)?;

    std::fs::write(
        sidecar_path(&points_path),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    eprintln!(
        "wrote {}, {}, {}",
        points_path.display(),
        summary_path.display(),
        paired_path.display()
    );
    Ok(())
}

fn emit_output<T: Serialize>(
    manifest: &output::Manifest,
    result: &T,
    format: OutFormat,
    out: Option<&PathBuf>,
) -> anyhow::Result<()> {
    match format {
        OutFormat::Json => emit_json(manifest, result, out),
        OutFormat::Csv => {
            let value = serde_json::to_value(result)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            match &value {
                serde_json::Value::Array(rows) => {
                    for row in rows {
                        w.serialize(flatten(row))?;
                    }
                }
                other => w.serialize(flatten(other))?,
            }
            let text = String::from_utf8(w.into_inner()?)?;
            emit_csv(manifest, &text, out)
        }
    }
}

/// CSV cannot nest; drop nested arrays/objects and keep scalar fields.
fn flatten(value: &serde_json::Value) -> std::collections::BTreeMap<String, String> {
    let mut map = std::collections::BTreeMap::new();
    if let serde_json::Value::Object(fields) = value {
        for (key, v) in fields {
            match v {
                serde_json::Value::Null => {
                    map.insert(key.clone(), String::new());
                }
                serde_json::Value::Bool(b) => {
                    map.insert(key.clone(), b.to_string());
                }
                serde_json::Value::Number(n) => {
                    map.insert(key.clone(), n.to_string());
                }
                serde_json::Value::String(s) => {
                    map.insert(key.clone(), s.clone());
                }
                _ => {}
            }
        }
    }
    map
}
