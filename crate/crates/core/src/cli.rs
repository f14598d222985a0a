//! Command-line front end: reproducible runs with JSON/CSV output.
//!
//! Four subcommands cover the workflow: `estimate` (indices with CIs),
//! `coverage` (repeated-interval hit rates against closed-form truth),
//! `min-n` (concentration-based sample-size planning), and `componentwise`
//! (per-output-component index curves). A TOML config file supplies
//! defaults; flags override it. Every command is deterministic given
//! (config, seed), including under `--threads` changes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{componentwise_cis, confidence_interval};
use crate::concentration::{estimate_v, min_sample_size, worst_case_bounds};
use crate::design::{DesignConfig, InputSpec, SubsetU};
use crate::error::{Error, Result};
use crate::estimators::{estimate_index, PickFreezeSample};
use crate::functional::{m_schedule, TruncationSchedule};
use crate::models::{InputCase, ModelSpec};

#[derive(Debug, Parser)]
#[command(
    name = "soboltrace",
    version,
    about = "Trace-based sensitivity indices for vector and functional outputs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate indices with asymptotic confidence intervals (JSON).
    Estimate(CommonArgs),
    /// Repeated-design interval coverage against the exact index (JSON).
    Coverage(CommonArgs),
    /// Smallest N certified by the worst-case concentration bound (JSON/CSV).
    #[command(name = "min-n")]
    MinN(MinNArgs),
    /// Per-component indices and CI hull along the output grid (CSV).
    Componentwise(CommonArgs),
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML config file; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// polar | mass-spring | aniso:A | bilinear:A,B | external:CMD:K.
    #[arg(long)]
    pub model: Option<String>,
    /// gaussian | uniform; defaults to the model's native case.
    #[arg(long)]
    pub case: Option<String>,
    /// Frozen-input subset such as "1" or "{1,3}"; repeat for several.
    #[arg(long = "u")]
    pub u: Vec<String>,
    /// Input dimension, needed for external models only.
    #[arg(long)]
    pub p: Option<usize>,
    /// Design size N (number of Pick-and-Freeze pairs).
    #[arg(long)]
    pub n: Option<usize>,
    /// Base seed; all randomness derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Two-sided confidence level in [0, 1).
    #[arg(long)]
    pub level: Option<f64>,
    /// Repetitions for coverage runs.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Truncation exponent: estimate keeps m = floor(N^theta) components.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Assumed coefficient-variance decay for the schedule check.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// json | csv (each command documents what it supports).
    #[arg(long)]
    pub format: Option<String>,
    /// Worker threads; library default when absent. Results never depend
    /// on this.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MinNArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Relative deviation t in (0, 1); repeat for a sweep.
    #[arg(long = "t")]
    pub t: Vec<f64>,
    /// Risk target alpha in (0, 1).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Almost-sure output radius rho for estimating V from a model run.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Analytic V = (sum_l v_l)^2; skips the model-based estimate.
    #[arg(long = "v-total")]
    pub v_total: Option<f64>,
}

/// Flat key/value config mirrored by the flags. Unknown keys are rejected
/// so typos fail loudly.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<String>,
    case: Option<String>,
    u: Option<Vec<String>>,
    p: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
    level: Option<f64>,
    reps: Option<usize>,
    theta: Option<f64>,
    delta: Option<f64>,
    rho: Option<f64>,
    t: Option<Vec<f64>>,
    alpha: Option<f64>,
    v_total: Option<f64>,
    format: Option<String>,
    out: Option<String>,
    threads: Option<usize>,
}

fn load_config(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OutputFormat {
    Json,
    Csv,
}

/// Everything a command needs, after file/flag merging and defaulting.
struct Resolved {
    model: Option<ModelSpec>,
    inputs: Option<InputSpec>,
    case: InputCase,
    subsets: Vec<SubsetU>,
    n: usize,
    seed: u64,
    level: f64,
    reps: usize,
    theta: Option<f64>,
    delta: f64,
    rho: Option<f64>,
    ts: Vec<f64>,
    alpha: f64,
    v_total: Option<f64>,
    /// None means "the command's native format".
    format: Option<OutputFormat>,
    out: Option<PathBuf>,
    threads: Option<usize>,
}

/// Parses the model strings shared by every front end:
/// `polar | mass-spring | aniso:A | bilinear:A,B | external:CMD:K`.
pub fn parse_model(s: &str) -> Result<ModelSpec> {
    let bad = || {
        Error::Config(format!(
            "unknown model {s:?}; expected polar | mass-spring | aniso:A | bilinear:A,B | external:CMD:K"
        ))
    };
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
    match s.split_once(':') {
        None => match s {
            "polar" => Ok(ModelSpec::Polar),
            "mass-spring" => Ok(ModelSpec::mass_spring_default()),
            _ => Err(bad()),
        },
        Some(("aniso", rest)) => Ok(ModelSpec::AnisoLinear { a: num(rest)? }),
        Some(("bilinear", rest)) => {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            Ok(ModelSpec::BilinearAB { a: num(a)?, b: num(b)? })
        }
        Some(("external", rest)) => {
            let (command, k) = rest.rsplit_once(':').ok_or_else(bad)?;
            let k: usize = k.trim().parse().map_err(|_| bad())?;
            if command.trim().is_empty() || k == 0 {
                return Err(bad());
            }
            Ok(ModelSpec::External { command: command.trim().to_string(), k })
        }
        Some(_) => Err(bad()),
    }
}

/// Parses `gaussian | uniform`, case-insensitively.
pub fn parse_case(s: &str) -> Result<InputCase> {
    match s.to_ascii_lowercase().as_str() {
        "gaussian" => Ok(InputCase::Gaussian),
        "uniform" => Ok(InputCase::Uniform),
        _ => Err(Error::Config(format!("unknown input case {s:?}; expected gaussian | uniform"))),
    }
}

fn parse_format(s: &str) -> Result<OutputFormat> {
    match s.to_ascii_lowercase().as_str() {
        "json" => Ok(OutputFormat::Json),
        "csv" => Ok(OutputFormat::Csv),
        _ => Err(Error::Config(format!("unknown format {s:?}; expected json | csv"))),
    }
}

/// Uniform is the native law for the polar and oscillator models; the toys
/// default to standard Gaussians.
pub fn default_case(model: &ModelSpec) -> InputCase {
    match model {
        ModelSpec::Polar | ModelSpec::MassSpring { .. } => InputCase::Uniform,
        _ => InputCase::Gaussian,
    }
}

fn resolve(args: CommonArgs, extra: Option<MinNArgs2>) -> Result<Resolved> {
    let file = match &args.config {
        Some(p) => load_config(p)?,
        None => FileConfig::default(),
    };
    let model = match args.model.or(file.model) {
        Some(s) => Some(parse_model(&s)?),
        None => None,
    };
    let case = match args.case.or(file.case) {
        Some(s) => parse_case(&s)?,
        None => model.as_ref().map(default_case).unwrap_or(InputCase::Gaussian),
    };
    let inputs = match &model {
        Some(m) => Some(m.sampling_inputs(case, args.p.or(file.p))?),
        None => None,
    };
    let subset_strs = if !args.u.is_empty() {
        args.u
    } else {
        file.u.unwrap_or_default()
    };
    let subsets = match &inputs {
        Some(inputs) => {
            let p = inputs.p();
            if subset_strs.is_empty() {
                (1..=p).map(|j| SubsetU::new([j])).collect()
            } else {
                subset_strs
                    .iter()
                    .map(|s| {
                        let u = SubsetU::parse(s)?;
                        u.validate_for(p)?;
                        Ok(u)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        }
        // Without a model (min-n with an analytic V) subsets are unused;
        // parse them anyway so typos still fail.
        None => subset_strs
            .iter()
            .map(|s| SubsetU::parse(s))
            .collect::<Result<Vec<_>>>()?,
    };
    let format = match args.format.or(file.format) {
        Some(s) => Some(parse_format(&s)?),
        None => None,
    };
    let (ts, alpha, rho, v_total) = match extra {
        Some(e) => (
            if !e.t.is_empty() { e.t } else { file.t.unwrap_or_default() },
            e.alpha.or(file.alpha),
            e.rho.or(file.rho),
            e.v_total.or(file.v_total),
        ),
        None => (Vec::new(), file.alpha, file.rho, file.v_total),
    };
    Ok(Resolved {
        model,
        inputs,
        case,
        subsets,
        n: args.n.or(file.n).unwrap_or(2000),
        seed: args.seed.or(file.seed).unwrap_or(42),
        level: args.level.or(file.level).unwrap_or(0.95),
        reps: args.reps.or(file.reps).unwrap_or(100),
        theta: args.theta.or(file.theta),
        delta: args.delta.or(file.delta).unwrap_or(1.5),
        rho,
        ts: if ts.is_empty() { vec![0.1] } else { ts },
        alpha: alpha.unwrap_or(0.05),
        v_total,
        format,
        out: args.out.or(file.out.map(PathBuf::from)),
        threads: args.threads.or(file.threads),
    })
}

impl Resolved {
    fn model_inputs(&self) -> Result<(&ModelSpec, &InputSpec)> {
        match (&self.model, &self.inputs) {
            (Some(m), Some(i)) => Ok((m, i)),
            _ => Err(Error::Config(
                "no model given (flag --model or config key `model`)".into(),
            )),
        }
    }
}

/// min-n extras after flag/file separation (the Args struct is consumed).
struct MinNArgs2 {
    t: Vec<f64>,
    alpha: Option<f64>,
    rho: Option<f64>,
    v_total: Option<f64>,
}

fn timestamp_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Serialize)]
struct SubsetResult {
    u: String,
    estimate: f64,
    ci_lo: f64,
    ci_hi: f64,
    sigma2_hat: f64,
    trace_cu: f64,
    trace_sigma: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    command: &'static str,
    model: String,
    case: String,
    n: usize,
    seed: u64,
    level: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    results: Vec<SubsetResult>,
    timestamp_unix: u64,
}

/// Drops all but the first m output components; the fixed-m index has the
/// same CLT as any vector index.
fn truncate_sample(s: &PickFreezeSample, m: usize) -> Result<PickFreezeSample> {
    PickFreezeSample::new(
        s.y().columns(0, m).into_owned(),
        s.yu().columns(0, m).into_owned(),
        s.u().clone(),
        s.model_id().to_string(),
    )
}

fn cmd_estimate(r: &Resolved) -> Result<String> {
    if r.format == Some(OutputFormat::Csv) {
        return Err(Error::Config("estimate emits JSON only".into()));
    }
    let (model, inputs) = r.model_inputs()?;
    let cfg = DesignConfig::new(r.n, r.seed)?;
    let trunc_m = match r.theta {
        Some(theta) => {
            let sched = TruncationSchedule::new(theta, r.delta)?;
            Some(m_schedule(r.n, sched)?.min(model.output_dim()))
        }
        None => None,
    };
    let mut results = Vec::with_capacity(r.subsets.len());
    for u in &r.subsets {
        let mut s = PickFreezeSample::generate(model, inputs, u, &cfg)?;
        if let Some(m) = trunc_m {
            s = truncate_sample(&s, m)?;
        }
        let est = estimate_index(&s)?;
        let ci = confidence_interval(&s, r.level)?;
        results.push(SubsetResult {
            u: u.to_string(),
            estimate: est.value,
            ci_lo: ci.lo,
            ci_hi: ci.hi,
            sigma2_hat: ci.sigma2_hat,
            trace_cu: est.trace_cu,
            trace_sigma: est.trace_sigma,
        });
    }
    let report = EstimateReport {
        command: "estimate",
        model: model.id_string(),
        case: r.case.to_string(),
        n: r.n,
        seed: r.seed,
        level: r.level,
        m: trunc_m,
        results,
        timestamp_unix: timestamp_unix(),
    };
    Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
}

#[derive(Serialize)]
struct CoverageResult {
    u: String,
    truth: f64,
    coverage: f64,
    mean_width: f64,
    hits: usize,
}

#[derive(Serialize)]
struct CoverageReport {
    command: &'static str,
    model: String,
    case: String,
    n: usize,
    seed: u64,
    level: f64,
    reps: usize,
    results: Vec<CoverageResult>,
    timestamp_unix: u64,
}

fn cmd_coverage(r: &Resolved) -> Result<String> {
    if r.format == Some(OutputFormat::Csv) {
        return Err(Error::Config("coverage emits JSON only".into()));
    }
    let (model, _) = r.model_inputs()?;
    let mut results = Vec::with_capacity(r.subsets.len());
    for u in &r.subsets {
        let o = crate::asymptotics::coverage_experiment(
            model, r.case, u, r.n, r.reps, r.level, r.seed,
        )?;
        results.push(CoverageResult {
            u: u.to_string(),
            truth: o.truth,
            coverage: o.coverage,
            mean_width: o.mean_width,
            hits: o.hits,
        });
    }
    let report = CoverageReport {
        command: "coverage",
        model: model.id_string(),
        case: r.case.to_string(),
        n: r.n,
        seed: r.seed,
        level: r.level,
        reps: r.reps,
        results,
        timestamp_unix: timestamp_unix(),
    };
    Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
}

#[derive(Serialize)]
struct MinNResult {
    t: f64,
    n_star: u64,
    risk_at_n_star: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    risk_below: Option<f64>,
}

#[derive(Serialize)]
struct MinNReport {
    command: &'static str,
    alpha: f64,
    v_total: f64,
    v_source: String,
    results: Vec<MinNResult>,
    timestamp_unix: u64,
}

/// Two-sided worst-case risk; infinite while the lower branch is undefined
/// (so "risk_below" only appears when meaningful).
fn risk_at(t: f64, n: u64, big_v: f64) -> Result<Option<f64>> {
    let b = worst_case_bounds(t, n, big_v)?;
    Ok(b.lower.map(|lo| b.upper + lo))
}

fn cmd_min_n(r: &Resolved) -> Result<String> {
    let (big_v, v_source) = match r.v_total {
        Some(v) => (v, "supplied".to_string()),
        None => {
            let rho = r.rho.ok_or_else(|| {
                Error::Config("min-n needs either --v-total or --rho to estimate V from the model".into())
            })?;
            let (model, inputs) = r.model_inputs()?;
            let u = r.subsets.first().ok_or_else(|| Error::Config("no subset".into()))?;
            let cfg = DesignConfig::new(r.n, r.seed)?;
            let s = PickFreezeSample::generate(model, inputs, u, &cfg)?;
            let v = estimate_v(&s, rho)?;
            (
                v.worst_case_v(),
                format!("estimated: {} case={} u={} n={} seed={} rho={}",
                    model.id_string(), r.case, u, r.n, r.seed, rho),
            )
        }
    };
    let mut results = Vec::with_capacity(r.ts.len());
    for &t in &r.ts {
        let n_star = min_sample_size(t, r.alpha, big_v)?;
        let risk = risk_at(t, n_star, big_v)?.expect("solver certified this N");
        let below = if n_star > 1 { risk_at(t, n_star - 1, big_v)? } else { None };
        results.push(MinNResult { t, n_star, risk_at_n_star: risk, risk_below: below });
    }
    match r.format.unwrap_or(OutputFormat::Json) {
        OutputFormat::Json => {
            let report = MinNReport {
                command: "min-n",
                alpha: r.alpha,
                v_total: big_v,
                v_source,
                results,
                timestamp_unix: timestamp_unix(),
            };
            Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
        }
        OutputFormat::Csv => {
            let mut out = String::from("t,n_star,risk_at_n_star\n");
            for row in &results {
                writeln!(out, "{},{},{}", row.t, row.n_star, row.risk_at_n_star)
                    .expect("write to string");
            }
            Ok(out)
        }
    }
}

fn cmd_componentwise(r: &Resolved) -> Result<String> {
    if r.format == Some(OutputFormat::Json) {
        return Err(Error::Config("componentwise emits CSV only".into()));
    }
    let (model, inputs) = r.model_inputs()?;
    let cfg = DesignConfig::new(r.n, r.seed)?;
    let k = model.output_dim();
    // x column: the time grid for the oscillator, component number otherwise.
    let xs: Vec<f64> = match model {
        ModelSpec::MassSpring { t_grid } => t_grid.clone(),
        _ => (1..=k).map(|l| l as f64).collect(),
    };
    let mut per_subset = Vec::with_capacity(r.subsets.len());
    for u in &r.subsets {
        let s = PickFreezeSample::generate(model, inputs, u, &cfg)?;
        per_subset.push(componentwise_cis(&s, r.level)?);
    }
    let label = |u: &SubsetU| {
        u.indices().map(|j| j.to_string()).collect::<Vec<_>>().join("+")
    };
    let mut out = String::from("component,x");
    for u in &r.subsets {
        let l = label(u);
        write!(out, ",s_{l},lo_{l},hi_{l}").expect("write to string");
    }
    out.push_str(",sum_first_order\n");
    for l in 0..k {
        write!(out, "{},{}", l + 1, xs[l]).expect("write to string");
        let mut sum = 0.0;
        for cis in &per_subset {
            let c = &cis[l];
            write!(out, ",{},{},{}", c.estimate, c.lo, c.hi).expect("write to string");
            sum += c.estimate;
        }
        writeln!(out, ",{sum}").expect("write to string");
    }
    Ok(out)
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content)?;
            Ok(())
        }
        None => {
            print!("{content}");
            if !content.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

/// Runs one parsed command end to end. All work happens inside the
/// requested thread pool; every output is identical across pool sizes.
pub fn run(cli: Cli) -> Result<()> {
    let (resolved, which) = match cli.command {
        Command::Estimate(a) => (resolve(a, None)?, 0u8),
        Command::Coverage(a) => (resolve(a, None)?, 1),
        Command::MinN(a) => {
            let extra = MinNArgs2 { t: a.t, alpha: a.alpha, rho: a.rho, v_total: a.v_total };
            (resolve(a.common, Some(extra))?, 2)
        }
        Command::Componentwise(a) => (resolve(a, None)?, 3),
    };
    let go = || -> Result<String> {
        match which {
            0 => cmd_estimate(&resolved),
            1 => cmd_coverage(&resolved),
            2 => cmd_min_n(&resolved),
            _ => cmd_componentwise(&resolved),
        }
    };
    let content = match resolved.threads {
        Some(threads) => {
            if threads == 0 {
                return Err(Error::Config("thread count must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                .install(go)?
        }
        None => go()?,
    };
    write_output(&resolved.out, &content)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_strings_round_trip() {
        assert!(matches!(parse_model("polar").unwrap(), ModelSpec::Polar));
        assert!(matches!(
            parse_model("mass-spring").unwrap(),
            ModelSpec::MassSpring { .. }
        ));
        match parse_model("bilinear:2,3").unwrap() {
            ModelSpec::BilinearAB { a, b } => {
                assert_eq!((a, b), (2.0, 3.0));
            }
            other => panic!("{other:?}"),
        }
        match parse_model("aniso:4.5").unwrap() {
            ModelSpec::AnisoLinear { a } => assert_eq!(a, 4.5),
            other => panic!("{other:?}"),
        }
        match parse_model("external:python3 runner.py --fast:2").unwrap() {
            ModelSpec::External { command, k } => {
                assert_eq!(command, "python3 runner.py --fast");
                assert_eq!(k, 2);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_model("bilinear").is_err());
        assert!(parse_model("external:cmd:0").is_err());
        assert!(parse_model("cubic:1").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "model = \"bilinear:2,3\"\nn = 500\nseed = 7\nlevel = 0.9\n").unwrap();
        let args = CommonArgs {
            config: Some(path),
            n: Some(250),
            ..CommonArgs::default()
        };
        let r = resolve(args, None).unwrap();
        assert_eq!(r.n, 250);
        assert_eq!(r.seed, 7);
        assert_eq!(r.level, 0.9);
        assert_eq!(r.subsets.len(), 2, "defaults to all singletons");
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "model = \"polar\"\nsede = 7\n").unwrap();
        let args = CommonArgs { config: Some(path), ..CommonArgs::default() };
        assert!(matches!(resolve(args, None), Err(Error::Config(_))));
    }

    #[test]
    fn native_cases_fill_in() {
        let args = CommonArgs {
            model: Some("mass-spring".into()),
            ..CommonArgs::default()
        };
        let r = resolve(args, None).unwrap();
        assert_eq!(r.case, InputCase::Uniform);
        assert_eq!(r.subsets.len(), 4);
        let args = CommonArgs { model: Some("bilinear:1,2".into()), ..CommonArgs::default() };
        assert_eq!(resolve(args, None).unwrap().case, InputCase::Gaussian);
    }

    #[test]
    fn subsets_are_validated_against_the_model() {
        let args = CommonArgs {
            model: Some("polar".into()),
            u: vec!["{1,3}".into()],
            ..CommonArgs::default()
        };
        assert!(resolve(args, None).is_err());
    }
}
