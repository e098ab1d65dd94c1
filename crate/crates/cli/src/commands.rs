use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use codesign::closed_form::{numerical_oracle, solve_auto, solve_case, Case, D3RhoRule, TheoryInputs, WidthMode};
use codesign::fit::{fit_scaling_law, read_records_csv, synthetic_records, write_records_csv, FitOptions};
use codesign::loss::{loss_terms, CoefficientsFile};
use codesign::pareto::{enumerate_frontier, search_pareto, Frontier, SearchOptions};
use codesign::regimes::{classify_regime, normalize_budgets, ClassifyMethod, RatioThresholds};
use codesign::roofline::{latency_report, objective_latency, LatencyMode, Objective};
use codesign::{Error, Precision, Result, Theta};
use serde_json::{json, Value};

use crate::inputs::{
    load_arch, load_coeffs, load_space, to_json, write_output, CoeffsArgs, HardwareArgs, TargetArgs, WorkloadArgs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    ClosedForm,
    PerStep,
    Full,
}

impl From<ModeArg> for LatencyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::ClosedForm => LatencyMode::ClosedForm,
            ModeArg::PerStep => LatencyMode::PerStep,
            ModeArg::Full => LatencyMode::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Prefill,
    Decode,
    Total,
    All,
}

impl ObjectiveArg {
    fn expand(self) -> Vec<Objective> {
        match self {
            ObjectiveArg::Prefill => vec![Objective::Prefill],
            ObjectiveArg::Decode => vec![Objective::Decode],
            ObjectiveArg::Total => vec![Objective::Total],
            ObjectiveArg::All => vec![Objective::Prefill, Objective::Decode, Objective::Total],
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    Fp32,
    Fp16,
    Int8,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Fp32 => Precision::Fp32,
            PrecisionArg::Fp16 => Precision::Fp16,
            PrecisionArg::Int8 => Precision::Int8,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    ActiveSet,
    Ratio,
}

#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// Regime classifier.
    #[arg(long, value_enum, default_value_t = MethodArg::ActiveSet)]
    pub method: MethodArg,
    /// Ratio heuristic: budget ratios below this read as memory-bound.
    #[arg(long, default_value_t = RatioThresholds::default().low)]
    pub ratio_low: f64,
    /// Ratio heuristic: budget ratios above this read as latency-bound.
    #[arg(long, default_value_t = RatioThresholds::default().high)]
    pub ratio_high: f64,
}

impl MethodArgs {
    fn method(&self) -> ClassifyMethod {
        match self.method {
            MethodArg::ActiveSet => ClassifyMethod::ActiveSet,
            MethodArg::Ratio => ClassifyMethod::RatioHeuristic(RatioThresholds { low: self.ratio_low, high: self.ratio_high }),
        }
    }
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::Prefill => "prefill",
        Objective::Decode => "decode",
        Objective::Total => "total",
    }
}

#[derive(Debug, Args)]
pub struct PredictLoss {
    /// Architecture JSON file.
    #[arg(long)]
    pub arch: PathBuf,
    #[command(flatten)]
    pub coeffs: CoeffsArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn predict_loss(a: &PredictLoss) -> Result<()> {
    let arch = load_arch(&a.arch)?;
    let coeffs = load_coeffs(&a.coeffs.coeffs)?;
    let terms = loss_terms(&Theta::from(&arch), &coeffs.coefficients);
    let report = json!({
        "loss": terms.total(),
        "terms": terms,
        "coefficients": coeffs.source,
        "total_params": arch.total_params(),
        "active_params": arch.active_params(),
    });
    write_output(a.out.as_deref(), &to_json(&report))
}

#[derive(Debug, Args)]
pub struct PredictLatency {
    /// Architecture JSON file.
    #[arg(long)]
    pub arch: PathBuf,
    #[command(flatten)]
    pub hardware: HardwareArgs,
    #[command(flatten)]
    pub workload: WorkloadArgs,
    /// Byte widths for weights, activations and KV cache.
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long, value_enum, default_value_t = ModeArg::ClosedForm)]
    pub mode: ModeArg,
    /// Phase reported as `objective_latency_s`.
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Decode)]
    pub objective: ObjectiveArg,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn predict_latency(a: &PredictLatency) -> Result<()> {
    if a.objective == ObjectiveArg::All {
        return Err(Error::Parse("--objective all is only meaningful for pareto".into()));
    }
    let arch = load_arch(&a.arch)?;
    let mut hw = a.hardware.resolve()?;
    if let Some(p) = a.precision {
        hw = hw.with_precision(p.into());
    }
    let w = a.workload.resolve()?;
    let mode = a.mode.into();
    let report = latency_report(&arch, &w, &hw, mode)?;
    let bytes = match a.format {
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            buf
        }
        Format::Json => {
            let objective = a.objective.expand()[0];
            let mut v = serde_json::to_value(&report).expect("report serializes");
            let obj = v.as_object_mut().expect("report is an object");
            // a phase with no tokens has no breakdown
            obj.retain(|_, x| !x.is_null());
            obj.insert("objective".into(), json!(objective_name(objective)));
            obj.insert("objective_latency_s".into(), json!(objective_latency(&arch, &w, &hw, objective, mode)));
            obj.insert("bytes_weight".into(), json!(hw.bytes_weight()));
            to_json(&v)
        }
    };
    write_output(a.out.as_deref(), &bytes)
}

#[derive(Debug, Args)]
pub struct Regime {
    #[command(flatten)]
    pub hardware: HardwareArgs,
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[command(flatten)]
    pub targets: TargetArgs,
    #[command(flatten)]
    pub coeffs: CoeffsArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn regime(a: &Regime) -> Result<()> {
    let hw = a.hardware.resolve()?;
    let w = a.workload.resolve()?;
    let budgets = normalize_budgets(&hw, &w, &a.targets.resolve()?)?;
    let coeffs = load_coeffs(&a.coeffs.coeffs)?.coefficients;
    let inputs = TheoryInputs::new(coeffs, budgets, hw, w);
    let report = classify_regime(&inputs, &a.method.method())?;
    let mut v = serde_json::to_value(&report).expect("report serializes");
    let obj = v.as_object_mut().expect("report is an object");
    obj.insert("budgets".into(), json!(budgets));
    obj.insert("case".into(), json!(report.label.case(&budgets).map(Case::name)));
    write_output(a.out.as_deref(), &to_json(&v))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CaseArg {
    Auto,
    D1,
    D2,
    D3,
    P1,
    P2,
    P3,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum D3RuleArg {
    Exact,
    Quadratic,
}

#[derive(Debug, Args)]
pub struct Solve {
    #[arg(long, value_enum, default_value_t = CaseArg::Auto)]
    pub case: CaseArg,
    #[command(flatten)]
    pub hardware: HardwareArgs,
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[command(flatten)]
    pub targets: TargetArgs,
    #[command(flatten)]
    pub coeffs: CoeffsArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Fix the width instead of searching over a grid.
    #[arg(long, conflicts_with_all = ["widths", "continuous_width"])]
    pub width: Option<f64>,
    /// Comma-separated width grid (default: the search-space widths).
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<f64>>,
    /// Optimise the width continuously.
    #[arg(long)]
    pub continuous_width: bool,
    #[arg(long)]
    pub rho_min: Option<f64>,
    /// Rule fixing the activation rate in the decode dual case.
    #[arg(long, value_enum, default_value_t = D3RuleArg::Exact)]
    pub d3_rule: D3RuleArg,
    /// Also run the numerical oracle and report the loss gap.
    #[arg(long)]
    pub verify: bool,
    /// Search space used for snapping (default: the built-in grid).
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn solve(a: &Solve) -> Result<()> {
    let mut hw = a.hardware.resolve()?;
    if let Some(p) = a.precision {
        hw = hw.with_precision(p.into());
    }
    let w = a.workload.resolve()?;
    let budgets = normalize_budgets(&hw, &w, &a.targets.resolve()?)?;
    let coeffs = load_coeffs(&a.coeffs.coeffs)?.coefficients;
    let space = load_space(a.space.as_deref())?;
    let width = match (&a.width, &a.widths, a.continuous_width) {
        (Some(d), _, _) => WidthMode::Fixed(*d),
        (_, _, true) => WidthMode::Continuous,
        (_, Some(ws), _) => WidthMode::Grid(ws.clone()),
        _ => WidthMode::Grid(space.widths.iter().map(|&d| d as f64).collect()),
    };
    let mut inputs = TheoryInputs::new(coeffs, budgets, hw, w).with_width(width);
    if let Some(r) = a.rho_min {
        inputs.rho_min = r;
    }
    inputs.d3_rho = match a.d3_rule {
        D3RuleArg::Exact => D3RhoRule::Exact,
        D3RuleArg::Quadratic => D3RhoRule::Quadratic,
    };
    let mut solution = match a.case {
        CaseArg::Auto => solve_auto(&inputs, &a.method.method())?,
        CaseArg::D1 => solve_case(Case::D1, &inputs)?,
        CaseArg::D2 => solve_case(Case::D2, &inputs)?,
        CaseArg::D3 => solve_case(Case::D3, &inputs)?,
        CaseArg::P1 => solve_case(Case::P1, &inputs)?,
        CaseArg::P2 => solve_case(Case::P2, &inputs)?,
        CaseArg::P3 => solve_case(Case::P3, &inputs)?,
    };
    let grid: Vec<_> = space.indices().into_iter().map(|i| space.config(i)).collect::<Result<_>>()?;
    solution.snap(&grid, &coeffs)?;
    let mut v = serde_json::to_value(&solution).expect("solution serializes");
    let obj = v.as_object_mut().expect("solution is an object");
    obj.insert("budgets".into(), json!(budgets));
    if a.verify {
        let oracle = numerical_oracle(&inputs, solution.case.constraints())?;
        let gap = (solution.loss - oracle.loss) / oracle.loss;
        log::info!("oracle loss {:.6}, closed form {:.6}, relative gap {gap:.3e}", oracle.loss, solution.loss);
        obj.insert("verification".into(), json!({ "oracle": oracle, "relative_loss_gap": gap }));
    }
    write_output(a.out.as_deref(), &to_json(&v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionSet {
    Fp32,
    Fp16,
    Int8,
    /// Every precision listed in the search space.
    All,
}

#[derive(Debug, Args)]
pub struct Pareto {
    /// Search-space JSON (default: the built-in grid).
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[command(flatten)]
    pub hardware: HardwareArgs,
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[command(flatten)]
    pub coeffs: CoeffsArgs,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::All)]
    pub objective: ObjectiveArg,
    #[arg(long, value_enum, default_value_t = PrecisionSet::All)]
    pub precision: PrecisionSet,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Size of the initial Latin-hypercube design.
    #[arg(long)]
    pub initial: Option<usize>,
    /// Neighbours expanded around each frontier gap per round.
    #[arg(long)]
    pub gap_k: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Evaluate every grid point instead of searching.
    #[arg(long)]
    pub enumerate: bool,
    /// Keep points whose weights exceed the memory budget.
    #[arg(long)]
    pub no_memory_filter: bool,
    /// Skip re-scoring the frontier with every operator.
    #[arg(long)]
    pub no_verify_full: bool,
    /// Emit only the latency and loss columns.
    #[arg(long)]
    pub two_column: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output directory (one file per objective/precision), or a file path
    /// when a single frontier is requested.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn frontier_bytes(f: &Frontier, format: Format, two_column: bool) -> Result<Vec<u8>> {
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            f.write_csv(&mut buf, two_column)?;
            Ok(buf)
        }
        Format::Json => Ok(to_json(f)),
    }
}

pub fn pareto(a: &Pareto) -> Result<()> {
    let space = load_space(a.space.as_deref())?;
    let hw = a.hardware.resolve()?;
    let w = a.workload.resolve()?;
    let coeffs = load_coeffs(&a.coeffs.coeffs)?.coefficients;
    let precisions = match a.precision {
        PrecisionSet::Fp32 => vec![Precision::Fp32],
        PrecisionSet::Fp16 => vec![Precision::Fp16],
        PrecisionSet::Int8 => vec![Precision::Int8],
        PrecisionSet::All => space.precisions.clone(),
    };
    let defaults = SearchOptions::default();
    let opts = SearchOptions {
        seed: a.seed,
        initial: a.initial.unwrap_or(defaults.initial),
        gap_k: a.gap_k.unwrap_or(defaults.gap_k),
        max_rounds: a.max_rounds.unwrap_or(defaults.max_rounds),
        memory_filter: !a.no_memory_filter,
        verify_full: !a.no_verify_full,
        ..defaults
    };
    let combos: Vec<(Objective, Precision)> =
        a.objective.expand().into_iter().flat_map(|o| precisions.iter().map(move |&p| (o, p))).collect();

    let single_file = combos.len() == 1 && a.out.as_ref().is_some_and(|p| p.extension().is_some());
    if combos.len() > 1 && a.out.is_none() && a.format == Format::Csv {
        return Err(Error::Parse(format!(
            "{} frontiers requested; give --out DIR, narrow --objective/--precision, or use --format json",
            combos.len()
        )));
    }
    if let Some(dir) = a.out.as_deref().filter(|_| !single_file) {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }

    let mut frontiers = Vec::new();
    for (objective, precision) in combos {
        let f = if a.enumerate {
            enumerate_frontier(&space, &coeffs, &hw, &w, objective, precision, &opts)?
        } else {
            search_pareto(&space, &coeffs, &hw, &w, objective, precision, &opts)?
        };
        let evaluated: usize = f.provenance.iter().map(|r| r.evaluated).sum();
        log::info!(
            "{}/{}: {} frontier points from {evaluated} evaluations",
            objective_name(objective),
            precision.tag(),
            f.len()
        );
        if let Some(out) = a.out.as_deref() {
            let path = if single_file {
                out.to_path_buf()
            } else {
                let ext = if a.format == Format::Csv { "csv" } else { "json" };
                out.join(format!("frontier_{}_{}.{ext}", objective_name(objective), precision.tag()))
            };
            write_output(Some(&path), &frontier_bytes(&f, a.format, a.two_column)?)?;
        }
        frontiers.push(f);
    }
    match (a.out.as_deref(), a.format) {
        (Some(_), _) => Ok(()),
        (None, Format::Csv) => write_output(None, &frontier_bytes(&frontiers[0], Format::Csv, a.two_column)?),
        (None, Format::Json) if frontiers.len() == 1 => write_output(None, &to_json(&frontiers[0])),
        (None, Format::Json) => write_output(None, &to_json(&frontiers)),
    }
}

#[derive(Debug, Args)]
pub struct Fit {
    /// Training-run CSV: layers,width,ffn_ratio,activation_rate,gqa,loss.
    #[arg(long)]
    pub runs: PathBuf,
    /// Fraction held out for validation; 0 fits on everything.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of multi-start initialisations.
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Where to write the fitted coefficients JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn fit(a: &Fit) -> Result<()> {
    let file = fs::File::open(&a.runs).map_err(|e| Error::Io(format!("{}: {e}", a.runs.display())))?;
    let records = read_records_csv(file).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", a.runs.display())),
        other => other,
    })?;
    let defaults = FitOptions::default();
    let opts = FitOptions {
        seed: a.seed,
        holdout: a.holdout,
        starts: a.starts.unwrap_or(defaults.starts),
        max_iterations: a.max_iterations.unwrap_or(defaults.max_iterations),
        ..defaults
    };
    let (coefficients, report) = match fit_scaling_law(&records, &opts) {
        Ok(r) => r,
        Err(Error::NonConvergence { iterations, sse, best }) => {
            eprintln!("best iterate: {}", serde_json::to_string(&best).expect("coefficients serialize"));
            return Err(Error::NonConvergence { iterations, sse, best });
        }
        Err(e) => return Err(e),
    };
    if let Some(out) = a.out.as_deref() {
        let file = CoefficientsFile {
            coefficients,
            source: format!("fit:{}", a.runs.display()),
            fitted_on: report.n_train as u64,
        };
        write_output(Some(out), &to_json(&file))?;
    }
    let v: Value = json!({ "coefficients": coefficients, "report": report });
    write_output(None, &to_json(&v))
}

#[derive(Debug, Args)]
pub struct SynthRuns {
    #[command(flatten)]
    pub coeffs: CoeffsArgs,
    /// Search-space JSON to draw configurations from.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 170)]
    pub count: usize,
    /// Standard deviation of the additive Gaussian noise on the loss.
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn synth_runs(a: &SynthRuns) -> Result<()> {
    let coeffs = load_coeffs(&a.coeffs.coeffs)?.coefficients;
    let space = load_space(a.space.as_deref())?;
    let records = synthetic_records(&coeffs, &space, a.count, a.sigma, a.seed)?;
    let mut buf = Vec::new();
    write_records_csv(&mut buf, &records)?;
    write_output(a.out.as_deref().map(Path::new), &buf)
}
