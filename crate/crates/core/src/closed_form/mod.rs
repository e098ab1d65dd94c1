//! Optimal architectures per constraint regime.
//!
//! | case | active constraints  | ρ*                                   |
//! |------|---------------------|--------------------------------------|
//! | D1   | decode latency      | `ρ_min`                              |
//! | P1   | prefill latency     | `ρ_min`                              |
//! | D2   | memory              | `[α_r κ_d/((α_ρ−α_r) κ_ρ)]^(1/α_ρ) · d^((β_1−β_2)/α_ρ)` |
//! | P2   | memory              | same as D2                           |
//! | D3   | decode + memory     | from constraint compatibility        |
//! | P3   | prefill + memory    | `3η_p b_w r / (α_attn(2−η_p b_w) + 6r)` |
//!
//! Single-constraint cases resolve the implicit `r`/`gqa` coupling by a damped
//! fixed point; dual cases solve the reduced stationarity system by Newton.
//! Width is fixed, swept over a grid, or golden-section searched.

mod cases;
mod dual;
mod oracle;

use serde::{Deserialize, Serialize};

use crate::arch::{snap_to_grid, ArchitectureConfig, HardwareSpec, Theta, WorkloadSpec};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::loss::{loss_at, ScalingLawCoefficients};
use crate::pareto::space::DEFAULT_WIDTHS;
use crate::regimes::{
    self, ratio_heuristic, usage_gradient, Budgets, CandidateCheck, ClassifyMethod, Constraint, RegimeLabel, Slacks,
};

pub use cases::{d2_rho_star, d3_rho_exact, d3_rho_quadratic, p3_rho};
pub use oracle::{numerical_oracle, OracleOptions, OracleResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    D1,
    D2,
    D3,
    P1,
    P2,
    P3,
}

impl Case {
    pub const ALL: [Case; 6] = [Case::D1, Case::D2, Case::D3, Case::P1, Case::P2, Case::P3];

    pub fn constraints(self) -> &'static [Constraint] {
        match self {
            Case::D1 => &[Constraint::Decode],
            Case::P1 => &[Constraint::Prefill],
            Case::D2 | Case::P2 => &[Constraint::Memory],
            Case::D3 => &[Constraint::Decode, Constraint::Memory],
            Case::P3 => &[Constraint::Prefill, Constraint::Memory],
        }
    }

    pub fn label(self) -> RegimeLabel {
        match self {
            Case::D1 => RegimeLabel::DecodeLatencyOnly,
            Case::P1 => RegimeLabel::PrefillLatencyOnly,
            Case::D2 | Case::P2 => RegimeLabel::MemoryOnly,
            Case::D3 => RegimeLabel::DecodePlusMemory,
            Case::P3 => RegimeLabel::PrefillPlusMemory,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Case::D1 => "d1",
            Case::D2 => "d2",
            Case::D3 => "d3",
            Case::P1 => "p1",
            Case::P2 => "p2",
            Case::P3 => "p3",
        }
    }
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(Case::D1),
            "d2" => Ok(Case::D2),
            "d3" => Ok(Case::D3),
            "p1" => Ok(Case::P1),
            "p2" => Ok(Case::P2),
            "p3" => Ok(Case::P3),
            other => Err(Error::InvalidInput(format!("unknown case '{other}'"))),
        }
    }
}

/// Box for the continuous decision variables; `ρ` uses `[rho_min, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub l: (f64, f64),
    pub d: (f64, f64),
    pub r: (f64, f64),
    pub gqa: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            l: (1.0, 256.0),
            d: (256.0, 8192.0),
            r: (0.05, 64.0),
            gqa: (1.0, 64.0),
        }
    }
}

impl Bounds {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("l", self.l), ("d", self.d), ("r", self.r), ("gqa", self.gqa)] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::InvalidInput(format!("bounds for {name} must satisfy 0 < lo <= hi (got {lo}, {hi})")));
            }
        }
        if self.l.0 < 1.0 || self.gqa.0 < 1.0 {
            return Err(Error::InvalidInput("bounds for l and gqa must start at >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthMode {
    Fixed(f64),
    Grid(Vec<f64>),
    /// Golden-section search on `ln d` over the width bounds.
    Continuous,
}

impl Default for WidthMode {
    fn default() -> Self {
        WidthMode::Grid(DEFAULT_WIDTHS.iter().map(|&w| w as f64).collect())
    }
}

/// Which expression fixes `ρ` in the decode dual case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum D3RhoRule {
    /// `ξ_W^all = ξ_W^eff/η`, which saturates both constraints.
    #[default]
    Exact,
    /// Root of `η x² − (α_attn+3r) x − δ = 0`; equal to `Exact` when `δ = 0`.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            damping: 0.5,
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryInputs {
    pub coeffs: ScalingLawCoefficients,
    pub budgets: Budgets,
    pub hardware: HardwareSpec,
    pub workload: WorkloadSpec,
    pub rho_min: f64,
    pub bounds: Bounds,
    pub width: WidthMode,
    pub d3_rho: D3RhoRule,
    pub fixed_point: FixedPointOptions,
    pub oracle: OracleOptions,
    pub execution: Execution,
}

impl TheoryInputs {
    pub fn new(coeffs: ScalingLawCoefficients, budgets: Budgets, hardware: HardwareSpec, workload: WorkloadSpec) -> Self {
        TheoryInputs {
            coeffs,
            budgets,
            hardware,
            workload,
            rho_min: 1.0 / 16.0,
            bounds: Bounds::default(),
            width: WidthMode::default(),
            d3_rho: D3RhoRule::default(),
            fixed_point: FixedPointOptions::default(),
            oracle: OracleOptions::default(),
            execution: Execution::default(),
        }
    }

    pub fn with_width(mut self, width: WidthMode) -> Self {
        self.width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.coeffs.validate()?;
        self.bounds.validate()?;
        if !(self.rho_min > 0.0 && self.rho_min <= 1.0) {
            return Err(Error::InvalidInput(format!("rho_min must lie in (0, 1] (got {})", self.rho_min)));
        }
        let c = &self.coeffs;
        if !(c.alpha_l > 0.0 && c.alpha_r > 0.0 && c.alpha_m > 0.0 && c.alpha_rho > 0.0) {
            return Err(Error::Validity(
                "the closed forms need positive alpha_l, alpha_r, alpha_m and alpha_rho".into(),
            ));
        }
        match &self.width {
            WidthMode::Fixed(d) if !(d.is_finite() && *d >= 1.0) => {
                return Err(Error::InvalidInput(format!("fixed width must be >= 1 (got {d})")))
            }
            WidthMode::Grid(g) if g.is_empty() || g.iter().any(|d| !(d.is_finite() && *d >= 1.0)) => {
                return Err(Error::InvalidInput("width grid must be non-empty with entries >= 1".into()))
            }
            _ => {}
        }
        Ok(())
    }

    fn rho_bounds(&self) -> (f64, f64) {
        (self.rho_min, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Multipliers {
    pub mu_t: Option<f64>,
    pub mu_m: Option<f64>,
}

/// Lagrangian gradient in elasticity form `x·∂/∂x`, ordered by variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stationarity {
    pub l: f64,
    pub r: f64,
    pub rho: f64,
    pub gqa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residuals {
    pub stationarity: Stationarity,
    /// Norm over the free (unclamped, interior) variables, divided by the
    /// norm of the loss gradient in the same form.
    pub stationarity_relative: f64,
    /// Signed `budget − usage` for every budget present.
    pub slacks: Slacks,
    /// Largest `|slack|/budget` over the case's active constraints.
    pub active_slack_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalSolution {
    pub case: Case,
    pub regime: Option<RegimeLabel>,
    pub theta: Theta,
    pub loss: f64,
    pub theta_snapped: Option<ArchitectureConfig>,
    pub loss_snapped: Option<f64>,
    pub multipliers: Multipliers,
    pub residuals: Residuals,
    pub clamped: Vec<String>,
    /// `ρ` before projection onto `[ρ_min, 1]`.
    pub rho_unclamped: f64,
    /// Loss derivative in `ρ` at the solution.
    pub loss_gradient_rho: f64,
    pub fixed_point_iters: usize,
    /// Set when the analytic route failed and the numerical oracle was used.
    pub oracle_fallback: bool,
}

impl OptimalSolution {
    pub fn arch(&self) -> Result<ArchitectureConfig> {
        self.theta.to_arch()
    }

    /// Nearest grid candidate and its loss.
    pub fn snap<'a, I>(&mut self, candidates: I, coeffs: &ScalingLawCoefficients) -> Result<()>
    where
        I: IntoIterator<Item = &'a ArchitectureConfig>,
    {
        let arch = self.arch()?;
        if let Some(s) = snap_to_grid(&arch, candidates) {
            self.loss_snapped = Some(crate::loss::predict_loss(&s, coeffs));
            self.theta_snapped = Some(s);
        }
        Ok(())
    }

    fn is_clamped(&self, var: &str) -> bool {
        self.clamped.iter().any(|c| c == var)
    }

    /// True when no decision variable sits on a bound (ρ excepted for the
    /// latency-only cases, where the bound is the solution).
    pub fn is_interior(&self) -> bool {
        ["l", "r", "gqa"].iter().all(|v| !self.is_clamped(v)) && !self.oracle_fallback
    }
}

/// Intermediate result of one case at one width.
#[derive(Debug, Clone)]
pub(crate) struct Raw {
    pub theta: Theta,
    pub clamped: Vec<String>,
    pub rho_unclamped: f64,
    pub multipliers: Multipliers,
    pub iterations: usize,
    pub oracle_fallback: bool,
}

pub(crate) fn clamp_flag(x: f64, (lo, hi): (f64, f64), name: &str, flags: &mut Vec<String>) -> f64 {
    if x < lo {
        flags.push(name.to_string());
        lo
    } else if x > hi {
        flags.push(name.to_string());
        hi
    } else {
        x
    }
}

fn require_budget(inputs: &TheoryInputs, c: Constraint, case: Case) -> Result<f64> {
    inputs.budgets.budget(c).ok_or_else(|| {
        Error::MissingBudget(format!(
            "case {} needs a {} budget",
            case.name(),
            match c {
                Constraint::Prefill => "prefill latency",
                Constraint::Decode => "decode latency",
                Constraint::Memory => "memory",
            }
        ))
    })
}

fn check_preconditions(case: Case, inputs: &TheoryInputs) -> Result<()> {
    inputs.validate()?;
    for &c in case.constraints() {
        require_budget(inputs, c, case)?;
    }
    match case {
        Case::D2 | Case::P2 if !inputs.coeffs.sparsity_optimum_exists() => Err(Error::Validity(format!(
            "memory-only optimum needs alpha_rho > alpha_r (got {} <= {})",
            inputs.coeffs.alpha_rho, inputs.coeffs.alpha_r
        ))),
        Case::P3 => {
            let eta_p = inputs.budgets.eta_p().expect("checked above");
            let v = eta_p * inputs.hardware.bytes_weight();
            if v >= 2.0 {
                Err(Error::Validity(format!("prefill dual case needs eta_p*b_w < 2 (got {v})")))
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}

/// Central-difference loss gradient, ordered `(l, d, r, ρ, gqa)`.
pub fn loss_gradient_fd(t: &Theta, c: &ScalingLawCoefficients) -> [f64; 5] {
    let x = t.as_array();
    let mut g = [0.0; 5];
    for k in 0..5 {
        let h = 1e-5 * x[k].abs().max(1e-12);
        let mut a = x;
        let mut b = x;
        a[k] += h;
        b[k] -= h;
        g[k] = (loss_at(&Theta::from_array(a), c) - loss_at(&Theta::from_array(b), c)) / (2.0 * h);
    }
    g
}

fn multiplier_for(c: Constraint, m: &Multipliers) -> f64 {
    match c {
        Constraint::Memory => m.mu_m.unwrap_or(0.0),
        _ => m.mu_t.unwrap_or(0.0),
    }
}

/// Stationarity check with finite-difference loss partials and analytic
/// constraint partials.
pub fn kkt_residual(
    theta: &Theta,
    case: Case,
    multipliers: &Multipliers,
    clamped: &[String],
    inputs: &TheoryInputs,
) -> (Stationarity, f64) {
    let gl = loss_gradient_fd(theta, &inputs.coeffs);
    let mut lag = gl;
    for &c in case.constraints() {
        let mu = multiplier_for(c, multipliers);
        let gc = usage_gradient(c, theta, &inputs.workload, &inputs.hardware);
        for k in 0..5 {
            lag[k] += mu * gc[k];
        }
    }
    let x = theta.as_array();
    let el = |k: usize, v: &[f64; 5]| x[k] * v[k];
    let st = Stationarity {
        l: el(0, &lag),
        r: el(2, &lag),
        rho: el(3, &lag),
        gqa: el(4, &lag),
    };
    let (rho_lo, rho_hi) = inputs.rho_bounds();
    let rho_free = theta.rho > rho_lo * (1.0 + 1e-12) && theta.rho < rho_hi * (1.0 - 1e-12);
    let free = [
        (0, !clamped.iter().any(|c| c == "l")),
        (2, !clamped.iter().any(|c| c == "r")),
        (3, rho_free && !clamped.iter().any(|c| c == "rho")),
        (4, !clamped.iter().any(|c| c == "gqa")),
    ];
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, is_free) in free {
        if is_free {
            num += el(k, &lag).powi(2);
        }
        den += el(k, &gl).powi(2);
    }
    let rel = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    (st, rel)
}

fn finish(case: Case, raw: Raw, inputs: &TheoryInputs) -> OptimalSolution {
    let theta = raw.theta;
    let loss = loss_at(&theta, &inputs.coeffs);
    let slacks = regimes::slacks_at(&theta, &inputs.budgets, &inputs.workload, &inputs.hardware);
    let rel = slacks.relative(&inputs.budgets);
    let active_slack_relative = case
        .constraints()
        .iter()
        .filter_map(|&c| rel.get(c))
        .map(f64::abs)
        .fold(0.0, f64::max);
    let (stationarity, stationarity_relative) = kkt_residual(&theta, case, &raw.multipliers, &raw.clamped, inputs);
    let loss_gradient_rho = crate::loss::loss_gradient(&theta, &inputs.coeffs).rho;
    OptimalSolution {
        case,
        regime: None,
        theta,
        loss,
        theta_snapped: None,
        loss_snapped: None,
        multipliers: raw.multipliers,
        residuals: Residuals {
            stationarity,
            stationarity_relative,
            slacks,
            active_slack_relative,
        },
        clamped: raw.clamped,
        rho_unclamped: raw.rho_unclamped,
        loss_gradient_rho,
        fixed_point_iters: raw.iterations,
        oracle_fallback: raw.oracle_fallback,
    }
}

pub(crate) fn solve_at_width(case: Case, d: f64, inputs: &TheoryInputs) -> Result<OptimalSolution> {
    let raw = match case {
        Case::D1 | Case::P1 | Case::D2 | Case::P2 => cases::solve_single(case, d, inputs)?,
        Case::D3 | Case::P3 => dual::solve_dual(case, d, inputs)?,
    };
    Ok(finish(case, raw, inputs))
}

fn better(a: &OptimalSolution, b: &OptimalSolution) -> bool {
    match a.loss.total_cmp(&b.loss) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => crate::arch::cmp_theta(&a.theta.as_array(), &b.theta.as_array()).is_lt(),
    }
}

fn best_of(results: Vec<Result<OptimalSolution>>) -> Result<OptimalSolution> {
    let mut best: Option<OptimalSolution> = None;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(s) if s.loss.is_finite() => {
                if best.as_ref().is_none_or(|b| better(&s, b)) {
                    best = Some(s);
                }
            }
            Ok(_) => {}
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap_or_else(|| Error::Infeasible("no width produced a solution".into())))
}

fn golden_section(case: Case, inputs: &TheoryInputs) -> Result<OptimalSolution> {
    let (lo, hi) = inputs.bounds.d;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let f = |x: f64| solve_at_width(case, x.exp(), inputs).map(|s| s.loss).unwrap_or(f64::INFINITY);
    let mut c = b - phi * (b - a);
    let mut e = a + phi * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    for _ in 0..80 {
        if (b - a).abs() < 1e-9 {
            break;
        }
        if fc <= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + phi * (b - a);
            fe = f(e);
        }
    }
    let mid = 0.5 * (a + b);
    // the interval ends can beat the interior when the optimum sits on a bound
    let probes = vec![mid.exp(), lo, hi];
    best_of(probes.into_iter().map(|d| solve_at_width(case, d, inputs)).collect())
}

/// Optimal continuous architecture for one regime.
pub fn solve_case(case: Case, inputs: &TheoryInputs) -> Result<OptimalSolution> {
    check_preconditions(case, inputs)?;
    match &inputs.width {
        WidthMode::Fixed(d) => solve_at_width(case, *d, inputs),
        WidthMode::Grid(ws) => best_of(inputs.execution.map(ws, |&d| solve_at_width(case, d, inputs))),
        WidthMode::Continuous => golden_section(case, inputs),
    }
}

/// Active-set outcome: the verified regime and its solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSetOutcome {
    pub label: RegimeLabel,
    pub solution: Option<OptimalSolution>,
    pub candidates: Vec<CandidateCheck>,
}

const FEASIBILITY_TOL: f64 = 1e-9;

/// Solves every single-constraint case allowed by the budgets, keeps those
/// that satisfy all constraints, then falls back to the dual cases.
pub fn active_set(inputs: &TheoryInputs) -> Result<ActiveSetOutcome> {
    inputs.validate()?;
    let b = &inputs.budgets;
    let mut singles = Vec::new();
    if b.m_bar_d.is_some() {
        singles.push(Case::D1);
    }
    if b.f_bar_p.is_some() {
        singles.push(Case::P1);
    }
    singles.push(if b.m_bar_d.is_none() && b.f_bar_p.is_some() { Case::P2 } else { Case::D2 });
    let mut duals = Vec::new();
    if b.m_bar_d.is_some() {
        duals.push(Case::D3);
    }
    if b.f_bar_p.is_some() {
        duals.push(Case::P3);
    }

    let mut candidates = Vec::new();
    for group in [singles, duals] {
        let mut best: Option<OptimalSolution> = None;
        for case in group {
            match solve_case(case, inputs) {
                Ok(s) => {
                    let feasible = s.residuals.slacks.feasible(b, FEASIBILITY_TOL);
                    candidates.push(CandidateCheck {
                        case,
                        feasible,
                        loss: Some(s.loss),
                        relative_slacks: Some(s.residuals.slacks.relative(b)),
                        error: None,
                    });
                    if feasible && best.as_ref().is_none_or(|x| better(&s, x)) {
                        best = Some(s);
                    }
                }
                Err(e) => candidates.push(CandidateCheck {
                    case,
                    feasible: false,
                    loss: None,
                    relative_slacks: None,
                    error: Some(e.to_string()),
                }),
            }
        }
        if let Some(mut s) = best {
            let rel = s.residuals.slacks.relative(b);
            let any_active = [rel.prefill, rel.decode, Some(rel.memory)]
                .into_iter()
                .flatten()
                .any(|x| x.abs() <= 1e-6);
            let label = if any_active { s.case.label() } else { RegimeLabel::Unconstrained };
            s.regime = Some(label);
            return Ok(ActiveSetOutcome {
                label,
                solution: Some(s),
                candidates,
            });
        }
    }
    Ok(ActiveSetOutcome {
        label: RegimeLabel::Infeasible,
        solution: None,
        candidates,
    })
}

/// Classifies the regime and returns the matching case's solution.
pub fn solve_auto(inputs: &TheoryInputs, method: &ClassifyMethod) -> Result<OptimalSolution> {
    match method {
        ClassifyMethod::ActiveSet => {
            let out = active_set(inputs)?;
            out.solution.ok_or_else(|| {
                Error::Infeasible("no closed-form regime yields an architecture satisfying every constraint".into())
            })
        }
        ClassifyMethod::RatioHeuristic(th) => {
            let label = ratio_heuristic(&inputs.budgets, th);
            let case = label
                .case(&inputs.budgets)
                .ok_or_else(|| Error::Infeasible(format!("regime {label} has no closed-form case")))?;
            let mut s = solve_case(case, inputs)?;
            s.regime = Some(label);
            Ok(s)
        }
    }
}
