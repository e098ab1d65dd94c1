//! Budget normalisation, constraint evaluation and regime classification.
//!
//! Latency targets are turned into per-layer-free budgets:
//! `F̄_p = T_pre·π/(B·S_in)` (FLOPs) and `M̄_d = T_dec·β/S_out` (bytes).
//! The three constraints on `θ` are then
//!
//! ```text
//! prefill  l·ξ_F·d²                              ≤ F̄_p
//! decode   l·(ξ_W^dec·d²·b_w + 2·S̄·d·b_kv/gqa)  ≤ M̄_d
//! memory   l·ξ_W^all·d²·b_w                      ≤ M
//! ```
//!
//! The decode constraint is the batch-1 form.

use serde::{Deserialize, Serialize};

use crate::arch::{self, ArchitectureConfig, HardwareSpec, Theta, WorkloadSpec};
use crate::closed_form::{self, Case, TheoryInputs};
use crate::error::{Error, Result};
use crate::roofline;

/// Latency targets in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Targets {
    pub t_pre: Option<f64>,
    pub t_dec: Option<f64>,
    pub t_total: Option<f64>,
    /// Prefill share of `t_total`; derived from a reference architecture when absent.
    pub split: Option<f64>,
}

impl Targets {
    pub fn decode(t: f64) -> Self {
        Targets { t_dec: Some(t), ..Default::default() }
    }

    pub fn prefill(t: f64) -> Self {
        Targets { t_pre: Some(t), ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    pub f_bar_p: Option<f64>,
    pub m_bar_d: Option<f64>,
    pub m_budget: f64,
}

impl Budgets {
    /// Only the memory budget of `hw`.
    pub fn memory_only(hw: &HardwareSpec) -> Self {
        Budgets {
            f_bar_p: None,
            m_bar_d: None,
            m_budget: hw.memory_budget(),
        }
    }

    pub fn new(f_bar_p: Option<f64>, m_bar_d: Option<f64>, m_budget: f64) -> Result<Self> {
        for (name, v) in [("F_bar_p", f_bar_p), ("M_bar_d", m_bar_d), ("M_budget", Some(m_budget))] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidInput(format!("{name} must be > 0 (got {v})")));
                }
            }
        }
        Ok(Budgets { f_bar_p, m_bar_d, m_budget })
    }

    pub fn eta(&self) -> Option<f64> {
        self.m_bar_d.map(|m| m / self.m_budget)
    }

    pub fn eta_p(&self) -> Option<f64> {
        self.f_bar_p.map(|f| f / self.m_budget)
    }

    pub fn budget(&self, c: Constraint) -> Option<f64> {
        match c {
            Constraint::Prefill => self.f_bar_p,
            Constraint::Decode => self.m_bar_d,
            Constraint::Memory => Some(self.m_budget),
        }
    }

    /// Constraints with a budget, in prefill/decode/memory order.
    pub fn present(&self) -> Vec<Constraint> {
        Constraint::ALL.into_iter().filter(|c| self.budget(*c).is_some()).collect()
    }

    /// Scales every budget by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Budgets {
            f_bar_p: self.f_bar_p.map(|v| v * factor),
            m_bar_d: self.m_bar_d.map(|v| v * factor),
            m_budget: self.m_budget * factor,
        }
    }
}

/// Reference point used to split a total-latency target: the centre of the
/// default search space (mean depth and width, r=4, dense, gqa=4).
pub fn split_reference_arch() -> ArchitectureConfig {
    let widths = crate::pareto::space::DEFAULT_WIDTHS;
    let d = widths.iter().map(|&w| w as f64).sum::<f64>() / widths.len() as f64;
    ArchitectureConfig::continuous(18.0, d, 4.0, 1.0, 4.0).expect("reference architecture is valid")
}

/// Prefill share of a total-latency target for `reference`.
pub fn default_split(reference: &ArchitectureConfig, hw: &HardwareSpec, workload: &WorkloadSpec) -> f64 {
    let mode = roofline::LatencyMode::ClosedForm;
    let p = roofline::prefill_latency(reference, workload, hw, mode);
    let d = roofline::decode_latency(reference, workload, hw, mode);
    if p + d == 0.0 {
        0.5
    } else {
        p / (p + d)
    }
}

pub fn normalize_budgets(hw: &HardwareSpec, workload: &WorkloadSpec, targets: &Targets) -> Result<Budgets> {
    let (mut t_pre, mut t_dec) = (targets.t_pre, targets.t_dec);
    if let Some(total) = targets.t_total {
        if t_pre.is_some() || t_dec.is_some() {
            return Err(Error::InvalidInput(
                "a total-latency target cannot be combined with per-phase targets".into(),
            ));
        }
        let split = match targets.split {
            Some(s) if (0.0..=1.0).contains(&s) => s,
            Some(s) => return Err(Error::InvalidInput(format!("split must lie in [0, 1] (got {s})"))),
            None => default_split(&split_reference_arch(), hw, workload),
        };
        if split > 0.0 && workload.seq_in() > 0 {
            t_pre = Some(split * total);
        }
        if split < 1.0 && workload.seq_out() > 0 {
            t_dec = Some((1.0 - split) * total);
        }
    }
    if t_pre.is_none() && t_dec.is_none() {
        return Err(Error::MissingBudget("no latency target given".into()));
    }
    let f_bar_p = match t_pre {
        Some(t) => {
            if workload.seq_in() == 0 {
                return Err(Error::InvalidInput("a prefill target needs seq_in >= 1".into()));
            }
            Some(t * hw.peak_flops() / (workload.batch() as f64 * workload.seq_in() as f64))
        }
        None => None,
    };
    let m_bar_d = match t_dec {
        Some(t) => {
            if workload.seq_out() == 0 {
                return Err(Error::InvalidInput("a decode target needs seq_out >= 1".into()));
            }
            Some(t * hw.bandwidth() / workload.seq_out() as f64)
        }
        None => None,
    };
    Budgets::new(f_bar_p, m_bar_d, hw.memory_budget())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Prefill,
    Decode,
    Memory,
}

impl Constraint {
    pub const ALL: [Constraint; 3] = [Constraint::Prefill, Constraint::Decode, Constraint::Memory];
}

/// Per-layer resource use of a constraint at `t` (so usage is `l` times this).
pub fn per_layer_usage(c: Constraint, t: &Theta, workload: &WorkloadSpec, hw: &HardwareSpec) -> f64 {
    let d2 = t.d * t.d;
    match c {
        Constraint::Prefill => arch::xi_f(t.gqa, t.r) * d2,
        Constraint::Decode => {
            arch::xi_w_dec(t.gqa, t.r) * d2 * hw.bytes_weight() + 2.0 * workload.avg_context() * t.d * hw.bytes_kv() / t.gqa
        }
        Constraint::Memory => arch::xi_w_all(t.gqa, t.r, t.rho) * d2 * hw.bytes_weight(),
    }
}

pub fn usage(c: Constraint, t: &Theta, workload: &WorkloadSpec, hw: &HardwareSpec) -> f64 {
    t.l * per_layer_usage(c, t, workload, hw)
}

/// Analytic gradient of a constraint's usage, ordered `(l, d, r, ρ, gqa)`.
pub fn usage_gradient(c: Constraint, t: &Theta, workload: &WorkloadSpec, hw: &HardwareSpec) -> [f64; 5] {
    let (l, d, r, rho, g) = (t.l, t.d, t.r, t.rho, t.gqa);
    let d2 = d * d;
    let g2 = g * g;
    let bw = hw.bytes_weight();
    match c {
        Constraint::Prefill => {
            let xi = arch::xi_f(g, r);
            [xi * d2, 2.0 * l * xi * d, 6.0 * l * d2, 0.0, -4.0 * l * d2 / g2]
        }
        Constraint::Decode => {
            let sb = workload.avg_context() * hw.bytes_kv();
            let xi = arch::xi_w_dec(g, r);
            [
                xi * d2 * bw + 2.0 * sb * d / g,
                2.0 * l * xi * d * bw + 2.0 * l * sb / g,
                3.0 * l * d2 * bw,
                0.0,
                -2.0 * l * d2 * bw / g2 - 2.0 * l * sb * d / g2,
            ]
        }
        Constraint::Memory => {
            let xi = arch::xi_w_all(g, r, rho);
            [
                xi * d2 * bw,
                2.0 * l * xi * d * bw,
                3.0 * l * d2 * bw / rho,
                -3.0 * l * r * d2 * bw / (rho * rho),
                -2.0 * l * d2 * bw / g2,
            ]
        }
    }
}

/// Signed `budget − usage` per constraint; positive means satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Slacks {
    pub prefill: Option<f64>,
    pub decode: Option<f64>,
    pub memory: f64,
}

impl Slacks {
    pub fn get(&self, c: Constraint) -> Option<f64> {
        match c {
            Constraint::Prefill => self.prefill,
            Constraint::Decode => self.decode,
            Constraint::Memory => Some(self.memory),
        }
    }

    /// Each slack divided by its budget.
    pub fn relative(&self, budgets: &Budgets) -> Slacks {
        Slacks {
            prefill: self.prefill.zip(budgets.f_bar_p).map(|(s, b)| s / b),
            decode: self.decode.zip(budgets.m_bar_d).map(|(s, b)| s / b),
            memory: self.memory / budgets.m_budget,
        }
    }

    /// True when no slack is below `-tol` relative to its budget.
    pub fn feasible(&self, budgets: &Budgets, tol: f64) -> bool {
        let r = self.relative(budgets);
        [r.prefill, r.decode, Some(r.memory)].into_iter().flatten().all(|s| s >= -tol)
    }
}

pub fn slacks_at(t: &Theta, budgets: &Budgets, workload: &WorkloadSpec, hw: &HardwareSpec) -> Slacks {
    let slack = |c: Constraint| budgets.budget(c).map(|b| b - usage(c, t, workload, hw));
    Slacks {
        prefill: slack(Constraint::Prefill),
        decode: slack(Constraint::Decode),
        memory: slack(Constraint::Memory).unwrap_or(f64::INFINITY),
    }
}

pub fn check_constraints(arch: &ArchitectureConfig, budgets: &Budgets, workload: &WorkloadSpec, hw: &HardwareSpec) -> Slacks {
    slacks_at(&Theta::from(arch), budgets, workload, hw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    PrefillLatencyOnly,
    DecodeLatencyOnly,
    MemoryOnly,
    PrefillPlusMemory,
    DecodePlusMemory,
    Unconstrained,
    Infeasible,
}

impl RegimeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::PrefillLatencyOnly => "prefill_latency_only",
            RegimeLabel::DecodeLatencyOnly => "decode_latency_only",
            RegimeLabel::MemoryOnly => "memory_only",
            RegimeLabel::PrefillPlusMemory => "prefill_plus_memory",
            RegimeLabel::DecodePlusMemory => "decode_plus_memory",
            RegimeLabel::Unconstrained => "unconstrained",
            RegimeLabel::Infeasible => "infeasible",
        }
    }

    /// Closed-form case that covers this regime.
    pub fn case(self, budgets: &Budgets) -> Option<Case> {
        match self {
            RegimeLabel::PrefillLatencyOnly => Some(Case::P1),
            RegimeLabel::DecodeLatencyOnly => Some(Case::D1),
            RegimeLabel::MemoryOnly => Some(if budgets.m_bar_d.is_none() && budgets.f_bar_p.is_some() {
                Case::P2
            } else {
                Case::D2
            }),
            RegimeLabel::PrefillPlusMemory => Some(Case::P3),
            RegimeLabel::DecodePlusMemory => Some(Case::D3),
            RegimeLabel::Unconstrained | RegimeLabel::Infeasible => None,
        }
    }
}

impl std::fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioThresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for RatioThresholds {
    fn default() -> Self {
        RatioThresholds { low: 0.5, high: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum ClassifyMethod {
    RatioHeuristic(RatioThresholds),
    ActiveSet,
}

impl ClassifyMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifyMethod::RatioHeuristic(_) => "ratio_heuristic",
            ClassifyMethod::ActiveSet => "active_set",
        }
    }
}

/// Budget-ratio rule: a ratio well below one reads as memory-bound, well
/// above one as latency-bound, otherwise both constraints are taken as active.
pub fn ratio_heuristic(budgets: &Budgets, th: &RatioThresholds) -> RegimeLabel {
    let eta = budgets.eta();
    let eta_p = budgets.eta_p();
    let ratios: Vec<f64> = [eta, eta_p].into_iter().flatten().collect();
    if ratios.is_empty() || ratios.iter().any(|&x| x < th.low) {
        return RegimeLabel::MemoryOnly;
    }
    if eta.is_some_and(|x| x > th.high) {
        return RegimeLabel::DecodeLatencyOnly;
    }
    if eta_p.is_some_and(|x| x > th.high) {
        return RegimeLabel::PrefillLatencyOnly;
    }
    if eta.is_some() {
        RegimeLabel::DecodePlusMemory
    } else {
        RegimeLabel::PrefillPlusMemory
    }
}

/// Outcome of testing one closed-form case during active-set classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateCheck {
    pub case: Case,
    pub feasible: bool,
    pub loss: Option<f64>,
    pub relative_slacks: Option<Slacks>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub eta: Option<f64>,
    pub eta_p: Option<f64>,
    pub label: RegimeLabel,
    pub method: &'static str,
    pub slacks: Option<Slacks>,
    pub candidates: Vec<CandidateCheck>,
}

pub fn classify_regime(inputs: &TheoryInputs, method: &ClassifyMethod) -> Result<RegimeReport> {
    let b = &inputs.budgets;
    match method {
        ClassifyMethod::RatioHeuristic(th) => Ok(RegimeReport {
            eta: b.eta(),
            eta_p: b.eta_p(),
            label: ratio_heuristic(b, th),
            method: method.name(),
            slacks: None,
            candidates: Vec::new(),
        }),
        ClassifyMethod::ActiveSet => {
            let outcome = closed_form::active_set(inputs)?;
            Ok(RegimeReport {
                eta: b.eta(),
                eta_p: b.eta_p(),
                label: outcome.label,
                method: method.name(),
                slacks: outcome.solution.as_ref().map(|s| s.residuals.slacks),
                candidates: outcome.candidates,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn worked_hw() -> HardwareSpec {
        HardwareSpec::new(10e12, 50e9, 4e9, 2.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn worked_example_budgets() {
        let w = WorkloadSpec::new(1, 1024, 10).unwrap();
        let b = normalize_budgets(&worked_hw(), &w, &Targets::decode(0.1)).unwrap();
        assert_relative_eq!(b.m_bar_d.unwrap(), 0.5e9, max_relative = 1e-15);
        assert_relative_eq!(b.eta().unwrap(), 0.125, max_relative = 1e-15);
        assert_eq!(ratio_heuristic(&b, &RatioThresholds::default()), RegimeLabel::MemoryOnly);
    }

    #[test]
    fn unit_prefill_budget_and_scaling() {
        let hw = HardwareSpec::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let w = WorkloadSpec::new(1, 1, 1).unwrap();
        let b = normalize_budgets(&hw, &w, &Targets::prefill(1.0)).unwrap();
        assert_eq!(b.f_bar_p, Some(1.0));
        let w1 = WorkloadSpec::new(1, 8, 10).unwrap();
        let w2 = WorkloadSpec::new(1, 8, 20).unwrap();
        let a = normalize_budgets(&worked_hw(), &w1, &Targets::decode(0.1)).unwrap();
        let c = normalize_budgets(&worked_hw(), &w2, &Targets::decode(0.1)).unwrap();
        assert_relative_eq!(a.m_bar_d.unwrap(), 2.0 * c.m_bar_d.unwrap(), max_relative = 1e-15);
        assert!(normalize_budgets(&worked_hw(), &w1, &Targets::default()).is_err());
    }

    #[test]
    fn total_target_split() {
        let w = WorkloadSpec::default();
        let t = Targets {
            t_total: Some(1.0),
            split: Some(0.25),
            ..Default::default()
        };
        let b = normalize_budgets(&worked_hw(), &w, &t).unwrap();
        assert_relative_eq!(b.f_bar_p.unwrap(), 0.25 * 10e12 / 1024.0, max_relative = 1e-15);
        assert_relative_eq!(b.m_bar_d.unwrap(), 0.75 * 50e9 / 16.0, max_relative = 1e-15);
        let s = default_split(&split_reference_arch(), &worked_hw(), &w);
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn heuristic_thresholds() {
        let th = RatioThresholds::default();
        let b = |d: Option<f64>, p: Option<f64>| Budgets::new(p, d, 1.0).unwrap();
        assert_eq!(ratio_heuristic(&b(Some(10.0), None), &th), RegimeLabel::DecodeLatencyOnly);
        assert_eq!(ratio_heuristic(&b(Some(1.0), None), &th), RegimeLabel::DecodePlusMemory);
        assert_eq!(ratio_heuristic(&b(None, Some(1.0)), &th), RegimeLabel::PrefillPlusMemory);
        assert_eq!(ratio_heuristic(&b(None, Some(3.0)), &th), RegimeLabel::PrefillLatencyOnly);
        assert_eq!(ratio_heuristic(&b(None, None), &th), RegimeLabel::MemoryOnly);
    }

    #[test]
    fn saturating_memory_gives_zero_slack() {
        let hw = worked_hw();
        let w = WorkloadSpec::default();
        let probe = Theta::new(1.0, 1536.0, 3.0, 0.25, 4.0);
        let l = hw.memory_budget() / per_layer_usage(Constraint::Memory, &probe, &w, &hw);
        let t = Theta { l, ..probe };
        let s = slacks_at(&t, &Budgets::memory_only(&hw), &w, &hw);
        assert!((s.memory / hw.memory_budget()).abs() < 1e-9);
    }

    #[test]
    fn usage_gradients_match_differences() {
        let hw = HardwareSpec::new(1e13, 5e10, 4e9, 2.0, 2.0, 1.0).unwrap();
        let w = WorkloadSpec::new(1, 512, 32).unwrap();
        let t = Theta::new(12.0, 1280.0, 2.5, 0.3, 3.0);
        for c in Constraint::ALL {
            let g = usage_gradient(c, &t, &w, &hw);
            let x = t.as_array();
            for k in 0..5 {
                let h = 1e-6 * x[k];
                let mut a = x;
                let mut b = x;
                a[k] += h;
                b[k] -= h;
                let fd = (usage(c, &Theta::from_array(a), &w, &hw) - usage(c, &Theta::from_array(b), &w, &hw)) / (2.0 * h);
                let scale = g[k].abs().max(1e-9 * usage(c, &t, &w, &hw) / x[k]);
                assert!((fd - g[k]).abs() <= 1e-6 * scale, "{c:?}[{k}]: {fd} vs {}", g[k]);
            }
        }
    }
}
