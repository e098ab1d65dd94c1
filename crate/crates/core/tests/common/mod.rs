#![allow(dead_code)]

use codesign::closed_form::{Case, TheoryInputs, WidthMode};
use codesign::pareto::DEFAULT_WIDTHS;
use codesign::regimes::{usage, Budgets, Constraint};
use codesign::{HardwareSpec, ScalingLawCoefficients, Theta, WorkloadSpec};
use rand::Rng;

pub const C: ScalingLawCoefficients = ScalingLawCoefficients::PAPER_APPENDIX_C;

/// Published coefficients with multiplicative noise, keeping `α_ρ > α_r`.
pub fn perturbed_coeffs<R: Rng>(rng: &mut R) -> ScalingLawCoefficients {
    let mut k = |x: f64, s: f64| x * rng.random_range(-s..s).exp();
    let c = ScalingLawCoefficients {
        kappa_l: k(C.kappa_l, 0.3),
        kappa_rho: k(C.kappa_rho, 0.3),
        kappa_d: k(C.kappa_d, 0.3),
        kappa_m: k(C.kappa_m, 0.3),
        alpha_l: k(C.alpha_l, 0.1),
        alpha_rho: k(C.alpha_rho, 0.1),
        alpha_r: k(C.alpha_r, 0.1),
        alpha_m: k(C.alpha_m, 0.1),
        beta_1: k(C.beta_1, 0.1),
        beta_2: k(C.beta_2, 0.1),
        l_inf: k(C.l_inf, 0.1),
    };
    assert!(c.alpha_rho > c.alpha_r);
    c
}

pub fn random_theta<R: Rng>(rng: &mut R) -> Theta {
    let d = DEFAULT_WIDTHS[rng.random_range(0..DEFAULT_WIDTHS.len())] as f64;
    Theta::new(
        rng.random_range(4.0..32.0),
        d,
        rng.random_range(1.0..8.0),
        (rng.random_range((1.0f64 / 16.0).ln()..0.0)).exp(),
        rng.random_range(1.0..8.0),
    )
}

pub fn random_hw<R: Rng>(rng: &mut R) -> HardwareSpec {
    let bw = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
    HardwareSpec::new(
        10f64.powf(rng.random_range(12.5..14.5)),
        10f64.powf(rng.random_range(10.5..12.0)),
        1e9,
        bw,
        bw,
        bw,
    )
    .unwrap()
}

pub fn random_workload<R: Rng>(rng: &mut R) -> WorkloadSpec {
    WorkloadSpec::new(1, rng.random_range(64..4096), rng.random_range(1..256)).unwrap()
}

/// Instance whose `case` constraints are exactly saturated by a random
/// reference architecture, at that architecture's width. Constraints outside
/// the case are left absent (latency) or loose (memory).
pub fn instance_for<R: Rng>(case: Case, rng: &mut R) -> (TheoryInputs, Theta) {
    let coeffs = perturbed_coeffs(rng);
    let hw = random_hw(rng);
    let w = random_workload(rng);
    let t = random_theta(rng);
    let u = |c: Constraint| usage(c, &t, &w, &hw);
    let loose = 1e6 * u(Constraint::Memory);
    let cs = case.constraints();
    let has = |c: Constraint| cs.contains(&c);
    let budgets = Budgets::new(
        has(Constraint::Prefill).then(|| u(Constraint::Prefill)),
        has(Constraint::Decode).then(|| u(Constraint::Decode)),
        if has(Constraint::Memory) { u(Constraint::Memory) } else { loose },
    )
    .unwrap();
    let hw = hw.with_memory_budget(budgets.m_budget).unwrap();
    let inputs = TheoryInputs::new(coeffs, budgets, hw, w).with_width(WidthMode::Fixed(t.d));
    (inputs, t)
}
