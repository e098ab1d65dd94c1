//! Single-constraint cases.
//!
//! With one active constraint `l·u(r, gqa, ρ, d) = B` the depth condition gives
//! `μ·u = α_l κ_l l^(−α_l−1)`, and eliminating `μ` and `l = B/u` from the `r`
//! and `gqa` conditions leaves
//!
//! ```text
//! r^(α_r+1)   = α_r D̃ d^(−β_2) B^α_l / (α_l κ_l u^(α_l−1) u_r)
//! gqa^(α_m+1) = α_l κ_l u^(α_l−1) u_g d^α_m / (α_m κ_m B^α_l)
//! ```
//!
//! where `u_r = ∂u/∂r` and `u_g = −gqa²·∂u/∂gqa` do not depend on `r` or `gqa`:
//!
//! | case   | u                                   | u_r          | u_g                      |
//! |--------|-------------------------------------|--------------|--------------------------|
//! | D1     | `ξ_W^dec d² b_w + 2 S̄ d b_kv/gqa`   | `3 d² b_w`   | `2(d² b_w + S̄ d b_kv)`   |
//! | P1     | `ξ_F d²`                            | `6 d²`       | `4 d²`                   |
//! | D2, P2 | `ξ_W^all d² b_w`                    | `3 d² b_w/ρ` | `2 d² b_w`               |
//!
//! `u` still depends on `r` and `gqa`, so the pair is iterated to a fixed point.

use super::{clamp_flag, oracle, Case, Multipliers, Raw, TheoryInputs};
use crate::arch::{self, Theta};
use crate::error::Result;
use crate::loss::{d_tilde, ScalingLawCoefficients};
use crate::regimes::{per_layer_usage, Constraint};

/// Memory-only sparsity optimum before clamping.
pub fn d2_rho_star(d: f64, c: &ScalingLawCoefficients) -> f64 {
    let base = c.alpha_r * c.kappa_d / ((c.alpha_rho - c.alpha_r) * c.kappa_rho);
    base.powf(1.0 / c.alpha_rho) * d.powf((c.beta_1 - c.beta_2) / c.alpha_rho)
}

/// `ρ` such that decode and memory are saturated by the same depth:
/// `ξ_W^all = (α_attn + 3r + δ)/η`.
pub fn d3_rho_exact(eta: f64, gqa: f64, r: f64, delta: f64) -> f64 {
    let a = arch::alpha_attn(gqa);
    let xi_all = (a + 3.0 * r + delta) / eta;
    if xi_all <= a {
        f64::INFINITY
    } else {
        3.0 * r / (xi_all - a)
    }
}

/// `ρ` from the positive root of `η x² − (α_attn+3r) x − δ = 0`.
pub fn d3_rho_quadratic(eta: f64, gqa: f64, r: f64, delta: f64) -> f64 {
    let a = arch::alpha_attn(gqa);
    let b = a + 3.0 * r;
    let x = (b + (b * b + 4.0 * eta * delta).sqrt()) / (2.0 * eta);
    if x <= a {
        f64::INFINITY
    } else {
        3.0 * r / (x - a)
    }
}

/// `ρ` saturating prefill and memory together; needs `η_p b_w < 2`.
pub fn p3_rho(eta_p: f64, b_w: f64, gqa: f64, r: f64) -> f64 {
    let a = arch::alpha_attn(gqa);
    3.0 * eta_p * b_w * r / (a * (2.0 - eta_p * b_w) + 6.0 * r)
}

fn constraint_of(case: Case) -> Constraint {
    case.constraints()[0]
}

/// `(u_r, u_g)` for the case at width `d`.
fn usage_terms(case: Case, d: f64, rho: f64, inputs: &TheoryInputs) -> (f64, f64) {
    let d2 = d * d;
    let bw = inputs.hardware.bytes_weight();
    match case {
        Case::D1 => {
            let sb = inputs.workload.avg_context() * inputs.hardware.bytes_kv();
            (3.0 * d2 * bw, 2.0 * (d2 * bw + sb * d))
        }
        Case::P1 => (6.0 * d2, 4.0 * d2),
        Case::D2 | Case::P2 => (3.0 * d2 * bw / rho, 2.0 * d2 * bw),
        Case::D3 | Case::P3 => unreachable!("dual cases are solved elsewhere"),
    }
}

/// Unprojected `(ln r, ln gqa)` targets of one fixed-point step.
fn targets(case: Case, d: f64, rho: f64, r: f64, g: f64, budget: f64, inputs: &TheoryInputs) -> (f64, f64) {
    let c = &inputs.coeffs;
    let probe = Theta::new(1.0, d, r, rho, g);
    let u = per_layer_usage(constraint_of(case), &probe, &inputs.workload, &inputs.hardware);
    let (u_r, u_g) = usage_terms(case, d, rho, inputs);
    let (ln_u, ln_b, ln_d) = (u.ln(), budget.ln(), d.ln());
    let ln_k = c.alpha_l.ln() + c.kappa_l.ln() + (c.alpha_l - 1.0) * ln_u;
    let ln_r = (c.alpha_r.ln() + d_tilde(rho, d, c).ln() - c.beta_2 * ln_d + c.alpha_l * ln_b - ln_k - u_r.ln())
        / (c.alpha_r + 1.0);
    let ln_g = (ln_k + u_g.ln() + c.alpha_m * ln_d - c.alpha_m.ln() - c.kappa_m.ln() - c.alpha_l * ln_b)
        / (c.alpha_m + 1.0);
    (ln_r, ln_g)
}

pub(crate) fn solve_single(case: Case, d: f64, inputs: &TheoryInputs) -> Result<Raw> {
    let constraint = constraint_of(case);
    let budget = inputs.budgets.budget(constraint).expect("budget checked by caller");
    let mut clamped = Vec::new();
    let (rho, rho_unclamped) = match case {
        Case::D2 | Case::P2 => {
            let u = d2_rho_star(d, &inputs.coeffs);
            (clamp_flag(u, inputs.rho_bounds(), "rho", &mut clamped), u)
        }
        _ => (inputs.rho_min, inputs.rho_min),
    };

    let b = &inputs.bounds;
    let (lr, lg) = ((b.r.0.ln(), b.r.1.ln()), (b.gqa.0.ln(), b.gqa.1.ln()));
    let fp = &inputs.fixed_point;
    let mut x = [4f64.clamp(b.r.0, b.r.1).ln(), 4f64.clamp(b.gqa.0, b.gqa.1).ln()];
    let mut raw_target = x;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < fp.max_iterations {
        iterations += 1;
        let (tr, tg) = targets(case, d, rho, x[0].exp(), x[1].exp(), budget, inputs);
        if !(tr.is_finite() && tg.is_finite()) {
            break;
        }
        raw_target = [tr, tg];
        let next = [
            (1.0 - fp.damping) * x[0] + fp.damping * tr.clamp(lr.0, lr.1),
            (1.0 - fp.damping) * x[1] + fp.damping * tg.clamp(lg.0, lg.1),
        ];
        let change = (next[0] - x[0]).abs().max((next[1] - x[1]).abs());
        x = next;
        if change < fp.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("{} fixed point did not settle at d={d} after {iterations} steps", case.name());
        return oracle::fallback(case, d, inputs, iterations);
    }
    // at convergence x is the projected target
    let r = clamp_flag(raw_target[0].exp(), b.r, "r", &mut clamped);
    let g = clamp_flag(raw_target[1].exp(), b.gqa, "gqa", &mut clamped);
    // ρ* assumes an interior r
    if matches!(case, Case::D2 | Case::P2) && clamped.iter().any(|v| v == "r") {
        log::debug!("{} r at bound at d={d}; rho formula no longer stationary", case.name());
        return oracle::fallback(case, d, inputs, iterations);
    }
    let probe = Theta::new(1.0, d, r, rho, g);
    let u = per_layer_usage(constraint, &probe, &inputs.workload, &inputs.hardware);
    let l = budget / u;
    if !(l >= b.l.0 && l <= b.l.1) {
        log::debug!("{} depth {l} outside bounds at d={d}", case.name());
        return oracle::fallback(case, d, inputs, iterations);
    }
    let c = &inputs.coeffs;
    let mu = c.alpha_l * c.kappa_l * l.powf(-c.alpha_l - 1.0) / u;
    let multipliers = match constraint {
        Constraint::Memory => Multipliers { mu_t: None, mu_m: Some(mu) },
        _ => Multipliers { mu_t: Some(mu), mu_m: None },
    };
    Ok(Raw {
        theta: Theta { l, ..probe },
        clamped,
        rho_unclamped,
        multipliers,
        iterations,
        oracle_fallback: false,
    })
}
