//! Two active constraints: a latency constraint together with memory.
//!
//! Given `(r, gqa)`, compatibility of the two constraints fixes `ρ` and the
//! latency constraint fixes `l`. The `ρ` and `l` stationarity conditions then
//! determine `μ_M` and `μ_T`, leaving the `r` and `gqa` conditions as a 2×2
//! system in `(ln r, ln gqa)`, solved by damped Newton from several starts.

use super::{cases, clamp_flag, oracle, Case, D3RhoRule, Multipliers, Raw, TheoryInputs};
use crate::arch::{self, cmp_theta, Theta};
use crate::error::Result;
use crate::loss::{loss_at, loss_gradient};
use crate::regimes::{per_layer_usage, usage_gradient, Constraint};

const TOL: f64 = 1e-11;
const MAX_NEWTON: usize = 200;

#[derive(Debug, Clone, Copy)]
struct Eval {
    theta: Theta,
    rho_unclamped: f64,
    mu_t: f64,
    mu_m: f64,
    res: [f64; 2],
}

struct Problem<'a> {
    case: Case,
    d: f64,
    latency: Constraint,
    inputs: &'a TheoryInputs,
}

impl Problem<'_> {
    fn rho_of(&self, r: f64, g: f64) -> f64 {
        let inp = self.inputs;
        let b = &inp.budgets;
        match self.case {
            Case::D3 => {
                let eta = b.eta().expect("decode budget checked by caller");
                let delta = arch::kv_correction(
                    inp.workload.avg_context(),
                    g,
                    self.d,
                    inp.hardware.bytes_kv(),
                    inp.hardware.bytes_weight(),
                );
                match inp.d3_rho {
                    D3RhoRule::Exact => cases::d3_rho_exact(eta, g, r, delta),
                    D3RhoRule::Quadratic => cases::d3_rho_quadratic(eta, g, r, delta),
                }
            }
            Case::P3 => {
                let eta_p = b.eta_p().expect("prefill budget checked by caller");
                cases::p3_rho(eta_p, inp.hardware.bytes_weight(), g, r)
            }
            _ => unreachable!(),
        }
    }

    fn eval(&self, u: [f64; 2]) -> Option<Eval> {
        let inp = self.inputs;
        let (r, g) = (u[0].exp(), u[1].exp());
        let rho_unclamped = self.rho_of(r, g);
        if !(rho_unclamped.is_finite() && rho_unclamped > 0.0) {
            return None;
        }
        let rho = rho_unclamped.clamp(inp.rho_min, 1.0);
        let probe = Theta::new(1.0, self.d, r, rho, g);
        let (w, hw) = (&inp.workload, &inp.hardware);
        let lt = inp.budgets.budget(self.latency)? / per_layer_usage(self.latency, &probe, w, hw);
        let lm = inp.budgets.m_budget / per_layer_usage(Constraint::Memory, &probe, w, hw);
        let theta = Theta { l: lt.min(lm), ..probe };

        let gl = loss_gradient(&theta, &inp.coeffs);
        let gt = usage_gradient(self.latency, &theta, w, hw);
        let gm = usage_gradient(Constraint::Memory, &theta, w, hw);
        let mu_m = -gl.rho / gm[3];
        let mu_t = -(gl.l + mu_m * gm[0]) / gt[0];
        let scale = [theta.l * gl.l, r * gl.r, rho * gl.rho, g * gl.gqa]
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        let res = [
            r * (gl.r + mu_t * gt[2] + mu_m * gm[2]) / scale,
            g * (gl.gqa + mu_t * gt[4] + mu_m * gm[4]) / scale,
        ];
        if !(res[0].is_finite() && res[1].is_finite()) {
            return None;
        }
        Some(Eval {
            theta,
            rho_unclamped,
            mu_t,
            mu_m,
            res,
        })
    }

    fn project(&self, u: [f64; 2]) -> [f64; 2] {
        let b = &self.inputs.bounds;
        [u[0].clamp(b.r.0.ln(), b.r.1.ln()), u[1].clamp(b.gqa.0.ln(), b.gqa.1.ln())]
    }

    /// `u − P(u − F(u))`: zero at interior roots and at bound points where
    /// the residual pushes outward.
    fn phi(&self, u: [f64; 2]) -> Option<(Eval, [f64; 2])> {
        let e = self.eval(u)?;
        let q = self.project([u[0] - e.res[0], u[1] - e.res[1]]);
        Some((e, [u[0] - q[0], u[1] - q[1]]))
    }

    fn jacobian(&self, u: [f64; 2]) -> Option<[[f64; 2]; 2]> {
        let h = 1e-6;
        let mut j = [[0.0; 2]; 2];
        for k in 0..2 {
            let mut a = u;
            let mut b = u;
            a[k] += h;
            b[k] -= h;
            let (fa, fb) = (self.phi(a)?.1, self.phi(b)?.1);
            for i in 0..2 {
                j[i][k] = (fa[i] - fb[i]) / (2.0 * h);
            }
        }
        Some(j)
    }

    /// Damped Newton from `start`; returns the converged point and step count.
    fn newton(&self, start: [f64; 2]) -> Option<(Eval, usize)> {
        let norm = |f: &[f64; 2]| f[0].hypot(f[1]);
        let mut u = self.project(start);
        let (mut cur, mut f) = self.phi(u)?;
        for it in 0..MAX_NEWTON {
            if norm(&f) < TOL {
                return Some((cur, it));
            }
            let j = self.jacobian(u)?;
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            let mut step = [
                -(j[1][1] * f[0] - j[0][1] * f[1]) / det,
                -(-j[1][0] * f[0] + j[0][0] * f[1]) / det,
            ];
            let len = step[0].hypot(step[1]);
            if len > 1.0 {
                step = [step[0] / len, step[1] / len];
            }
            let mut t = 1.0;
            let mut accepted = None;
            while t > 1e-6 {
                let v = self.project([u[0] + t * step[0], u[1] + t * step[1]]);
                if let Some((e, fv)) = self.phi(v) {
                    if norm(&fv) < (1.0 - 1e-4 * t) * norm(&f) {
                        accepted = Some((v, e, fv));
                        break;
                    }
                }
                t *= 0.5;
            }
            let (v, e, fv) = accepted?;
            u = v;
            cur = e;
            f = fv;
        }
        (norm(&f) < TOL).then_some((cur, MAX_NEWTON))
    }
}

/// `(r, gqa)` of a single-case solution at the same width, if it solves.
fn seed(case: Case, d: f64, inputs: &TheoryInputs) -> Option<(f64, f64)> {
    if case.constraints().iter().any(|&c| inputs.budgets.budget(c).is_none()) {
        return None;
    }
    if matches!(case, Case::D2 | Case::P2) && !inputs.coeffs.sparsity_optimum_exists() {
        return None;
    }
    cases::solve_single(case, d, inputs).ok().map(|raw| (raw.theta.r, raw.theta.gqa))
}

fn starts(case: Case, d: f64, inputs: &TheoryInputs) -> Vec<[f64; 2]> {
    let latency_case = if case == Case::D3 { Case::D1 } else { Case::P1 };
    let fallback = (4.0, 2.0);
    let (r1, g1) = seed(latency_case, d, inputs).unwrap_or(fallback);
    let (r2, g2) = seed(Case::D2, d, inputs).unwrap_or(fallback);
    let (rm, gm) = ((r1 * r2).sqrt(), (g1 * g2).sqrt());
    [
        (r1, g1),
        (r2, g2),
        (r1, g2),
        (r2, g1),
        (rm, gm),
        (2.0 * rm, gm),
        (0.5 * rm, gm),
        (rm, 2.0 * gm),
    ]
    .iter()
    .map(|&(r, g)| [r.ln(), g.ln()])
    .collect()
}

pub(crate) fn solve_dual(case: Case, d: f64, inputs: &TheoryInputs) -> Result<Raw> {
    let latency = case.constraints()[0];
    let p = Problem { case, d, latency, inputs };
    let runs = inputs.execution.map(&starts(case, d, inputs), |&s| p.newton(s));

    let b = &inputs.bounds;
    let in_box = |e: &Eval| {
        e.rho_unclamped >= inputs.rho_min
            && e.rho_unclamped <= 1.0
            && e.theta.l >= b.l.0
            && e.theta.l <= b.l.1
    };
    let better = |a: &(Eval, usize), b: &(Eval, usize)| {
        let la = loss_at(&a.0.theta, &inputs.coeffs);
        let lb = loss_at(&b.0.theta, &inputs.coeffs);
        la < lb || (la == lb && cmp_theta(&a.0.theta.as_array(), &b.0.theta.as_array()).is_lt())
    };
    let mut best: Option<(Eval, usize)> = None;
    let mut best_signed: Option<(Eval, usize)> = None;
    for run in runs.into_iter().flatten() {
        if !in_box(&run.0) {
            continue;
        }
        if run.0.mu_t >= 0.0 && run.0.mu_m >= 0.0 && best_signed.as_ref().is_none_or(|x| better(&run, x)) {
            best_signed = Some(run);
        }
        if best.as_ref().is_none_or(|x| better(&run, x)) {
            best = Some(run);
        }
    }
    let Some((e, iterations)) = best_signed.or(best) else {
        log::debug!("{} Newton found no interior point at d={d}", case.name());
        return oracle::fallback(case, d, inputs, 0);
    };
    let mut clamped = Vec::new();
    clamp_flag(e.theta.r, (b.r.0 * (1.0 + 1e-12), b.r.1 * (1.0 - 1e-12)), "r", &mut clamped);
    clamp_flag(e.theta.gqa, (b.gqa.0 * (1.0 + 1e-12), b.gqa.1 * (1.0 - 1e-12)), "gqa", &mut clamped);
    Ok(Raw {
        theta: e.theta,
        clamped,
        rho_unclamped: e.rho_unclamped,
        multipliers: Multipliers {
            mu_t: Some(e.mu_t),
            mu_m: Some(e.mu_m),
        },
        iterations,
        oracle_fallback: false,
    })
}
