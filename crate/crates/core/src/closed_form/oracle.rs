//! Brute-force reference optimum.
//!
//! Depth is eliminated: at fixed `(d, r, ρ, gqa)` the loss falls with `l`, so
//! the best depth is the largest one the constraints allow. The remaining
//! variables are searched on a log grid that is then refined around the
//! incumbent.

use serde::{Deserialize, Serialize};

use super::{Case, Multipliers, Raw, TheoryInputs, WidthMode};
use crate::arch::{cmp_theta, Theta};
use crate::error::{Error, Result};
use crate::loss::loss_at;
use crate::regimes::{per_layer_usage, Constraint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub points_per_axis: usize,
    pub refinements: usize,
    /// Factor by which the search half-width shrinks each refinement.
    pub shrink: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            points_per_axis: 17,
            refinements: 3,
            shrink: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleResult {
    pub theta: Theta,
    pub loss: f64,
    /// Depth ended on its upper bound rather than on a constraint.
    pub l_capped: bool,
    pub evaluations: usize,
}

/// Largest admissible depth, or `None` when even `l_lo` violates a constraint.
fn best_depth(t: &Theta, constraints: &[Constraint], inputs: &TheoryInputs) -> Option<(f64, bool)> {
    let (lo, hi) = inputs.bounds.l;
    let mut l = hi;
    let mut capped = true;
    for &c in constraints {
        let budget = inputs.budgets.budget(c)?;
        let cap = budget / per_layer_usage(c, t, &inputs.workload, &inputs.hardware);
        if cap < l {
            l = cap;
            capped = false;
        }
    }
    (l >= lo).then_some((l, capped))
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || lo == hi {
        return vec![(0.5 * (lo + hi)).exp()];
    }
    (0..n).map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()).collect()
}

type Best = Option<(f64, Theta, bool)>;

fn pick(a: Best, b: Best) -> Best {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            let first = x.0 < y.0 || (x.0 == y.0 && cmp_theta(&x.1.as_array(), &y.1.as_array()).is_le());
            Some(if first { x } else { y })
        }
    }
}

/// Constrained minimum of the loss over the search box, subject to the given
/// constraints (only those whose budget is present are enforced).
pub fn numerical_oracle(inputs: &TheoryInputs, constraints: &[Constraint]) -> Result<OracleResult> {
    inputs.validate()?;
    let constraints: Vec<Constraint> = constraints
        .iter()
        .copied()
        .filter(|&c| inputs.budgets.budget(c).is_some())
        .collect();
    let opts = &inputs.oracle;
    let n = opts.points_per_axis.max(2);
    let b = &inputs.bounds;
    let full = [
        (b.d.0.ln(), b.d.1.ln()),
        (b.r.0.ln(), b.r.1.ln()),
        (inputs.rho_min.ln(), 0.0),
        (b.gqa.0.ln(), b.gqa.1.ln()),
    ];
    let discrete: Option<Vec<f64>> = match &inputs.width {
        WidthMode::Fixed(d) => Some(vec![*d]),
        WidthMode::Grid(ws) => Some(ws.clone()),
        WidthMode::Continuous => None,
    };

    let mut boxes = full;
    let mut widths = discrete.clone();
    let mut incumbent: Best = None;
    let mut evaluations = 0;
    let mut half = full.map(|(lo, hi)| 0.5 * (hi - lo));
    for round in 0..=opts.refinements {
        if round > 0 {
            let (_, t, _) = incumbent.expect("incumbent exists after the first round");
            let centre = [t.d.ln(), t.r.ln(), t.rho.ln(), t.gqa.ln()];
            for k in 0..4 {
                half[k] /= opts.shrink;
                boxes[k] = ((centre[k] - half[k]).max(full[k].0), (centre[k] + half[k]).min(full[k].1));
            }
            if discrete.is_some() {
                widths = Some(vec![t.d]);
            }
        }
        let ds = widths.clone().unwrap_or_else(|| axis(boxes[0].0, boxes[0].1, n));
        let rs = axis(boxes[1].0, boxes[1].1, n);
        let rhos = axis(boxes[2].0, boxes[2].1, n);
        let gs = axis(boxes[3].0, boxes[3].1, n);
        let per_d = rs.len() * rhos.len() * gs.len();
        let total = ds.len() * per_d;
        evaluations += total;
        let found = inputs.execution.map_range(total, |i| {
            let (di, rest) = (i / per_d, i % per_d);
            let (ri, rest) = (rest / (rhos.len() * gs.len()), rest % (rhos.len() * gs.len()));
            let (pi, gi) = (rest / gs.len(), rest % gs.len());
            let probe = Theta::new(1.0, ds[di], rs[ri], rhos[pi], gs[gi]);
            best_depth(&probe, &constraints, inputs).map(|(l, capped)| {
                let t = Theta { l, ..probe };
                (loss_at(&t, &inputs.coeffs), t, capped)
            })
        });
        incumbent = found.into_iter().fold(incumbent, pick);
        if incumbent.is_none() {
            return Err(Error::Infeasible(
                "no point of the search box satisfies the constraints at the minimum depth".into(),
            ));
        }
    }
    let (loss, theta, l_capped) = incumbent.expect("checked above");
    Ok(OracleResult {
        theta,
        loss,
        l_capped,
        evaluations,
    })
}

/// Oracle answer at a fixed width, packaged as a solver result.
pub(crate) fn fallback(case: Case, d: f64, inputs: &TheoryInputs, iterations: usize) -> Result<Raw> {
    let fixed = TheoryInputs {
        width: WidthMode::Fixed(d),
        ..inputs.clone()
    };
    let res = numerical_oracle(&fixed, case.constraints())?;
    let t = res.theta;
    let b = &inputs.bounds;
    let at = |x: f64, (lo, hi): (f64, f64)| x <= lo * (1.0 + 1e-9) || x >= hi * (1.0 - 1e-9);
    let mut clamped = Vec::new();
    if res.l_capped || at(t.l, b.l) {
        clamped.push("l".to_string());
    }
    if at(t.r, b.r) {
        clamped.push("r".to_string());
    }
    if at(t.gqa, b.gqa) {
        clamped.push("gqa".to_string());
    }
    if at(t.rho, (inputs.rho_min, 1.0)) {
        clamped.push("rho".to_string());
    }
    Ok(Raw {
        theta: t,
        clamped,
        rho_unclamped: t.rho,
        multipliers: Multipliers::default(),
        iterations,
        oracle_fallback: true,
    })
}
