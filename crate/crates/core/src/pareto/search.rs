//! Adaptive frontier search: Latin-hypercube seeding, then rounds that fill
//! wide latency gaps and expand grid neighbours of frontier points.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lhs;
use super::space::{GridIndex, SearchSpace};
use super::{build_frontier, hypervolume, Frontier, ParetoPoint, RoundStats};
use crate::arch::{HardwareSpec, Precision, WorkloadSpec};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::loss::ScalingLawCoefficients;
use crate::roofline::{objective_latency, LatencyMode, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    pub initial: usize,
    pub gap_k: usize,
    pub max_rounds: usize,
    pub seed: u64,
    /// Relative hypervolume change below which the search stops.
    pub hv_tolerance: f64,
    pub latency_mode: LatencyMode,
    /// Re-score the final frontier with every operator.
    pub verify_full: bool,
    /// Drop points whose weights exceed the device memory budget.
    pub memory_filter: bool,
    pub execution: Execution,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            initial: 2000,
            gap_k: 8,
            max_rounds: 20,
            seed: 0,
            hv_tolerance: 1e-4,
            latency_mode: LatencyMode::ClosedForm,
            verify_full: true,
            memory_filter: true,
            execution: Execution::default(),
        }
    }
}

struct Ctx<'a> {
    space: &'a SearchSpace,
    coeffs: &'a ScalingLawCoefficients,
    hw: HardwareSpec,
    workload: &'a WorkloadSpec,
    objective: Objective,
    precision: Precision,
    opts: &'a SearchOptions,
}

/// Evaluated grid points keyed by linear index; `None` marks a point over the
/// memory budget.
type Cache = BTreeMap<usize, Option<ParetoPoint>>;

impl Ctx<'_> {
    fn score(&self, idx: GridIndex) -> Result<Option<ParetoPoint>> {
        let arch = self.space.config(idx)?;
        let mut p = ParetoPoint::evaluate(
            &arch,
            self.coeffs,
            &self.hw,
            self.workload,
            self.objective,
            self.precision,
            self.opts.latency_mode,
        )?;
        p.grid = Some(idx);
        if self.opts.memory_filter && p.memory > self.hw.memory_budget() {
            return Ok(None);
        }
        Ok(Some(p))
    }

    fn latency_of(&self, idx: GridIndex) -> Result<f64> {
        let arch = self.space.config(idx)?;
        Ok(objective_latency(&arch, self.workload, &self.hw, self.objective, self.opts.latency_mode))
    }

    /// Evaluates the not-yet-seen indices of `batch` and merges them in index order.
    fn evaluate(&self, batch: &BTreeSet<usize>, cache: &mut Cache) -> Result<(usize, usize)> {
        let todo: Vec<usize> = batch.iter().copied().filter(|i| !cache.contains_key(i)).collect();
        let grid = self.space.indices();
        let scored = self.opts.execution.map(&todo, |&i| self.score(grid[i]));
        let mut infeasible = 0;
        for (i, s) in todo.iter().zip(scored) {
            let s = s?;
            if s.is_none() {
                infeasible += 1;
            }
            cache.insert(*i, s);
        }
        Ok((todo.len(), infeasible))
    }
}

fn feasible(cache: &Cache) -> Vec<ParetoPoint> {
    cache.values().flatten().cloned().collect()
}

fn reference(points: &[ParetoPoint]) -> (f64, f64) {
    points
        .iter()
        .fold((0.0, 0.0), |(l, s), p| (f64::max(l, p.latency), f64::max(s, p.loss)))
}

fn frontier_keys(f: &Frontier, space: &SearchSpace) -> BTreeSet<usize> {
    f.points.iter().filter_map(|p| p.grid).map(|g| space.linear(g)).collect()
}

fn initial_batch(ctx: &Ctx, rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    let space = ctx.space;
    let shape = space.shape();
    let n = ctx.opts.initial.max(1);
    let to_idx = |u: &[f64]| -> GridIndex {
        let mut g = [0; 5];
        for k in 0..5 {
            g[k] = lhs::to_index(u[k], shape[k]);
        }
        g
    };
    let mut seen = BTreeSet::new();
    for u in lhs::unit_cube(n, 5, rng) {
        let mut key = space.linear(to_idx(&u));
        for _ in 0..10 {
            if !seen.contains(&key) {
                break;
            }
            let v: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            key = space.linear(to_idx(&v));
        }
        seen.insert(key);
    }
    seen
}

/// Up to `gap_k` unseen points per wide gap whose latency lands inside it.
fn gap_samples(ctx: &Ctx, f: &Frontier, cache: &Cache, rng: &mut ChaCha8Rng) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    if f.points.len() < 2 || ctx.opts.gap_k == 0 {
        return Ok(out);
    }
    let gaps: Vec<(f64, f64)> = f.points.windows(2).map(|w| (w[0].latency, w[1].latency)).collect();
    let mut widths: Vec<f64> = gaps.iter().map(|(a, b)| b - a).collect();
    widths.sort_by(f64::total_cmp);
    let median = widths[widths.len() / 2];
    let grid = ctx.space.indices();
    for (lo, hi) in gaps {
        if hi - lo <= median {
            continue;
        }
        let mut found = 0;
        for _ in 0..50 * ctx.opts.gap_k {
            if found == ctx.opts.gap_k {
                break;
            }
            let key = rng.random_range(0..grid.len());
            if cache.contains_key(&key) || out.contains(&key) {
                continue;
            }
            let t = ctx.latency_of(grid[key])?;
            if t > lo && t < hi {
                out.insert(key);
                found += 1;
            }
        }
    }
    Ok(out)
}

fn unseen_neighbors(f: &Frontier, space: &SearchSpace, cache: &Cache) -> BTreeSet<usize> {
    f.points
        .iter()
        .filter_map(|p| p.grid)
        .flat_map(|g| space.neighbors(g))
        .map(|g| space.linear(g))
        .filter(|k| !cache.contains_key(k))
        .collect()
}

fn finish(ctx: &Ctx, mut f: Frontier) -> Result<Frontier> {
    if ctx.opts.verify_full && ctx.opts.latency_mode != LatencyMode::Full {
        for p in &mut f.points {
            p.latency_full = Some(objective_latency(
                &p.arch,
                ctx.workload,
                &ctx.hw,
                ctx.objective,
                LatencyMode::Full,
            ));
        }
        let rescored: Vec<ParetoPoint> = f
            .points
            .iter()
            .map(|p| ParetoPoint {
                latency: p.latency_full.expect("set above"),
                ..p.clone()
            })
            .collect();
        f.full_mode_consistent = Some(build_frontier(&rescored)?.len() == f.points.len());
    }
    f.objective = Some(ctx.objective);
    f.precision = Some(ctx.precision);
    Ok(f)
}

fn context<'a>(
    space: &'a SearchSpace,
    coeffs: &'a ScalingLawCoefficients,
    hw: &HardwareSpec,
    workload: &'a WorkloadSpec,
    objective: Objective,
    precision: Precision,
    opts: &'a SearchOptions,
) -> Result<Ctx<'a>> {
    space.validate()?;
    coeffs.validate()?;
    Ok(Ctx {
        space,
        coeffs,
        hw: hw.with_precision(precision),
        workload,
        objective,
        precision,
        opts,
    })
}

fn no_feasible() -> Error {
    Error::Infeasible("every sampled architecture exceeds the memory budget".into())
}

/// Exact frontier by scoring every grid point.
pub fn enumerate_frontier(
    space: &SearchSpace,
    coeffs: &ScalingLawCoefficients,
    hw: &HardwareSpec,
    workload: &WorkloadSpec,
    objective: Objective,
    precision: Precision,
    opts: &SearchOptions,
) -> Result<Frontier> {
    let ctx = context(space, coeffs, hw, workload, objective, precision, opts)?;
    let mut cache = Cache::new();
    let all: BTreeSet<usize> = (0..space.size()).collect();
    let (evaluated, infeasible) = ctx.evaluate(&all, &mut cache)?;
    let pts = feasible(&cache);
    if pts.is_empty() {
        return Err(no_feasible());
    }
    let mut f = build_frontier(&pts)?;
    f.provenance.push(RoundStats {
        round: 0,
        kind: "enumerate",
        sampled: all.len(),
        evaluated,
        infeasible,
        new_frontier_points: f.len(),
        frontier_size: f.len(),
        hypervolume: hypervolume(&f.points, reference(&pts)),
    });
    finish(&ctx, f)
}

/// Adaptive frontier search, deterministic for a given seed.
///
/// After the stopping rule fires, neighbours of frontier points keep being
/// scored until every frontier point's grid neighbourhood has been seen.
pub fn search_pareto(
    space: &SearchSpace,
    coeffs: &ScalingLawCoefficients,
    hw: &HardwareSpec,
    workload: &WorkloadSpec,
    objective: Objective,
    precision: Precision,
    opts: &SearchOptions,
) -> Result<Frontier> {
    let ctx = context(space, coeffs, hw, workload, objective, precision, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cache = Cache::new();
    let mut provenance = Vec::new();

    let batch = initial_batch(&ctx, &mut rng);
    let (evaluated, infeasible) = ctx.evaluate(&batch, &mut cache)?;
    let pts = feasible(&cache);
    if pts.is_empty() {
        return Err(no_feasible());
    }
    let mut f = build_frontier(&pts)?;
    let mut hv = hypervolume(&f.points, reference(&pts));
    provenance.push(RoundStats {
        round: 0,
        kind: "latin_hypercube",
        sampled: batch.len(),
        evaluated,
        infeasible,
        new_frontier_points: f.len(),
        frontier_size: f.len(),
        hypervolume: hv,
    });

    let step = |kind: &'static str, batch: BTreeSet<usize>, cache: &mut Cache, f: &mut Frontier, hv: &mut f64| {
        let before = frontier_keys(f, space);
        let (evaluated, infeasible) = ctx.evaluate(&batch, cache)?;
        let pts = feasible(cache);
        *f = build_frontier(&pts)?;
        let added = frontier_keys(f, space).difference(&before).count();
        let new_hv = hypervolume(&f.points, reference(&pts));
        let change = if *hv > 0.0 { (new_hv - *hv).abs() / *hv } else { f64::INFINITY };
        *hv = new_hv;
        Ok::<_, Error>((
            RoundStats {
                round: 0,
                kind,
                sampled: batch.len(),
                evaluated,
                infeasible,
                new_frontier_points: added,
                frontier_size: f.len(),
                hypervolume: new_hv,
            },
            change,
        ))
    };

    for round in 1..=opts.max_rounds {
        let mut batch = gap_samples(&ctx, &f, &cache, &mut rng)?;
        batch.extend(unseen_neighbors(&f, space, &cache));
        if batch.is_empty() {
            break;
        }
        let (mut stats, change) = step("refine", batch, &mut cache, &mut f, &mut hv)?;
        stats.round = round;
        let added = stats.new_frontier_points;
        provenance.push(stats);
        if added == 0 || change < opts.hv_tolerance {
            break;
        }
    }

    loop {
        let batch = unseen_neighbors(&f, space, &cache);
        if batch.is_empty() {
            break;
        }
        let (mut stats, _) = step("neighbor_closure", batch, &mut cache, &mut f, &mut hv)?;
        stats.round = provenance.len();
        provenance.push(stats);
    }
    for (i, s) in provenance.iter_mut().enumerate() {
        s.round = i;
    }
    f.provenance = provenance;
    finish(&ctx, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (SearchSpace, HardwareSpec, WorkloadSpec) {
        let space = SearchSpace {
            depths: vec![4, 8, 12],
            widths: vec![512, 768, 1024],
            moe: vec![(1, 1), (8, 1)],
            kv_heads: vec![super::super::KvHeads::Count(1), super::super::KvHeads::FULL],
            ffn_ratios: vec![4.0],
            head_dim: 64,
            precisions: vec![Precision::Fp16],
        };
        let hw = HardwareSpec::new(1e14, 1e11, 1e10, 2.0, 2.0, 2.0).unwrap();
        (space, hw, WorkloadSpec::default())
    }

    #[test]
    fn small_space_matches_enumeration() {
        let (space, hw, w) = setup();
        let c = ScalingLawCoefficients::PAPER_APPENDIX_C;
        let opts = SearchOptions { initial: 8, ..Default::default() };
        let a = search_pareto(&space, &c, &hw, &w, Objective::Decode, Precision::Fp16, &opts).unwrap();
        let b = enumerate_frontier(&space, &c, &hw, &w, Objective::Decode, Precision::Fp16, &opts).unwrap();
        let key = |f: &Frontier| f.points.iter().map(|p| p.grid).collect::<Vec<_>>();
        assert_eq!(key(&a), key(&b));
        let hv: Vec<f64> = a.provenance.iter().map(|r| r.hypervolume).collect();
        assert!(hv.windows(2).all(|w| w[1] >= w[0]), "{hv:?}");
    }

    #[test]
    fn memory_filter_applies() {
        let (space, hw, w) = setup();
        let hw = hw.with_memory_budget(1.0).unwrap();
        let c = ScalingLawCoefficients::PAPER_APPENDIX_C;
        let r = search_pareto(&space, &c, &hw, &w, Objective::Decode, Precision::Fp16, &SearchOptions::default());
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }
}
