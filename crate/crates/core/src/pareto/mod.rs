//! Loss/latency Pareto frontiers over a discrete architecture grid.

pub mod lhs;
pub mod search;
pub mod space;

use std::io::Write;

use serde::Serialize;

use crate::arch::{cmp_theta, ArchitectureConfig, HardwareSpec, Precision, Theta, WorkloadSpec};
use crate::error::{Error, Result};
use crate::loss::{predict_loss, ScalingLawCoefficients};
use crate::roofline::{memory_footprint, objective_latency, LatencyMode, Objective};

pub use search::{enumerate_frontier, search_pareto, SearchOptions};
pub use space::{GridIndex, KvHeads, SearchSpace, DEFAULT_WIDTHS};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub arch: ArchitectureConfig,
    pub loss: f64,
    /// Seconds under `objective`, in the mode used for frontier membership.
    pub latency: f64,
    pub memory: f64,
    pub objective: Objective,
    pub precision: Precision,
    /// Same latency re-evaluated with every operator, when verified.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_full: Option<f64>,
    #[serde(skip)]
    pub grid: Option<GridIndex>,
}

impl ParetoPoint {
    pub fn new(
        arch: ArchitectureConfig,
        loss: f64,
        latency: f64,
        memory: f64,
        objective: Objective,
        precision: Precision,
    ) -> Result<Self> {
        if !(loss.is_finite() && loss > 0.0 && latency.is_finite() && latency > 0.0) {
            return Err(Error::InvalidInput(format!(
                "pareto points need finite positive loss and latency (got {loss}, {latency})"
            )));
        }
        Ok(ParetoPoint {
            arch,
            loss,
            latency,
            memory,
            objective,
            precision,
            latency_full: None,
            grid: None,
        })
    }

    /// Scores `arch` on hardware whose byte widths are set by `precision`.
    pub fn evaluate(
        arch: &ArchitectureConfig,
        coeffs: &ScalingLawCoefficients,
        hw: &HardwareSpec,
        workload: &WorkloadSpec,
        objective: Objective,
        precision: Precision,
        mode: LatencyMode,
    ) -> Result<Self> {
        let hw = hw.with_precision(precision);
        ParetoPoint::new(
            arch.clone(),
            predict_loss(arch, coeffs),
            objective_latency(arch, workload, &hw, objective, mode),
            memory_footprint(arch, &hw),
            objective,
            precision,
        )
    }

    fn theta(&self) -> [f64; 5] {
        Theta::from(&self.arch).as_array()
    }
}

/// Weak dominance with at least one strict inequality.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> Result<bool> {
    if a.objective != b.objective || a.precision != b.precision {
        return Err(Error::InvalidInput(format!(
            "cannot compare a {:?}/{} point with a {:?}/{} point",
            a.objective, a.precision, b.objective, b.precision
        )));
    }
    Ok(a.loss <= b.loss && a.latency <= b.latency && (a.loss < b.loss || a.latency < b.latency))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundStats {
    pub round: usize,
    pub kind: &'static str,
    pub sampled: usize,
    pub evaluated: usize,
    pub infeasible: usize,
    pub new_frontier_points: usize,
    pub frontier_size: usize,
    pub hypervolume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frontier {
    pub objective: Option<Objective>,
    pub precision: Option<Precision>,
    /// Non-dominated points, latency ascending, loss strictly descending.
    pub points: Vec<ParetoPoint>,
    pub dominated_count: usize,
    pub provenance: Vec<RoundStats>,
    /// Whether the frontier keeps every point when re-scored in full mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_mode_consistent: Option<bool>,
}

fn order(a: &ParetoPoint, b: &ParetoPoint) -> std::cmp::Ordering {
    a.latency
        .total_cmp(&b.latency)
        .then(a.loss.total_cmp(&b.loss))
        .then(a.memory.total_cmp(&b.memory))
        .then_with(|| cmp_theta(&a.theta(), &b.theta()))
}

/// Maximal non-dominated subset; among coincident points the one with the
/// smaller memory, then lexicographically smaller `θ`, is kept.
pub fn build_frontier(points: &[ParetoPoint]) -> Result<Frontier> {
    if let Some(first) = points.first() {
        if points
            .iter()
            .any(|p| p.objective != first.objective || p.precision != first.precision)
        {
            return Err(Error::InvalidInput(
                "frontier points must share one objective and precision".into(),
            ));
        }
    }
    let mut sorted: Vec<&ParetoPoint> = points.iter().collect();
    sorted.sort_by(|a, b| order(a, b));
    let mut kept = Vec::new();
    let mut best = f64::INFINITY;
    for p in sorted {
        if p.loss < best {
            best = p.loss;
            kept.push(p.clone());
        }
    }
    Ok(Frontier {
        objective: points.first().map(|p| p.objective),
        precision: points.first().map(|p| p.precision),
        dominated_count: points.len() - kept.len(),
        points: kept,
        provenance: Vec::new(),
        full_mode_consistent: None,
    })
}

/// Area dominated by `frontier` (latency ascending) inside the box bounded by
/// `reference = (latency, loss)`.
pub fn hypervolume(frontier: &[ParetoPoint], reference: (f64, f64)) -> f64 {
    let mut prev_loss = reference.1;
    let mut area = 0.0;
    for p in frontier {
        if p.latency >= reference.0 || p.loss >= prev_loss {
            continue;
        }
        area += (reference.0 - p.latency) * (prev_loss - p.loss);
        prev_loss = p.loss;
    }
    area
}

impl Frontier {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Positions where depth shrinks as the latency budget grows.
    pub fn depth_decreases(&self) -> usize {
        self.points
            .windows(2)
            .filter(|w| w[1].arch.layers() < w[0].arch.layers())
            .count()
    }

    /// Writes the frontier table, or only `latency_s,loss` when `two_column`.
    pub fn write_csv<W: Write>(&self, writer: W, two_column: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if two_column {
            w.write_record(["latency_s", "loss"])?;
        } else {
            w.write_record([
                "latency_s",
                "loss",
                "memory_bytes",
                "layers",
                "width",
                "ffn_ratio",
                "experts_total",
                "experts_active",
                "gqa",
                "precision",
            ])?;
        }
        for p in &self.points {
            let a = &p.arch;
            if two_column {
                w.write_record([p.latency.to_string(), p.loss.to_string()])?;
                continue;
            }
            let (e, k) = match a.experts() {
                Some(x) => (x.total.to_string(), x.active.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                p.latency.to_string(),
                p.loss.to_string(),
                p.memory.to_string(),
                a.layers().to_string(),
                a.width().to_string(),
                a.ffn_ratio().to_string(),
                e,
                k,
                a.gqa().to_string(),
                p.precision.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
