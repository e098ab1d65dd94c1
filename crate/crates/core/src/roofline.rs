//! Roofline cost model for one transformer layer and the whole model.
//!
//! Each operator costs `max(flops/π, bytes/β)`. Prefill runs all `S_in`
//! tokens at once; decode step `t` (1-based) processes one token against a
//! context of `S_in + t` cached positions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureConfig, HardwareSpec, WorkloadSpec};
use crate::error::{Error, Result};

pub fn roofline_latency(flops: f64, bytes: f64, hw: &HardwareSpec) -> f64 {
    (flops / hw.peak_flops()).max(bytes / hw.bandwidth())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    QProj,
    KProj,
    VProj,
    OProj,
    QkMatmul,
    Softmax,
    SvMatmul,
    FfnGate,
    FfnUp,
    FfnDown,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::QProj,
        OpKind::KProj,
        OpKind::VProj,
        OpKind::OProj,
        OpKind::QkMatmul,
        OpKind::Softmax,
        OpKind::SvMatmul,
        OpKind::FfnGate,
        OpKind::FfnUp,
        OpKind::FfnDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::QProj => "q_proj",
            OpKind::KProj => "k_proj",
            OpKind::VProj => "v_proj",
            OpKind::OProj => "o_proj",
            OpKind::QkMatmul => "qk_matmul",
            OpKind::Softmax => "softmax",
            OpKind::SvMatmul => "sv_matmul",
            OpKind::FfnGate => "ffn_gate",
            OpKind::FfnUp => "ffn_up",
            OpKind::FfnDown => "ffn_down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorCost {
    pub op: OpKind,
    pub flops: f64,
    pub bytes_weights: f64,
    pub bytes_activations: f64,
    pub bytes_kv: f64,
    pub latency: f64,
}

impl OperatorCost {
    fn new(op: OpKind, flops: f64, bytes_weights: f64, bytes_activations: f64, bytes_kv: f64, hw: &HardwareSpec) -> Self {
        let latency = roofline_latency(flops, bytes_weights + bytes_activations + bytes_kv, hw);
        OperatorCost {
            op,
            flops,
            bytes_weights,
            bytes_activations,
            bytes_kv,
            latency,
        }
    }

    pub fn total_bytes(&self) -> f64 {
        self.bytes_weights + self.bytes_activations + self.bytes_kv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    /// 1-based decode step.
    Decode { step: u64 },
}

/// How phase latencies are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyMode {
    /// Dominant terms only: projection/FFN FLOPs for prefill, weight plus
    /// KV-cache traffic for decode, summed analytically over steps.
    #[default]
    #[serde(alias = "dominant")]
    ClosedForm,
    /// Same terms as `ClosedForm`, with decode summed step by step.
    PerStep,
    /// Every operator, each on its own roofline, every decode step.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Prefill,
    #[default]
    Decode,
    Total,
}

/// Per-layer operator costs for `s_q` new tokens attending over `s_kv`
/// positions.
fn layer_ops(arch: &ArchitectureConfig, batch: f64, s_q: f64, s_kv: f64, hw: &HardwareSpec) -> Vec<OperatorCost> {
    let d = arch.width();
    let g = arch.gqa();
    let r = arch.ffn_ratio();
    let nh = arch.n_heads();
    let dm = arch.kv_dim();
    let (bw, ba, bkv) = (hw.bytes_weight(), hw.bytes_activation(), hw.bytes_kv());
    let tokens = batch * s_q;
    let scores = batch * nh * s_q * s_kv;

    let q = OperatorCost::new(OpKind::QProj, 2.0 * tokens * d * d, d * d * bw, 2.0 * tokens * d * ba, 0.0, hw);
    let kv_proj = |op| OperatorCost::new(op, 2.0 * tokens * d * d / g, d * d * bw / g, 0.0, tokens * d * bkv / g, hw);
    let o = OperatorCost { op: OpKind::OProj, ..q };
    let qk = OperatorCost::new(
        OpKind::QkMatmul,
        2.0 * tokens * s_kv * d,
        0.0,
        tokens * d * ba + scores * ba,
        batch * s_kv * dm * bkv,
        hw,
    );
    let softmax = OperatorCost::new(OpKind::Softmax, 5.0 * scores, 0.0, 2.0 * scores * ba, 0.0, hw);
    let sv = OperatorCost::new(
        OpKind::SvMatmul,
        2.0 * tokens * s_kv * d,
        0.0,
        scores * ba + tokens * d * ba,
        batch * s_kv * dm * bkv,
        hw,
    );
    let ffn = |op| OperatorCost::new(op, 2.0 * tokens * r * d * d, r * d * d * bw, 0.0, 0.0, hw);
    vec![
        q,
        kv_proj(OpKind::KProj),
        kv_proj(OpKind::VProj),
        o,
        qk,
        softmax,
        sv,
        ffn(OpKind::FfnGate),
        ffn(OpKind::FfnUp),
        ffn(OpKind::FfnDown),
    ]
}

/// Per-layer operator costs for one phase.
pub fn per_operator_costs(
    arch: &ArchitectureConfig,
    workload: &WorkloadSpec,
    hw: &HardwareSpec,
    phase: Phase,
) -> Result<Vec<OperatorCost>> {
    let b = workload.batch() as f64;
    match phase {
        Phase::Prefill => {
            if workload.seq_in() == 0 {
                return Err(Error::InvalidInput("prefill requires seq_in >= 1".into()));
            }
            let s = workload.seq_in() as f64;
            Ok(layer_ops(arch, b, s, s, hw))
        }
        Phase::Decode { step } => {
            if step == 0 || step > workload.seq_out() {
                return Err(Error::InvalidInput(format!(
                    "decode step {step} outside 1..={}",
                    workload.seq_out()
                )));
            }
            Ok(layer_ops(arch, b, 1.0, (workload.seq_in() + step) as f64, hw))
        }
    }
}

fn sum_latency(ops: &[OperatorCost]) -> f64 {
    ops.iter().map(|o| o.latency).sum()
}

/// Prefill FLOPs of the projections and FFN, `l·B·S_in·d²·ξ_F`.
pub fn prefill_dominant_flops(arch: &ArchitectureConfig, workload: &WorkloadSpec) -> f64 {
    let d = arch.width();
    arch.layers() * workload.batch() as f64 * workload.seq_in() as f64 * d * d * arch.xi_f()
}

pub fn prefill_latency(arch: &ArchitectureConfig, workload: &WorkloadSpec, hw: &HardwareSpec, mode: LatencyMode) -> f64 {
    if workload.seq_in() == 0 {
        return 0.0;
    }
    match mode {
        LatencyMode::ClosedForm | LatencyMode::PerStep => prefill_dominant_flops(arch, workload) / hw.peak_flops(),
        LatencyMode::Full => {
            let s = workload.seq_in() as f64;
            arch.layers() * sum_latency(&layer_ops(arch, workload.batch() as f64, s, s, hw))
        }
    }
}

/// Dominant decode traffic of step `t` for the whole model (bytes).
pub fn decode_step_bytes(arch: &ArchitectureConfig, workload: &WorkloadSpec, hw: &HardwareSpec, step: u64) -> f64 {
    let d = arch.width();
    let ctx = (workload.seq_in() + step) as f64;
    arch.layers()
        * (arch.xi_w_dec() * d * d * hw.bytes_weight()
            + 2.0 * ctx * d * hw.bytes_kv() / arch.gqa() * workload.batch() as f64)
}

/// Dominant decode traffic over all steps, `l·S_out·[ξ_W^dec·d²·b_w + 2·B·S̄·d·b_kv/gqa]`.
pub fn decode_total_bytes(arch: &ArchitectureConfig, workload: &WorkloadSpec, hw: &HardwareSpec) -> f64 {
    let d = arch.width();
    let s_out = workload.seq_out() as f64;
    arch.layers()
        * s_out
        * (arch.xi_w_dec() * d * d * hw.bytes_weight()
            + 2.0 * workload.batch() as f64 * workload.avg_context() * d * hw.bytes_kv() / arch.gqa())
}

pub fn decode_step_latency(
    arch: &ArchitectureConfig,
    workload: &WorkloadSpec,
    hw: &HardwareSpec,
    step: u64,
    mode: LatencyMode,
) -> Result<f64> {
    match mode {
        LatencyMode::ClosedForm | LatencyMode::PerStep => {
            if step == 0 || step > workload.seq_out() {
                return Err(Error::InvalidInput(format!(
                    "decode step {step} outside 1..={}",
                    workload.seq_out()
                )));
            }
            Ok(decode_step_bytes(arch, workload, hw, step) / hw.bandwidth())
        }
        LatencyMode::Full => {
            let ops = per_operator_costs(arch, workload, hw, Phase::Decode { step })?;
            Ok(arch.layers() * sum_latency(&ops))
        }
    }
}

pub fn decode_latency(arch: &ArchitectureConfig, workload: &WorkloadSpec, hw: &HardwareSpec, mode: LatencyMode) -> f64 {
    let s_out = workload.seq_out();
    if s_out == 0 {
        return 0.0;
    }
    match mode {
        LatencyMode::ClosedForm => decode_total_bytes(arch, workload, hw) / hw.bandwidth(),
        LatencyMode::PerStep => (1..=s_out)
            .map(|t| decode_step_bytes(arch, workload, hw, t) / hw.bandwidth())
            .sum(),
        LatencyMode::Full => {
            let b = workload.batch() as f64;
            let s_in = workload.seq_in();
            arch.layers()
                * (1..=s_out)
                    .map(|t| sum_latency(&layer_ops(arch, b, 1.0, (s_in + t) as f64, hw)))
                    .sum::<f64>()
        }
    }
}

pub fn total_latency(arch: &ArchitectureConfig, workload: &WorkloadSpec, hw: &HardwareSpec, mode: LatencyMode) -> f64 {
    prefill_latency(arch, workload, hw, mode) + decode_latency(arch, workload, hw, mode)
}

pub fn objective_latency(
    arch: &ArchitectureConfig,
    workload: &WorkloadSpec,
    hw: &HardwareSpec,
    objective: Objective,
    mode: LatencyMode,
) -> f64 {
    match objective {
        Objective::Prefill => prefill_latency(arch, workload, hw, mode),
        Objective::Decode => decode_latency(arch, workload, hw, mode),
        Objective::Total => total_latency(arch, workload, hw, mode),
    }
}

/// Stored weights of every layer and every expert, `l·ξ_W^all·d²·b_w`.
pub fn memory_footprint(arch: &ArchitectureConfig, hw: &HardwareSpec) -> f64 {
    arch.total_params() * hw.bytes_weight()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseKind {
    Prefill,
    DecodeStep { step: u64 },
    DecodeTotal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseBreakdown {
    pub phase: PhaseKind,
    pub layers: f64,
    /// Operator costs of one layer. For `DecodeTotal` each row is summed over
    /// steps, including its latency.
    pub per_layer: Vec<OperatorCost>,
    pub layer_latency: f64,
    pub total_latency: f64,
    pub total_flops: f64,
    pub total_bytes: f64,
}

fn breakdown_from(phase: PhaseKind, per_layer: Vec<OperatorCost>, layers: f64) -> PhaseBreakdown {
    let layer_latency = sum_latency(&per_layer);
    let flops: f64 = per_layer.iter().map(|o| o.flops).sum();
    let bytes: f64 = per_layer.iter().map(OperatorCost::total_bytes).sum();
    PhaseBreakdown {
        phase,
        layers,
        per_layer,
        layer_latency,
        total_latency: layers * layer_latency,
        total_flops: layers * flops,
        total_bytes: layers * bytes,
    }
}

pub fn phase_breakdown(
    arch: &ArchitectureConfig,
    workload: &WorkloadSpec,
    hw: &HardwareSpec,
    phase: Phase,
) -> Result<PhaseBreakdown> {
    let ops = per_operator_costs(arch, workload, hw, phase)?;
    let kind = match phase {
        Phase::Prefill => PhaseKind::Prefill,
        Phase::Decode { step } => PhaseKind::DecodeStep { step },
    };
    Ok(breakdown_from(kind, ops, arch.layers()))
}

/// All decode steps with per-operator rows accumulated across steps.
pub fn decode_total_breakdown(
    arch: &ArchitectureConfig,
    workload: &WorkloadSpec,
    hw: &HardwareSpec,
) -> Result<PhaseBreakdown> {
    if workload.seq_out() == 0 {
        return Err(Error::InvalidInput("decode requires seq_out >= 1".into()));
    }
    let b = workload.batch() as f64;
    let mut acc: Vec<OperatorCost> = Vec::new();
    for t in 1..=workload.seq_out() {
        let ops = layer_ops(arch, b, 1.0, (workload.seq_in() + t) as f64, hw);
        if acc.is_empty() {
            acc = ops;
        } else {
            for (a, o) in acc.iter_mut().zip(ops) {
                a.flops += o.flops;
                a.bytes_weights += o.bytes_weights;
                a.bytes_activations += o.bytes_activations;
                a.bytes_kv += o.bytes_kv;
                a.latency += o.latency;
            }
        }
    }
    Ok(breakdown_from(PhaseKind::DecodeTotal, acc, arch.layers()))
}

/// Latency summary plus per-operator detail for both phases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub mode: LatencyMode,
    pub prefill_latency_s: f64,
    pub decode_latency_s: f64,
    pub total_latency_s: f64,
    pub memory_bytes: f64,
    pub prefill: Option<PhaseBreakdown>,
    pub decode: Option<PhaseBreakdown>,
}

pub fn latency_report(
    arch: &ArchitectureConfig,
    workload: &WorkloadSpec,
    hw: &HardwareSpec,
    mode: LatencyMode,
) -> Result<LatencyReport> {
    let prefill = if workload.seq_in() > 0 {
        Some(phase_breakdown(arch, workload, hw, Phase::Prefill)?)
    } else {
        None
    };
    let decode = if workload.seq_out() > 0 {
        Some(decode_total_breakdown(arch, workload, hw)?)
    } else {
        None
    };
    let p = prefill_latency(arch, workload, hw, mode);
    let d = decode_latency(arch, workload, hw, mode);
    Ok(LatencyReport {
        mode,
        prefill_latency_s: p,
        decode_latency_s: d,
        total_latency_s: p + d,
        memory_bytes: memory_footprint(arch, hw),
        prefill,
        decode,
    })
}

/// Flat export row; figures are whole-model (per-layer × layers).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownRow {
    pub op: String,
    pub phase: String,
    pub flops: f64,
    pub bytes_w: f64,
    pub bytes_a: f64,
    pub bytes_kv: f64,
    pub latency_s: f64,
}

impl LatencyReport {
    pub fn rows(&self) -> Vec<BreakdownRow> {
        let mut out = Vec::new();
        let mut push = |b: &PhaseBreakdown, phase: &str| {
            let l = b.layers;
            for o in &b.per_layer {
                out.push(BreakdownRow {
                    op: o.op.name().to_string(),
                    phase: phase.to_string(),
                    flops: l * o.flops,
                    bytes_w: l * o.bytes_weights,
                    bytes_a: l * o.bytes_activations,
                    bytes_kv: l * o.bytes_kv,
                    latency_s: l * o.latency,
                });
            }
        };
        if let Some(b) = &self.prefill {
            push(b, "prefill");
        }
        if let Some(b) = &self.decode {
            push(b, "decode");
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hw(pi: f64, beta: f64) -> HardwareSpec {
        HardwareSpec::new(pi, beta, 1e12, 2.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn roofline_examples() {
        assert_eq!(roofline_latency(0.0, 1e9, &hw(1.0, 1e9)), 1.0);
        assert_eq!(roofline_latency(2e12, 0.0, &hw(1e12, 1.0)), 2.0);
        assert_eq!(roofline_latency(7.0, 3.0, &hw(7.0, 3.0)), 1.0);
    }

    #[test]
    fn unit_prefill() {
        // ξ_F = 32 at gqa=1, r=4
        let arch = ArchitectureConfig::continuous(1.0, 1.0, 4.0, 1.0, 1.0).unwrap();
        let w = WorkloadSpec::new(1, 1, 0).unwrap();
        assert_eq!(prefill_latency(&arch, &w, &hw(32.0, 1.0), LatencyMode::ClosedForm), 1.0);
    }

    #[test]
    fn decode_first_step_single_context() {
        let arch = ArchitectureConfig::continuous(2.0, 512.0, 4.0, 1.0, 2.0).unwrap();
        let w = WorkloadSpec::new(1, 0, 1).unwrap();
        let ops = per_operator_costs(&arch, &w, &hw(1e12, 1e11), Phase::Decode { step: 1 }).unwrap();
        let qk = ops.iter().find(|o| o.op == OpKind::QkMatmul).unwrap();
        assert_eq!(qk.flops, 2.0 * 512.0);
        let h = hw(1e12, 1e11);
        let expected = 2.0 / 1e11 * (arch.xi_w_dec() * 512.0 * 512.0 * 2.0 + 2.0 * 512.0 * 2.0 / 2.0);
        assert_relative_eq!(decode_latency(&arch, &w, &h, LatencyMode::ClosedForm), expected, max_relative = 1e-15);
        assert_relative_eq!(decode_latency(&arch, &w, &h, LatencyMode::PerStep), expected, max_relative = 1e-15);
    }

    #[test]
    fn step_validation() {
        let arch = ArchitectureConfig::continuous(2.0, 512.0, 4.0, 1.0, 2.0).unwrap();
        let w = WorkloadSpec::new(1, 4, 3).unwrap();
        let h = hw(1e12, 1e11);
        assert!(per_operator_costs(&arch, &w, &h, Phase::Decode { step: 0 }).is_err());
        assert!(per_operator_costs(&arch, &w, &h, Phase::Decode { step: 4 }).is_err());
        assert!(per_operator_costs(&arch, &w, &h, Phase::Decode { step: 3 }).is_ok());
        let w0 = WorkloadSpec::new(1, 0, 3).unwrap();
        assert!(per_operator_costs(&arch, &w0, &h, Phase::Prefill).is_err());
    }

    #[test]
    fn prefill_projection_flops_example() {
        // B=1, S_in=1024, d=2048, gqa=4, r=4 → ξ_F = 29
        let arch = ArchitectureConfig::continuous(1.0, 2048.0, 4.0, 1.0, 4.0).unwrap();
        assert_eq!(arch.xi_f(), 29.0);
        let w = WorkloadSpec::new(1, 1024, 0).unwrap();
        let ops = per_operator_costs(&arch, &w, &hw(1e12, 1e11), Phase::Prefill).unwrap();
        let proj: f64 = ops
            .iter()
            .filter(|o| !matches!(o.op, OpKind::QkMatmul | OpKind::Softmax | OpKind::SvMatmul))
            .map(|o| o.flops)
            .sum();
        assert_eq!(proj, 1024.0 * 2048.0 * 2048.0 * 29.0);
    }

    #[test]
    fn csv_export_has_expected_columns() {
        let arch = ArchitectureConfig::continuous(4.0, 256.0, 4.0, 1.0, 1.0).unwrap();
        let w = WorkloadSpec::new(1, 8, 2).unwrap();
        let rep = latency_report(&arch, &w, &hw(1e12, 1e11), LatencyMode::Full).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("op,phase,flops,bytes_w,bytes_a,bytes_kv,latency_s\n"));
        assert_eq!(text.lines().count(), 21);
        let row_sum: f64 = rep.rows().iter().map(|r| r.latency_s).sum();
        assert_relative_eq!(row_sum, rep.total_latency_s, max_relative = 1e-12);
    }
}
