//! Architecture, hardware and workload descriptions, plus the per-layer cost
//! coefficients that the latency, memory and theory code share.
//!
//! The coefficients normalise per-layer cost by `d²`:
//!
//! | coefficient | value                         | used for                         |
//! |-------------|-------------------------------|----------------------------------|
//! | `xi_f`      | `4 + 4/gqa + 6r`              | prefill FLOPs per token          |
//! | `xi_w_dec`  | `2 + 2/gqa + 3r`              | decode weight bytes per step     |
//! | `xi_w_eff`  | `xi_w_dec + 2·S̄·b_kv/(gqa·d·b_w)` | decode weight + KV-cache bytes |
//! | `xi_w_all`  | `2 + 2/gqa + 3r/ρ`            | stored weights (all experts)     |
//!
//! Embedding and LM-head parameters are not modelled.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Head dimension assumed when an architecture carries no explicit head
/// structure (used for the softmax/score terms of the full roofline).
pub const DEFAULT_HEAD_DIM: u32 = 64;

const STRUCTURE_RTOL: f64 = 1e-9;

/// Attention-projection part of the weight coefficients, `2 + 2/gqa`.
#[inline]
pub fn alpha_attn(gqa: f64) -> f64 {
    2.0 + 2.0 / gqa
}

#[inline]
pub fn xi_f(gqa: f64, r: f64) -> f64 {
    4.0 + 4.0 / gqa + 6.0 * r
}

#[inline]
pub fn xi_w_dec(gqa: f64, r: f64) -> f64 {
    2.0 + 2.0 / gqa + 3.0 * r
}

#[inline]
pub fn xi_w_all(gqa: f64, r: f64, rho: f64) -> f64 {
    2.0 + 2.0 / gqa + 3.0 * r / rho
}

/// KV-cache correction `δ = 2·S̄·b_kv / (gqa·d·b_w)`.
#[inline]
pub fn kv_correction(avg_context: f64, gqa: f64, width: f64, bytes_kv: f64, bytes_weight: f64) -> f64 {
    2.0 * avg_context * bytes_kv / (gqa * width * bytes_weight)
}

#[inline]
pub fn xi_w_eff(gqa: f64, r: f64, delta: f64) -> f64 {
    xi_w_dec(gqa, r) + delta
}

/// Average decode context `S̄ = S_in + (S_out + 1)/2`.
#[inline]
pub fn avg_context(seq_in: u64, seq_out: u64) -> f64 {
    seq_in as f64 + (seq_out as f64 + 1.0) / 2.0
}

fn rel_close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn serialize_integral<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.fract() == 0.0 && x.abs() < 9.0e15 {
        s.serialize_i64(*x as i64)
    } else {
        s.serialize_f64(*x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadStructure {
    pub n_heads: u32,
    pub n_kv_heads: u32,
    pub head_dim: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertStructure {
    pub total: u32,
    pub active: u32,
}

impl ExpertStructure {
    pub fn activation_rate(&self) -> f64 {
        self.active as f64 / self.total as f64
    }

    pub fn is_dense(&self) -> bool {
        self.total == 1
    }
}

/// Architecture decision vector `(l, d, r, ρ, gqa)` with optional discrete
/// head and expert structure.
///
/// `ffn_ratio` is the total expansion across the activated experts, so for an
/// MoE layer with `K` active experts of per-expert expansion `r_single`,
/// `ffn_ratio = K · r_single`. Layers and width are stored as reals so the
/// same type carries continuous optima and grid configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArchitectureRecord", into = "ArchitectureRecord")]
pub struct ArchitectureConfig {
    layers: f64,
    width: f64,
    ffn_ratio: f64,
    activation_rate: f64,
    gqa: f64,
    heads: Option<HeadStructure>,
    experts: Option<ExpertStructure>,
}

/// Flat JSON form of [`ArchitectureConfig`], before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureRecord {
    #[serde(serialize_with = "serialize_integral")]
    pub layers: f64,
    #[serde(serialize_with = "serialize_integral")]
    pub width: f64,
    pub ffn_ratio: f64,
    pub activation_rate: f64,
    pub gqa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_kv_heads: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_dim: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experts_total: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experts_active: Option<u32>,
}

impl TryFrom<ArchitectureRecord> for ArchitectureConfig {
    type Error = Error;

    fn try_from(r: ArchitectureRecord) -> Result<Self> {
        let heads = match (r.n_heads, r.n_kv_heads) {
            (Some(n_heads), Some(n_kv_heads)) => Some(HeadStructure { n_heads, n_kv_heads, head_dim: r.head_dim }),
            (None, None) if r.head_dim.is_none() => None,
            _ => {
                return Err(Error::InvalidArchitecture(
                    "n_heads and n_kv_heads must be given together (head_dim requires both)".into(),
                ))
            }
        };
        let experts = match (r.experts_total, r.experts_active) {
            (Some(total), Some(active)) => Some(ExpertStructure { total, active }),
            (None, None) => None,
            _ => {
                return Err(Error::InvalidArchitecture(
                    "experts_total and experts_active must be given together".into(),
                ))
            }
        };
        let arch = ArchitectureConfig {
            layers: r.layers,
            width: r.width,
            ffn_ratio: r.ffn_ratio,
            activation_rate: r.activation_rate,
            gqa: r.gqa,
            heads,
            experts,
        };
        arch.validate()?;
        Ok(arch)
    }
}

impl From<ArchitectureConfig> for ArchitectureRecord {
    fn from(a: ArchitectureConfig) -> Self {
        ArchitectureRecord {
            layers: a.layers,
            width: a.width,
            ffn_ratio: a.ffn_ratio,
            activation_rate: a.activation_rate,
            gqa: a.gqa,
            n_heads: a.heads.map(|h| h.n_heads),
            n_kv_heads: a.heads.map(|h| h.n_kv_heads),
            head_dim: a.heads.and_then(|h| h.head_dim),
            experts_total: a.experts.map(|e| e.total),
            experts_active: a.experts.map(|e| e.active),
        }
    }
}

/// Integer description of a grid architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteArchitecture {
    pub layers: u32,
    pub width: u32,
    pub n_heads: u32,
    pub n_kv_heads: u32,
    pub head_dim: u32,
    pub experts_total: u32,
    pub experts_active: u32,
    /// Expansion ratio of a single expert.
    pub ffn_ratio_per_expert: f64,
}

impl ArchitectureConfig {
    /// Continuous construction path used by the theory solvers.
    pub fn continuous(layers: f64, width: f64, ffn_ratio: f64, activation_rate: f64, gqa: f64) -> Result<Self> {
        let arch = ArchitectureConfig {
            layers,
            width,
            ffn_ratio,
            activation_rate,
            gqa,
            heads: None,
            experts: None,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Discrete construction path used by the Pareto search.
    pub fn discrete(spec: DiscreteArchitecture) -> Result<Self> {
        if spec.experts_total == 0 || spec.n_kv_heads == 0 || spec.n_heads == 0 || spec.head_dim == 0 {
            return Err(Error::InvalidArchitecture("head and expert counts must be >= 1".into()));
        }
        let arch = ArchitectureConfig {
            layers: spec.layers as f64,
            width: spec.width as f64,
            ffn_ratio: spec.experts_active as f64 * spec.ffn_ratio_per_expert,
            activation_rate: spec.experts_active as f64 / spec.experts_total as f64,
            gqa: spec.n_heads as f64 / spec.n_kv_heads as f64,
            heads: Some(HeadStructure {
                n_heads: spec.n_heads,
                n_kv_heads: spec.n_kv_heads,
                head_dim: Some(spec.head_dim),
            }),
            experts: Some(ExpertStructure {
                total: spec.experts_total,
                active: spec.experts_active,
            }),
        };
        arch.validate()?;
        Ok(arch)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArchitecture(msg));
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !(self.layers.is_finite() && self.layers >= 1.0) {
            return bad(format!("layers must be >= 1 (got {})", self.layers));
        }
        if !(self.width.is_finite() && self.width >= 1.0) {
            return bad(format!("width must be >= 1 (got {})", self.width));
        }
        if !finite_pos(self.ffn_ratio) {
            return bad(format!("ffn_ratio must be > 0 (got {})", self.ffn_ratio));
        }
        if !(finite_pos(self.activation_rate) && self.activation_rate <= 1.0) {
            return bad(format!("activation_rate must lie in (0, 1] (got {})", self.activation_rate));
        }
        if !(self.gqa.is_finite() && self.gqa >= 1.0) {
            return bad(format!("gqa must be >= 1 (got {})", self.gqa));
        }
        if let Some(e) = self.experts {
            if e.active == 0 || e.total == 0 {
                return bad("experts_total and experts_active must be >= 1".into());
            }
            if e.active > e.total {
                return bad(format!("experts_active ({}) exceeds experts_total ({})", e.active, e.total));
            }
            if !rel_close(self.activation_rate, e.activation_rate(), STRUCTURE_RTOL) {
                return bad(format!(
                    "activation_rate {} does not equal experts_active/experts_total = {}",
                    self.activation_rate,
                    e.activation_rate()
                ));
            }
        }
        if let Some(h) = self.heads {
            if h.n_kv_heads == 0 || h.n_heads == 0 {
                return bad("n_heads and n_kv_heads must be >= 1".into());
            }
            if h.n_kv_heads > h.n_heads {
                return bad(format!("n_kv_heads ({}) exceeds n_heads ({})", h.n_kv_heads, h.n_heads));
            }
            let ratio = h.n_heads as f64 / h.n_kv_heads as f64;
            if !rel_close(self.gqa, ratio, STRUCTURE_RTOL) {
                return bad(format!("gqa {} does not equal n_heads/n_kv_heads = {}", self.gqa, ratio));
            }
            if let Some(dh) = h.head_dim {
                if dh == 0 || !rel_close(self.width, (h.n_heads * dh) as f64, STRUCTURE_RTOL) {
                    return bad(format!(
                        "width {} does not equal n_heads*head_dim = {}",
                        self.width,
                        h.n_heads as u64 * dh as u64
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> f64 {
        self.layers
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn ffn_ratio(&self) -> f64 {
        self.ffn_ratio
    }

    pub fn activation_rate(&self) -> f64 {
        self.activation_rate
    }

    pub fn gqa(&self) -> f64 {
        self.gqa
    }

    pub fn heads(&self) -> Option<HeadStructure> {
        self.heads
    }

    pub fn experts(&self) -> Option<ExpertStructure> {
        self.experts
    }

    /// KV dimension `d_m = d / gqa`.
    pub fn kv_dim(&self) -> f64 {
        self.width / self.gqa
    }

    /// Query head count; derived from [`DEFAULT_HEAD_DIM`] when not given.
    pub fn n_heads(&self) -> f64 {
        match self.heads {
            Some(h) => h.n_heads as f64,
            None => self.width / DEFAULT_HEAD_DIM as f64,
        }
    }

    /// Per-expert expansion `r / K`; equals `r` for dense layers.
    pub fn ffn_ratio_per_expert(&self) -> f64 {
        match self.experts {
            Some(e) => self.ffn_ratio / e.active as f64,
            None => self.ffn_ratio,
        }
    }

    /// Copy with depth replaced (same structure).
    pub fn with_layers(&self, layers: f64) -> Result<Self> {
        let mut a = self.clone();
        a.layers = layers;
        a.validate()?;
        Ok(a)
    }

    pub fn alpha_attn(&self) -> f64 {
        alpha_attn(self.gqa)
    }

    pub fn xi_f(&self) -> f64 {
        xi_f(self.gqa, self.ffn_ratio)
    }

    pub fn xi_w_dec(&self) -> f64 {
        xi_w_dec(self.gqa, self.ffn_ratio)
    }

    pub fn xi_w_all(&self) -> f64 {
        xi_w_all(self.gqa, self.ffn_ratio, self.activation_rate)
    }

    pub fn kv_correction(&self, workload: &WorkloadSpec, hardware: &HardwareSpec) -> f64 {
        kv_correction(
            workload.avg_context(),
            self.gqa,
            self.width,
            hardware.bytes_kv,
            hardware.bytes_weight,
        )
    }

    pub fn xi_w_eff(&self, workload: &WorkloadSpec, hardware: &HardwareSpec) -> f64 {
        self.xi_w_dec() + self.kv_correction(workload, hardware)
    }

    /// Decode per-layer traffic coefficient `Γ = ξ_W^eff·d²·b_w` (bytes).
    pub fn gamma(&self, workload: &WorkloadSpec, hardware: &HardwareSpec) -> f64 {
        self.xi_w_eff(workload, hardware) * self.width * self.width * hardware.bytes_weight
    }

    /// Stored parameters (all experts), `l·ξ_W^all·d²`.
    pub fn total_params(&self) -> f64 {
        self.layers * self.xi_w_all() * self.width * self.width
    }

    /// Parameters touched per token, `l·ξ_W^dec·d²`.
    pub fn active_params(&self) -> f64 {
        self.layers * self.xi_w_dec() * self.width * self.width
    }

    /// Analytic partial derivatives of every coefficient.
    pub fn coefficient_partials(&self, workload: &WorkloadSpec, hardware: &HardwareSpec) -> CoefficientPartials {
        coefficient_partials(
            self.width,
            self.ffn_ratio,
            self.gqa,
            self.activation_rate,
            workload.avg_context(),
            hardware.bytes_kv,
            hardware.bytes_weight,
        )
    }

    /// `(l, d, r, ρ, gqa)` as an array, for distance and ordering purposes.
    pub fn theta(&self) -> [f64; 5] {
        [self.layers, self.width, self.ffn_ratio, self.activation_rate, self.gqa]
    }
}

/// Gradient of one coefficient with respect to `(r, gqa, ρ, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Partials {
    pub r: f64,
    pub gqa: f64,
    pub rho: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientPartials {
    pub xi_f: Partials,
    pub xi_w_dec: Partials,
    pub xi_w_eff: Partials,
    pub xi_w_all: Partials,
}

pub fn coefficient_partials(
    width: f64,
    r: f64,
    gqa: f64,
    rho: f64,
    avg_context: f64,
    bytes_kv: f64,
    bytes_weight: f64,
) -> CoefficientPartials {
    let g2 = gqa * gqa;
    let kv = 2.0 * avg_context * bytes_kv / bytes_weight;
    CoefficientPartials {
        xi_f: Partials { r: 6.0, gqa: -4.0 / g2, rho: 0.0, d: 0.0 },
        xi_w_dec: Partials { r: 3.0, gqa: -2.0 / g2, rho: 0.0, d: 0.0 },
        xi_w_eff: Partials {
            r: 3.0,
            gqa: -2.0 / g2 - kv / (g2 * width),
            rho: 0.0,
            d: -kv / (gqa * width * width),
        },
        xi_w_all: Partials {
            r: 3.0 / rho,
            gqa: -2.0 / g2,
            rho: -3.0 * r / (rho * rho),
            d: 0.0,
        },
    }
}

/// Weight/activation/KV byte widths for a numeric format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    Fp16,
    Int8,
}

impl Precision {
    /// `(b_w, b_a, b_kv)`.
    pub fn byte_widths(self) -> (f64, f64, f64) {
        match self {
            Precision::Fp32 => (4.0, 4.0, 4.0),
            Precision::Fp16 => (2.0, 2.0, 2.0),
            Precision::Int8 => (1.0, 1.0, 1.0),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Fp16 => "fp16",
            Precision::Int8 => "int8",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fp32" | "f32" => Ok(Precision::Fp32),
            "fp16" | "f16" | "bf16" => Ok(Precision::Fp16),
            "int8" | "i8" => Ok(Precision::Int8),
            other => Err(Error::InvalidInput(format!("unknown precision '{other}' (expected fp32, fp16, int8)"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Target hardware: peak compute, sustained bandwidth, model-memory budget
/// and byte widths. Units are FLOP/s, bytes/s and bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HardwareRecord", into = "HardwareRecord")]
pub struct HardwareSpec {
    pub(crate) peak_flops: f64,
    pub(crate) bandwidth: f64,
    pub(crate) memory_budget: f64,
    pub(crate) bytes_weight: f64,
    pub(crate) bytes_activation: f64,
    pub(crate) bytes_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareRecord {
    pub peak_flops: f64,
    pub bandwidth_bytes_per_s: f64,
    pub memory_budget_bytes: f64,
    pub bytes_weight: f64,
    pub bytes_activation: f64,
    pub bytes_kv: f64,
}

impl TryFrom<HardwareRecord> for HardwareSpec {
    type Error = Error;

    fn try_from(r: HardwareRecord) -> Result<Self> {
        HardwareSpec::new(
            r.peak_flops,
            r.bandwidth_bytes_per_s,
            r.memory_budget_bytes,
            r.bytes_weight,
            r.bytes_activation,
            r.bytes_kv,
        )
    }
}

impl From<HardwareSpec> for HardwareRecord {
    fn from(h: HardwareSpec) -> Self {
        HardwareRecord {
            peak_flops: h.peak_flops,
            bandwidth_bytes_per_s: h.bandwidth,
            memory_budget_bytes: h.memory_budget,
            bytes_weight: h.bytes_weight,
            bytes_activation: h.bytes_activation,
            bytes_kv: h.bytes_kv,
        }
    }
}

impl HardwareSpec {
    pub fn new(
        peak_flops: f64,
        bandwidth: f64,
        memory_budget: f64,
        bytes_weight: f64,
        bytes_activation: f64,
        bytes_kv: f64,
    ) -> Result<Self> {
        let fields = [
            ("peak_flops", peak_flops),
            ("bandwidth_bytes_per_s", bandwidth),
            ("memory_budget_bytes", memory_budget),
            ("bytes_weight", bytes_weight),
            ("bytes_activation", bytes_activation),
            ("bytes_kv", bytes_kv),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidHardware(format!("{name} must be finite and > 0 (got {v})")));
            }
        }
        Ok(HardwareSpec {
            peak_flops,
            bandwidth,
            memory_budget,
            bytes_weight,
            bytes_activation,
            bytes_kv,
        })
    }

    /// Convenience constructor taking byte widths from a precision preset.
    pub fn with_precision_widths(peak_flops: f64, bandwidth: f64, memory_budget: f64, precision: Precision) -> Result<Self> {
        let (w, a, kv) = precision.byte_widths();
        HardwareSpec::new(peak_flops, bandwidth, memory_budget, w, a, kv)
    }

    /// Same device with byte widths replaced by `precision`.
    pub fn with_precision(&self, precision: Precision) -> Self {
        let (w, a, kv) = precision.byte_widths();
        HardwareSpec {
            bytes_weight: w,
            bytes_activation: a,
            bytes_kv: kv,
            ..self.clone()
        }
    }

    pub fn with_memory_budget(&self, memory_budget: f64) -> Result<Self> {
        HardwareSpec::new(
            self.peak_flops,
            self.bandwidth,
            memory_budget,
            self.bytes_weight,
            self.bytes_activation,
            self.bytes_kv,
        )
    }

    /// Scales compute, bandwidth and memory by a common factor.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        HardwareSpec::new(
            self.peak_flops * factor,
            self.bandwidth * factor,
            self.memory_budget * factor,
            self.bytes_weight,
            self.bytes_activation,
            self.bytes_kv,
        )
    }

    pub fn peak_flops(&self) -> f64 {
        self.peak_flops
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn memory_budget(&self) -> f64 {
        self.memory_budget
    }

    pub fn bytes_weight(&self) -> f64 {
        self.bytes_weight
    }

    pub fn bytes_activation(&self) -> f64 {
        self.bytes_activation
    }

    pub fn bytes_kv(&self) -> f64 {
        self.bytes_kv
    }

    /// Ridge point of the roofline, FLOPs per byte.
    pub fn ridge_intensity(&self) -> f64 {
        self.peak_flops / self.bandwidth
    }
}

/// Batch size and input/output token counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WorkloadRecord", into = "WorkloadRecord")]
pub struct WorkloadSpec {
    batch: u32,
    seq_in: u64,
    seq_out: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadRecord {
    pub batch: u32,
    pub seq_in: u64,
    pub seq_out: u64,
}

impl TryFrom<WorkloadRecord> for WorkloadSpec {
    type Error = Error;

    fn try_from(r: WorkloadRecord) -> Result<Self> {
        WorkloadSpec::new(r.batch, r.seq_in, r.seq_out)
    }
}

impl From<WorkloadSpec> for WorkloadRecord {
    fn from(w: WorkloadSpec) -> Self {
        WorkloadRecord {
            batch: w.batch,
            seq_in: w.seq_in,
            seq_out: w.seq_out,
        }
    }
}

impl Default for WorkloadSpec {
    /// Batch 1, 1,024 input tokens, 16 output tokens.
    fn default() -> Self {
        WorkloadSpec {
            batch: 1,
            seq_in: 1024,
            seq_out: 16,
        }
    }
}

impl WorkloadSpec {
    pub fn new(batch: u32, seq_in: u64, seq_out: u64) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidWorkload("batch must be >= 1".into()));
        }
        if seq_in + seq_out == 0 {
            return Err(Error::InvalidWorkload("seq_in + seq_out must be >= 1".into()));
        }
        Ok(WorkloadSpec { batch, seq_in, seq_out })
    }

    pub fn batch(&self) -> u32 {
        self.batch
    }

    pub fn seq_in(&self) -> u64 {
        self.seq_in
    }

    pub fn seq_out(&self) -> u64 {
        self.seq_out
    }

    pub fn avg_context(&self) -> f64 {
        avg_context(self.seq_in, self.seq_out)
    }
}

/// Plain continuous decision vector, unvalidated. Used inside solvers where
/// iterates may briefly leave the valid region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub l: f64,
    pub d: f64,
    pub r: f64,
    pub rho: f64,
    pub gqa: f64,
}

impl Theta {
    pub fn new(l: f64, d: f64, r: f64, rho: f64, gqa: f64) -> Self {
        Theta { l, d, r, rho, gqa }
    }

    pub fn to_arch(&self) -> Result<ArchitectureConfig> {
        ArchitectureConfig::continuous(self.l, self.d, self.r, self.rho, self.gqa)
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.l, self.d, self.r, self.rho, self.gqa]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Theta::new(a[0], a[1], a[2], a[3], a[4])
    }
}

impl From<&ArchitectureConfig> for Theta {
    fn from(a: &ArchitectureConfig) -> Self {
        Theta::from_array(a.theta())
    }
}

fn log_distance(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.ln() - y.ln()).powi(2)).sum()
}

/// Nearest candidate to `theta` in log-space over `(l, d, r, ρ, gqa)`.
///
/// Ties break toward the smaller stored parameter count, then lexicographic
/// `θ`. Returns `None` for an empty candidate set.
pub fn snap_to_grid<'a, I>(theta: &ArchitectureConfig, candidates: I) -> Option<ArchitectureConfig>
where
    I: IntoIterator<Item = &'a ArchitectureConfig>,
{
    let target = theta.theta();
    let mut best: Option<(f64, &ArchitectureConfig)> = None;
    for c in candidates {
        let dist = log_distance(&target, &c.theta());
        best = match best {
            None => Some((dist, c)),
            Some((bd, b)) => {
                let ord = if (dist - bd).abs() <= 1e-12 * bd.max(1e-300) {
                    c.total_params()
                        .total_cmp(&b.total_params())
                        .then_with(|| cmp_theta(&c.theta(), &b.theta()))
                } else {
                    dist.total_cmp(&bd)
                };
                if ord == Ordering::Less {
                    Some((dist, c))
                } else {
                    Some((bd, b))
                }
            }
        };
    }
    best.map(|(_, c)| c.clone())
}

pub(crate) fn cmp_theta(a: &[f64; 5], b: &[f64; 5]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hw() -> HardwareSpec {
        HardwareSpec::new(1e12, 1e11, 8e9, 2.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(xi_f(1.0, 4.0), 32.0);
        assert_eq!(xi_f(8.0, 0.0), 4.5);
        assert_eq!(xi_w_dec(1.0, 4.0), 16.0);
        assert_relative_eq!(xi_w_dec(2.0, 8.0 / 3.0), 11.0, max_relative = 1e-15);
        assert_eq!(xi_w_all(1.0, 4.0, 0.25), 52.0);
        assert_eq!(xi_w_all(4.0, 2.0, 1.0), 8.5);
        assert_eq!(xi_w_all(4.0, 2.0, 1.0), xi_w_dec(4.0, 2.0));
        // ξ_W^all blows up as ρ → 0⁺
        let mut prev = xi_w_all(2.0, 1.0, 1.0);
        for k in 1..20 {
            let next = xi_w_all(2.0, 1.0, 0.5f64.powi(k));
            assert!(next > prev);
            prev = next;
        }
    }

    #[test]
    fn xi_w_eff_example() {
        // gqa=1, r=4, d=1024, b_kv=b_w=2, S_in=1024, S_out=16
        let arch = ArchitectureConfig::continuous(16.0, 1024.0, 4.0, 1.0, 1.0).unwrap();
        let w = WorkloadSpec::new(1, 1024, 16).unwrap();
        let h = hw();
        assert_eq!(w.avg_context(), 1032.5);
        let delta = arch.kv_correction(&w, &h);
        // δ = 2·1032.5/1024 = 2.016601562…
        assert_relative_eq!(delta, 2.0166015625, max_relative = 1e-15);
        assert_relative_eq!(arch.xi_w_eff(&w, &h), 18.0166015625, max_relative = 1e-15);
        // δ ∝ 1/gqa
        let arch2 = ArchitectureConfig::continuous(16.0, 1024.0, 4.0, 1.0, 2.0).unwrap();
        assert_relative_eq!(arch2.kv_correction(&w, &h), delta / 2.0, max_relative = 1e-15);
        // δ = 0 limit
        assert_eq!(xi_w_eff(1.0, 4.0, 0.0), xi_w_dec(1.0, 4.0));
    }

    #[test]
    fn partials_examples() {
        let p = coefficient_partials(1024.0, 1.0, 2.0, 0.5, 100.0, 2.0, 2.0);
        assert_eq!(p.xi_w_all.rho, -12.0);
        assert_eq!(p.xi_f.rho, 0.0);
        assert_eq!(p.xi_w_dec.rho, 0.0);
        assert_eq!(p.xi_f.r, 6.0);
        assert_eq!(p.xi_w_all.r, 6.0);
    }

    #[test]
    fn avg_context_identity() {
        for s_in in [0u64, 1, 7, 1024] {
            for s_out in 1u64..40 {
                let sum: u64 = (1..=s_out).map(|t| s_in + t).sum();
                assert_eq!(sum as f64, s_out as f64 * avg_context(s_in, s_out));
            }
        }
    }

    #[test]
    fn validation_rejects_bad_structures() {
        assert!(ArchitectureConfig::continuous(16.0, 1024.0, 4.0, 0.0, 1.0).is_err());
        assert!(ArchitectureConfig::continuous(16.0, 1024.0, 4.0, 1.5, 1.0).is_err());
        assert!(ArchitectureConfig::continuous(16.0, 1024.0, 0.0, 1.0, 1.0).is_err());
        assert!(ArchitectureConfig::continuous(0.0, 1024.0, 4.0, 1.0, 1.0).is_err());
        assert!(ArchitectureConfig::continuous(16.0, 1024.0, 4.0, 1.0, 0.5).is_err());

        let rec = |rho: f64, e: Option<(u32, u32)>, h: Option<(u32, u32, u32)>| ArchitectureRecord {
            layers: 8.0,
            width: 1024.0,
            ffn_ratio: 4.0,
            activation_rate: rho,
            gqa: 4.0,
            n_heads: h.map(|x| x.0),
            n_kv_heads: h.map(|x| x.1),
            head_dim: h.map(|x| x.2),
            experts_total: e.map(|x| x.0),
            experts_active: e.map(|x| x.1),
        };
        assert!(ArchitectureConfig::try_from(rec(0.25, Some((8, 2)), Some((16, 4, 64)))).is_ok());
        // ρ ≠ K/E
        assert!(ArchitectureConfig::try_from(rec(0.5, Some((8, 2)), None)).is_err());
        // K > E
        assert!(ArchitectureConfig::try_from(rec(1.0, Some((1, 2)), None)).is_err());
        // gqa ≠ n_h/n_kv
        assert!(ArchitectureConfig::try_from(rec(1.0, None, Some((16, 8, 64)))).is_err());
        // d ≠ n_h·d_h
        assert!(ArchitectureConfig::try_from(rec(1.0, None, Some((16, 4, 128)))).is_err());
    }

    #[test]
    fn json_round_trip_uses_integers_for_integral_sizes() {
        let a = ArchitectureConfig::discrete(DiscreteArchitecture {
            layers: 12,
            width: 1024,
            n_heads: 16,
            n_kv_heads: 4,
            head_dim: 64,
            experts_total: 8,
            experts_active: 2,
            ffn_ratio_per_expert: 1.5,
        })
        .unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert!(s.contains("\"layers\":12"), "{s}");
        assert!(s.contains("\"width\":1024"), "{s}");
        let back: ArchitectureConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(a, back);
        assert_eq!(back.ffn_ratio(), 3.0);
        assert_eq!(back.ffn_ratio_per_expert(), 1.5);
    }

    #[test]
    fn snap_prefers_nearest_then_smaller() {
        let c1 = ArchitectureConfig::continuous(8.0, 1024.0, 4.0, 1.0, 1.0).unwrap();
        let c2 = ArchitectureConfig::continuous(16.0, 1024.0, 4.0, 1.0, 1.0).unwrap();
        let t = ArchitectureConfig::continuous(10.0, 1024.0, 4.0, 1.0, 1.0).unwrap();
        assert_eq!(snap_to_grid(&t, [&c1, &c2]).unwrap(), c1);
        // equidistant in log space: √(8·16) → tie → smaller parameter count
        let mid = ArchitectureConfig::continuous((8.0f64 * 16.0).sqrt(), 1024.0, 4.0, 1.0, 1.0).unwrap();
        assert_eq!(snap_to_grid(&mid, [&c2, &c1]).unwrap(), c1);
        assert!(snap_to_grid(&mid, std::iter::empty()).is_none());
    }
}
