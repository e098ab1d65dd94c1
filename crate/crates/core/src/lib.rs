//! Loss, latency and memory models for hardware co-designed language models.
//!
//! * [`arch`]: architecture/hardware/workload types and cost coefficients.
//! * [`loss`] and [`fit`]: the parametric loss law and its least-squares fitter.
//! * [`roofline`]: per-operator FLOPs/bytes and phase latencies.
//! * [`regimes`]: budget normalisation and constraint-regime classification.
//! * [`closed_form`]: per-regime optimal architectures and a numerical oracle.
//! * [`pareto`]: loss/latency frontier construction over a discrete space.

pub mod arch;
pub mod closed_form;
pub mod error;
pub mod exec;
pub mod fit;
pub mod loss;
pub mod pareto;
pub mod presets;
pub mod regimes;
pub mod roofline;

pub use arch::{ArchitectureConfig, HardwareSpec, Precision, Theta, WorkloadSpec};
pub use error::{Error, Result};
pub use exec::Execution;
pub use loss::ScalingLawCoefficients;
