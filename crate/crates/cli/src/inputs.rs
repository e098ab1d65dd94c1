//! Loading JSON/CSV inputs and presets, with flag overrides.
//!
//! Files are parsed into the unvalidated record types first so that syntax
//! problems (exit 2) and invariant violations (exit 3) stay distinguishable.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use codesign::arch::{ArchitectureRecord, HardwareRecord, WorkloadRecord};
use codesign::loss::CoefficientsFile;
use codesign::pareto::SearchSpace;
use codesign::regimes::Targets;
use codesign::{presets, ArchitectureConfig, Error, HardwareSpec, Precision, Result, WorkloadSpec};
use serde::de::DeserializeOwned;

use crate::units::{self, Quantity};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn load_arch(path: &Path) -> Result<ArchitectureConfig> {
    read_json::<ArchitectureRecord>(path)?.try_into()
}

/// Preset name or path to a coefficients file.
pub fn load_coeffs(spec: &str) -> Result<CoefficientsFile> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = read(path)?;
        return CoefficientsFile::from_json(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{spec}: {m}")),
            other => other,
        });
    }
    if spec == presets::COEFFS_PAPER {
        return presets::coefficients(spec);
    }
    Err(Error::Io(format!(
        "'{spec}' is neither a readable file nor a coefficient preset (available: {})",
        presets::COEFFS_PAPER
    )))
}

pub fn load_space(path: Option<&Path>) -> Result<SearchSpace> {
    let space = match path {
        Some(p) => read_json(p)?,
        None => SearchSpace::default(),
    };
    space.validate()?;
    Ok(space)
}

pub fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

pub fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report types serialize");
    v.push(b'\n');
    v
}

#[derive(Debug, Clone, Args)]
pub struct CoeffsArgs {
    /// Coefficient preset name or path to a coefficients JSON file.
    #[arg(long, default_value = presets::COEFFS_PAPER)]
    pub coeffs: String,
}

#[derive(Debug, Clone, Args)]
pub struct HardwareArgs {
    /// Hardware preset name or JSON file. Without it, --peak-flops,
    /// --bandwidth and --memory are required.
    #[arg(long)]
    pub hardware: Option<String>,
    /// Peak compute, e.g. 10TOPS, 275TFLOPS or 1e13.
    #[arg(long)]
    pub peak_flops: Option<String>,
    /// Memory bandwidth, e.g. 50GB/s.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// Memory budget, e.g. 4GB.
    #[arg(long)]
    pub memory: Option<String>,
}

impl HardwareArgs {
    /// Base spec with flag overrides; byte widths default to fp16.
    pub fn resolve(&self) -> Result<HardwareSpec> {
        let base: Option<HardwareRecord> = match &self.hardware {
            Some(s) if Path::new(s).is_file() => Some(read_json(Path::new(s))?),
            Some(s) if s == presets::HARDWARE_PLACEHOLDER => Some(presets::hardware(s)?.into()),
            Some(s) => {
                return Err(Error::Io(format!(
                    "'{s}' is neither a readable file nor a hardware preset (available: {})",
                    presets::HARDWARE_PLACEHOLDER
                )))
            }
            None => None,
        };
        let flag = |v: &Option<String>, q| v.as_deref().map(|t| units::parse(q, t)).transpose();
        let peak = flag(&self.peak_flops, Quantity::Compute)?;
        let bw = flag(&self.bandwidth, Quantity::Bandwidth)?;
        let mem = flag(&self.memory, Quantity::Bytes)?;
        let record = match base {
            Some(mut r) => {
                r.peak_flops = peak.unwrap_or(r.peak_flops);
                r.bandwidth_bytes_per_s = bw.unwrap_or(r.bandwidth_bytes_per_s);
                r.memory_budget_bytes = mem.unwrap_or(r.memory_budget_bytes);
                r
            }
            None => {
                let missing: Vec<&str> = [("--peak-flops", peak), ("--bandwidth", bw), ("--memory", mem)]
                    .iter()
                    .filter(|(_, v)| v.is_none())
                    .map(|(n, _)| *n)
                    .collect();
                if !missing.is_empty() {
                    return Err(Error::Parse(format!(
                        "no --hardware given and missing {}",
                        missing.join(", ")
                    )));
                }
                let (b_w, b_a, b_kv) = Precision::Fp16.byte_widths();
                HardwareRecord {
                    peak_flops: peak.unwrap(),
                    bandwidth_bytes_per_s: bw.unwrap(),
                    memory_budget_bytes: mem.unwrap(),
                    bytes_weight: b_w,
                    bytes_activation: b_a,
                    bytes_kv: b_kv,
                }
            }
        };
        record.try_into()
    }
}

#[derive(Debug, Clone, Args)]
pub struct WorkloadArgs {
    /// Workload preset name or JSON file.
    #[arg(long, default_value = presets::WORKLOAD_VLA)]
    pub workload: String,
    #[arg(long)]
    pub batch: Option<u32>,
    #[arg(long)]
    pub seq_in: Option<u64>,
    #[arg(long)]
    pub seq_out: Option<u64>,
}

impl WorkloadArgs {
    pub fn resolve(&self) -> Result<WorkloadSpec> {
        let path = PathBuf::from(&self.workload);
        let mut r: WorkloadRecord = if path.is_file() {
            read_json(&path)?
        } else if self.workload == presets::WORKLOAD_VLA {
            presets::workload(&self.workload)?.into()
        } else {
            return Err(Error::Io(format!(
                "'{}' is neither a readable file nor a workload preset (available: {})",
                self.workload,
                presets::WORKLOAD_VLA
            )));
        };
        r.batch = self.batch.unwrap_or(r.batch);
        r.seq_in = self.seq_in.unwrap_or(r.seq_in);
        r.seq_out = self.seq_out.unwrap_or(r.seq_out);
        r.try_into()
    }
}

#[derive(Debug, Clone, Args)]
pub struct TargetArgs {
    /// Prefill latency target, e.g. 250ms.
    #[arg(long)]
    pub t_pre: Option<String>,
    /// Decode latency target, e.g. 100ms.
    #[arg(long)]
    pub t_dec: Option<String>,
    /// End-to-end target, split between the phases.
    #[arg(long)]
    pub t_total: Option<String>,
    /// Prefill share of --t-total, in (0, 1).
    #[arg(long)]
    pub split: Option<f64>,
}

impl TargetArgs {
    pub fn resolve(&self) -> Result<Targets> {
        let time = |v: &Option<String>| v.as_deref().map(|t| units::parse(Quantity::Time, t)).transpose();
        Ok(Targets {
            t_pre: time(&self.t_pre)?,
            t_dec: time(&self.t_dec)?,
            t_total: time(&self.t_total)?,
            split: self.split,
        })
    }
}
