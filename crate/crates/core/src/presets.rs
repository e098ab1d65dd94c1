//! Built-in presets, embedded from the repository's `presets/` directory.
//!
//! The hardware preset holds placeholder numbers; see `presets/README.md`.

use crate::arch::{HardwareSpec, WorkloadSpec};
use crate::error::{Error, Result};
use crate::loss::{CoefficientsFile, ScalingLawCoefficients};

pub const COEFFS_PAPER: &str = "paper-appendix-c";
pub const HARDWARE_PLACEHOLDER: &str = "jetson-orin-like";
pub const WORKLOAD_VLA: &str = "vla-workload";

const COEFFS_PAPER_JSON: &str = include_str!("../../../presets/paper-appendix-c.coeffs.json");
const HARDWARE_PLACEHOLDER_JSON: &str = include_str!("../../../presets/jetson-orin-like.hardware.json");
const WORKLOAD_VLA_JSON: &str = include_str!("../../../presets/vla-workload.json");

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn coefficients(name: &str) -> Result<CoefficientsFile> {
    match name {
        COEFFS_PAPER => CoefficientsFile::from_json(COEFFS_PAPER_JSON),
        _ => Err(Error::InvalidInput(format!("unknown coefficient preset '{name}'"))),
    }
}

pub fn paper_coefficients() -> ScalingLawCoefficients {
    ScalingLawCoefficients::PAPER_APPENDIX_C
}

pub fn hardware(name: &str) -> Result<HardwareSpec> {
    match name {
        HARDWARE_PLACEHOLDER => parse(HARDWARE_PLACEHOLDER_JSON),
        _ => Err(Error::InvalidInput(format!("unknown hardware preset '{name}'"))),
    }
}

pub fn workload(name: &str) -> Result<WorkloadSpec> {
    match name {
        WORKLOAD_VLA => parse(WORKLOAD_VLA_JSON),
        _ => Err(Error::InvalidInput(format!("unknown workload preset '{name}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_files_parse() {
        assert_eq!(coefficients(COEFFS_PAPER).unwrap().coefficients, paper_coefficients());
        assert_eq!(workload(WORKLOAD_VLA).unwrap(), WorkloadSpec::default());
        assert_eq!(hardware(HARDWARE_PLACEHOLDER).unwrap().bytes_weight(), 2.0);
        assert!(hardware("nope").is_err());
    }
}
