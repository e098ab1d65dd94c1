//! Separable loss law over `(l, d, r, ρ, gqa)`:
//!
//! ```text
//! L = κ_l/l^α_l + κ_ρ·ρ^α_ρ/(r^α_r·d^β_1) + κ_d/(r^α_r·d^β_2) + κ_m/d_m^α_m + L_∞
//! ```
//!
//! with `d_m = d/gqa`.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureConfig, Theta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingLawCoefficients {
    pub kappa_l: f64,
    pub kappa_rho: f64,
    pub kappa_d: f64,
    pub kappa_m: f64,
    pub alpha_l: f64,
    pub alpha_rho: f64,
    pub alpha_r: f64,
    pub alpha_m: f64,
    pub beta_1: f64,
    pub beta_2: f64,
    pub l_inf: f64,
}

impl ScalingLawCoefficients {
    /// Published fit over dense and MoE runs.
    pub const PAPER_APPENDIX_C: ScalingLawCoefficients = ScalingLawCoefficients {
        kappa_l: 9.96,
        kappa_rho: 0.031,
        kappa_d: 500.0,
        kappa_m: 0.20,
        alpha_l: 1.63,
        alpha_rho: 1.09,
        alpha_r: 0.17,
        alpha_m: 0.05,
        beta_1: -0.33,
        beta_2: 0.97,
        l_inf: 2.53,
    };

    pub fn validate(&self) -> Result<()> {
        let kappas = [
            ("kappa_l", self.kappa_l),
            ("kappa_rho", self.kappa_rho),
            ("kappa_d", self.kappa_d),
            ("kappa_m", self.kappa_m),
        ];
        for (name, k) in kappas {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::InvalidCoefficients(format!("{name} must be > 0 (got {k})")));
            }
        }
        let exps = [
            ("alpha_l", self.alpha_l),
            ("alpha_rho", self.alpha_rho),
            ("alpha_r", self.alpha_r),
            ("alpha_m", self.alpha_m),
            ("beta_1", self.beta_1),
            ("beta_2", self.beta_2),
        ];
        for (name, e) in exps {
            if !e.is_finite() {
                return Err(Error::InvalidCoefficients(format!("{name} must be finite")));
            }
        }
        if !(self.l_inf.is_finite() && self.l_inf >= 0.0) {
            return Err(Error::InvalidCoefficients(format!("l_inf must be >= 0 (got {})", self.l_inf)));
        }
        Ok(())
    }

    /// The memory-only optimum needs `α_ρ > α_r` to exist.
    pub fn sparsity_optimum_exists(&self) -> bool {
        self.alpha_rho > self.alpha_r
    }

    /// Parameter vector in a fixed order (κ's first, then exponents, then `L_∞`).
    pub fn to_array(&self) -> [f64; 11] {
        [
            self.kappa_l,
            self.kappa_rho,
            self.kappa_d,
            self.kappa_m,
            self.alpha_l,
            self.alpha_rho,
            self.alpha_r,
            self.alpha_m,
            self.beta_1,
            self.beta_2,
            self.l_inf,
        ]
    }

    pub fn from_array(p: [f64; 11]) -> Self {
        ScalingLawCoefficients {
            kappa_l: p[0],
            kappa_rho: p[1],
            kappa_d: p[2],
            kappa_m: p[3],
            alpha_l: p[4],
            alpha_rho: p[5],
            alpha_r: p[6],
            alpha_m: p[7],
            beta_1: p[8],
            beta_2: p[9],
            l_inf: p[10],
        }
    }
}

/// Coefficients plus provenance metadata, the on-disk JSON shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientsFile {
    #[serde(flatten)]
    pub coefficients: ScalingLawCoefficients,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub fitted_on: u64,
}

impl CoefficientsFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: CoefficientsFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        f.coefficients.validate()?;
        Ok(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTerms {
    pub depth: f64,
    pub sparsity: f64,
    pub capacity: f64,
    pub attention: f64,
    pub irreducible: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.depth + self.sparsity + self.capacity + self.attention + self.irreducible
    }
}

/// Gradient of the loss with respect to each decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossGradient {
    pub l: f64,
    pub d: f64,
    pub r: f64,
    pub rho: f64,
    pub gqa: f64,
}

impl LossGradient {
    pub fn as_array(&self) -> [f64; 5] {
        [self.l, self.d, self.r, self.rho, self.gqa]
    }
}

pub fn loss_terms(t: &Theta, c: &ScalingLawCoefficients) -> LossTerms {
    let r_pow = t.r.powf(-c.alpha_r);
    LossTerms {
        depth: c.kappa_l * t.l.powf(-c.alpha_l),
        sparsity: c.kappa_rho * t.rho.powf(c.alpha_rho) * r_pow * t.d.powf(-c.beta_1),
        capacity: c.kappa_d * r_pow * t.d.powf(-c.beta_2),
        // κ_m/d_m^α_m with d_m = d/gqa, equivalently κ_m·gqa^α_m/d^α_m
        attention: c.kappa_m * (t.gqa / t.d).powf(c.alpha_m),
        irreducible: c.l_inf,
    }
}

#[inline]
pub fn loss_at(t: &Theta, c: &ScalingLawCoefficients) -> f64 {
    loss_terms(t, c).total()
}

pub fn predict_loss(arch: &ArchitectureConfig, c: &ScalingLawCoefficients) -> f64 {
    loss_at(&Theta::from(arch), c)
}

/// Aggregate FFN-ratio sensitivity `D̃ = κ_ρ·ρ^α_ρ·d^(β_2−β_1) + κ_d`.
pub fn d_tilde(rho: f64, d: f64, c: &ScalingLawCoefficients) -> f64 {
    c.kappa_rho * rho.powf(c.alpha_rho) * d.powf(c.beta_2 - c.beta_1) + c.kappa_d
}

pub fn loss_gradient(t: &Theta, c: &ScalingLawCoefficients) -> LossGradient {
    let terms = loss_terms(t, c);
    LossGradient {
        l: -c.alpha_l * terms.depth / t.l,
        d: -(c.beta_1 * terms.sparsity + c.beta_2 * terms.capacity + c.alpha_m * terms.attention) / t.d,
        r: -c.alpha_r * (terms.sparsity + terms.capacity) / t.r,
        rho: c.alpha_rho * terms.sparsity / t.rho,
        gqa: c.alpha_m * terms.attention / t.gqa,
    }
}
