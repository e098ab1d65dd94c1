//! Least-squares fitting of [`ScalingLawCoefficients`] to training runs.
//!
//! Levenberg–Marquardt with Marquardt diagonal scaling, run from several
//! starts. Prefactors are fitted as logarithms so they stay positive;
//! exponents and `L_∞` are box-bounded and projected after every step.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureConfig, Theta};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::loss::{predict_loss, ScalingLawCoefficients};
use crate::pareto::lhs;
use crate::pareto::SearchSpace;

const NPARAM: usize = 11;
const MIN_RECORDS: usize = NPARAM + 1;

const LO: [f64; NPARAM] = [-10.0, -10.0, -10.0, -10.0, -3.0, -3.0, -3.0, -3.0, -3.0, -3.0, 0.0];
const HI: [f64; NPARAM] = [10.0, 10.0, 10.0, 10.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 10.0];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRunRecord {
    pub arch: ArchitectureConfig,
    pub observed_loss: f64,
}

impl TrainingRunRecord {
    pub fn new(arch: ArchitectureConfig, observed_loss: f64) -> Result<Self> {
        if !(observed_loss.is_finite() && observed_loss > 0.0) {
            return Err(Error::InvalidInput(format!("observed loss must be > 0 (got {observed_loss})")));
        }
        Ok(TrainingRunRecord { arch, observed_loss })
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub seed: u64,
    /// Fraction of records held out for validation, in `[0, 1)`.
    pub holdout: f64,
    pub starts: usize,
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    /// First start; defaults to the published coefficients.
    pub initial: Option<ScalingLawCoefficients>,
    pub execution: Execution,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            seed: 0,
            holdout: 0.2,
            starts: 16,
            max_iterations: 500,
            rel_tolerance: 1e-12,
            initial: Some(ScalingLawCoefficients::PAPER_APPENDIX_C),
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residual {
    pub index: usize,
    pub split: Split,
    pub observed: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartSummary {
    pub start: usize,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub n_train: usize,
    pub n_validation: usize,
    pub train_sse: f64,
    pub train_r2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_r2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_rmse: Option<f64>,
    pub best_start: usize,
    pub iterations: usize,
    pub converged: bool,
    pub starts: Vec<StartSummary>,
    pub residuals: Vec<Residual>,
}

/// Precomputed logs of one observation.
#[derive(Clone, Copy)]
struct Obs {
    ln_l: f64,
    ln_d: f64,
    ln_r: f64,
    ln_rho: f64,
    ln_dm: f64,
    y: f64,
}

impl Obs {
    fn new(rec: &TrainingRunRecord) -> Self {
        let a = &rec.arch;
        Obs {
            ln_l: a.layers().ln(),
            ln_d: a.width().ln(),
            ln_r: a.ffn_ratio().ln(),
            ln_rho: a.activation_rate().ln(),
            ln_dm: a.kv_dim().ln(),
            y: rec.observed_loss,
        }
    }

    /// Model value and, optionally, its gradient in the internal parameterisation.
    #[inline]
    fn eval(&self, p: &[f64; NPARAM], grad: Option<&mut [f64]>) -> f64 {
        let t1 = (p[0] - p[4] * self.ln_l).exp();
        let t2 = (p[1] + p[5] * self.ln_rho - p[6] * self.ln_r - p[8] * self.ln_d).exp();
        let t3 = (p[2] - p[6] * self.ln_r - p[9] * self.ln_d).exp();
        let t4 = (p[3] - p[7] * self.ln_dm).exp();
        if let Some(g) = grad {
            g[0] = t1;
            g[1] = t2;
            g[2] = t3;
            g[3] = t4;
            g[4] = -self.ln_l * t1;
            g[5] = self.ln_rho * t2;
            g[6] = -self.ln_r * (t2 + t3);
            g[7] = -self.ln_dm * t4;
            g[8] = -self.ln_d * t2;
            g[9] = -self.ln_d * t3;
            g[10] = 1.0;
        }
        t1 + t2 + t3 + t4 + p[10]
    }
}

fn to_internal(c: &ScalingLawCoefficients) -> [f64; NPARAM] {
    let mut p = c.to_array();
    for v in p.iter_mut().take(4) {
        *v = v.ln();
    }
    p
}

fn from_internal(p: &[f64; NPARAM]) -> ScalingLawCoefficients {
    let mut a = *p;
    for v in a.iter_mut().take(4) {
        *v = v.exp();
    }
    ScalingLawCoefficients::from_array(a)
}

fn project(p: &mut [f64; NPARAM]) {
    for k in 0..NPARAM {
        p[k] = p[k].clamp(LO[k], HI[k]);
    }
}

fn sse(obs: &[Obs], p: &[f64; NPARAM]) -> f64 {
    obs.iter()
        .map(|o| {
            let e = o.eval(p, None) - o.y;
            e * e
        })
        .sum()
}

struct StartResult {
    p: [f64; NPARAM],
    sse: f64,
    iterations: usize,
    converged: bool,
}

fn levenberg_marquardt(obs: &[Obs], mut p: [f64; NPARAM], max_iter: usize, rtol: f64) -> StartResult {
    project(&mut p);
    let n = obs.len();
    let mut cur = sse(obs, &p);
    let mut lambda = 1e-3;
    let mut jac = DMatrix::<f64>::zeros(n, NPARAM);
    let mut res = DVector::<f64>::zeros(n);
    let mut row = [0.0; NPARAM];
    let mut converged = false;
    let mut iterations = 0;

    if !cur.is_finite() {
        return StartResult { p, sse: cur, iterations, converged };
    }

    while iterations < max_iter {
        iterations += 1;
        if cur == 0.0 {
            converged = true;
            break;
        }
        for (i, o) in obs.iter().enumerate() {
            res[i] = o.eval(&p, Some(&mut row)) - o.y;
            for k in 0..NPARAM {
                jac[(i, k)] = row[k];
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;

        let mut accepted = false;
        loop {
            let mut a = jtj.clone();
            for k in 0..NPARAM {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break;
                    }
                    continue;
                }
            };
            let mut trial = p;
            for k in 0..NPARAM {
                trial[k] += step[k];
            }
            project(&mut trial);
            let next = sse(obs, &trial);
            if next.is_finite() && next < cur {
                let rel = (cur - next) / cur;
                p = trial;
                cur = next;
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if rel < rtol {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            // no descent direction left at machine precision: stationary point
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    StartResult { p, sse: cur, iterations, converged }
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn check_coverage(records: &[TrainingRunRecord], what: &str) -> Result<()> {
    if records.len() < MIN_RECORDS {
        return Err(Error::InsufficientData(format!(
            "{what} has {} records; at least {MIN_RECORDS} are needed",
            records.len()
        )));
    }
    let count = |f: fn(&ArchitectureConfig) -> f64| distinct(records.iter().map(|r| f(&r.arch)));
    if count(ArchitectureConfig::layers) < 2 {
        return Err(Error::InsufficientData(format!("{what} has a single depth value")));
    }
    if count(ArchitectureConfig::width) < 2 {
        return Err(Error::InsufficientData(format!("{what} has a single width value")));
    }
    if count(ArchitectureConfig::activation_rate) < 2 && count(ArchitectureConfig::ffn_ratio) < 2 && count(ArchitectureConfig::gqa) < 2
    {
        return Err(Error::InsufficientData(format!(
            "{what} does not vary activation rate, FFN ratio or GQA ratio"
        )));
    }
    Ok(())
}

/// Deterministic train/validation split of record indices.
pub fn split_indices(n: usize, holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = ((holdout * n as f64).round() as usize).min(n);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

pub fn r_squared(observed: &[f64], predicted: &[f64]) -> f64 {
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = observed.iter().zip(predicted).map(|(y, f)| (y - f).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

pub fn fit_scaling_law(
    records: &[TrainingRunRecord],
    options: &FitOptions,
) -> Result<(ScalingLawCoefficients, FitReport)> {
    if !(0.0..1.0).contains(&options.holdout) {
        return Err(Error::InvalidInput(format!("holdout must lie in [0, 1) (got {})", options.holdout)));
    }
    if options.starts == 0 {
        return Err(Error::InvalidInput("at least one start is required".into()));
    }
    check_coverage(records, "dataset")?;
    let (train_idx, val_idx) = split_indices(records.len(), options.holdout, options.seed);
    let train: Vec<TrainingRunRecord> = train_idx.iter().map(|&i| records[i].clone()).collect();
    check_coverage(&train, "training split")?;
    let obs: Vec<Obs> = train.iter().map(Obs::new).collect();

    let mut inits: Vec<[f64; NPARAM]> = Vec::with_capacity(options.starts);
    if let Some(c) = options.initial {
        c.validate()?;
        inits.push(to_internal(&c));
    }
    let n_random = options.starts - inits.len();
    if n_random > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(1);
        for u in lhs::unit_cube(n_random, NPARAM, &mut rng) {
            let mut p = [0.0; NPARAM];
            for k in 0..NPARAM {
                p[k] = LO[k] + u[k] * (HI[k] - LO[k]);
            }
            inits.push(p);
        }
    }

    let results = options
        .execution
        .map(&inits, |p0| levenberg_marquardt(&obs, *p0, options.max_iterations, options.rel_tolerance));

    // lowest SSE, first start wins ties
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.sse.is_finite() && (!results[best].sse.is_finite() || r.sse < results[best].sse) {
            best = i;
        }
    }
    let winner = &results[best];
    let coeffs = from_internal(&winner.p);

    // the iteration cap is a normal stop; only a start stuck at a non-finite SSE is an error
    if !winner.sse.is_finite() {
        return Err(Error::NonConvergence {
            iterations: winner.iterations,
            sse: winner.sse,
            best: Box::new(coeffs),
        });
    }
    if !results.iter().any(|r| r.converged) {
        log::info!("no start met the SSE tolerance within {} iterations", options.max_iterations);
    }

    let mut residuals = Vec::with_capacity(records.len());
    let mut collect = |idx: &[usize], split: Split| -> (Vec<f64>, Vec<f64>) {
        let mut ys = Vec::with_capacity(idx.len());
        let mut fs = Vec::with_capacity(idx.len());
        for &i in idx {
            let y = records[i].observed_loss;
            let f = predict_loss(&records[i].arch, &coeffs);
            residuals.push(Residual { index: i, split, observed: y, predicted: f });
            ys.push(y);
            fs.push(f);
        }
        (ys, fs)
    };
    let (ty, tf) = collect(&train_idx, Split::Train);
    let (vy, vf) = collect(&val_idx, Split::Validation);
    residuals.sort_by_key(|r| r.index);

    let (validation_r2, validation_rmse) = if vy.is_empty() {
        (None, None)
    } else {
        let mse = vy.iter().zip(&vf).map(|(y, f)| (y - f).powi(2)).sum::<f64>() / vy.len() as f64;
        (Some(r_squared(&vy, &vf)), Some(mse.sqrt()))
    };

    let report = FitReport {
        n_train: ty.len(),
        n_validation: vy.len(),
        train_sse: winner.sse,
        train_r2: r_squared(&ty, &tf),
        validation_r2,
        validation_rmse,
        best_start: best,
        iterations: winner.iterations,
        converged: winner.converged,
        starts: results
            .iter()
            .enumerate()
            .map(|(i, r)| StartSummary {
                start: i,
                sse: r.sse,
                iterations: r.iterations,
                converged: r.converged,
            })
            .collect(),
        residuals,
    };
    Ok((coeffs, report))
}

/// Draws `count` distinct grid configurations and labels them with the loss
/// law plus Gaussian noise of standard deviation `sigma`.
pub fn synthetic_records(
    coeffs: &ScalingLawCoefficients,
    space: &SearchSpace,
    count: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<TrainingRunRecord>> {
    space.validate()?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidInput(format!("noise sigma must be >= 0 (got {sigma})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = space.indices();
    idx.shuffle(&mut rng);
    idx.truncate(count);
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidInput(e.to_string()))?;
    idx.iter()
        .map(|&i| {
            let arch = space.config(i)?;
            let eps = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let y = predict_loss(&arch, coeffs) + eps;
            TrainingRunRecord::new(arch, y)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    layers: f64,
    width: f64,
    ffn_ratio: f64,
    activation_rate: f64,
    gqa: f64,
    loss: f64,
}

/// Reads `layers,width,ffn_ratio,activation_rate,gqa,loss` rows.
///
/// Malformed CSV yields [`Error::Parse`]; rows that parse but describe an
/// invalid architecture or loss yield the corresponding validation error.
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<TrainingRunRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["layers", "width", "ffn_ratio", "activation_rate", "gqa", "loss"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse(format!(
            "expected header '{}', found '{}'",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        let arch = ArchitectureConfig::continuous(row.layers, row.width, row.ffn_ratio, row.activation_rate, row.gqa)
            .map_err(|e| Error::InvalidArchitecture(format!("row {}: {e}", line + 2)))?;
        out.push(TrainingRunRecord::new(arch, row.loss)?);
    }
    Ok(out)
}

pub fn write_records_csv<W: Write>(writer: W, records: &[TrainingRunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        let t = Theta::from(&r.arch);
        w.serialize(CsvRow {
            layers: t.l,
            width: t.d,
            ffn_ratio: t.r,
            activation_rate: t.rho,
            gqa: t.gqa,
            loss: r.observed_loss,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn internal_parameterisation_round_trips() {
        let c = ScalingLawCoefficients::PAPER_APPENDIX_C;
        let back = from_internal(&to_internal(&c));
        for (a, b) in c.to_array().iter().zip(back.to_array()) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let space = SearchSpace::default();
        let recs = synthetic_records(&ScalingLawCoefficients::PAPER_APPENDIX_C, &space, 20, 0.0, 3).unwrap();
        let p = to_internal(&ScalingLawCoefficients::PAPER_APPENDIX_C);
        for r in &recs {
            let o = Obs::new(r);
            let mut g = [0.0; NPARAM];
            let f = o.eval(&p, Some(&mut g));
            assert!((f - r.observed_loss).abs() < 1e-12);
            for k in 0..NPARAM {
                let h = 1e-6 * p[k].abs().max(1.0);
                let mut a = p;
                let mut b = p;
                a[k] += h;
                b[k] -= h;
                let fd = (o.eval(&a, None) - o.eval(&b, None)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-3), "param {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let (t1, v1) = split_indices(170, 0.2, 9);
        let (t2, v2) = split_indices(170, 0.2, 9);
        assert_eq!((t1.clone(), v1.clone()), (t2, v2));
        assert_eq!(v1.len(), 34);
        let mut all: Vec<usize> = t1.into_iter().chain(v1).collect();
        all.sort_unstable();
        assert_eq!(all, (0..170).collect::<Vec<_>>());
        let (t, v) = split_indices(20, 0.0, 1);
        assert_eq!((t.len(), v.len()), (20, 0));
    }

    #[test]
    fn csv_round_trip() {
        let recs = synthetic_records(&ScalingLawCoefficients::PAPER_APPENDIX_C, &SearchSpace::default(), 15, 0.01, 1)
            .unwrap();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("layers,width,ffn_ratio,activation_rate,gqa,loss\n"));
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 15);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.observed_loss, b.observed_loss);
            assert_eq!(Theta::from(&a.arch), Theta::from(&b.arch));
        }
    }
}
