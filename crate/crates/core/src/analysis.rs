//! First and second moments of the centralized estimator and of the reset
//! estimators, in closed form where available and by Monte Carlo.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{sample_measurements, weighted_divergence, EstimationError};
use crate::graph::{build_reset_tree, pseudoinverse, GraphError, MeasuredGraph};
use crate::par::Execution;
use crate::reset::{apply_reset_plaintext, compute_reset_shifts, distances, ResetError};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("at least 2 samples are required, got {0}")]
    InsufficientSamples(usize),
    #[error("expected {expected} true states, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Reset(#[from] ResetError),
}

/// Estimator whose moments are studied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// `x* = L^+ B Sigma^-1 y`.
    Centralized,
    /// Reset with `w = n - 1`.
    HardReset,
    /// Reset with `w = 0` and the leader at `x*_1`.
    SoftReset,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [
        EstimatorKind::Centralized,
        EstimatorKind::HardReset,
        EstimatorKind::SoftReset,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Centralized => "centralized",
            EstimatorKind::HardReset => "hard_reset",
            EstimatorKind::SoftReset => "soft_reset",
        }
    }
}

/// `x - mean(x) 1`.
pub fn centered_truth(x: &[f64]) -> DVector<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    DVector::from_iterator(x.len(), x.iter().map(|v| v - mean))
}

/// Covariance of `x*`, which collapses to `L^+`.
pub fn centralized_estimator_cov(l_pinv: &DMatrix<f64>) -> DMatrix<f64> {
    l_pinv.clone()
}

/// `L^+ L P^T Sigma P L L^+` with `p` the `m x n` path matrix and `sigma`
/// the per-edge standard deviations.
pub fn hard_reset_cov(
    l: &DMatrix<f64>,
    l_pinv: &DMatrix<f64>,
    p: &DMatrix<f64>,
    sigma: &[f64],
) -> DMatrix<f64> {
    let proj = l_pinv * l;
    let var = DMatrix::from_diagonal(&DVector::from_iterator(
        sigma.len(),
        sigma.iter().map(|s| s * s),
    ));
    let inner = p.transpose() * var * p;
    let c = &proj * inner * proj.transpose();
    (&c + c.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub kind: EstimatorKind,
    pub n_samples: usize,
    pub empirical_mean: DVector<f64>,
    pub empirical_cov: DMatrix<f64>,
    pub theoretical_mean: DVector<f64>,
    /// Absent for the soft reset, which has no closed form here.
    pub theoretical_cov: Option<DMatrix<f64>>,
    pub max_abs_mean_err: f64,
    /// `4 max_i std_i / sqrt(N)`, from the theoretical covariance when known
    /// and the empirical one otherwise.
    pub mean_tolerance: f64,
    /// `||C_emp - C_th||_F / ||C_th||_F`.
    pub rel_frob_cov_err: Option<f64>,
}

impl MomentReport {
    pub fn mean_within_tolerance(&self) -> bool {
        self.max_abs_mean_err <= self.mean_tolerance
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "estimator: {}", self.kind.name());
        let _ = writeln!(out, "samples: {}", self.n_samples);
        let _ = writeln!(out, "max_abs_mean_err: {:e}", self.max_abs_mean_err);
        let _ = writeln!(out, "mean_tolerance: {:e}", self.mean_tolerance);
        match self.rel_frob_cov_err {
            Some(e) => {
                let _ = writeln!(out, "rel_frob_cov_err: {e:e}");
            }
            None => {
                let _ = writeln!(out, "rel_frob_cov_err: n/a");
            }
        }
        let vec_line = |v: &DVector<f64>| {
            v.iter()
                .map(|x| format!("{x:.6e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(out, "empirical_mean: {}", vec_line(&self.empirical_mean));
        let _ = writeln!(
            out,
            "theoretical_mean: {}",
            vec_line(&self.theoretical_mean)
        );
        out
    }

    /// Long-format CSV: estimator, quantity, i, j, empirical, theoretical.
    /// Indices are 1-based; `j` is empty for mean rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "estimator",
            "quantity",
            "i",
            "j",
            "empirical",
            "theoretical",
        ])?;
        let name = self.kind.name();
        for i in 0..self.empirical_mean.len() {
            out.write_record([
                name,
                "mean",
                &(i + 1).to_string(),
                "",
                &self.empirical_mean[i].to_string(),
                &self.theoretical_mean[i].to_string(),
            ])?;
        }
        let n = self.empirical_cov.nrows();
        for i in 0..n {
            for j in 0..n {
                let th = self
                    .theoretical_cov
                    .as_ref()
                    .map_or(String::new(), |c| c[(i, j)].to_string());
                out.write_record([
                    name,
                    "cov",
                    &(i + 1).to_string(),
                    &(j + 1).to_string(),
                    &self.empirical_cov[(i, j)].to_string(),
                    &th,
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Sample mean and unbiased sample covariance.
pub fn sample_moments(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples[0].len();
    let count = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(n), |acc, s| acc + s) / count;
    let mut cov = DMatrix::zeros(n, n);
    for s in samples {
        let c = s - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    (mean, cov / (count - 1.0))
}

/// Draws `n_samples` noise realizations, each from its own stream of `seed`,
/// and reports the moments of the chosen estimator against `x_tilde`.
pub fn monte_carlo_reset_moments(
    g: &MeasuredGraph,
    x_true: &[f64],
    kind: EstimatorKind,
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<MomentReport, AnalysisError> {
    if n_samples < 2 {
        return Err(AnalysisError::InsufficientSamples(n_samples));
    }
    let n = g.n();
    if x_true.len() != n {
        return Err(AnalysisError::DimensionMismatch {
            expected: n,
            got: x_true.len(),
        });
    }
    let b = g.incidence();
    let sigma = g.sigmas();
    let l = g.laplacian();
    let pinv = pseudoinverse(&l)?.pinv;
    let tree = build_reset_tree(g);
    let w = match kind {
        EstimatorKind::HardReset => (n - 1) as f64,
        _ => 0.0,
    };
    let draws: Vec<Result<DVector<f64>, AnalysisError>> = exec.map_indexed(n_samples, |i| {
        let m = sample_measurements(g, x_true, derive_seed(seed, i as u64))?;
        let x_star = &pinv * weighted_divergence(&b, &sigma, m.y());
        if kind == EstimatorKind::Centralized {
            return Ok(x_star);
        }
        let d = distances(&tree, m.y());
        let plan = compute_reset_shifts(x_star[0], d.sum(), n, w)?;
        Ok(apply_reset_plaintext(&plan, &d))
    });
    let samples: Vec<DVector<f64>> = draws.into_iter().collect::<Result<_, _>>()?;
    let (empirical_mean, empirical_cov) = sample_moments(&samples);
    let theoretical_mean = centered_truth(x_true);
    let theoretical_cov = match kind {
        EstimatorKind::Centralized => Some(centralized_estimator_cov(&pinv)),
        EstimatorKind::HardReset => Some(hard_reset_cov(&l, &pinv, &tree.path_matrix(), &sigma)),
        EstimatorKind::SoftReset => None,
    };
    let max_abs_mean_err = (&empirical_mean - &theoretical_mean).amax();
    let var_source = theoretical_cov.as_ref().unwrap_or(&empirical_cov);
    let max_std = var_source
        .diagonal()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.max(0.0)))
        .sqrt();
    let mean_tolerance = 4.0 * max_std / (n_samples as f64).sqrt();
    let rel_frob_cov_err = theoretical_cov.as_ref().map(|c| {
        let norm = c.norm();
        if norm == 0.0 {
            (&empirical_cov - c).norm()
        } else {
            (&empirical_cov - c).norm() / norm
        }
    });
    Ok(MomentReport {
        kind,
        n_samples,
        empirical_mean,
        empirical_cov,
        theoretical_mean,
        theoretical_cov,
        max_abs_mean_err,
        mean_tolerance,
        rel_frob_cov_err,
    })
}
