//! Measurement model, the noise-optimal centralized estimate, and the
//! real-valued affine averaging iteration `x(k+1) = A x(k) + b`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::graph::{self, GraphError, IncidenceMatrix, MeasuredGraph, RawGraph};
use crate::rng;

/// Plaintext runs stop once successive iterates differ by less than this.
pub const PLAINTEXT_STEP_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("step size {alpha} outside (0, {upper})")]
    StepSizeOutOfRange { alpha: f64, upper: f64 },
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Edge measurements `y = B^T x + v` in lexicographic edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    y: Vec<f64>,
    v: Vec<f64>,
    x_true: Vec<f64>,
}

impl MeasurementSet {
    /// Builds `y = B^T x_true + v` for a given noise realization.
    pub fn from_noise(
        g: &MeasuredGraph,
        x_true: &[f64],
        v: &[f64],
    ) -> Result<Self, EstimationError> {
        check_len(x_true, g.n())?;
        check_len(v, g.m())?;
        let y = g
            .edges()
            .iter()
            .zip(v)
            .map(|(e, &noise)| x_true[e.i] - x_true[e.j] + noise)
            .collect();
        Ok(MeasurementSet {
            y,
            v: v.to_vec(),
            x_true: x_true.to_vec(),
        })
    }

    pub fn noiseless(g: &MeasuredGraph, x_true: &[f64]) -> Result<Self, EstimationError> {
        Self::from_noise(g, x_true, &vec![0.0; g.m()])
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn x_true(&self) -> &[f64] {
        &self.x_true
    }

    /// Agent `i`'s measurement `y_ij` of neighbor `j`; `y_ji = -y_ij`.
    pub fn relative(&self, g: &MeasuredGraph, i: usize, j: usize) -> Option<f64> {
        let e = g.edge_index(i, j)?;
        Some(f64::from(g.orientation_sign(e, i)) * self.y[e])
    }
}

fn check_len<T>(v: &[T], expected: usize) -> Result<(), EstimationError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(EstimationError::DimensionMismatch {
            expected,
            got: v.len(),
        })
    }
}

/// Draws one Gaussian `v_e ~ N(0, sigma_e^2)` per stored edge.
pub fn sample_measurements(
    g: &MeasuredGraph,
    x_true: &[f64],
    seed: u64,
) -> Result<MeasurementSet, EstimationError> {
    let mut rng = rng::seeded(seed);
    let v: Vec<f64> = g
        .edges()
        .iter()
        .map(|e| {
            Normal::new(0.0, e.sigma)
                .expect("sigma validated")
                .sample(&mut rng)
        })
        .collect();
    MeasurementSet::from_noise(g, x_true, &v)
}

/// `B diag(1/sigma^2) y`.
pub fn weighted_divergence(b: &IncidenceMatrix, sigma: &[f64], y: &[f64]) -> DVector<f64> {
    let scaled: Vec<f64> = y.iter().zip(sigma).map(|(yi, s)| yi / (s * s)).collect();
    let mut out = DVector::zeros(b.rows());
    for r in 0..b.rows() {
        out[r] = b
            .row(r)
            .iter()
            .zip(&scaled)
            .map(|(&bb, &v)| f64::from(bb) * v)
            .sum();
    }
    out
}

/// Mean-free weighted least-squares solution `x* = L^+ B Sigma^{-1} y`.
pub fn centralized_solution(
    b: &IncidenceMatrix,
    sigma: &[f64],
    y: &[f64],
) -> Result<DVector<f64>, EstimationError> {
    check_len(y, b.cols())?;
    let l = graph::laplacian(b, sigma);
    let pinv = graph::pseudoinverse(&l)?;
    Ok(&pinv.pinv * weighted_divergence(b, sigma, y))
}

/// `alpha = 2 / (lambda_1 + lambda_{n-1})`.
pub fn step_size(l: &DMatrix<f64>) -> Result<f64, EstimationError> {
    let p = graph::pseudoinverse(l)?;
    Ok(2.0 / (p.lambda_max + p.lambda_min_nonzero))
}

/// Iteration data of the condensed dynamics.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub alpha: f64,
    pub laplacian: DMatrix<f64>,
    pub laplacian_pinv: DMatrix<f64>,
    pub lambda_max: f64,
    pub lambda_min_nonzero: f64,
}

pub fn build_dynamics(
    b: &IncidenceMatrix,
    sigma: &[f64],
    y: &[f64],
    alpha: f64,
) -> Result<Dynamics, EstimationError> {
    check_len(y, b.cols())?;
    let l = graph::laplacian(b, sigma);
    let p = graph::pseudoinverse(&l)?;
    let upper = 2.0 / p.lambda_max;
    if !(alpha > 0.0 && alpha < upper) {
        return Err(EstimationError::StepSizeOutOfRange { alpha, upper });
    }
    let n = b.rows();
    let a = DMatrix::identity(n, n) - &l * alpha;
    let bias = weighted_divergence(b, sigma, y) * alpha;
    Ok(Dynamics {
        a,
        b: bias,
        alpha,
        laplacian: l,
        laplacian_pinv: p.pinv,
        lambda_max: p.lambda_max,
        lambda_min_nonzero: p.lambda_min_nonzero,
    })
}

impl Dynamics {
    /// Dynamics for a graph and measurement set; `alpha = None` picks
    /// [`step_size`].
    pub fn for_graph(
        g: &MeasuredGraph,
        meas: &MeasurementSet,
        alpha: Option<f64>,
    ) -> Result<Self, EstimationError> {
        let b = g.incidence();
        let sigma = g.sigmas();
        let alpha = match alpha {
            Some(a) => a,
            None => step_size(&graph::laplacian(&b, &sigma))?,
        };
        build_dynamics(&b, &sigma, meas.y(), alpha)
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        affine_step(x, self)
    }

    /// Matrix infinity norm (maximum absolute row sum) of `A`.
    pub fn a_inf_norm(&self) -> f64 {
        (0..self.a.nrows())
            .map(|r| self.a.row(r).iter().map(|v| v.abs()).sum())
            .fold(0.0, f64::max)
    }

    pub fn b_inf_norm(&self) -> f64 {
        self.b.amax()
    }

    /// Centralized solution from the stored pseudoinverse:
    /// `x* = L^+ b / alpha`.
    pub fn fixed_point(&self) -> DVector<f64> {
        &self.laplacian_pinv * &self.b / self.alpha
    }
}

/// `A x + b`.
pub fn affine_step(x: &DVector<f64>, d: &Dynamics) -> DVector<f64> {
    &d.a * x + &d.b
}

/// Per-agent coefficients `a_ii`, `a_ij` and `b_i` computed from local data.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentCoefficients {
    pub diag: f64,
    pub neighbors: Vec<(usize, f64)>,
    pub affine: f64,
}

pub fn agent_coefficients(
    g: &MeasuredGraph,
    meas: &MeasurementSet,
    alpha: f64,
    i: usize,
) -> AgentCoefficients {
    let mut diag = 1.0;
    let mut affine = 0.0;
    let mut neighbors = Vec::with_capacity(g.degree(i));
    for &(j, e) in g.neighbors(i) {
        let w = alpha * g.edges()[e].weight();
        diag -= w;
        neighbors.push((j, w));
        affine += w * meas.relative(g, i, j).expect("neighbor edge exists");
    }
    AgentCoefficients {
        diag,
        neighbors,
        affine,
    }
}

/// `x(k) = A^k x(0) + (sum_{j<k} A^j) b` with `x(0) = 0`.
pub fn explicit_solution(d: &Dynamics, k: usize) -> DVector<f64> {
    let n = d.n();
    let mut sum = DVector::zeros(n);
    let mut term = d.b.clone();
    for _ in 0..k {
        sum += &term;
        term = &d.a * term;
    }
    sum
}

/// Iterates from `x0` until successive iterates differ by less than
/// [`PLAINTEXT_STEP_TOL`] or `max_steps` is reached. Returns the final state
/// and the number of steps taken.
pub fn run_plaintext(d: &Dynamics, x0: &DVector<f64>, max_steps: usize) -> (DVector<f64>, usize) {
    let mut x = x0.clone();
    for k in 0..max_steps {
        let next = d.step(&x);
        let change = (&next - &x).amax();
        x = next;
        if change < PLAINTEXT_STEP_TOL {
            return (x, k + 1);
        }
    }
    (x, max_steps)
}

/// Outcome of the three necessary and sufficient convergence conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub connected: bool,
    /// `1^T x(0)`.
    pub initial_sum: f64,
    pub mean_free: bool,
    pub alpha: f64,
    /// `2 / lambda_1(L)`.
    pub alpha_upper: f64,
    pub step_in_range: bool,
}

impl ConvergenceReport {
    pub fn all_pass(&self) -> bool {
        self.connected && self.mean_free && self.step_in_range
    }
}

pub fn check_convergence_conditions(raw: &RawGraph, x0: &[f64], alpha: f64) -> ConvergenceReport {
    let connected = raw.is_connected();
    let initial_sum: f64 = x0.iter().sum();
    let scale = 1.0 + x0.iter().map(|v| v.abs()).sum::<f64>();
    let mean_free = initial_sum.abs() <= 1e-12 * scale;
    let l = raw.laplacian();
    let lambda_max = if raw.n == 0 {
        0.0
    } else {
        nalgebra::SymmetricEigen::new(l).eigenvalues.max()
    };
    let alpha_upper = if lambda_max > 0.0 {
        2.0 / lambda_max
    } else {
        f64::INFINITY
    };
    let step_in_range = alpha > 0.0 && alpha < alpha_upper;
    ConvergenceReport {
        connected,
        initial_sum,
        mean_free,
        alpha,
        alpha_upper,
        step_in_range,
    }
}
