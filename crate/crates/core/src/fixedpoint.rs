//! Integer-scaled affine averaging, modular reconstruction, the overflow
//! budget, and the worst-case quantization error bound.
//!
//! A state `z(k)` produced `k` iterations after a reset carries the scale
//! `s^(k+1)`; [`recover_state`] divides it back out.

use nalgebra::DVector;
use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{FromPrimitive, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::estimation::Dynamics;

/// Absolute slack, relative to `1 + |x(k)|`, granted to the float reference
/// when checking the error bound. Covers roundoff of the f64 trajectory only.
pub const FLOAT_REFERENCE_SLACK: f64 = 1e-12;

/// Longest forward scan performed by [`max_iterations`].
const MAX_SCAN: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixedPointError {
    #[error("scaling factor must be an integer >= 2, got {0}")]
    InvalidScale(u64),
    #[error("no iteration fits in the message space")]
    NoIterationsPossible,
    #[error("{k_iter} iterations per round exceed the overflow budget of {max}")]
    IterationBudgetExceeded { k_iter: usize, max: usize },
    #[error("deviation {deviation:e} exceeds bound {bound:e} at k = {k}")]
    BoundViolation {
        k: usize,
        deviation: f64,
        bound: f64,
    },
    #[error("trace lengths differ: {0} vs {1}")]
    TraceMismatch(usize, usize),
}

/// Rounds to the nearest integer, ties away from zero.
pub fn round_half_away(x: f64) -> BigInt {
    BigInt::from_f64(x.round()).unwrap_or_else(|| panic!("cannot round non-finite value {x}"))
}

pub fn pow_s(s: u64, e: usize) -> BigInt {
    num_traits::pow(BigInt::from(s), e)
}

/// `num / den` as the nearest-ish f64, also for operands beyond f64 range.
pub fn ratio_to_f64(num: &BigInt, den: &BigInt) -> f64 {
    let bits = num.bits().max(den.bits());
    if bits < 1000 {
        return num.to_f64().unwrap_or(f64::NAN) / den.to_f64().unwrap_or(f64::NAN);
    }
    let shift = bits - 1000;
    let n = num >> shift;
    let d = den >> shift;
    n.to_f64().unwrap_or(f64::NAN) / d.to_f64().unwrap_or(f64::NAN)
}

/// One agent's quantized row of the integer dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRow {
    /// `round(s a_ii)`.
    pub diag: BigInt,
    /// `(j, round(s a_ij))` for every neighbor `j`.
    pub neighbors: Vec<(usize, BigInt)>,
    /// `round(s^2 b_i)`.
    pub affine: BigInt,
}

/// `round(s A)` and `round(s^2 b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedDynamics {
    s: u64,
    n: usize,
    /// Dense row-major `round(s A)`.
    sa: Vec<BigInt>,
    s2b: Vec<BigInt>,
    rows: Vec<AgentRow>,
}

impl QuantizedDynamics {
    pub fn s(&self) -> u64 {
        self.s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sa(&self, i: usize, j: usize) -> &BigInt {
        &self.sa[i * self.n + j]
    }

    pub fn s2b(&self) -> &[BigInt] {
        &self.s2b
    }

    pub fn row(&self, i: usize) -> &AgentRow {
        &self.rows[i]
    }
}

/// Entrywise rounding of `s A` and `s^2 b`. The neighbor structure of each
/// row is taken from the nonzero off-diagonal entries of `A`.
pub fn quantize_dynamics(d: &Dynamics, s: u64) -> Result<QuantizedDynamics, FixedPointError> {
    if s < 2 {
        return Err(FixedPointError::InvalidScale(s));
    }
    let n = d.n();
    let sf = s as f64;
    let mut sa = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            sa.push(round_half_away(sf * d.a[(i, j)]));
        }
    }
    let s2b: Vec<BigInt> = d.b.iter().map(|&b| round_half_away(sf * sf * b)).collect();
    let rows = (0..n)
        .map(|i| AgentRow {
            diag: sa[i * n + i].clone(),
            neighbors: (0..n)
                .filter(|&j| j != i && d.a[(i, j)] != 0.0)
                .map(|j| (j, sa[i * n + j].clone()))
                .collect(),
            affine: s2b[i].clone(),
        })
        .collect();
    Ok(QuantizedDynamics {
        s,
        n,
        sa,
        s2b,
        rows,
    })
}

/// Condensed form `z(k+1) = round(sA) z(k) + s^k round(s^2 b)`.
pub fn integer_step(z: &[BigInt], qd: &QuantizedDynamics, k: usize) -> Vec<BigInt> {
    let sk = pow_s(qd.s, k);
    (0..qd.n)
        .map(|i| {
            let mut acc = &sk * &qd.s2b[i];
            for (j, zj) in z.iter().enumerate() {
                let c = qd.sa(i, j);
                if !c.is_zero() {
                    acc += c * zj;
                }
            }
            acc
        })
        .collect()
}

/// Agent `i`'s update from its own row only.
pub fn integer_step_agent(i: usize, z: &[BigInt], qd: &QuantizedDynamics, k: usize) -> BigInt {
    let row = &qd.rows[i];
    let mut acc = &row.diag * &z[i] + pow_s(qd.s, k) * &row.affine;
    for (j, c) in &row.neighbors {
        acc += c * &z[*j];
    }
    acc
}

/// `z / s^scale_exp`, elementwise.
pub fn recover_state(z: &[BigInt], scale_exp: usize, s: u64) -> DVector<f64> {
    let den = pow_s(s, scale_exp);
    DVector::from_iterator(z.len(), z.iter().map(|zi| ratio_to_f64(zi, &den)))
}

/// `round(s x)` elementwise; the integer state at scale exponent 1.
pub fn quantize_state(x: &DVector<f64>, s: u64) -> Vec<BigInt> {
    x.iter().map(|&v| round_half_away(s as f64 * v)).collect()
}

/// Signed representative of a residue: `z'` if `z' < q/2`, else `z' - q`.
pub fn mod_reconstruct(z_prime: &BigUint, q: &BigUint) -> BigInt {
    let twice: BigUint = z_prime << 1u32;
    if &twice < q {
        BigInt::from_biguint(Sign::Plus, z_prime.clone())
    } else {
        BigInt::from_biguint(Sign::Plus, z_prime.clone())
            - BigInt::from_biguint(Sign::Plus, q.clone())
    }
}

/// Mathematical `z mod q` in `[0, q)`.
pub fn encode_signed(z: &BigInt, q: &BigUint) -> BigUint {
    let qi = BigInt::from_biguint(Sign::Plus, q.clone());
    z.mod_floor(&qi)
        .to_biguint()
        .expect("mod_floor is non-negative")
}

/// Exact check of `s^(k+1) * value < q / 2` for a finite positive `value`.
pub fn fits_budget(s: u64, k: usize, value: f64, q: &BigUint) -> bool {
    if !value.is_finite() {
        return false;
    }
    if value <= 0.0 {
        return true;
    }
    // value = mantissa * 2^exp exactly
    let bits = value.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, exp) = if raw_exp == 0 {
        (frac, -1074i64)
    } else {
        (frac | (1u64 << 52), raw_exp - 1075)
    };
    let lhs = num_traits::pow(BigUint::from(s), k + 1) * BigUint::from(mantissa);
    // lhs * 2^exp < q / 2  <=>  lhs * 2^(exp+1) < q
    let e = exp + 1;
    if e >= 0 {
        (lhs << (e as u64)) < *q
    } else {
        lhs < (q << ((-e) as u64))
    }
}

/// Largest `k` with `s^(k+1) (x1_bar + delta(k)) < q/2`.
pub fn max_iterations(
    s: u64,
    q: &BigUint,
    x1_bar: f64,
    delta: impl Fn(usize) -> f64,
) -> Result<usize, FixedPointError> {
    if s < 2 {
        return Err(FixedPointError::InvalidScale(s));
    }
    if !fits_budget(s, 1, x1_bar + delta(1), q) {
        return Err(FixedPointError::NoIterationsPossible);
    }
    let mut k = 1;
    while k < MAX_SCAN && fits_budget(s, k + 1, x1_bar + delta(k + 1), q) {
        k += 1;
    }
    Ok(k)
}

/// `sum_{j<k} [(|A| + nu/(2s))^j (|b| + 1/(2s^2)) - |A|^j |b|]`.
pub fn delta_bound(k: usize, s: u64, a_inf_norm: f64, b_inf_norm: f64, nu: usize) -> f64 {
    let sf = s as f64;
    let grown = a_inf_norm + nu as f64 / (2.0 * sf);
    let b_hat = b_inf_norm + 1.0 / (2.0 * sf * sf);
    let mut total = 0.0;
    let mut pg = 1.0;
    let mut pa = 1.0;
    for _ in 0..k {
        total += pg * b_hat - pa * b_inf_norm;
        pg *= grown;
        pa *= a_inf_norm;
    }
    total
}

/// The inputs of [`delta_bound`] for one problem instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaModel {
    pub s: u64,
    pub a_inf_norm: f64,
    pub b_inf_norm: f64,
    /// `1 + max degree`, the most nonzeros in any row of `A`.
    pub nu: usize,
}

impl DeltaModel {
    pub fn new(d: &Dynamics, s: u64) -> Self {
        let n = d.n();
        let nu = (0..n)
            .map(|i| d.a.row(i).iter().filter(|v| **v != 0.0).count())
            .max()
            .unwrap_or(1);
        DeltaModel {
            s,
            a_inf_norm: d.a_inf_norm(),
            b_inf_norm: d.b_inf_norm(),
            nu,
        }
    }

    pub fn delta(&self, k: usize) -> f64 {
        delta_bound(k, self.s, self.a_inf_norm, self.b_inf_norm, self.nu)
    }

    /// Bound for a round that restarts from a reset state `x_res` with
    /// `||x_res||_inf = reset_inf_norm`: the accumulation restarts with a
    /// `1/(2s)` initial offset, plus the propagated quantization of
    /// `round(sA)^k` acting on the reset state.
    pub fn delta_after_reset(&self, k: usize, reset_inf_norm: f64) -> f64 {
        let sf = self.s as f64;
        let grown = self.a_inf_norm + self.nu as f64 / (2.0 * sf);
        let ak = self.a_inf_norm.powi(k as i32);
        self.delta(k) + ak / (2.0 * sf) + (grown.powi(k as i32) - ak) * reset_inf_norm
    }
}

/// Validated fixed-point parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointConfig {
    pub s: u64,
    pub q: BigUint,
    pub x1_bar: f64,
    pub k_iter: usize,
}

impl FixedPointConfig {
    /// Checks `s >= 2` and that `k_iter` satisfies the overflow budget.
    pub fn new(
        s: u64,
        q: BigUint,
        x1_bar: f64,
        k_iter: usize,
        delta: &DeltaModel,
    ) -> Result<Self, FixedPointError> {
        let max = max_iterations(s, &q, x1_bar, |k| delta.delta(k))?;
        if k_iter == 0 || k_iter > max {
            return Err(FixedPointError::IterationBudgetExceeded { k_iter, max });
        }
        Ok(FixedPointConfig {
            s,
            q,
            x1_bar,
            k_iter,
        })
    }
}

/// Result of comparing an integer trace against its float counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub steps: usize,
    pub max_deviation: f64,
    /// Largest `deviation / bound` over steps with a positive bound.
    pub max_ratio: f64,
}

/// Checks `||z(k)/s^(k+1) - x(k)||_inf <= bound(k)` for every `k` of a single
/// round. `trace_int[k]` must carry scale exponent `k + 1`.
pub fn verify_delta_dominance(
    trace_float: &[DVector<f64>],
    trace_int: &[Vec<BigInt>],
    s: u64,
    bound: impl Fn(usize) -> f64,
) -> Result<DominanceReport, FixedPointError> {
    if trace_float.len() != trace_int.len() {
        return Err(FixedPointError::TraceMismatch(
            trace_float.len(),
            trace_int.len(),
        ));
    }
    let mut max_deviation = 0.0f64;
    let mut max_ratio = 0.0f64;
    for (k, (xf, zi)) in trace_float.iter().zip(trace_int).enumerate() {
        let rec = recover_state(zi, k + 1, s);
        let deviation = (&rec - xf).amax();
        let b = bound(k);
        let slack = FLOAT_REFERENCE_SLACK * (1.0 + xf.amax());
        if deviation > b + slack {
            return Err(FixedPointError::BoundViolation {
                k,
                deviation,
                bound: b,
            });
        }
        max_deviation = max_deviation.max(deviation);
        if b > 0.0 {
            max_ratio = max_ratio.max(deviation / b);
        }
    }
    Ok(DominanceReport {
        steps: trace_int.len(),
        max_deviation,
        max_ratio,
    })
}

/// Runs `k_iter` float and integer steps from `x(0) = z(0) = 0` and returns
/// both traces (including step 0).
pub fn single_round_traces(
    d: &Dynamics,
    qd: &QuantizedDynamics,
    k_iter: usize,
) -> (Vec<DVector<f64>>, Vec<Vec<BigInt>>) {
    let n = d.n();
    let mut xf = DVector::zeros(n);
    let mut z = vec![BigInt::zero(); n];
    let mut tf = vec![xf.clone()];
    let mut ti = vec![z.clone()];
    for k in 0..k_iter {
        xf = d.step(&xf);
        z = integer_step(&z, qd, k);
        tf.push(xf.clone());
        ti.push(z.clone());
    }
    (tf, ti)
}

/// Whether `|z| < q/2`, i.e. the signed value survives reduction mod `q`.
pub fn fits_message_space(z: &BigInt, q: &BigUint) -> bool {
    let twice: BigUint = z.abs().to_biguint().expect("abs is non-negative") << 1u32;
    &twice < q
}
