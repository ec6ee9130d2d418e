//! Leader-driven resets over the spanning tree: distance estimates, the
//! admissible shift pair, and the encrypted up/down message phases.
//!
//! Every follower quantizes its tree-edge measurement once as
//! `Y_b = round(s * sign * y_e)`, oriented from parent to child, so that the
//! integer distance `D_i = p_i^T round(s y)` is the sum of `Y_b` along the
//! leader-to-`i` path. The same integers serve both phases.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{pow_s, ratio_to_f64, round_half_away};
use crate::graph::ResetTree;
use crate::he::{Ciphertext, DecryptRole, HeContext, HeError};

/// Absolute tolerance for the real-valued admissibility check.
pub const ADMISSIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResetError {
    #[error("reset weight must be non-negative, got {0}")]
    NegativeWeight(f64),
    #[error("tree inconsistency: {0}")]
    TreeInconsistency(String),
    #[error(transparent)]
    He(#[from] HeError),
}

/// Weighting factor `w` between the leader and follower shifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetWeight {
    /// `w = 0`: the leader keeps its iterate.
    Soft,
    /// `w = n - 1`: the leader's iterate is discarded.
    Hard,
    Custom(f64),
}

impl ResetWeight {
    pub fn value(&self, n: usize) -> f64 {
        match self {
            ResetWeight::Soft => 0.0,
            ResetWeight::Hard => (n - 1) as f64,
            ResetWeight::Custom(w) => *w,
        }
    }
}

impl fmt::Display for ResetWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResetWeight::Soft => f.write_str("soft"),
            ResetWeight::Hard => f.write_str("hard"),
            ResetWeight::Custom(w) => write!(f, "w={w}"),
        }
    }
}

impl FromStr for ResetWeight {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "soft" => Ok(ResetWeight::Soft),
            "hard" => Ok(ResetWeight::Hard),
            other => other
                .parse::<f64>()
                .map(ResetWeight::Custom)
                .map_err(|_| format!("expected soft, hard or a number, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetKind {
    Soft,
    Hard,
}

/// Shift pair for one reset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResetPlan {
    pub n: usize,
    pub w: f64,
    /// Leader estimate the shifts were computed from.
    pub x1_hat: f64,
    pub dx1: f64,
    pub dxg: f64,
    pub d_sum: f64,
    pub kind: ResetKind,
}

impl ResetPlan {
    /// `x1 - dx1 + sum_{i>=1} (x1 - dxg - d_i)`, zero for admissible plans.
    pub fn admissibility_residual(&self) -> f64 {
        let f = (self.n - 1) as f64;
        self.leader_target() + f * self.follower_base() - self.d_sum
    }

    /// `x1 - dx1`. The hard reset uses `sum d / n` directly so its output
    /// does not depend on `x1` even in floating point.
    pub fn leader_target(&self) -> f64 {
        match self.kind {
            ResetKind::Hard => self.d_sum / self.n as f64,
            ResetKind::Soft => self.x1_hat - self.dx1,
        }
    }

    /// `x1 - dxg`, the value followers subtract their distance from.
    pub fn follower_base(&self) -> f64 {
        match self.kind {
            ResetKind::Hard => self.d_sum / self.n as f64,
            ResetKind::Soft => self.x1_hat - self.dxg,
        }
    }
}

/// `d_i = p_i^T y`.
pub fn distances(tree: &ResetTree, y: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        tree.n(),
        tree.path_rows()
            .iter()
            .map(|p| p.iter().zip(y).map(|(&pi, &yi)| f64::from(pi) * yi).sum()),
    )
}

/// `(dx1, dxg) = (w, n-1) (n x1 - sum d) / ((n-1)^2 + w)`.
pub fn compute_reset_shifts(
    x1_hat: f64,
    d_sum: f64,
    n: usize,
    w: f64,
) -> Result<ResetPlan, ResetError> {
    if w.is_nan() || w < 0.0 {
        return Err(ResetError::NegativeWeight(w));
    }
    let f = (n - 1) as f64;
    let scale = (n as f64 * x1_hat - d_sum) / (f * f + w);
    let kind = if w == f {
        ResetKind::Hard
    } else {
        ResetKind::Soft
    };
    Ok(ResetPlan {
        n,
        w,
        x1_hat,
        dx1: w * scale,
        dxg: f * scale,
        d_sum,
        kind,
    })
}

/// Leader to `x1 - dx1`, follower `i` to `x1 - dxg - d_i`.
pub fn apply_reset_plaintext(plan: &ResetPlan, d: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        d.len(),
        (0..d.len()).map(|i| {
            if i == 0 {
                plan.leader_target()
            } else {
                plan.follower_base() - d[i]
            }
        }),
    )
}

/// `round(s y_e)` per edge.
pub fn quantize_measurements(y: &[f64], s: u64) -> Vec<BigInt> {
    y.iter().map(|&v| round_half_away(s as f64 * v)).collect()
}

/// `Y_b` for every follower `b`, taken from its edge to the parent; zero for
/// the leader.
pub fn tree_increments(tree: &ResetTree, y_int: &[BigInt]) -> Vec<BigInt> {
    (0..tree.n())
        .map(|b| match tree.parent_edge(b) {
            None => BigInt::zero(),
            Some((e, sign)) => BigInt::from(sign) * &y_int[e],
        })
        .collect()
}

/// `D_i = p_i^T round(s y)`, evaluated directly from the path vectors.
pub fn integer_distances(tree: &ResetTree, y_int: &[BigInt]) -> Vec<BigInt> {
    tree.path_rows()
        .iter()
        .map(|p| {
            p.iter()
                .zip(y_int)
                .filter(|(pi, _)| **pi != 0)
                .map(|(&pi, yi)| BigInt::from(pi) * yi)
                .sum()
        })
        .collect()
}

/// Phase of a reset message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Iterate,
    Up,
    Down,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Iterate => "iterate",
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

/// One ciphertext in transit. `step` is relative to the phase start (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ResetMessage {
    pub step: usize,
    pub from: usize,
    pub to: usize,
    pub direction: Direction,
    pub payload: Ciphertext,
}

/// Result of the bottom-up aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct UpPhase {
    /// `Enc(sum_i D_i mod q)` assembled at the leader.
    pub sum_ct: Ciphertext,
    pub messages: Vec<ResetMessage>,
    /// Step at which the last message reaches the leader.
    pub steps: usize,
}

/// Leaves send first; an inner node sends one step after its last child.
/// Node `b` sends `Enc(size(b) Y_b) + sum of its children's messages`, so the
/// messages reaching the leader sum to `sum_i D_i`.
pub fn collect_distances_encrypted<R: RngCore>(
    tree: &ResetTree,
    ctx: &HeContext,
    increments: &[BigInt],
    rngs: &mut [R],
) -> Result<UpPhase, ResetError> {
    let n = tree.n();
    if increments.len() != n || rngs.len() != n {
        return Err(ResetError::TreeInconsistency(format!(
            "expected {n} increments and rngs, got {} and {}",
            increments.len(),
            rngs.len()
        )));
    }
    let mut outgoing: Vec<Option<Ciphertext>> = vec![None; n];
    let mut send_step = vec![0usize; n];
    let mut messages = Vec::with_capacity(n.saturating_sub(1));
    // reverse BFS order visits children before parents
    for &b in tree.bfs_order().iter().rev() {
        if b == 0 {
            continue;
        }
        let parent = tree
            .parent(b)
            .ok_or_else(|| ResetError::TreeInconsistency(format!("follower {b} has no parent")))?;
        if !tree.children(parent).contains(&b) {
            return Err(ResetError::TreeInconsistency(format!(
                "{parent} does not list child {b}"
            )));
        }
        let own = BigInt::from(tree.subtree_size(b)) * &increments[b];
        let mut acc = ctx.enc_signed(&own, &mut rngs[b])?;
        let mut step = 1;
        for &c in tree.children(b) {
            let msg = outgoing[c].take().ok_or_else(|| {
                ResetError::TreeInconsistency(format!("child {c} of {b} sent nothing"))
            })?;
            acc = ctx.add_ct(&acc, &msg)?;
            step = step.max(send_step[c] + 1);
        }
        send_step[b] = step;
        messages.push(ResetMessage {
            step,
            from: b,
            to: parent,
            direction: Direction::Up,
            payload: acc.clone(),
        });
        outgoing[b] = Some(acc);
    }
    let mut sum_ct = ctx.enc_signed(&BigInt::zero(), &mut rngs[0])?;
    let mut steps = 0;
    for &c in tree.children(0) {
        let msg = outgoing[c].take().ok_or_else(|| {
            ResetError::TreeInconsistency(format!("child {c} of the leader sent nothing"))
        })?;
        sum_ct = ctx.add_ct(&sum_ct, &msg)?;
        steps = steps.max(send_step[c]);
    }
    messages.sort_by_key(|m| (m.step, m.from));
    Ok(UpPhase {
        sum_ct,
        messages,
        steps,
    })
}

/// Leader-side decryption of the aggregated distance sum.
pub fn leader_distance_sum(ctx: &HeContext, up: &UpPhase) -> Result<BigInt, ResetError> {
    Ok(ctx.dec_signed(&up.sum_ct, DecryptRole::Leader)?)
}

/// A reset as carried out on integers at scale `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegerResetPlan {
    pub plan: ResetPlan,
    /// Leader's new state `round(s (x1 - dx1))`.
    pub z_leader: BigInt,
    /// Value sent down by the leader, `round(s (x1 - dxg))`.
    pub v: BigInt,
}

impl IntegerResetPlan {
    /// Follower `i`'s new state `V - D_i` (scale exponent 1).
    pub fn follower_state(&self, d_i: &BigInt) -> BigInt {
        &self.v - d_i
    }

    /// All post-reset integer states from known integer distances.
    pub fn states(&self, d_int: &[BigInt]) -> Vec<BigInt> {
        d_int
            .iter()
            .enumerate()
            .map(|(i, d)| {
                if i == 0 {
                    self.z_leader.clone()
                } else {
                    self.follower_state(d)
                }
            })
            .collect()
    }
}

/// Builds the integer plan from the leader's state `z1` at `scale_exp` and
/// the decrypted distance sum `sum_i D_i`.
pub fn plan_from_integer(
    z1: &BigInt,
    scale_exp: usize,
    d_sum_int: &BigInt,
    s: u64,
    n: usize,
    w: f64,
) -> Result<IntegerResetPlan, ResetError> {
    let x1 = ratio_to_f64(z1, &pow_s(s, scale_exp));
    let d_sum = d_sum_int.to_f64().unwrap_or(f64::NAN) / s as f64;
    let plan = compute_reset_shifts(x1, d_sum, n, w)?;
    let sf = s as f64;
    Ok(IntegerResetPlan {
        plan,
        z_leader: round_half_away(sf * plan.leader_target()),
        v: round_half_away(sf * plan.follower_base()),
    })
}

/// Result of the top-down distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DownPhase {
    /// `states[i]` decrypts to `V - D_i` for followers; `None` for the leader.
    pub states: Vec<Option<Ciphertext>>,
    pub messages: Vec<ResetMessage>,
    /// Equals the tree height.
    pub steps: usize,
}

/// The leader sends `Enc(V - Y_c)` to each child `c`; a node holding
/// `Enc(V - D_b)` forwards `Enc(V - D_b) + Enc(-Y_c)` to each child `c`.
/// Nodes at depth `t` receive at step `t`.
pub fn distribute_reset_encrypted<R: RngCore>(
    tree: &ResetTree,
    ctx: &HeContext,
    iplan: &IntegerResetPlan,
    increments: &[BigInt],
    rngs: &mut [R],
) -> Result<DownPhase, ResetError> {
    let n = tree.n();
    if increments.len() != n || rngs.len() != n {
        return Err(ResetError::TreeInconsistency(format!(
            "expected {n} increments and rngs, got {} and {}",
            increments.len(),
            rngs.len()
        )));
    }
    let mut states: Vec<Option<Ciphertext>> = vec![None; n];
    let mut messages = Vec::with_capacity(n.saturating_sub(1));
    for &a in tree.bfs_order() {
        for &c in tree.children(a) {
            if tree.parent(c) != Some(a) {
                return Err(ResetError::TreeInconsistency(format!(
                    "{c} does not point back to {a}"
                )));
            }
            let ct = if a == 0 {
                ctx.enc_signed(&(&iplan.v - &increments[c]), &mut rngs[0])?
            } else {
                let held = states[a].as_ref().ok_or_else(|| {
                    ResetError::TreeInconsistency(format!("{a} forwards before receiving"))
                })?;
                let own = ctx.enc_signed(&-&increments[c], &mut rngs[a])?;
                ctx.add_ct(held, &own)?
            };
            messages.push(ResetMessage {
                step: tree.depth(c),
                from: a,
                to: c,
                direction: Direction::Down,
                payload: ct.clone(),
            });
            states[c] = Some(ct);
        }
    }
    if let Some(i) = (1..n).find(|&i| states[i].is_none()) {
        return Err(ResetError::TreeInconsistency(format!(
            "follower {i} is unreachable"
        )));
    }
    messages.sort_by_key(|m| (m.step, m.from, m.to));
    Ok(DownPhase {
        states,
        messages,
        steps: tree.height(),
    })
}
