//! Full protocol runs: rounds of `k_iter` iterations separated by resets of
//! `h` steps, where `h` is the reset-tree height.
//!
//! Three pipelines share one schedule driver:
//! - encrypted: followers hold ciphertexts, the leader holds its own state in
//!   plaintext and decrypts only what its neighbors send it;
//! - integer: the same integer arithmetic without encryption or modulus;
//! - float: the real-valued reference.
//!
//! Global step `t` counts iterations and reset steps alike. Step 0 is the
//! initial state. The `r`-th reset completes at step `r (k_iter + h)`.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{Dynamics, EstimationError, MeasurementSet};
use crate::fixedpoint::{
    self, fits_message_space, integer_step_agent, max_iterations, mod_reconstruct, pow_s,
    quantize_dynamics, ratio_to_f64, AgentRow, DeltaModel, FixedPointError, QuantizedDynamics,
};
use crate::graph::{build_reset_tree, MeasuredGraph, ResetTree};
use crate::he::{Ciphertext, DecryptRole, HeContext, HeError};
use crate::par::Execution;
use crate::reset::{
    apply_reset_plaintext, collect_distances_encrypted, compute_reset_shifts, distances,
    distribute_reset_encrypted, integer_distances, leader_distance_sum, plan_from_integer,
    quantize_measurements, tree_increments, Direction, DownPhase, IntegerResetPlan, ResetError,
    ResetMessage, ResetWeight,
};
use crate::rng::{derive_seed, stream, SimRng};

/// Stream index reserved for the reset phases' randomness.
const RESET_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("k_iter = {k_iter} is below the reset tree height {height}")]
    IterationsBelowTreeHeight { k_iter: usize, height: usize },
    #[error("k_iter = {k_iter} violates the overflow budget (at most {max} iterations fit)")]
    OverflowBudgetViolation { k_iter: usize, max: usize },
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    Reset(#[from] ResetError),
    #[error(transparent)]
    He(#[from] HeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Scaling factor, an integer `>= 2`.
    pub s: u64,
    /// Bound on the leader state used for the overflow budget.
    pub x1_bar: f64,
    pub k_iter: usize,
    pub weight: ResetWeight,
    pub max_rounds: usize,
    /// Round-boundary threshold on the leader's last-step change.
    pub term_eps: f64,
    /// Whether `term_eps` may end a run before `max_rounds`.
    pub early_stop: bool,
    /// Step size; `None` selects the optimal one.
    pub alpha: Option<f64>,
    pub seed: u64,
    /// Record decrypted follower states (test and inspection only).
    pub debug_decrypt: bool,
    pub record_messages: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            s: 1000,
            x1_bar: 1e4,
            k_iter: 10,
            weight: ResetWeight::Soft,
            max_rounds: 6,
            term_eps: 1e-6,
            early_stop: true,
            alpha: None,
            seed: 0,
            debug_decrypt: false,
            record_messages: true,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.s < 2 {
            return Err(FixedPointError::InvalidScale(self.s).into());
        }
        if self.k_iter == 0 {
            return Err(EngineError::InvalidConfig(
                "k_iter must be at least 1".into(),
            ));
        }
        if self.max_rounds == 0 {
            return Err(EngineError::InvalidConfig(
                "max_rounds must be at least 1".into(),
            ));
        }
        if !(self.x1_bar.is_finite() && self.x1_bar > 0.0) {
            return Err(EngineError::InvalidConfig(format!(
                "x1_bar must be positive, got {}",
                self.x1_bar
            )));
        }
        if self.term_eps.is_nan() || self.term_eps <= 0.0 {
            return Err(EngineError::InvalidConfig(format!(
                "term_eps must be positive, got {}",
                self.term_eps
            )));
        }
        if let ResetWeight::Custom(w) = self.weight {
            if w.is_nan() || w < 0.0 {
                return Err(ResetError::NegativeWeight(w).into());
            }
        }
        Ok(())
    }
}

/// Everything derived once per (graph, measurements, config, q).
#[derive(Debug, Clone)]
pub struct Instance {
    pub config: ProtocolConfig,
    pub graph: MeasuredGraph,
    pub tree: ResetTree,
    pub dynamics: Dynamics,
    pub quantized: QuantizedDynamics,
    pub delta: DeltaModel,
    /// `round(s y_e)` per edge.
    pub y_int: Vec<BigInt>,
    /// Parent-to-child tree-edge increments `Y_b`.
    pub increments: Vec<BigInt>,
    /// `p_i^T round(s y)`.
    pub d_int: Vec<BigInt>,
    /// `p_i^T y`.
    pub d_real: DVector<f64>,
    pub x_star: DVector<f64>,
    pub q: BigUint,
    /// Largest iteration count admitted by the overflow budget.
    pub max_k_iter: usize,
    pub weight: f64,
}

impl Instance {
    /// Validates the configuration against the graph and the modulus `q`.
    pub fn prepare(
        config: &ProtocolConfig,
        g: &MeasuredGraph,
        meas: &MeasurementSet,
        q: &BigUint,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let tree = build_reset_tree(g);
        if config.k_iter < tree.height() {
            return Err(EngineError::IterationsBelowTreeHeight {
                k_iter: config.k_iter,
                height: tree.height(),
            });
        }
        let dynamics = Dynamics::for_graph(g, meas, config.alpha)?;
        let quantized = quantize_dynamics(&dynamics, config.s)?;
        let delta = DeltaModel::new(&dynamics, config.s);
        let x1_bar = config.x1_bar;
        // the post-reset bound dominates the first-round one
        let max_k_iter =
            max_iterations(config.s, q, x1_bar, |k| delta.delta_after_reset(k, x1_bar))?;
        if config.k_iter > max_k_iter {
            return Err(EngineError::OverflowBudgetViolation {
                k_iter: config.k_iter,
                max: max_k_iter,
            });
        }
        let y_int = quantize_measurements(meas.y(), config.s);
        let increments = tree_increments(&tree, &y_int);
        let d_int = integer_distances(&tree, &y_int);
        let d_real = distances(&tree, meas.y());
        let x_star = dynamics.fixed_point();
        let weight = config.weight.value(g.n());
        Ok(Instance {
            config: config.clone(),
            graph: g.clone(),
            tree,
            dynamics,
            quantized,
            delta,
            y_int,
            increments,
            d_int,
            d_real,
            x_star,
            q: q.clone(),
            max_k_iter,
            weight,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn height(&self) -> usize {
        self.tree.height()
    }
}

/// Step at which the `r`-th reset (1-based) completes.
pub fn reset_completion_step(r: usize, k_iter: usize, height: usize) -> usize {
    r * (k_iter + height)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    Encrypted,
    Integer,
    Float,
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineKind::Encrypted => "encrypted",
            PipelineKind::Integer => "integer",
            PipelineKind::Float => "float",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Step 0, before any iteration.
    Initial,
    Iterate,
    /// An iteration during which the bottom-up aggregation is in transit.
    ResetUp,
    ResetDown,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Initial => "initial",
            Phase::Iterate => "iterate",
            Phase::ResetUp => "reset_up",
            Phase::ResetDown => "reset_down",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub round: usize,
    pub phase: Phase,
    pub leader_state: f64,
    pub leader_deviation: f64,
    /// Recovered states of all agents; always present for the plaintext
    /// pipelines, only with debug decryption for the encrypted one.
    pub states: Option<DVector<f64>>,
    pub int_states: Option<Vec<BigInt>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageRecord {
    pub step: usize,
    pub from: usize,
    pub to: usize,
    pub direction: Direction,
    pub ciphertext_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResetEvent {
    pub round: usize,
    pub completed_step: usize,
    pub x1_hat: f64,
    pub dx1: f64,
    pub dxg: f64,
    pub d_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The leader's last-step change fell below `term_eps` after this round.
    Converged {
        round: usize,
    },
    RoundBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub pipeline: PipelineKind,
    pub n: usize,
    pub k_iter: usize,
    pub height: usize,
    pub s: u64,
    pub x_star: DVector<f64>,
    pub steps: Vec<StepRecord>,
    pub messages: Vec<MessageRecord>,
    pub resets: Vec<ResetEvent>,
    pub termination: Termination,
    pub rounds: usize,
    /// Leader reconstructions that left the `q/2` window.
    pub leader_overflows: usize,
    /// Steps where the leader's recovered state exceeded `x1_bar + delta`.
    pub overflow_suspicions: usize,
}

impl Transcript {
    pub fn final_leader(&self) -> f64 {
        self.steps.last().map_or(0.0, |r| r.leader_state)
    }

    pub fn final_states(&self) -> Option<&DVector<f64>> {
        self.steps.last().and_then(|r| r.states.as_ref())
    }

    /// `||x(final) - x*||_inf`, when the states are visible.
    pub fn final_deviation(&self) -> Option<f64> {
        self.final_states().map(|x| (x - &self.x_star).amax())
    }

    pub fn leader_trajectory(&self) -> Vec<f64> {
        self.steps.iter().map(|r| r.leader_state).collect()
    }

    /// `transcript.csv`: step, round, agent, recovered_state,
    /// leader_deviation, phase. Without visible states only the leader row
    /// is written.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "step",
            "round",
            "agent",
            "recovered_state",
            "leader_deviation",
            "phase",
        ])?;
        for r in &self.steps {
            let step = r.step.to_string();
            let round = r.round.to_string();
            let dev = r.leader_deviation.to_string();
            let phase = r.phase.to_string();
            match &r.states {
                Some(x) => {
                    for (i, v) in x.iter().enumerate() {
                        out.write_record([
                            &step,
                            &round,
                            &(i + 1).to_string(),
                            &v.to_string(),
                            &dev,
                            &phase,
                        ])?;
                    }
                }
                None => {
                    out.write_record([
                        &step,
                        &round,
                        "1",
                        &r.leader_state.to_string(),
                        &dev,
                        &phase,
                    ])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// `messages.csv`: step, from, to, direction, ciphertext_id. Agents are
    /// 1-based; no plaintext appears.
    pub fn write_messages_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "from", "to", "direction", "ciphertext_id"])?;
        for m in &self.messages {
            out.write_record([
                m.step.to_string(),
                (m.from + 1).to_string(),
                (m.to + 1).to_string(),
                m.direction.to_string(),
                format!("{:016x}", m.ciphertext_id),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// The leader's plaintext update from the residues `z_j'` its neighbors sent,
/// reduced mod `q` and mapped back to the signed representative. Any residue
/// representative of `z_j` yields the same result.
pub fn leader_next_state(
    row: &AgentRow,
    z1: &BigInt,
    neighbor_residues: &[(usize, BigUint)],
    k: usize,
    s: u64,
    q: &BigUint,
) -> BigInt {
    let mut acc = &row.diag * z1 + pow_s(s, k) * &row.affine;
    for (j, coeff) in &row.neighbors {
        if let Some((_, zj)) = neighbor_residues.iter().find(|(idx, _)| idx == j) {
            acc += coeff * BigInt::from(zj.clone());
        }
    }
    let qi = BigInt::from(q.clone());
    let residue = acc
        .mod_floor(&qi)
        .to_biguint()
        .expect("mod_floor is non-negative");
    mod_reconstruct(&residue, q)
}

fn step_rng(seed: u64, step: usize, agent: usize) -> SimRng {
    stream(derive_seed(seed, step as u64), agent as u64)
}

fn reset_rngs(seed: u64, round: usize, n: usize) -> Vec<SimRng> {
    let base = derive_seed(derive_seed(seed, RESET_STREAM), round as u64);
    (0..n).map(|i| stream(base, i as u64)).collect()
}

struct Snapshot {
    states: Option<DVector<f64>>,
    int_states: Option<Vec<BigInt>>,
}

/// Stepwise behavior that differs between pipelines.
trait Pipeline {
    fn kind(&self) -> PipelineKind;
    /// Runs before round 1; may emit the bottom-up aggregation.
    fn start(&mut self) -> Result<(), EngineError>;
    /// One iteration `k -> k + 1` within the current round.
    fn iterate(&mut self, k: usize, step: usize) -> Result<(), EngineError>;
    fn leader_value(&self) -> f64;
    /// Computes the shifts from the leader's state after `round` and updates
    /// the leader.
    fn prepare_reset(&mut self, round: usize, reset_base: usize)
        -> Result<ResetEvent, EngineError>;
    /// Agents at depth `t` take their reset state.
    fn reset_step(&mut self, t: usize);
    fn snapshot(&self) -> Snapshot;
    fn messages(&mut self) -> Vec<MessageRecord>;
    fn overflow_counts(&self) -> (usize, usize);
}

fn drive<P: Pipeline>(
    inst: &Instance,
    p: &mut P,
    forced_rounds: Option<(usize, Termination)>,
) -> Result<Transcript, EngineError> {
    let cfg = &inst.config;
    let h = inst.height();
    let x1_star = inst.x_star[0];
    let mut steps = Vec::new();
    let mut resets = Vec::new();
    let mut step = 0usize;
    let record = |step: usize, round: usize, phase: Phase, p: &P, steps: &mut Vec<StepRecord>| {
        let leader = p.leader_value();
        let snap = p.snapshot();
        steps.push(StepRecord {
            step,
            round,
            phase,
            leader_state: leader,
            leader_deviation: (leader - x1_star).abs(),
            states: snap.states,
            int_states: snap.int_states,
        });
    };
    p.start()?;
    record(0, 1, Phase::Initial, p, &mut steps);
    let mut termination = Termination::RoundBudget;
    let mut rounds = 0;
    for round in 1..=cfg.max_rounds {
        let mut prev = p.leader_value();
        for k in 0..cfg.k_iter {
            prev = p.leader_value();
            step += 1;
            p.iterate(k, step)?;
            let phase = if round == 1 && cfg.max_rounds > 1 && k < h {
                Phase::ResetUp
            } else {
                Phase::Iterate
            };
            record(step, round, phase, p, &mut steps);
        }
        rounds = round;
        let stop = match forced_rounds {
            Some((r, t)) => (round == r).then_some(t),
            None if cfg.early_stop && (p.leader_value() - prev).abs() < cfg.term_eps => {
                Some(Termination::Converged { round })
            }
            None => None,
        };
        if let Some(t) = stop {
            termination = t;
            break;
        }
        if round == cfg.max_rounds {
            break;
        }
        let mut event = p.prepare_reset(round, step)?;
        for t in 1..=h {
            step += 1;
            p.reset_step(t);
            record(step, round, Phase::ResetDown, p, &mut steps);
        }
        event.completed_step = step;
        resets.push(event);
    }
    let (leader_overflows, overflow_suspicions) = p.overflow_counts();
    let mut messages = p.messages();
    messages.sort_by_key(|m| (m.step, m.direction as u8, m.from, m.to));
    Ok(Transcript {
        pipeline: p.kind(),
        n: inst.n(),
        k_iter: cfg.k_iter,
        height: h,
        s: cfg.s,
        x_star: inst.x_star.clone(),
        steps,
        messages,
        resets,
        termination,
        rounds,
        leader_overflows,
        overflow_suspicions,
    })
}

fn event_from(plan: &crate::reset::ResetPlan, round: usize) -> ResetEvent {
    ResetEvent {
        round,
        completed_step: 0,
        x1_hat: plan.x1_hat,
        dx1: plan.dx1,
        dxg: plan.dxg,
        d_sum: plan.d_sum,
    }
}

struct EncryptedPipeline<'a> {
    inst: &'a Instance,
    leader_ctx: &'a HeContext,
    public: HeContext,
    exec: Execution,
    z1: BigInt,
    leader_scale: usize,
    /// Follower ciphertexts; index 0 is unused.
    cts: Vec<Option<Ciphertext>>,
    scale: Vec<usize>,
    d_sum: Option<BigInt>,
    pending: Option<DownPhase>,
    messages: Vec<MessageRecord>,
    next_id: u64,
    suspicions: usize,
}

impl EncryptedPipeline<'_> {
    fn log_reset_messages(&mut self, msgs: &[ResetMessage], offset: usize) {
        if !self.inst.config.record_messages {
            return;
        }
        for m in msgs {
            self.messages.push(MessageRecord {
                step: offset + m.step,
                from: m.from,
                to: m.to,
                direction: m.direction,
                ciphertext_id: self.next_id,
            });
            self.next_id += 1;
        }
    }
}

impl Pipeline for EncryptedPipeline<'_> {
    fn kind(&self) -> PipelineKind {
        PipelineKind::Encrypted
    }

    fn start(&mut self) -> Result<(), EngineError> {
        let n = self.inst.n();
        for i in 1..n {
            let mut rng = step_rng(self.inst.config.seed, 0, i);
            self.cts[i] = Some(self.public.enc_signed(&BigInt::zero(), &mut rng)?);
        }
        if self.inst.config.max_rounds > 1 {
            let mut rngs = reset_rngs(self.inst.config.seed, 0, n);
            let up = collect_distances_encrypted(
                &self.inst.tree,
                &self.public,
                &self.inst.increments,
                &mut rngs,
            )?;
            self.d_sum = Some(leader_distance_sum(self.leader_ctx, &up)?);
            self.log_reset_messages(&up.messages, 0);
        }
        Ok(())
    }

    fn iterate(&mut self, k: usize, step: usize) -> Result<(), EngineError> {
        let inst = self.inst;
        let n = inst.n();
        let seed = inst.config.seed;
        let s = inst.config.s;
        let q = &inst.q;
        let mut rng0 = step_rng(seed, step, 0);
        let leader_ct = self.public.enc_signed(&self.z1, &mut rng0)?;
        if inst.config.record_messages {
            for i in 0..n {
                for &(j, _) in inst.graph.neighbors(i) {
                    self.messages.push(MessageRecord {
                        step,
                        from: i,
                        to: j,
                        direction: Direction::Iterate,
                        ciphertext_id: self.next_id + i as u64,
                    });
                }
            }
            self.next_id += n as u64;
        }
        let cts = &self.cts;
        let ct = |j: usize| {
            if j == 0 {
                &leader_ct
            } else {
                cts[j].as_ref().expect("follower ciphertext")
            }
        };
        let public = &self.public;
        let qd = &inst.quantized;
        let sk = pow_s(s, k);
        let updated: Vec<Result<Ciphertext, HeError>> = self.exec.map_indexed(n - 1, |idx| {
            let i = idx + 1;
            let row = qd.row(i);
            let mut rng = step_rng(seed, step, i);
            let mut acc = public.enc_signed(&(&sk * &row.affine), &mut rng)?;
            if !row.diag.is_zero() {
                acc = public.add_ct(&acc, &public.mul_signed(&row.diag, ct(i))?)?;
            }
            for (j, c) in &row.neighbors {
                if !c.is_zero() {
                    acc = public.add_ct(&acc, &public.mul_signed(c, ct(*j))?)?;
                }
            }
            Ok(acc)
        });
        let residues: Vec<(usize, BigUint)> = inst
            .graph
            .neighbors(0)
            .iter()
            .map(|&(j, _)| Ok((j, self.leader_ctx.dec(ct(j), DecryptRole::Leader)?)))
            .collect::<Result<_, HeError>>()?;
        self.z1 = leader_next_state(qd.row(0), &self.z1, &residues, k, s, q);
        for (idx, r) in updated.into_iter().enumerate() {
            self.cts[idx + 1] = Some(r?);
        }
        for sc in self.scale.iter_mut() {
            *sc = k + 2;
        }
        self.leader_scale = k + 2;
        let bound = inst.config.x1_bar + inst.delta.delta(k + 1);
        if self.leader_value().abs() > bound {
            self.suspicions += 1;
        }
        Ok(())
    }

    fn leader_value(&self) -> f64 {
        ratio_to_f64(&self.z1, &pow_s(self.inst.config.s, self.leader_scale))
    }

    fn prepare_reset(
        &mut self,
        round: usize,
        reset_base: usize,
    ) -> Result<ResetEvent, EngineError> {
        let inst = self.inst;
        let d_sum = self
            .d_sum
            .as_ref()
            .ok_or_else(|| EngineError::InvalidConfig("no distance sum".into()))?;
        let iplan = plan_from_integer(
            &self.z1,
            self.leader_scale,
            d_sum,
            inst.config.s,
            inst.n(),
            inst.weight,
        )?;
        let mut rngs = reset_rngs(inst.config.seed, round, inst.n());
        let down = distribute_reset_encrypted(
            &inst.tree,
            &self.public,
            &iplan,
            &inst.increments,
            &mut rngs,
        )?;
        self.log_reset_messages(&down.messages, reset_base);
        self.z1 = iplan.z_leader.clone();
        self.leader_scale = 1;
        self.pending = Some(down);
        Ok(event_from(&iplan.plan, round))
    }

    fn reset_step(&mut self, t: usize) {
        let down = self.pending.as_ref().expect("reset prepared");
        for i in 1..self.inst.n() {
            if self.inst.tree.depth(i) == t {
                self.cts[i] = down.states[i].clone();
                self.scale[i] = 1;
            }
        }
        self.scale[0] = 1;
    }

    fn snapshot(&self) -> Snapshot {
        if !self.inst.config.debug_decrypt {
            return Snapshot {
                states: None,
                int_states: None,
            };
        }
        let s = self.inst.config.s;
        let mut ints = vec![self.z1.clone()];
        for ct in self.cts.iter().skip(1) {
            let ct = ct.as_ref().expect("follower ciphertext");
            ints.push(
                self.leader_ctx
                    .dec_signed(ct, DecryptRole::DebugObserver)
                    .expect("debug decryption"),
            );
        }
        let mut scales = self.scale.clone();
        scales[0] = self.leader_scale;
        let states = DVector::from_iterator(
            ints.len(),
            ints.iter()
                .zip(&scales)
                .map(|(z, &e)| ratio_to_f64(z, &pow_s(s, e))),
        );
        Snapshot {
            states: Some(states),
            int_states: Some(ints),
        }
    }

    fn messages(&mut self) -> Vec<MessageRecord> {
        std::mem::take(&mut self.messages)
    }

    fn overflow_counts(&self) -> (usize, usize) {
        (0, self.suspicions)
    }
}

struct IntegerPipeline<'a> {
    inst: &'a Instance,
    exec: Execution,
    z: Vec<BigInt>,
    scale: Vec<usize>,
    pending: Option<Vec<BigInt>>,
    leader_overflows: usize,
    suspicions: usize,
}

impl IntegerPipeline<'_> {
    fn check_leader(&mut self) {
        if !fits_message_space(&self.z[0], &self.inst.q) {
            self.leader_overflows += 1;
        }
    }
}

impl Pipeline for IntegerPipeline<'_> {
    fn kind(&self) -> PipelineKind {
        PipelineKind::Integer
    }

    fn start(&mut self) -> Result<(), EngineError> {
        Ok(())
    }

    fn iterate(&mut self, k: usize, _step: usize) -> Result<(), EngineError> {
        let qd = &self.inst.quantized;
        let z = &self.z;
        self.z = self
            .exec
            .map_indexed(z.len(), |i| integer_step_agent(i, z, qd, k));
        for sc in self.scale.iter_mut() {
            *sc = k + 2;
        }
        self.check_leader();
        let bound = self.inst.config.x1_bar + self.inst.delta.delta(k + 1);
        if self.leader_value().abs() > bound {
            self.suspicions += 1;
        }
        Ok(())
    }

    fn leader_value(&self) -> f64 {
        ratio_to_f64(&self.z[0], &pow_s(self.inst.config.s, self.scale[0]))
    }

    fn prepare_reset(
        &mut self,
        round: usize,
        _reset_base: usize,
    ) -> Result<ResetEvent, EngineError> {
        let inst = self.inst;
        let d_sum: BigInt = inst.d_int.iter().sum();
        let iplan: IntegerResetPlan = plan_from_integer(
            &self.z[0],
            self.scale[0],
            &d_sum,
            inst.config.s,
            inst.n(),
            inst.weight,
        )?;
        let new = iplan.states(&inst.d_int);
        self.z[0] = new[0].clone();
        self.scale[0] = 1;
        self.check_leader();
        self.pending = Some(new);
        Ok(event_from(&iplan.plan, round))
    }

    fn reset_step(&mut self, t: usize) {
        let new = self.pending.as_ref().expect("reset prepared");
        for (i, (z, scale)) in self
            .z
            .iter_mut()
            .zip(self.scale.iter_mut())
            .enumerate()
            .skip(1)
        {
            if self.inst.tree.depth(i) == t {
                *z = new[i].clone();
                *scale = 1;
            }
        }
    }

    fn snapshot(&self) -> Snapshot {
        let s = self.inst.config.s;
        let states = DVector::from_iterator(
            self.z.len(),
            self.z
                .iter()
                .zip(&self.scale)
                .map(|(z, &e)| ratio_to_f64(z, &pow_s(s, e))),
        );
        Snapshot {
            states: Some(states),
            int_states: Some(self.z.clone()),
        }
    }

    fn messages(&mut self) -> Vec<MessageRecord> {
        Vec::new()
    }

    fn overflow_counts(&self) -> (usize, usize) {
        (self.leader_overflows, self.suspicions)
    }
}

struct FloatPipeline<'a> {
    inst: &'a Instance,
    x: DVector<f64>,
    pending: Option<DVector<f64>>,
}

impl Pipeline for FloatPipeline<'_> {
    fn kind(&self) -> PipelineKind {
        PipelineKind::Float
    }

    fn start(&mut self) -> Result<(), EngineError> {
        Ok(())
    }

    fn iterate(&mut self, _k: usize, _step: usize) -> Result<(), EngineError> {
        self.x = self.inst.dynamics.step(&self.x);
        Ok(())
    }

    fn leader_value(&self) -> f64 {
        self.x[0]
    }

    fn prepare_reset(
        &mut self,
        round: usize,
        _reset_base: usize,
    ) -> Result<ResetEvent, EngineError> {
        let inst = self.inst;
        let plan = compute_reset_shifts(self.x[0], inst.d_real.sum(), inst.n(), inst.weight)?;
        let new = apply_reset_plaintext(&plan, &inst.d_real);
        self.x[0] = new[0];
        self.pending = Some(new);
        Ok(event_from(&plan, round))
    }

    fn reset_step(&mut self, t: usize) {
        let new = self.pending.as_ref().expect("reset prepared");
        for i in 1..self.inst.n() {
            if self.inst.tree.depth(i) == t {
                self.x[i] = new[i];
            }
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            states: Some(self.x.clone()),
            int_states: None,
        }
    }

    fn messages(&mut self) -> Vec<MessageRecord> {
        Vec::new()
    }

    fn overflow_counts(&self) -> (usize, usize) {
        (0, 0)
    }
}

/// Runs the encrypted protocol. `ctx` must carry the secret key; followers
/// only ever see its public view.
pub fn run_encrypted(
    config: &ProtocolConfig,
    g: &MeasuredGraph,
    meas: &MeasurementSet,
    ctx: &HeContext,
) -> Result<Transcript, EngineError> {
    run_encrypted_with(config, g, meas, ctx, Execution::default())
}

pub fn run_encrypted_with(
    config: &ProtocolConfig,
    g: &MeasuredGraph,
    meas: &MeasurementSet,
    ctx: &HeContext,
    exec: Execution,
) -> Result<Transcript, EngineError> {
    if !ctx.has_secret() {
        return Err(HeError::MissingSecretKey.into());
    }
    let inst = Instance::prepare(config, g, meas, ctx.q())?;
    run_encrypted_instance(&inst, ctx, exec)
}

pub fn run_encrypted_instance(
    inst: &Instance,
    ctx: &HeContext,
    exec: Execution,
) -> Result<Transcript, EngineError> {
    let n = inst.n();
    let mut p = EncryptedPipeline {
        inst,
        leader_ctx: ctx,
        public: ctx.public_view(),
        exec,
        z1: BigInt::zero(),
        leader_scale: 1,
        cts: vec![None; n],
        scale: vec![1; n],
        d_sum: None,
        pending: None,
        messages: Vec::new(),
        next_id: 0,
        suspicions: 0,
    };
    drive(inst, &mut p, None)
}

pub fn run_integer_instance(inst: &Instance, exec: Execution) -> Result<Transcript, EngineError> {
    let n = inst.n();
    let mut p = IntegerPipeline {
        inst,
        exec,
        z: vec![BigInt::zero(); n],
        scale: vec![1; n],
        pending: None,
        leader_overflows: 0,
        suspicions: 0,
    };
    drive(inst, &mut p, None)
}

/// Float pipeline; `schedule` forces the number of rounds and termination
/// reason of another run so that resets line up.
pub fn run_float_instance(
    inst: &Instance,
    schedule: Option<(usize, Termination)>,
) -> Result<Transcript, EngineError> {
    let mut p = FloatPipeline {
        inst,
        x: DVector::zeros(inst.n()),
        pending: None,
    };
    drive(inst, &mut p, schedule)
}

/// Per-round comparison of the integer pipeline against a float trajectory
/// restarted from the integer pipeline's own round-start state.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundBoundCheck {
    pub round: usize,
    pub max_deviation: f64,
    pub max_ratio: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRun {
    pub float: Transcript,
    pub integer: Transcript,
    pub bound_checks: Vec<RoundBoundCheck>,
}

/// Float and crypto-free integer pipelines on the integer schedule.
pub fn run_plaintext_reference(
    config: &ProtocolConfig,
    g: &MeasuredGraph,
    meas: &MeasurementSet,
    q: &BigUint,
) -> Result<ReferenceRun, EngineError> {
    let inst = Instance::prepare(config, g, meas, q)?;
    run_reference_instance(&inst, Execution::default())
}

pub fn run_reference_instance(
    inst: &Instance,
    exec: Execution,
) -> Result<ReferenceRun, EngineError> {
    let integer = run_integer_instance(inst, exec)?;
    let float = run_float_instance(inst, Some((integer.rounds, integer.termination)))?;
    let bound_checks = round_bound_checks(inst, &integer);
    Ok(ReferenceRun {
        float,
        integer,
        bound_checks,
    })
}

fn round_bound_checks(inst: &Instance, integer: &Transcript) -> Vec<RoundBoundCheck> {
    let k_iter = inst.config.k_iter;
    let h = inst.height();
    let mut out = Vec::new();
    for round in 1..=integer.rounds {
        let start = (round - 1) * (k_iter + h);
        let Some(anchor) = integer.steps.get(start).and_then(|r| r.states.clone()) else {
            break;
        };
        let anchor_norm = anchor.amax();
        let mut x = anchor;
        let mut check = RoundBoundCheck {
            round,
            max_deviation: 0.0,
            max_ratio: 0.0,
            violations: 0,
        };
        for k in 1..=k_iter {
            x = inst.dynamics.step(&x);
            let Some(rec) = integer.steps.get(start + k).and_then(|r| r.states.as_ref()) else {
                break;
            };
            let dev = (rec - &x).amax();
            let bound = if round == 1 {
                inst.delta.delta(k)
            } else {
                inst.delta.delta_after_reset(k, anchor_norm)
            };
            let slack = fixedpoint::FLOAT_REFERENCE_SLACK * (1.0 + x.amax());
            if dev > bound + slack {
                check.violations += 1;
            }
            check.max_deviation = check.max_deviation.max(dev);
            if bound > 0.0 {
                check.max_ratio = check.max_ratio.max(dev / bound);
            }
        }
        out.push(check);
    }
    out
}

/// Number of steps where two integer traces differ, comparing leader and
/// (when both present) all agents.
pub fn count_integer_mismatches(a: &Transcript, b: &Transcript) -> usize {
    a.steps
        .iter()
        .zip(&b.steps)
        .filter(|(x, y)| match (&x.int_states, &y.int_states) {
            (Some(u), Some(v)) => u != v,
            _ => x.leader_state != y.leader_state,
        })
        .count()
        + a.steps.len().abs_diff(b.steps.len())
}

/// Largest absolute integer among a transcript's recorded integer states.
pub fn max_abs_integer(t: &Transcript) -> Option<BigInt> {
    t.steps
        .iter()
        .filter_map(|r| r.int_states.as_ref())
        .flatten()
        .map(|z| z.abs())
        .max()
}

/// `log2` of a positive integer as f64.
pub fn log2_big(z: &BigInt) -> f64 {
    if z.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = z.bits();
    let shift = bits.saturating_sub(60);
    (z.abs() >> shift).to_f64().unwrap_or(f64::NAN).log2() + shift as f64
}
