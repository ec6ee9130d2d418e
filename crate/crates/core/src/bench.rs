//! Command implementations behind the CLI: the five-node fixture, single
//! seeded simulations, randomized benchmark suites, and moment analysis.
//!
//! Every command is deterministic in its seeds. Benchmark cases derive their
//! own seed from the master seed and the case index, and rows are ordered by
//! case index whatever the execution mode.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_bigint::{BigInt, BigUint};
use num_traits::One;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{monte_carlo_reset_moments, EstimatorKind, MomentReport};
use crate::engine::{
    log2_big, run_encrypted_instance, run_reference_instance, Instance, ProtocolConfig,
    ReferenceRun, Transcript,
};
use crate::error::{Error, Result};
use crate::estimation::{sample_measurements, MeasurementSet};
use crate::fixedpoint::max_iterations;
use crate::graph::{
    build_reset_tree, example5_graph, format_int_rows, incidence_matrix, random_graph, GraphError,
    MeasuredGraph, RandomGraphConfig,
};
use crate::he::{keygen, Backend, HeContext};
use crate::par::Execution;
use crate::reset::{ResetKind, ResetWeight};
use crate::rng::{derive_seed, stream};

/// Incidence matrix of the five-node example, rows are agents.
pub const EXAMPLE5_B: [[i8; 6]; 5] = [
    [1, 1, 1, 0, 0, 0],
    [-1, 0, 0, 1, 0, 0],
    [0, -1, 0, -1, 1, 0],
    [0, 0, -1, 0, 0, 1],
    [0, 0, 0, 0, -1, -1],
];

/// Transposed path matrix of the five-node example, rows are `p_i^T`.
pub const EXAMPLE5_PT: [[i8; 6]; 5] = [
    [0, 0, 0, 0, 0, 0],
    [1, 0, 0, 0, 0, 0],
    [0, 1, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0],
    [0, 1, 0, 0, 1, 0],
];

pub const EXAMPLE5_HEIGHT: usize = 2;

/// Redraws of `(n, p_edge)` allowed when no connected graph is found.
const MAX_CASE_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Example5Report {
    pub b: Vec<Vec<i8>>,
    pub p_t: Vec<Vec<i8>>,
    pub height: usize,
}

impl Example5Report {
    pub fn to_text(&self) -> String {
        format!(
            "B =\n{}\nP^T =\n{}\nh = {}\n",
            format_int_rows(&self.b),
            format_int_rows(&self.p_t),
            self.height
        )
    }
}

/// Builds the five-node example and checks `B`, `P^T` and the tree height
/// against the reference matrices.
pub fn cmd_example5() -> Result<Example5Report> {
    let g = example5_graph(0.5);
    let inc = incidence_matrix(&g);
    let b: Vec<Vec<i8>> = (0..inc.rows()).map(|r| inc.row(r).to_vec()).collect();
    let tree = build_reset_tree(&g);
    let p_t = tree.path_rows().to_vec();
    let report = Example5Report {
        b,
        p_t,
        height: tree.height(),
    };
    if report
        .b
        .iter()
        .zip(EXAMPLE5_B.iter())
        .any(|(a, e)| a.as_slice() != e.as_slice())
    {
        return Err(Error::FixtureMismatch(format!(
            "incidence matrix differs:\n{}",
            format_int_rows(&report.b)
        )));
    }
    if report
        .p_t
        .iter()
        .zip(EXAMPLE5_PT.iter())
        .any(|(a, e)| a.as_slice() != e.as_slice())
    {
        return Err(Error::FixtureMismatch(format!(
            "path matrix differs:\n{}",
            format_int_rows(&report.p_t)
        )));
    }
    if report.height != EXAMPLE5_HEIGHT {
        return Err(Error::FixtureMismatch(format!(
            "tree height {} != {EXAMPLE5_HEIGHT}",
            report.height
        )));
    }
    if !tree.verify(&inc) {
        return Err(Error::FixtureMismatch("B p_i != e_1 - e_i".into()));
    }
    Ok(report)
}

/// Draws `x_i` uniformly from `[lo, hi]`.
pub fn random_states(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 0);
    (0..n).map(|_| rng.random_range(lo..=hi)).collect()
}

fn make_context(backend: Backend, q_bits: u64, seed: u64) -> Result<HeContext> {
    Ok(keygen(backend, q_bits, seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSpec {
    pub n: usize,
    pub p_edge: f64,
    pub seed: u64,
    pub s: u64,
    pub q_bits: u64,
    pub backend: Backend,
    pub k_iter: usize,
    pub reset: ResetWeight,
    pub rounds: usize,
    pub x1_bar: f64,
    pub term_eps: f64,
    pub debug_decrypt: bool,
    /// Rounds written to `trajectory.csv`; `0` writes all.
    pub plot_rounds: usize,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        SimulateSpec {
            n: 10,
            p_edge: 0.4,
            seed: 0,
            s: 1000,
            q_bits: 2048,
            backend: Backend::Mock,
            k_iter: 10,
            reset: ResetWeight::Soft,
            rounds: 6,
            x1_bar: 1e4,
            term_eps: 1e-6,
            debug_decrypt: false,
            plot_rounds: 3,
        }
    }
}

impl SimulateSpec {
    /// Named parameter sets; `tiny` is fast, `paper` matches the benchmark
    /// study's arithmetic.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(SimulateSpec {
                n: 5,
                q_bits: 512,
                k_iter: 5,
                rounds: 3,
                ..Default::default()
            }),
            "paper" => Some(SimulateSpec::default()),
            _ => None,
        }
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        ProtocolConfig {
            s: self.s,
            x1_bar: self.x1_bar,
            k_iter: self.k_iter,
            weight: self.reset,
            max_rounds: self.rounds,
            term_eps: self.term_eps,
            early_stop: true,
            alpha: None,
            seed: derive_seed(self.seed, 3),
            debug_decrypt: self.debug_decrypt,
            record_messages: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub spec: SimulateSpec,
    pub graph: MeasuredGraph,
    pub x_true: Vec<f64>,
    pub reference: ReferenceRun,
    pub encrypted: Transcript,
    pub height: usize,
    pub max_k_iter: usize,
}

impl SimulateReport {
    /// `step, round, phase, pipeline, agent, deviation` with deviation
    /// `x_i - x*_i`; encrypted rows cover the leader only unless debug
    /// decryption was on.
    pub fn write_trajectory_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "round", "phase", "pipeline", "agent", "deviation"])?;
        let limit = if self.spec.plot_rounds == 0 {
            usize::MAX
        } else {
            self.spec.plot_rounds
        };
        for t in [
            &self.reference.float,
            &self.reference.integer,
            &self.encrypted,
        ] {
            let pipeline = t.pipeline.to_string();
            for r in t.steps.iter().filter(|r| r.round <= limit) {
                let head = [
                    r.step.to_string(),
                    r.round.to_string(),
                    r.phase.to_string(),
                    pipeline.clone(),
                ];
                match &r.states {
                    Some(x) => {
                        for (i, v) in x.iter().enumerate() {
                            let dev = v - t.x_star[i];
                            out.write_record(
                                head.iter()
                                    .cloned()
                                    .chain([(i + 1).to_string(), dev.to_string()]),
                            )?;
                        }
                    }
                    None => {
                        let dev = r.leader_state - t.x_star[0];
                        out.write_record(
                            head.iter()
                                .cloned()
                                .chain(["1".to_string(), dev.to_string()]),
                        )?;
                    }
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "n = {}, m = {}, tree height = {}",
            self.graph.n(),
            self.graph.m(),
            self.height
        );
        let _ = writeln!(
            s,
            "s = {}, q_bits = {}, backend = {}, k_iter = {} (budget {}), reset = {}",
            self.spec.s,
            self.spec.q_bits,
            self.spec.backend,
            self.spec.k_iter,
            self.max_k_iter,
            self.spec.reset
        );
        let _ = writeln!(
            s,
            "rounds run = {}, termination = {:?}",
            self.encrypted.rounds, self.encrypted.termination
        );
        for ev in &self.encrypted.resets {
            let _ = writeln!(
                s,
                "reset after round {} done at step {}: dx1 = {:.6e}, dxg = {:.6e}",
                ev.round, ev.completed_step, ev.dx1, ev.dxg
            );
        }
        let dev = |t: &Transcript| {
            t.final_deviation()
                .map_or("hidden".to_string(), |d| format!("{d:.6e}"))
        };
        let _ = writeln!(
            s,
            "final deviation float     = {}",
            dev(&self.reference.float)
        );
        let _ = writeln!(
            s,
            "final deviation integer   = {}",
            dev(&self.reference.integer)
        );
        let _ = writeln!(s, "final deviation encrypted = {}", dev(&self.encrypted));
        let _ = writeln!(
            s,
            "final leader deviation    = {:.6e}",
            self.encrypted
                .steps
                .last()
                .map_or(0.0, |r| r.leader_deviation)
        );
        let violations: usize = self
            .reference
            .bound_checks
            .iter()
            .map(|c| c.violations)
            .sum();
        let _ = writeln!(s, "quantization bound violations = {violations}");
        let _ = writeln!(
            s,
            "leader overflows = {}",
            self.reference.integer.leader_overflows
        );
        s
    }

    /// Writes `trajectory.csv`, `transcript.csv`, `messages.csv`,
    /// `graph.json` and `summary.txt`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_trajectory_csv(fs::File::create(dir.join("trajectory.csv"))?)?;
        self.encrypted
            .write_csv(fs::File::create(dir.join("transcript.csv"))?)?;
        self.encrypted
            .write_messages_csv(fs::File::create(dir.join("messages.csv"))?)?;
        fs::write(
            dir.join("graph.json"),
            self.graph.to_json(Some(self.spec.seed)),
        )?;
        fs::write(dir.join("summary.txt"), self.summary_text())?;
        Ok(())
    }
}

/// Samples a connected graph; `graph` overrides the random draw.
pub fn cmd_simulate(spec: &SimulateSpec, graph: Option<MeasuredGraph>) -> Result<SimulateReport> {
    let g = match graph {
        Some(g) => g,
        None => random_graph(
            spec.n,
            spec.p_edge,
            &RandomGraphConfig::default(),
            derive_seed(spec.seed, 1),
        )?,
    };
    let x_true = random_states(g.n(), -10.0, 10.0, derive_seed(spec.seed, 2));
    let meas = sample_measurements(&g, &x_true, derive_seed(spec.seed, 4))?;
    let ctx = make_context(spec.backend, spec.q_bits, derive_seed(spec.seed, 5))?;
    let cfg = spec.protocol_config();
    let inst = Instance::prepare(&cfg, &g, &meas, ctx.q())?;
    let reference = run_reference_instance(&inst, Execution::default())?;
    let encrypted = run_encrypted_instance(&inst, &ctx, Execution::default())?;
    Ok(SimulateReport {
        spec: spec.clone(),
        height: inst.height(),
        max_k_iter: inst.max_k_iter,
        graph: g,
        x_true,
        reference,
        encrypted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub n_range: (usize, usize),
    pub p_edge_range: (f64, f64),
    pub sigma_set: Vec<f64>,
    pub x_range: (f64, f64),
    pub k_iter_set: Vec<usize>,
    pub rounds: usize,
    pub s: u64,
    pub q_bits: u64,
    pub backend: Backend,
    pub x1_bar: f64,
    pub n_cases: usize,
    pub master_seed: u64,
    /// Final-deviation threshold for the success fraction.
    pub accuracy: f64,
    /// Also run the encrypted pipeline and compare its leader.
    pub encrypted: bool,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            n_range: (10, 100),
            p_edge_range: (0.1, 0.7),
            sigma_set: vec![0.1, 0.5, 0.9],
            x_range: (-10.0, 10.0),
            k_iter_set: vec![5, 10, 15],
            rounds: 6,
            s: 1000,
            q_bits: 2048,
            backend: Backend::Mock,
            x1_bar: 1e4,
            n_cases: 100,
            master_seed: 0,
            accuracy: 1e-2,
            encrypted: true,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_cases == 0 {
            return bad("n_cases must be at least 1");
        }
        if self.n_range.0 < 2 || self.n_range.0 > self.n_range.1 {
            return bad("n_range must satisfy 2 <= lo <= hi");
        }
        if !(self.p_edge_range.0 > 0.0
            && self.p_edge_range.0 <= self.p_edge_range.1
            && self.p_edge_range.1 <= 1.0)
        {
            return bad("p_edge_range must satisfy 0 < lo <= hi <= 1");
        }
        if self.sigma_set.is_empty() || self.k_iter_set.is_empty() {
            return bad("sigma_set and k_iter_set must not be empty");
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        Ok(())
    }
}

/// One randomly drawn benchmark instance.
#[derive(Debug, Clone)]
pub struct BenchCase {
    pub case: usize,
    pub case_seed: u64,
    pub p_edge: f64,
    pub k_iter: usize,
    /// `(n, p_edge)` redraws needed to find a connected graph.
    pub redraws: usize,
    pub graph: MeasuredGraph,
    pub x_true: Vec<f64>,
    pub measurements: MeasurementSet,
}

pub fn generate_case(spec: &BenchmarkSpec, case: usize) -> Result<BenchCase> {
    let case_seed = derive_seed(spec.master_seed, case as u64);
    let mut rng = stream(case_seed, 0);
    let k_iter = *spec
        .k_iter_set
        .choose(&mut rng)
        .expect("non-empty k_iter set");
    let cfg = RandomGraphConfig {
        sigma_set: spec.sigma_set.clone(),
        ..Default::default()
    };
    for redraw in 0..MAX_CASE_REDRAWS {
        let n = rng.random_range(spec.n_range.0..=spec.n_range.1);
        let p_edge = rng.random_range(spec.p_edge_range.0..=spec.p_edge_range.1);
        let g = match random_graph(n, p_edge, &cfg, derive_seed(case_seed, 100 + redraw as u64)) {
            Ok(g) => g,
            Err(GraphError::ConnectivityRetriesExhausted(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let x_true = random_states(n, spec.x_range.0, spec.x_range.1, derive_seed(case_seed, 2));
        let measurements = sample_measurements(&g, &x_true, derive_seed(case_seed, 3))?;
        return Ok(BenchCase {
            case,
            case_seed,
            p_edge,
            k_iter,
            redraws: redraw,
            graph: g,
            x_true,
            measurements,
        });
    }
    Err(GraphError::ConnectivityRetriesExhausted(MAX_CASE_REDRAWS).into())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub case: usize,
    pub case_seed: u64,
    pub n: usize,
    pub m: usize,
    pub p_edge: f64,
    pub k_iter: usize,
    pub height: usize,
    pub reset: ResetKind,
    /// `||x - x*||_inf` of the integer pipeline after the last round.
    pub final_deviation: f64,
    pub leader_deviation: f64,
    /// Same two quantities for the floating-point reference.
    pub float_final_deviation: f64,
    pub float_leader_deviation: f64,
    pub leader_overflows: usize,
    /// Steps where the encrypted leader differs from the integer leader.
    pub leader_mismatches: usize,
    pub eq14_satisfied: bool,
    pub max_k_iter: usize,
    /// `log2 max_k |z_1(k)|` over the run.
    pub leader_log2_max: f64,
    pub redraws: usize,
    pub error: String,
}

impl BenchRow {
    pub fn overflow_flag(&self) -> bool {
        self.leader_overflows > 0 || self.leader_mismatches > 0
    }
}

fn failed_row(c: &BenchCase, reset: ResetKind, err: &Error) -> BenchRow {
    BenchRow {
        case: c.case,
        case_seed: c.case_seed,
        n: c.graph.n(),
        m: c.graph.m(),
        p_edge: c.p_edge,
        k_iter: c.k_iter,
        height: 0,
        reset,
        final_deviation: f64::NAN,
        leader_deviation: f64::NAN,
        float_final_deviation: f64::NAN,
        float_leader_deviation: f64::NAN,
        leader_overflows: 0,
        leader_mismatches: 0,
        eq14_satisfied: false,
        max_k_iter: 0,
        leader_log2_max: f64::NAN,
        redraws: c.redraws,
        error: err.to_string(),
    }
}

fn run_case_kind(
    spec: &BenchmarkSpec,
    c: &BenchCase,
    ctx: &HeContext,
    reset: ResetKind,
) -> Result<BenchRow> {
    let weight = match reset {
        ResetKind::Soft => ResetWeight::Soft,
        ResetKind::Hard => ResetWeight::Hard,
    };
    let cfg = ProtocolConfig {
        s: spec.s,
        x1_bar: spec.x1_bar,
        k_iter: c.k_iter,
        weight,
        max_rounds: spec.rounds,
        early_stop: false,
        seed: derive_seed(c.case_seed, 4),
        record_messages: false,
        ..Default::default()
    };
    let inst = Instance::prepare(&cfg, &c.graph, &c.measurements, ctx.q())?;
    let eq14 = max_iterations(spec.s, ctx.q(), spec.x1_bar, |k| inst.delta.delta(k))? >= c.k_iter;
    let reference = run_reference_instance(&inst, Execution::Sequential)?;
    let integer = &reference.integer;
    let leader_mismatches = if spec.encrypted {
        let enc = run_encrypted_instance(&inst, ctx, Execution::Sequential)?;
        enc.steps
            .iter()
            .zip(&integer.steps)
            .filter(|(a, b)| a.leader_state != b.leader_state)
            .count()
            + enc.steps.len().abs_diff(integer.steps.len())
    } else {
        0
    };
    let leader_max: BigInt = integer
        .steps
        .iter()
        .filter_map(|r| r.int_states.as_ref().map(|z| z[0].magnitude().clone()))
        .max()
        .map(BigInt::from)
        .unwrap_or_default();
    let last = integer.steps.last().expect("at least the initial step");
    let float = &reference.float;
    Ok(BenchRow {
        case: c.case,
        case_seed: c.case_seed,
        n: c.graph.n(),
        m: c.graph.m(),
        p_edge: c.p_edge,
        k_iter: c.k_iter,
        height: inst.height(),
        reset,
        final_deviation: integer.final_deviation().unwrap_or(f64::NAN),
        leader_deviation: last.leader_deviation,
        float_final_deviation: float.final_deviation().unwrap_or(f64::NAN),
        float_leader_deviation: float.steps.last().map_or(f64::NAN, |r| r.leader_deviation),
        leader_overflows: integer.leader_overflows,
        leader_mismatches,
        eq14_satisfied: eq14,
        max_k_iter: inst.max_k_iter,
        leader_log2_max: log2_big(&leader_max),
        redraws: c.redraws,
        error: String::new(),
    })
}

/// Both reset kinds on one case; failures become rows with `error` set.
pub fn run_case(spec: &BenchmarkSpec, case: usize, ctx: &HeContext) -> Vec<BenchRow> {
    let c = match generate_case(spec, case) {
        Ok(c) => c,
        Err(e) => {
            let stub = BenchCase {
                case,
                case_seed: derive_seed(spec.master_seed, case as u64),
                p_edge: f64::NAN,
                k_iter: 0,
                redraws: MAX_CASE_REDRAWS,
                graph: example5_graph(1.0),
                x_true: Vec::new(),
                measurements: MeasurementSet::noiseless(&example5_graph(1.0), &[0.0; 5])
                    .expect("valid"),
            };
            return [ResetKind::Soft, ResetKind::Hard]
                .iter()
                .map(|&k| failed_row(&stub, k, &e))
                .collect();
        }
    };
    [ResetKind::Soft, ResetKind::Hard]
        .iter()
        .map(|&k| run_case_kind(spec, &c, ctx, k).unwrap_or_else(|e| failed_row(&c, k, &e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindSummary {
    pub reset: ResetKind,
    pub cases: usize,
    pub below_accuracy: usize,
    pub fraction_below: f64,
    pub overflow_cases: usize,
    pub eq14_failures: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub spec: BenchmarkSpec,
    pub rows: Vec<BenchRow>,
    pub soft: KindSummary,
    pub hard: KindSummary,
}

fn summarize(rows: &[BenchRow], reset: ResetKind, accuracy: f64) -> KindSummary {
    let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.reset == reset).collect();
    let below = mine
        .iter()
        .filter(|r| r.error.is_empty() && r.final_deviation < accuracy)
        .count();
    KindSummary {
        reset,
        cases: mine.len(),
        below_accuracy: below,
        fraction_below: below as f64 / mine.len().max(1) as f64,
        overflow_cases: mine.iter().filter(|r| r.overflow_flag()).count(),
        eq14_failures: mine
            .iter()
            .filter(|r| r.error.is_empty() && !r.eq14_satisfied)
            .count(),
        errors: mine.iter().filter(|r| !r.error.is_empty()).count(),
    }
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "cases = {}, master_seed = {}, s = {}, q_bits = {}, backend = {}, rounds = {}",
            self.spec.n_cases,
            self.spec.master_seed,
            self.spec.s,
            self.spec.q_bits,
            self.spec.backend,
            self.spec.rounds
        );
        for k in [&self.soft, &self.hard] {
            let _ = writeln!(
                s,
                "{:?}: below {:e} in {}/{} ({:.3}), overflow cases {}, eq14 failures {}, errors {}",
                k.reset,
                self.spec.accuracy,
                k.below_accuracy,
                k.cases,
                k.fraction_below,
                k.overflow_cases,
                k.eq14_failures,
                k.errors
            );
        }
        s
    }

    /// Writes `bench.csv` and `summary.txt`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join("bench.csv"))?)?;
        fs::write(dir.join("summary.txt"), self.summary_text())?;
        Ok(())
    }
}

/// Runs all cases, in parallel across cases under [`Execution::Parallel`].
pub fn cmd_bench(spec: &BenchmarkSpec, exec: Execution) -> Result<BenchReport> {
    spec.validate()?;
    let ctx = match spec.backend {
        Backend::Mock => HeContext::mock_with_modulus(BigUint::one() << spec.q_bits),
        Backend::Paillier => make_context(Backend::Paillier, spec.q_bits, spec.master_seed)?,
    };
    let rows: Vec<BenchRow> = exec
        .map_indexed(spec.n_cases, |case| run_case(spec, case, &ctx))
        .into_iter()
        .flatten()
        .collect();
    let soft = summarize(&rows, ResetKind::Soft, spec.accuracy);
    let hard = summarize(&rows, ResetKind::Hard, spec.accuracy);
    Ok(BenchReport {
        spec: spec.clone(),
        rows,
        soft,
        hard,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeSpec {
    pub n: usize,
    pub p_edge: f64,
    pub seed: u64,
    pub samples: usize,
}

impl Default for AnalyzeSpec {
    fn default() -> Self {
        AnalyzeSpec {
            n: 10,
            p_edge: 0.4,
            seed: 0,
            samples: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeReport {
    pub graph: MeasuredGraph,
    pub x_true: Vec<f64>,
    pub reports: Vec<MomentReport>,
}

impl AnalyzeReport {
    pub fn to_text(&self) -> String {
        self.reports
            .iter()
            .map(MomentReport::to_text)
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Writes `moments.csv` (all estimators), `analysis.txt` and `graph.json`.
    pub fn write_outputs(&self, dir: &Path, seed: u64) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        for (i, r) in self.reports.iter().enumerate() {
            let mut part = Vec::new();
            r.write_csv(&mut part)?;
            let text = String::from_utf8(part).expect("csv is utf-8");
            // keep a single header
            let body = if i == 0 {
                text.as_str()
            } else {
                text.split_once('\n').map_or("", |(_, b)| b)
            };
            buf.extend_from_slice(body.as_bytes());
        }
        fs::write(dir.join("moments.csv"), buf)?;
        fs::write(dir.join("analysis.txt"), self.to_text())?;
        fs::write(dir.join("graph.json"), self.graph.to_json(Some(seed)))?;
        Ok(())
    }
}

pub fn cmd_analyze(
    spec: &AnalyzeSpec,
    graph: Option<MeasuredGraph>,
    exec: Execution,
) -> Result<AnalyzeReport> {
    let g = match graph {
        Some(g) => g,
        None => random_graph(
            spec.n,
            spec.p_edge,
            &RandomGraphConfig::default(),
            derive_seed(spec.seed, 1),
        )?,
    };
    let x_true = random_states(g.n(), -10.0, 10.0, derive_seed(spec.seed, 2));
    let reports = EstimatorKind::ALL
        .iter()
        .map(|&k| {
            monte_carlo_reset_moments(
                &g,
                &x_true,
                k,
                spec.samples,
                derive_seed(spec.seed, 6),
                exec,
            )
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(AnalyzeReport {
        graph: g,
        x_true,
        reports,
    })
}
