//! `affine-he`: fixture check, simulation, benchmark and moment analysis for
//! encrypted affine averaging.
//!
//! Settings resolve as flag, then config file, then preset, then default.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use affine_he::bench::{
    cmd_analyze, cmd_bench, cmd_example5, cmd_simulate, AnalyzeSpec, BenchmarkSpec, SimulateSpec,
};
use affine_he::graph::MeasuredGraph;
use affine_he::he::Backend;
use affine_he::par::Execution;
use affine_he::reset::ResetWeight;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(
    name = "affine-he",
    version,
    about = "Encrypted distributed state estimation by affine averaging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the five-node example and check B, P and the tree height.
    Example5,
    /// Run one seeded instance in the float, integer and encrypted pipelines.
    Simulate(Flags),
    /// Run a randomized benchmark suite with soft and hard resets.
    Bench(Flags),
    /// Monte Carlo moments of the centralized, hard-reset and soft-reset estimators.
    Analyze(Flags),
}

/// Every flag is optional so that the config file and presets can fill gaps.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct Flags {
    /// TOML file with the same keys as the long flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Named parameter set for simulate: tiny | paper.
    #[arg(long)]
    preset: Option<String>,
    /// Number of agents (bench: fixes both ends of the range).
    #[arg(long)]
    n: Option<usize>,
    /// Edge probability of the random graph.
    #[arg(long)]
    p_edge: Option<f64>,
    /// Seed; for bench this is the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed-point scale.
    #[arg(long)]
    s: Option<u64>,
    /// Bits of the message modulus q.
    #[arg(long)]
    q_bits: Option<u64>,
    /// mock | paillier
    #[arg(long)]
    backend: Option<String>,
    /// Iterations per round.
    #[arg(long)]
    k_iter: Option<usize>,
    /// Explicit reset weight; overrides --reset.
    #[arg(long)]
    w: Option<f64>,
    /// soft | hard
    #[arg(long)]
    reset: Option<String>,
    /// Iteration rounds (each followed by a reset).
    #[arg(long)]
    rounds: Option<usize>,
    /// Benchmark case count.
    #[arg(long)]
    cases: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Let an observer decrypt every state (simulation only, for inspection).
    #[arg(long)]
    debug_decrypt: bool,
    /// Leader state bound used for the overflow budget.
    #[arg(long)]
    x1_bar: Option<f64>,
    /// Early termination threshold on leader change between rounds.
    #[arg(long)]
    term_eps: Option<f64>,
    /// Rounds written to trajectory.csv, 0 for all.
    #[arg(long)]
    plot_rounds: Option<usize>,
    /// Noise draws for analyze.
    #[arg(long)]
    samples: Option<usize>,
    /// Graph JSON file instead of a random draw.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Run without the thread pool.
    #[arg(long)]
    sequential: bool,
}

impl Flags {
    /// Overlays `self` on top of the config file, if any.
    fn resolve(self) -> Result<Flags> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: Flags =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(Flags {
            config: self.config,
            preset: self.preset.or(file.preset),
            n: self.n.or(file.n),
            p_edge: self.p_edge.or(file.p_edge),
            seed: self.seed.or(file.seed),
            s: self.s.or(file.s),
            q_bits: self.q_bits.or(file.q_bits),
            backend: self.backend.or(file.backend),
            k_iter: self.k_iter.or(file.k_iter),
            w: self.w.or(file.w),
            reset: self.reset.or(file.reset),
            rounds: self.rounds.or(file.rounds),
            cases: self.cases.or(file.cases),
            out: self.out.or(file.out),
            debug_decrypt: self.debug_decrypt || file.debug_decrypt,
            x1_bar: self.x1_bar.or(file.x1_bar),
            term_eps: self.term_eps.or(file.term_eps),
            plot_rounds: self.plot_rounds.or(file.plot_rounds),
            samples: self.samples.or(file.samples),
            graph: self.graph.or(file.graph),
            sequential: self.sequential || file.sequential,
        })
    }

    fn backend(&self) -> Result<Option<Backend>> {
        self.backend
            .as_deref()
            .map(|b| b.parse::<Backend>().map_err(anyhow::Error::msg))
            .transpose()
    }

    fn weight(&self) -> Result<Option<ResetWeight>> {
        if let Some(w) = self.w {
            return Ok(Some(ResetWeight::Custom(w)));
        }
        match self.reset.as_deref() {
            None => Ok(None),
            Some(r @ ("soft" | "hard")) => Ok(Some(r.parse().map_err(anyhow::Error::msg)?)),
            Some(other) => {
                bail!("--reset must be soft or hard, got {other:?}; use --w for a custom weight")
            }
        }
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn load_graph(&self) -> Result<Option<MeasuredGraph>> {
        let Some(path) = &self.graph else {
            return Ok(None);
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading graph {}", path.display()))?;
        Ok(Some(MeasuredGraph::from_json(&text)?.0))
    }

    fn reject(&self, command: &str, unused: &[(&str, bool)]) -> Result<()> {
        for (name, set) in unused {
            if *set {
                bail!("--{name} has no effect for {command}");
            }
        }
        Ok(())
    }
}

fn simulate_spec(f: &Flags) -> Result<SimulateSpec> {
    let mut spec = match f.preset.as_deref() {
        None => SimulateSpec::default(),
        Some(name) => SimulateSpec::preset(name)
            .with_context(|| format!("unknown preset {name:?}; try tiny or paper"))?,
    };
    spec.n = f.n.unwrap_or(spec.n);
    spec.p_edge = f.p_edge.unwrap_or(spec.p_edge);
    spec.seed = f.seed.unwrap_or(spec.seed);
    spec.s = f.s.unwrap_or(spec.s);
    spec.q_bits = f.q_bits.unwrap_or(spec.q_bits);
    spec.backend = f.backend()?.unwrap_or(spec.backend);
    spec.k_iter = f.k_iter.unwrap_or(spec.k_iter);
    spec.reset = f.weight()?.unwrap_or(spec.reset);
    spec.rounds = f.rounds.unwrap_or(spec.rounds);
    spec.x1_bar = f.x1_bar.unwrap_or(spec.x1_bar);
    spec.term_eps = f.term_eps.unwrap_or(spec.term_eps);
    spec.plot_rounds = f.plot_rounds.unwrap_or(spec.plot_rounds);
    spec.debug_decrypt |= f.debug_decrypt;
    Ok(spec)
}

fn bench_spec(f: &Flags) -> Result<BenchmarkSpec> {
    f.reject(
        "bench",
        &[
            ("reset", f.reset.is_some()),
            ("w", f.w.is_some()),
            ("debug-decrypt", f.debug_decrypt),
        ],
    )?;
    let mut spec = BenchmarkSpec::default();
    if let Some(n) = f.n {
        spec.n_range = (n, n);
    }
    if let Some(p) = f.p_edge {
        spec.p_edge_range = (p, p);
    }
    if let Some(k) = f.k_iter {
        spec.k_iter_set = vec![k];
    }
    spec.master_seed = f.seed.unwrap_or(spec.master_seed);
    spec.s = f.s.unwrap_or(spec.s);
    spec.q_bits = f.q_bits.unwrap_or(spec.q_bits);
    spec.backend = f.backend()?.unwrap_or(spec.backend);
    spec.rounds = f.rounds.unwrap_or(spec.rounds);
    spec.n_cases = f.cases.unwrap_or(spec.n_cases);
    spec.x1_bar = f.x1_bar.unwrap_or(spec.x1_bar);
    spec.validate()?;
    Ok(spec)
}

fn analyze_spec(f: &Flags) -> Result<AnalyzeSpec> {
    f.reject(
        "analyze",
        &[
            ("backend", f.backend.is_some()),
            ("k-iter", f.k_iter.is_some()),
            ("rounds", f.rounds.is_some()),
        ],
    )?;
    let d = AnalyzeSpec::default();
    Ok(AnalyzeSpec {
        n: f.n.unwrap_or(d.n),
        p_edge: f.p_edge.unwrap_or(d.p_edge),
        seed: f.seed.unwrap_or(d.seed),
        samples: f.samples.unwrap_or(d.samples),
    })
}

fn print_written(dir: &Path) {
    println!("outputs written to {}", dir.display());
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let started = Instant::now();
    match cli.command {
        Command::Example5 => {
            let report = cmd_example5()?;
            print!("{}", report.to_text());
            println!("fixture ok");
        }
        Command::Simulate(flags) => {
            let flags = flags.resolve()?;
            let spec = simulate_spec(&flags)?;
            let report = cmd_simulate(&spec, flags.load_graph()?)?;
            let dir = flags.out_dir("out/simulate");
            report.write_outputs(&dir)?;
            print!("{}", report.summary_text());
            print_written(&dir);
        }
        Command::Bench(flags) => {
            let flags = flags.resolve()?;
            let spec = bench_spec(&flags)?;
            let report = cmd_bench(&spec, flags.execution())?;
            let dir = flags.out_dir("out/bench");
            report.write_outputs(&dir)?;
            print!("{}", report.summary_text());
            print_written(&dir);
        }
        Command::Analyze(flags) => {
            let flags = flags.resolve()?;
            let spec = analyze_spec(&flags)?;
            let report = cmd_analyze(&spec, flags.load_graph()?, flags.execution())?;
            let dir = flags.out_dir("out/analyze");
            report.write_outputs(&dir, spec.seed)?;
            println!("{}", report.to_text());
            print_written(&dir);
        }
    }
    eprintln!("elapsed {:.2?}", started.elapsed());
    Ok(())
}
