//! `dfrc` command-line runner.
//!
//! Exit codes: 0 on success, 1 on invalid input or a failed run, 2 when a
//! solver stopped without converging (all artifacts are still written).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dfrc_waveform::experiment::{
    run_evaluation, run_experiment, run_scaling_study, scaling_csv, EvaluationScene, ExperimentConfig, SolverKind,
};
use dfrc_waveform::Error;

/// Environment variable that fixes the worker thread count.
const THREADS_VAR: &str = "DFRC_THREADS";

#[derive(Parser)]
#[command(name = "dfrc", version, about = "Constant-modulus DFRC waveform design and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a waveform for every seed of a config and write its artifact bundle.
    Design {
        config: PathBuf,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// mm, ladmm or radar_only; overrides the config.
        #[arg(long)]
        solver: Option<SolverKind>,
        /// Output root; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a stored waveform against a scene description.
    Evaluate {
        waveform: PathBuf,
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `evaluation/` next to the waveform.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time both solvers over the config's block lengths.
    Scaling {
        config: PathBuf,
        /// Output root; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_VAR} must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn design(config: &Path, seed: Option<u64>, solver: Option<SolverKind>, out: Option<PathBuf>) -> Result<ExitCode, Error> {
    let mut cfg = load_config(config, out)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(s) = solver {
        cfg.solver = s;
    }
    let runs = run_experiment(&cfg)?;
    let mut all_converged = true;
    for r in &runs {
        let o = &r.outcome;
        let margin = o
            .margins
            .as_ref()
            .map_or("n/a".to_string(), |m| format!("{:.3e}", m.min_margin));
        println!(
            "seed {}: {} {} iterations, converged {}, objective {:.6e} (initial {:.6e}), min CI margin {margin}, {:.2} s -> {}",
            o.seed,
            o.solver.name(),
            o.iterations,
            o.converged,
            o.costs.total,
            o.initial_costs.total,
            o.wall_sec,
            r.dir.display()
        );
        all_converged &= o.converged;
    }
    if all_converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("warning: at least one run stopped before converging");
        Ok(ExitCode::from(2))
    }
}

fn evaluate(waveform: &Path, scene: &Path, seed: u64, out: Option<PathBuf>) -> Result<ExitCode, Error> {
    let ev = EvaluationScene::load(scene)?;
    let dir = out.unwrap_or_else(|| waveform.parent().unwrap_or(Path::new(".")).join("evaluation"));
    let manifest = run_evaluation(waveform, &ev, seed, &dir)?;
    for a in &manifest.artifacts {
        println!("{} ({} bytes)", dir.join(&a.file).display(), a.bytes);
    }
    Ok(ExitCode::SUCCESS)
}

fn scaling(config: &Path, out: Option<PathBuf>) -> Result<ExitCode, Error> {
    let cfg = load_config(config, out)?;
    let rows = run_scaling_study(&cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("scaling.csv");
    fs::write(&path, scaling_csv(&rows))?;
    for r in &rows {
        println!(
            "L {:>4} {:>10}: {:>9.3} s, {:>6} iterations{}",
            r.block_len,
            r.solver.name(),
            r.wall_sec,
            r.iterations,
            if r.censored { " (censored)" } else { "" }
        );
    }
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let res = match cli.command {
        Command::Design {
            config,
            seed,
            solver,
            out,
        } => design(&config, seed, solver, out),
        Command::Evaluate {
            waveform,
            scene,
            seed,
            out,
        } => evaluate(&waveform, &scene, seed, out),
        Command::Scaling { config, out } => scaling(&config, out),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
