use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dwlight::io::{self, Sidecar};
use dwlight::lattice::DisorderKind;
use dwlight::protocols::{self, ExperimentConfig, Preset};
use dwlight::verify::{self, Check};
use dwlight::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "dwlight", version, about = "Quantum light through SSH waveguide lattices with movable domain walls")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed for disorder realizations.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for sweeps and ensembles.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Propagation step in cm.
    #[arg(long, global = true, value_name = "X")]
    dz: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Spectrum and IPR versus δ = v/u.
    Bands,
    /// Move a wall and follow each input state.
    Transport {
        /// Use the strong-strong junction instead of the default lattice.
        #[arg(long)]
        trivial: bool,
    },
    /// Merge two walls, hold, split, and sweep the hold length.
    Beamsplitter,
    /// Beam-splitter sweeps over static disorder realizations.
    Disorder {
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        /// Half-width of the uniform disorder, cm⁻¹.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Transmission of one wall move versus bend slope.
    Optimize,
    /// Compare the engine against the Fock-space reference and Wick closure.
    Verify {
        /// Fock cutoff for the squeezed input.
        #[arg(long, default_value_t = 12)]
        cutoff: usize,
        /// Tensor steps for the Wick comparison.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Coupling,
    Onsite,
    Both,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.disorder.seed = seed;
    }
    if let Some(dz) = common.dz {
        cfg.run.dz = dz;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(dir: &Path, name: &str, mut meta: Sidecar, started: Instant) -> Result<()> {
    meta.runtime_s = started.elapsed().as_secs_f64();
    for w in &meta.warnings {
        eprintln!("warning: {w}");
    }
    meta.save(&dir.join(format!("{name}.json")))
}

fn bands(cfg: &ExperimentConfig) -> Result<()> {
    let t = Instant::now();
    let dir = &cfg.output.dir;
    let sweep = protocols::bands_experiment(cfg)?;
    io::write_file(&dir.join("bands.csv"), |w| io::write_bands(w, &sweep))?;
    let mut meta = Sidecar::new("bands", cfg)?;
    meta.summary = json!({ "points": sweep.len() });
    println!("bands: {} values of delta -> {}", sweep.len(), dir.join("bands.csv").display());
    finish(dir, "bands", meta, t)
}

fn transport(cfg: &ExperimentConfig, trivial: bool) -> Result<()> {
    let t = Instant::now();
    let dir = &cfg.output.dir;
    let fallback = if trivial { Preset::TrivialTransport } else { Preset::Transport };
    let (setup, runs) = protocols::transport_suite(cfg, fallback)?;
    let mut meta = Sidecar::new("transport", cfg)?;
    meta.warnings.extend(setup.warnings.iter().cloned());
    let mut rows = Vec::new();
    for r in &runs {
        let name = format!("transport_{}.csv", r.input.label());
        io::write_file(&dir.join(&name), |w| io::write_trajectory(w, &r.trajectory))?;
        println!("{:<18} transmission {:.4}  -> {}", r.input.label(), r.transmission, dir.join(&name).display());
        meta.warnings.extend(r.trajectory.meta.warnings.iter().map(|w| format!("{}: {w}", r.input.label())));
        meta.runs.push(r.trajectory.meta.clone());
        rows.push(json!({
            "input": r.input,
            "csv": name,
            "transmission": r.transmission,
            "transmission_total": r.trajectory.transmission(setup.target)?,
            "phase_shift": r.phase_shift(),
        }));
    }
    meta.summary = json!({
        "source": setup.source,
        "target": setup.target,
        "gap": setup.gap,
        "runs": rows,
    });
    finish(dir, "transport", meta, t)
}

fn beamsplitter(cfg: &ExperimentConfig) -> Result<()> {
    let t = Instant::now();
    let dir = &cfg.output.dir;
    let res = protocols::beamsplitter_experiment(cfg)?;
    io::write_file(&dir.join("beamsplitter.csv"), |w| io::write_beamsplitter(w, &res))?;
    let mut meta = Sidecar::new("beamsplitter", cfg)?;
    meta.warnings.extend(res.warnings.iter().cloned());
    let [a, _] = res.readout;
    let mut fits = serde_json::Map::new();
    for (label, _) in &res.inputs {
        let (x, y): (Vec<f64>, Vec<f64>) = res.curve(label, "N", &[a]).into_iter().unzip();
        if let Ok(f) = protocols::fit_cos2(&x, &y, 0.5, 12.0) {
            fits.insert(label.clone(), json!({ "n_first_output": f }));
        }
        if let Ok(alt) = protocols::squeezing_alternation(&res, label) {
            if alt.single.amplitude > 1e-9 {
                fits.insert(format!("{label}_alternation"), serde_json::to_value(&alt)?);
            }
        }
    }
    meta.summary = json!({
        "readout": res.readout,
        "u": res.u,
        "approach_length": res.approach_length,
        "gap": res.gap,
        "fits": fits,
    });
    println!("beamsplitter: {} records -> {}", res.points.len(), dir.join("beamsplitter.csv").display());
    finish(dir, "beamsplitter", meta, t)
}

fn disorder(cfg: &ExperimentConfig, kind: Option<KindArg>, delta: Option<f64>, reps: Option<usize>) -> Result<()> {
    let t = Instant::now();
    let dir = &cfg.output.dir;
    let kinds = match kind {
        None => vec![cfg.disorder.kind],
        Some(KindArg::Coupling) => vec![DisorderKind::Coupling],
        Some(KindArg::Onsite) => vec![DisorderKind::Onsite],
        Some(KindArg::Both) => vec![DisorderKind::Coupling, DisorderKind::Onsite],
    };
    let delta = delta.unwrap_or(cfg.disorder.delta);
    let reps = reps.unwrap_or(cfg.disorder.repetitions);
    let results = kinds
        .iter()
        .map(|&k| protocols::disorder_ensemble(cfg, k, delta, reps))
        .collect::<Result<Vec<_>>>()?;
    io::write_file(&dir.join("disorder.csv"), |w| io::write_disorder(w, &results))?;
    let mut meta = Sidecar::new("disorder", cfg)?;
    meta.seed = Some(cfg.disorder.seed);
    let mut summary = Vec::new();
    for e in &results {
        for r in &e.realizations {
            meta.warnings.extend(r.warnings.iter().cloned());
            if let Some(err) = &r.error {
                meta.warnings.push(format!("realization seed {} failed: {err}", r.seed));
            }
        }
        summary.push(json!({ "kind": e.kind, "delta": e.delta, "repetitions": e.repetitions, "realizations": e.realizations }));
    }
    meta.summary = json!(summary);
    println!("disorder: {} ensemble(s) of {reps} -> {}", results.len(), dir.join("disorder.csv").display());
    finish(dir, "disorder", meta, t)
}

fn optimize(cfg: &ExperimentConfig) -> Result<()> {
    let t = Instant::now();
    let dir = &cfg.output.dir;
    let scan = protocols::optimize_slope(cfg, &cfg.optimize.slopes)?;
    io::write_file(&dir.join("optimize.csv"), |w| io::write_optimize(w, &scan))?;
    let mut meta = Sidecar::new("optimize", cfg)?;
    meta.summary = json!({ "best_slope": scan.best, "best_transmission": scan.best_transmission });
    println!("optimize: best slope {} with transmission {:.4}", scan.best, scan.best_transmission);
    finish(dir, "optimize", meta, t)
}

fn print_table(checks: &[Check]) {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:<width$}  {:>11.3e}  < {:.0e}", c.name, c.measured, c.tolerance);
    }
}

fn verify_cmd(cfg: &ExperimentConfig, cutoff: usize, steps: usize) -> Result<bool> {
    let mut checks = verify::oracle_checks(cutoff, cfg.run.dz)?;
    checks.extend(verify::wick_checks(steps)?);
    print_table(&checks);
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(failed == 0)
}

fn execute(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Bands => bands(&cfg)?,
        Command::Transport { trivial } => transport(&cfg, trivial)?,
        Command::Beamsplitter => beamsplitter(&cfg)?,
        Command::Disorder { kind, delta, reps } => disorder(&cfg, kind, delta, reps)?,
        Command::Optimize => optimize(&cfg)?,
        Command::Verify { cutoff, steps } => return verify_cmd(&cfg, cutoff, steps),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
