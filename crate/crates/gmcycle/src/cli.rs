//! Command-line front end.
//!
//! Every run takes its parameters from an optional JSON config file (strict
//! schema: unknown keys are rejected) overlaid with command-line flags,
//! resolves them into a single config object, and writes its outputs into a
//! directory named from the SHA-256 hash of that object, next to a
//! `manifest.json` echoing the resolved configuration. Identical config and
//! seed therefore produce byte-identical outputs in the same place.
//!
//! Exit codes: 0 on success, 1 on numerical failure (non-convergence,
//! blow-up, missing bracket), 2 on invalid input or configuration.

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::continuation::{continue_branch, fold_scan_kappa, BranchParameter};
use crate::dynamics::{classify_by_simulation, integrate, IntegrationMode, SimConfig};
use crate::error::{Error, Result};
use crate::exact::{critical_dv, exact_spectrum, exact_symmetric_solution};
use crate::lattice::{LatticeParams, LatticeState};
use crate::mesa::{mesa_profile_with_branch, refined_mesa, BranchSign};
use crate::spikes::{assemble_profile, default_guesses, refine_on_lattice, solve_heights};
use crate::stability::{
    pencil_spectrum_with_tol, reduced_spectrum_with_tol, symmetric_configuration,
    DEFAULT_MARGINAL_TOL,
};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "GMCYCLE_OUT";

#[derive(Parser)]
#[command(
    name = "gmcycle",
    version,
    about = "Localized patterns of the Gierer-Meinhardt system on a cycle graph",
    after_help = "Each subcommand accepts --config <file.json> with the same keys as its \
                  flags (strict schema; unknown keys are errors). Flags override config \
                  values. Outputs land in <out>/<subcommand>-<config hash>/ with a \
                  manifest.json echoing the resolved configuration."
)]
struct Cli {
    /// Output directory (default: $GMCYCLE_OUT or ./out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Cap on worker threads for parallel sweeps
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve spike heights at given positions and assemble/refine lattice states
    Construct(ConstructArgs),
    /// Reduced and dense spectra of a spike configuration
    Stability(StabilityArgs),
    /// Symmetric K-spike stability threshold d_c(K)
    Threshold(ThresholdArgs),
    /// Exact discrete symmetric K-spike solution (zigzag for m = 2)
    Exact(ExactArgs),
    /// Leading-order m-mesa profile, refinement, and classification
    Mesa(MesaArgs),
    /// Time integration with optional perturbation and classification
    Simulate(SimulateArgs),
    /// Pseudo-arclength continuation of a steady-state branch
    Continue(ContinueArgs),
    /// Critical D_v sweep over spike spacings (resumable)
    Sweep(SweepArgs),
}

fn default_true() -> bool {
    true
}

// ---------------------------------------------------------------------------
// construct

#[derive(Args)]
struct ConstructArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Node count
    #[arg(long)]
    n: Option<usize>,
    /// Diffusion length d (D_v = d^2 n^2)
    #[arg(long)]
    d: Option<f64>,
    /// Evenly spaced spike count (alternative to --positions)
    #[arg(long, short = 'K')]
    k: Option<usize>,
    /// Comma-separated spike positions in [0, 1)
    #[arg(long, value_delimiter = ',')]
    positions: Option<Vec<f64>>,
    /// Skip Newton refinement of the assembled profiles
    #[arg(long)]
    no_refine: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstructConfig {
    n: usize,
    d: f64,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positions: Option<Vec<f64>>,
    #[serde(default = "default_true")]
    refine: bool,
}

fn construct_positions(config: &ConstructConfig) -> Result<Vec<f64>> {
    match (&config.positions, config.k) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(k)) if k >= 1 => Ok((0..k).map(|j| j as f64 / k as f64).collect()),
        _ => Err(Error::Config(
            "construct needs either positions or a spike count K".into(),
        )),
    }
}

fn run_construct(config: ConstructConfig, dir: &Path) -> Result<Vec<String>> {
    let positions = construct_positions(&config)?;
    let guesses = default_guesses(&positions, config.d)?;
    let solve = solve_heights(&positions, config.d, &guesses)?;
    if solve.configurations.is_empty() {
        return Err(Error::Numerical(
            "no spike configuration converged from the default guesses".into(),
        ));
    }
    let mut outputs = Vec::new();
    let solutions: Vec<serde_json::Value> =
        solve.configurations.iter().map(|c| c.to_json()).collect();
    outputs.push(write_json(dir, "solutions.json", &serde_json::json!(solutions))?);
    let params = LatticeParams::from_diffusion_length(config.n, config.d)?;
    for (i, c) in solve.configurations.iter().enumerate() {
        let assembled = assemble_profile(c, config.n)?;
        outputs.push(write_state_csv(dir, &format!("assembled_{i}.csv"), &assembled)?);
        if config.refine {
            let refined = refine_on_lattice(&assembled, &params)?;
            outputs.push(write_state_csv(dir, &format!("refined_{i}.csv"), &refined.state)?);
        }
    }
    println!(
        "construct: {} configuration(s) at d = {}, n = {}",
        solve.configurations.len(),
        config.d,
        config.n
    );
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// stability

#[derive(Args)]
struct StabilityArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long, short = 'K')]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    positions: Option<Vec<f64>>,
    /// Also eigensolve the full lattice pencil at the refined state
    #[arg(long)]
    dense: bool,
    /// Width of the marginal band around zero
    #[arg(long)]
    marginal_tol: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StabilityConfig {
    n: usize,
    d: f64,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positions: Option<Vec<f64>>,
    #[serde(default)]
    dense: bool,
    #[serde(default = "default_marginal_tol")]
    marginal_tol: f64,
}

fn default_marginal_tol() -> f64 {
    DEFAULT_MARGINAL_TOL
}

fn run_stability(config: StabilityConfig, dir: &Path) -> Result<Vec<String>> {
    let positions = construct_positions(&ConstructConfig {
        n: config.n,
        d: config.d,
        k: config.k,
        positions: config.positions.clone(),
        refine: true,
    })?;
    let solve = solve_heights(&positions, config.d, &default_guesses(&positions, config.d)?)?;
    if solve.configurations.is_empty() {
        return Err(Error::Numerical("no configuration to analyze".into()));
    }
    let mut outputs = Vec::new();
    for (i, c) in solve.configurations.iter().enumerate() {
        let report = reduced_spectrum_with_tol(c, config.marginal_tol)?;
        println!(
            "configuration {i} heights {:?}: {} (max Re = {:.6})",
            c.heights(),
            report.classification(),
            report.max_real()
        );
        outputs.push(write_json(dir, &format!("reduced_{i}.json"), &report.to_json())?);
        if config.dense {
            let params = LatticeParams::from_diffusion_length(config.n, config.d)?;
            let refined = refine_on_lattice(&assemble_profile(c, config.n)?, &params)?;
            let dense = pencil_spectrum_with_tol(&params, &refined.state, config.marginal_tol)?;
            println!(
                "  dense pencil: {} (max Re = {:.6})",
                dense.classification(),
                dense.max_real()
            );
            outputs.push(write_json(dir, &format!("dense_{i}.json"), &dense.to_json())?);
        }
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// threshold

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Spike count K >= 2
    #[arg(long, short = 'K')]
    k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdConfig {
    #[serde(rename = "K")]
    k: usize,
}

fn run_threshold(config: ThresholdConfig, dir: &Path) -> Result<Vec<String>> {
    let dc = crate::stability::symmetric_threshold(config.k)?;
    println!("d_c(K={}) = {:.4}", config.k, dc);
    let payload = serde_json::json!({ "K": config.k, "d_c": dc });
    Ok(vec![write_json(dir, "threshold.json", &payload)?])
}

// ---------------------------------------------------------------------------
// exact

#[derive(Args)]
struct ExactArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, short = 'K')]
    k: Option<usize>,
    /// Inhibitor diffusion D_v
    #[arg(long = "Dv")]
    dv: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExactConfig {
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "Dv")]
    dv: f64,
}

fn run_exact(config: ExactConfig, dir: &Path) -> Result<Vec<String>> {
    let (sol, state) = exact_symmetric_solution(config.n, config.k, config.dv)?;
    let report = exact_spectrum(&sol);
    println!(
        "exact symmetric {}-spike on n = {} at D_v = {}: {} (max Re = {:.6})",
        config.k,
        config.n,
        config.dv,
        report.classification(),
        report.max_real()
    );
    let mut outputs = vec![
        write_state_csv(dir, "state.csv", &state)?,
        write_json(dir, "spectrum.json", &report.to_json())?,
        write_json(
            dir,
            "solution.json",
            &serde_json::json!({
                "n": sol.n, "K": sol.k, "m": sol.m, "Dv": sol.d_v,
                "alpha1": sol.alpha1, "alpha2": sol.alpha2,
                "C": sol.c, "a": sol.a_coef, "b": sol.b_coef,
            }),
        )?,
    ];
    if config.k >= 2 {
        let dvc = critical_dv(config.n, config.k)?;
        println!("critical D_v = {dvc:.6}");
        outputs.push(write_json(
            dir,
            "critical.json",
            &serde_json::json!({ "n": config.n, "K": config.k, "Dvc": dvc }),
        )?);
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// mesa

#[derive(Args)]
struct MesaArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Plateau width in nodes
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    /// Recursion steps (k >= 2) forced onto the plus branch
    #[arg(long, value_delimiter = ',')]
    plus_steps: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MesaConfig {
    n: usize,
    m: usize,
    kappa: f64,
    eps2: f64,
    #[serde(default)]
    plus_steps: Vec<usize>,
}

fn run_mesa(config: MesaConfig, dir: &Path) -> Result<Vec<String>> {
    let max_off = (config.n - config.m).div_ceil(2);
    let mut branch = vec![BranchSign::Minus; max_off];
    for &step in &config.plus_steps {
        if step < 2 || step > max_off + 1 {
            return Err(Error::Config(format!(
                "plus step {step} outside the recursion range 2..={}",
                max_off + 1
            )));
        }
        branch[step - 2] = BranchSign::Plus;
    }
    let (profile, seed) = mesa_profile_with_branch(
        config.n,
        config.m,
        config.kappa,
        config.eps2,
        &branch,
    )?;
    let refined = refined_mesa(&seed, config.n, config.kappa, config.eps2)?;
    let params = LatticeParams::new(
        config.n,
        config.eps2,
        config.kappa * config.eps2,
        0.0,
    )?;
    let report = pencil_spectrum_with_tol(&params, &refined.state, DEFAULT_MARGINAL_TOL)?;
    println!(
        "{}-mesa on n = {} at kappa = {}, eps^2 = {}: {} (max Re = {:.6}, residual {:.2e})",
        config.m,
        config.n,
        config.kappa,
        config.eps2,
        report.classification(),
        report.max_real(),
        refined.residual
    );
    let mut recursion = Vec::new();
    profile.write_recursion_csv(&mut recursion)?;
    Ok(vec![
        write_state_csv(dir, "state.csv", &refined.state)?,
        write_bytes(dir, "recursion.csv", &recursion)?,
        write_json(dir, "spectrum.json", &report.to_json())?,
    ])
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long = "Du")]
    du: Option<f64>,
    #[arg(long = "Dv")]
    dv: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Start from a symmetric K-spike state
    #[arg(long, short = 'K')]
    k: Option<usize>,
    /// Start from a lattice state CSV (header node,u,v)
    #[arg(long)]
    initial_csv: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// explicit | imex | dae
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    sample_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    perturb_amp: Option<f64>,
    /// Classify stability by perturbed simulation instead of just integrating
    #[arg(long)]
    classify: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<f64>,
    #[serde(default, rename = "Du")]
    du: f64,
    #[serde(default, rename = "Dv", skip_serializing_if = "Option::is_none")]
    dv: Option<f64>,
    #[serde(default)]
    tau: f64,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_csv: Option<String>,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default = "default_t_end")]
    t_end: f64,
    #[serde(default = "default_mode")]
    mode: IntegrationMode,
    #[serde(default = "default_sample_every")]
    sample_every: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_perturb_amp")]
    perturb_amp: f64,
    #[serde(default)]
    classify: bool,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_t_end() -> f64 {
    200.0
}
fn default_mode() -> IntegrationMode {
    IntegrationMode::Dae
}
fn default_sample_every() -> usize {
    1000
}
fn default_perturb_amp() -> f64 {
    1e-3
}

fn run_simulate(config: SimulateConfig, dir: &Path) -> Result<Vec<String>> {
    let d_v = match (config.dv, config.d) {
        (Some(dv), _) => dv,
        (None, Some(d)) => d * d * (config.n * config.n) as f64,
        (None, None) => {
            return Err(Error::Config("simulate needs either Dv or d".into()));
        }
    };
    let params = LatticeParams::new(config.n, config.du, d_v, config.tau)?;
    let initial = match (&config.initial_csv, config.k) {
        (Some(path), _) => {
            let file = fs::File::open(path)?;
            LatticeState::read_csv(std::io::BufReader::new(file))?
        }
        (None, Some(k)) => {
            let d = d_v.sqrt() / config.n as f64;
            let sym = symmetric_configuration(k, d)?;
            refine_on_lattice(&assemble_profile(&sym, config.n)?, &params)?.state
        }
        (None, None) => {
            return Err(Error::Config(
                "simulate needs either initial_csv or a spike count K".into(),
            ));
        }
    };
    let sim = SimConfig {
        dt: config.dt,
        t_end: config.t_end,
        mode: config.mode,
        sample_every: config.sample_every,
        seed: config.seed,
        perturb_amp: config.perturb_amp,
    };
    let mut outputs = Vec::new();
    if config.classify {
        let verdict = classify_by_simulation(&params, &initial, &sim)?;
        println!("classification: {verdict}");
        outputs.push(write_json(
            dir,
            "classification.json",
            &serde_json::json!({ "classification": verdict }),
        )?);
    } else {
        let traj = integrate(&params, &initial, &sim)?;
        println!(
            "integrated to t = {} ({} samples, outcome {:?})",
            traj.times.last().copied().unwrap_or(0.0),
            traj.times.len(),
            traj.outcome
        );
        let mut long = Vec::new();
        traj.write_csv(&mut long)?;
        let mut summary = Vec::new();
        traj.write_summary_csv(&mut summary)?;
        outputs.push(write_bytes(dir, "trajectory.csv", &long)?);
        outputs.push(write_bytes(dir, "summary.csv", &summary)?);
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// continue

#[derive(Args)]
struct ContinueArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "Du")]
    du: Option<f64>,
    /// d | kappa | Dv
    #[arg(long)]
    parameter: Option<String>,
    #[arg(long)]
    from: Option<f64>,
    #[arg(long)]
    to: Option<f64>,
    #[arg(long)]
    step0: Option<f64>,
    /// Start from a symmetric K-spike (use variant for the asymmetric branch)
    #[arg(long, short = 'K')]
    k: Option<usize>,
    /// symmetric | asymmetric (closed-form branch at the start value)
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    start_csv: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContinueConfig {
    n: usize,
    #[serde(default, rename = "Du")]
    du: f64,
    parameter: BranchParameter,
    from: f64,
    to: f64,
    #[serde(default = "default_step0")]
    step0: f64,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default = "default_variant")]
    variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_csv: Option<String>,
}

fn default_step0() -> f64 {
    0.01
}
fn default_variant() -> String {
    "symmetric".into()
}

fn continuation_start(config: &ContinueConfig, params: &LatticeParams) -> Result<LatticeState> {
    if let Some(path) = &config.start_csv {
        let file = fs::File::open(path)?;
        return LatticeState::read_csv(std::io::BufReader::new(file));
    }
    let k = config.k.ok_or_else(|| {
        Error::Config("continue needs either start_csv or a spike count K".into())
    })?;
    if config.parameter != BranchParameter::DiffusionLength {
        return Err(Error::Config(
            "spike-count starts are only wired up for the d parameter; \
             pass start_csv for kappa or Dv branches"
                .into(),
        ));
    }
    let d = config.from;
    let configuration = match (config.variant.as_str(), k) {
        ("symmetric", _) => symmetric_configuration(k, d)?,
        ("asymmetric", 2) => crate::spikes::two_spike_closed_form(0.5, d)?
            .into_iter()
            .nth(1)
            .ok_or_else(|| {
                Error::Nonexistence(format!("no asymmetric two-spike branch at d = {d}"))
            })?,
        ("asymmetric", 3) => crate::spikes::three_spike_even_closed_form(d)?
            .into_iter()
            .nth(1)
            .ok_or_else(|| {
                Error::Nonexistence(format!("no asymmetric three-spike branch at d = {d}"))
            })?,
        (variant, _) => {
            return Err(Error::Config(format!(
                "unknown variant '{variant}' (or no closed form for K = {k})"
            )))
        }
    };
    let refined = refine_on_lattice(&assemble_profile(&configuration, params.n)?, params)?;
    Ok(refined.state)
}

fn run_continue(config: ContinueConfig, dir: &Path) -> Result<Vec<String>> {
    let d_v0 = match config.parameter {
        BranchParameter::DiffusionLength => {
            config.from * config.from * (config.n * config.n) as f64
        }
        BranchParameter::Kappa => config.from * config.du,
        BranchParameter::Dv => config.from,
    };
    let params = LatticeParams::new(config.n, config.du, d_v0, 0.0)?;
    let start = continuation_start(&config, &params)?;
    let branch = continue_branch(
        &params,
        &start,
        config.parameter,
        (config.from, config.to),
        config.step0,
    )?;
    println!(
        "branch: {} points, folds at {:?}{}",
        branch.points.len(),
        branch.folds,
        branch
            .truncated
            .as_ref()
            .map(|t| format!(" (truncated: {t})"))
            .unwrap_or_default()
    );
    let mut csv = Vec::new();
    branch.write_csv(&mut csv)?;
    let mut outputs = vec![
        write_bytes(dir, "branch.csv", &csv)?,
        write_json(
            dir,
            "folds.json",
            &serde_json::json!({
                "parameter": branch.parameter.name(),
                "folds": branch.folds,
                "truncated": branch.truncated,
            }),
        )?,
    ];
    let states_dir = dir.join("states");
    fs::create_dir_all(&states_dir)?;
    for (i, point) in branch.points.iter().enumerate() {
        let name = format!("states/point_{i:04}.csv");
        let mut buf = Vec::new();
        point.state.write_csv(&mut buf)?;
        fs::write(dir.join(&name), &buf)?;
        outputs.push(name);
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Spike spacings m to sweep (divisors of n); default: every divisor with K >= 2
    #[arg(long, value_delimiter = ',')]
    m_values: Option<Vec<usize>>,
    /// Scan the kappa fold over these D_u values instead of critical D_v
    #[arg(long, value_delimiter = ',')]
    du_values: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m_values: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    du_values: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize, Default)]
struct SweepProgress {
    completed: Vec<String>,
}

fn run_sweep(config: SweepConfig, dir: &Path) -> Result<Vec<String>> {
    if let Some(du_values) = &config.du_values {
        let scan = fold_scan_kappa(du_values, config.n)?;
        let mut csv = String::from("Du,kappa_f,connects_to_dimple\n");
        for p in &scan.points {
            csv.push_str(&format!(
                "{},{},{}\n",
                p.d_u, p.kappa_f, p.connects_to_dimple as u8
            ));
        }
        for w in &scan.warnings {
            eprintln!("warning: {w}");
        }
        for (du, err) in &scan.failures {
            eprintln!("warning: D_u = {du} failed: {err}");
        }
        println!("fold scan: {} point(s)", scan.points.len());
        return Ok(vec![write_bytes(dir, "fold_scan.csv", csv.as_bytes())?]);
    }

    let m_values: Vec<usize> = match &config.m_values {
        Some(values) => values.clone(),
        None => (1..=config.n / 2)
            .filter(|m| config.n % m == 0 && config.n / m >= 2)
            .collect(),
    };
    for &m in &m_values {
        if config.n % m != 0 {
            return Err(Error::Config(format!(
                "m = {m} does not divide n = {}",
                config.n
            )));
        }
    }

    // resume support: skip grid points the manifest already records
    let progress_path = dir.join("progress.json");
    let mut progress: SweepProgress = if progress_path.exists() {
        serde_json::from_str(&fs::read_to_string(&progress_path)?)?
    } else {
        SweepProgress::default()
    };
    let csv_path = dir.join("critical_dv.csv");
    if !csv_path.exists() {
        fs::write(&csv_path, "n,K,m,Dvc,sqrtDvc_over_m\n")?;
    }
    let pending: Vec<usize> = m_values
        .iter()
        .copied()
        .filter(|m| !progress.completed.contains(&m.to_string()))
        .collect();
    use rayon::prelude::*;
    let results: Vec<(usize, Result<f64>)> = pending
        .par_iter()
        .map(|&m| (m, critical_dv(config.n, config.n / m)))
        .collect();
    let mut file = fs::OpenOptions::new().append(true).open(&csv_path)?;
    for (m, result) in results {
        let dvc = result?;
        writeln!(
            file,
            "{},{},{},{},{}",
            config.n,
            config.n / m,
            m,
            dvc,
            dvc.sqrt() / m as f64
        )?;
        progress.completed.push(m.to_string());
    }
    fs::write(&progress_path, serde_json::to_string_pretty(&progress)?)?;
    println!(
        "sweep: {} grid point(s) complete ({} skipped as already done)",
        progress.completed.len(),
        m_values.len() - pending.len(),
    );
    Ok(vec!["critical_dv.csv".into(), "progress.json".into()])
}

// ---------------------------------------------------------------------------
// config resolution and output plumbing

fn load_config<T: DeserializeOwned>(path: &Option<PathBuf>) -> Result<Option<T>> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let value: T = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            Ok(Some(value))
        }
        None => Ok(None),
    }
}

fn require<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("missing required parameter: {what}")))
}

fn config_hash(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn out_root(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(name.to_string())
}

fn write_bytes(dir: &Path, name: &str, bytes: &[u8]) -> Result<String> {
    fs::write(dir.join(name), bytes)?;
    Ok(name.to_string())
}

fn write_state_csv(dir: &Path, name: &str, state: &LatticeState) -> Result<String> {
    let mut buf = Vec::new();
    state.write_csv(&mut buf)?;
    write_bytes(dir, name, &buf)
}

fn finish_run(
    out: &Option<PathBuf>,
    subcommand: &str,
    config_value: serde_json::Value,
    run: impl FnOnce(&Path) -> Result<Vec<String>>,
) -> Result<()> {
    let root = out_root(out);
    let dir = root.join(format!("{subcommand}-{}", config_hash(&config_value)));
    fs::create_dir_all(&dir)?;
    let outputs = run(&dir)?;
    let manifest = serde_json::json!({
        "subcommand": subcommand,
        "config": config_value,
        "version": env!("CARGO_PKG_VERSION"),
        "outputs": outputs,
    });
    write_json(&dir, "manifest.json", &manifest)?;
    println!("outputs in {}", dir.display());
    Ok(())
}

fn parse_mode(s: &str) -> Result<IntegrationMode> {
    match s {
        "explicit" => Ok(IntegrationMode::Explicit),
        "imex" => Ok(IntegrationMode::Imex),
        "dae" => Ok(IntegrationMode::Dae),
        other => Err(Error::Config(format!(
            "unknown mode '{other}' (want explicit | imex | dae)"
        ))),
    }
}

fn parse_parameter(s: &str) -> Result<BranchParameter> {
    match s {
        "d" => Ok(BranchParameter::DiffusionLength),
        "kappa" => Ok(BranchParameter::Kappa),
        "Dv" => Ok(BranchParameter::Dv),
        other => Err(Error::Config(format!(
            "unknown parameter '{other}' (want d | kappa | Dv)"
        ))),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        // a second invocation in-process cannot rebuild the pool; ignore
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Command::Construct(args) => {
            let base: Option<ConstructConfig> = load_config(&args.config)?;
            let config = ConstructConfig {
                n: args.n.or(base.as_ref().map(|c| c.n)).map_or_else(
                    || Err(Error::Config("missing required parameter: n".into())),
                    Ok,
                )?,
                d: require(args.d.or(base.as_ref().map(|c| c.d)), "d")?,
                k: args.k.or(base.as_ref().and_then(|c| c.k)),
                positions: args
                    .positions
                    .or(base.as_ref().and_then(|c| c.positions.clone())),
                refine: if args.no_refine {
                    false
                } else {
                    base.as_ref().map(|c| c.refine).unwrap_or(true)
                },
            };
            let value = serde_json::to_value(&config)?;
            finish_run(&cli.out, "construct", value, |dir| run_construct(config, dir))
        }
        Command::Stability(args) => {
            let base: Option<StabilityConfig> = load_config(&args.config)?;
            let config = StabilityConfig {
                n: require(args.n.or(base.as_ref().map(|c| c.n)), "n")?,
                d: require(args.d.or(base.as_ref().map(|c| c.d)), "d")?,
                k: args.k.or(base.as_ref().and_then(|c| c.k)),
                positions: args
                    .positions
                    .or(base.as_ref().and_then(|c| c.positions.clone())),
                dense: args.dense || base.as_ref().map(|c| c.dense).unwrap_or(false),
                marginal_tol: args
                    .marginal_tol
                    .or(base.as_ref().map(|c| c.marginal_tol))
                    .unwrap_or(DEFAULT_MARGINAL_TOL),
            };
            let value = serde_json::to_value(&config)?;
            finish_run(&cli.out, "stability", value, |dir| run_stability(config, dir))
        }
        Command::Threshold(args) => {
            let base: Option<ThresholdConfig> = load_config(&args.config)?;
            let config = ThresholdConfig {
                k: require(args.k.or(base.as_ref().map(|c| c.k)), "K")?,
            };
            let value = serde_json::to_value(&config)?;
            finish_run(&cli.out, "threshold", value, |dir| run_threshold(config, dir))
        }
        Command::Exact(args) => {
            let base: Option<ExactConfig> = load_config(&args.config)?;
            let config = ExactConfig {
                n: require(args.n.or(base.as_ref().map(|c| c.n)), "n")?,
                k: require(args.k.or(base.as_ref().map(|c| c.k)), "K")?,
                dv: require(args.dv.or(base.as_ref().map(|c| c.dv)), "Dv")?,
            };
            let value = serde_json::to_value(&config)?;
            finish_run(&cli.out, "exact", value, |dir| run_exact(config, dir))
        }
        Command::Mesa(args) => {
            let base: Option<MesaConfig> = load_config(&args.config)?;
            let config = MesaConfig {
                n: require(args.n.or(base.as_ref().map(|c| c.n)), "n")?,
                m: require(args.m.or(base.as_ref().map(|c| c.m)), "m")?,
                kappa: require(args.kappa.or(base.as_ref().map(|c| c.kappa)), "kappa")?,
                eps2: require(args.eps2.or(base.as_ref().map(|c| c.eps2)), "eps2")?,
                plus_steps: args
                    .plus_steps
                    .or(base.as_ref().map(|c| c.plus_steps.clone()))
                    .unwrap_or_default(),
            };
            let value = serde_json::to_value(&config)?;
            finish_run(&cli.out, "mesa", value, |dir| run_mesa(config, dir))
        }
        Command::Simulate(args) => {
            let base: Option<SimulateConfig> = load_config(&args.config)?;
            let mode = match &args.mode {
                Some(s) => Some(parse_mode(s)?),
                None => None,
            };
            let config = SimulateConfig {
                n: require(args.n.or(base.as_ref().map(|c| c.n)), "n")?,
                d: args.d.or(base.as_ref().and_then(|c| c.d)),
                du: args.du.or(base.as_ref().map(|c| c.du)).unwrap_or(0.0),
                dv: args.dv.or(base.as_ref().and_then(|c| c.dv)),
                tau: args.tau.or(base.as_ref().map(|c| c.tau)).unwrap_or(0.0),
                k: args.k.or(base.as_ref().and_then(|c| c.k)),
                initial_csv: args
                    .initial_csv
                    .map(|p| p.display().to_string())
                    .or(base.as_ref().and_then(|c| c.initial_csv.clone())),
                dt: args.dt.or(base.as_ref().map(|c| c.dt)).unwrap_or(1e-3),
                t_end: args
                    .t_end
                    .or(base.as_ref().map(|c| c.t_end))
                    .unwrap_or(200.0),
                mode: mode
                    .or(base.as_ref().map(|c| c.mode))
                    .unwrap_or(IntegrationMode::Dae),
                sample_every: args
                    .sample_every
                    .or(base.as_ref().map(|c| c.sample_every))
                    .unwrap_or(1000),
                seed: args.seed.or(base.as_ref().map(|c| c.seed)).unwrap_or(0),
                perturb_amp: args
                    .perturb_amp
                    .or(base.as_ref().map(|c| c.perturb_amp))
                    .unwrap_or(1e-3),
                classify: args.classify || base.as_ref().map(|c| c.classify).unwrap_or(false),
            };
            let value = serde_json::to_value(&config)?;
            finish_run(&cli.out, "simulate", value, |dir| run_simulate(config, dir))
        }
        Command::Continue(args) => {
            let base: Option<ContinueConfig> = load_config(&args.config)?;
            let parameter = match &args.parameter {
                Some(s) => Some(parse_parameter(s)?),
                None => None,
            };
            let config = ContinueConfig {
                n: require(args.n.or(base.as_ref().map(|c| c.n)), "n")?,
                du: args.du.or(base.as_ref().map(|c| c.du)).unwrap_or(0.0),
                parameter: require(
                    parameter.or(base.as_ref().map(|c| c.parameter)),
                    "parameter",
                )?,
                from: require(args.from.or(base.as_ref().map(|c| c.from)), "from")?,
                to: require(args.to.or(base.as_ref().map(|c| c.to)), "to")?,
                step0: args
                    .step0
                    .or(base.as_ref().map(|c| c.step0))
                    .unwrap_or(0.01),
                k: args.k.or(base.as_ref().and_then(|c| c.k)),
                variant: args
                    .variant
                    .or(base.as_ref().map(|c| c.variant.clone()))
                    .unwrap_or_else(default_variant),
                start_csv: args
                    .start_csv
                    .map(|p| p.display().to_string())
                    .or(base.as_ref().and_then(|c| c.start_csv.clone())),
            };
            let value = serde_json::to_value(&config)?;
            finish_run(&cli.out, "continue", value, |dir| run_continue(config, dir))
        }
        Command::Sweep(args) => {
            let base: Option<SweepConfig> = load_config(&args.config)?;
            let config = SweepConfig {
                n: require(args.n.or(base.as_ref().map(|c| c.n)), "n")?,
                m_values: args
                    .m_values
                    .or(base.as_ref().and_then(|c| c.m_values.clone())),
                du_values: args
                    .du_values
                    .or(base.as_ref().and_then(|c| c.du_values.clone())),
            };
            let value = serde_json::to_value(&config)?;
            finish_run(&cli.out, "sweep", value, |dir| run_sweep(config, dir))
        }
    }
}

/// Entry point: parses `argv`, runs the subcommand, and maps errors onto
/// exit codes (0 success, 1 numerical failure, 2 invalid input).
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            // clap handles --help/--version as "errors" with exit code 0
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::InvalidInput(_)
                | Error::Config(_)
                | Error::NonPositiveInhibitor { .. }
                | Error::Json(_)
                | Error::Io(_) => 2,
                Error::NonConvergence { .. }
                | Error::SingularJacobian
                | Error::Nonexistence(_)
                | Error::Numerical(_) => 1,
            }
        }
    }
}
