//! Time integration of the full system, for stability falsification and the
//! qualitative spike regimes (persistence, splitting, traveling fronts).
//!
//! Three steppers:
//!
//! - `Explicit`: forward Euler on everything; needs `tau > 0`.
//! - `Imex`: diffusion implicit, reaction explicit; for `tau = 0` the
//!   inhibitor update degenerates to the exact algebraic solve, so it agrees
//!   with `Dae` there.
//! - `Dae`: `tau = 0` only. Each step solves `(I - D_v L) v = u^2` exactly
//!   (one prefactored LU reused throughout) and advances `u` explicitly.
//!
//! Blow-up (non-finite values or `v <= 0`) is a first-class outcome, not an
//! error: the classifier maps it to "unstable".

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::lattice::{residual_inf_norm, LatticeParams, LatticeState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegrationMode {
    Explicit,
    Imex,
    Dae,
}

/// Integration configuration. `sample_every` counts steps between stored
/// samples; `perturb_amp` and `seed` drive `classify_by_simulation`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub mode: IntegrationMode,
    pub sample_every: usize,
    pub seed: u64,
    pub perturb_amp: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 200.0,
            mode: IntegrationMode::Dae,
            sample_every: 1000,
            seed: 0,
            perturb_amp: 1e-3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, params: &LatticeParams) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput(format!("need dt > 0, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::InvalidInput(format!(
                "need t_end >= dt, got t_end = {}, dt = {}",
                self.t_end, self.dt
            )));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidInput("need sample_every >= 1".into()));
        }
        match self.mode {
            IntegrationMode::Dae if params.tau != 0.0 => Err(Error::InvalidInput(format!(
                "dae mode requires tau = 0, got tau = {}",
                params.tau
            ))),
            IntegrationMode::Explicit if params.tau <= 0.0 => Err(Error::InvalidInput(
                "explicit mode requires tau > 0 (the v equation is divided by tau)".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// How an integration ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    /// Non-finite values or `v <= 0` at the given time.
    BlowUp { time: f64 },
}

/// Sampled history of an integration.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<LatticeState>,
    /// `max_k |u(k)|` per sample.
    pub max_u: Vec<f64>,
    /// Nodes where `u` exceeds half its maximum, per sample.
    pub spike_nodes: Vec<Vec<usize>>,
    /// Steady-state residual (inf norm) per sample.
    pub residual_norm: Vec<f64>,
    pub outcome: Outcome,
}

impl Trajectory {
    /// Long-format CSV `t,node,u,v`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,node,u,v")?;
        for (t, state) in self.times.iter().zip(&self.states) {
            for k in 0..state.n() {
                writeln!(out, "{},{},{},{}", t, k, state.u()[k], state.v()[k])?;
            }
        }
        Ok(())
    }

    /// Summary CSV `t,spike_count,max_u,residual_norm` (spike count is the
    /// number of cyclically contiguous runs in the spike-node set).
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,spike_count,max_u,residual_norm")?;
        let track = track_spikes(self)?;
        for i in 0..self.times.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.times[i], track.counts[i], self.max_u[i], self.residual_norm[i]
            )?;
        }
        Ok(())
    }
}

fn spike_node_set(u: &[f64]) -> Vec<usize> {
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    u.iter()
        .enumerate()
        .filter(|(_, &x)| x > max / 2.0)
        .map(|(k, _)| k)
        .collect()
}

struct Stepper<'a> {
    params: &'a LatticeParams,
    mode: IntegrationMode,
    dt: f64,
    u: Vec<f64>,
    v: Vec<f64>,
    /// prefactored `(tau + dt) I - dt D_v L` (or `I - D_v L` in dae mode)
    v_solver: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// prefactored `I - dt D_u L` for the imex activator update
    u_solver: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

fn cycle_laplacian_matrix(n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = -2.0;
        l[(i, (i + 1) % n)] = 1.0;
        l[(i, (i + n - 1) % n)] = 1.0;
    }
    l
}

impl<'a> Stepper<'a> {
    fn new(params: &'a LatticeParams, initial: &LatticeState, cfg: &SimConfig) -> Result<Self> {
        let n = params.n;
        let lap = cycle_laplacian_matrix(n);
        let mut stepper = Self {
            params,
            mode: cfg.mode,
            dt: cfg.dt,
            u: initial.u().to_vec(),
            v: initial.v().to_vec(),
            v_solver: None,
            u_solver: None,
        };
        match cfg.mode {
            IntegrationMode::Dae => {
                let m = DMatrix::identity(n, n) - params.d_v * &lap;
                stepper.v_solver = Some(m.lu());
                // consistent initialization: slave v to the initial u
                stepper.solve_constraint()?;
            }
            IntegrationMode::Imex => {
                let m = (params.tau + cfg.dt) * DMatrix::identity(n, n)
                    - cfg.dt * params.d_v * &lap;
                stepper.v_solver = Some(m.lu());
                if params.d_u > 0.0 {
                    let mu = DMatrix::identity(n, n) - cfg.dt * params.d_u * &lap;
                    stepper.u_solver = Some(mu.lu());
                }
                if params.tau == 0.0 {
                    stepper.solve_constraint()?;
                }
            }
            IntegrationMode::Explicit => {}
        }
        Ok(stepper)
    }

    fn solve_constraint(&mut self) -> Result<()> {
        let n = self.params.n;
        let rhs = DVector::from_iterator(n, self.u.iter().map(|&u| u * u));
        let sol = self
            .v_solver
            .as_ref()
            .expect("constraint solver present")
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular inhibitor operator".into()))?;
        self.v.copy_from_slice(sol.as_slice());
        Ok(())
    }

    fn laplacian(w: &[f64], k: usize) -> f64 {
        let n = w.len();
        w[(k + 1) % n] + w[(k + n - 1) % n] - 2.0 * w[k]
    }

    /// One time step. Returns false on blow-up.
    fn step(&mut self) -> Result<bool> {
        let n = self.params.n;
        let dt = self.dt;
        // reaction stability monitor for the explicitly treated terms
        let max_gain = self
            .u
            .iter()
            .zip(&self.v)
            .map(|(&u, &v)| (-1.0 + 2.0 * u / v).abs())
            .fold(0.0f64, f64::max);
        if dt * max_gain > 2.0 {
            return Err(Error::InvalidInput(format!(
                "dt = {dt} too large for the explicit reaction terms \
                 (dt * max|df/du| = {:.3})",
                dt * max_gain
            )));
        }
        match self.mode {
            IntegrationMode::Dae => {
                for k in 0..n {
                    let lu = Self::laplacian(&self.u, k);
                    self.u[k] += dt
                        * (self.params.d_u * lu - self.u[k]
                            + self.u[k] * self.u[k] / self.v[k]);
                }
                if !self.u.iter().all(|x| x.is_finite()) {
                    return Ok(false);
                }
                self.solve_constraint()?;
            }
            IntegrationMode::Imex => {
                let rhs = DVector::from_iterator(
                    n,
                    (0..n).map(|k| {
                        self.u[k] + dt * (-self.u[k] + self.u[k] * self.u[k] / self.v[k])
                    }),
                );
                let unew = match &self.u_solver {
                    Some(solver) => solver
                        .solve(&rhs)
                        .ok_or_else(|| Error::Numerical("singular activator operator".into()))?,
                    None => rhs,
                };
                self.u.copy_from_slice(unew.as_slice());
                if !self.u.iter().all(|x| x.is_finite()) {
                    return Ok(false);
                }
                let rhs = DVector::from_iterator(
                    n,
                    (0..n).map(|k| self.params.tau * self.v[k] + dt * self.u[k] * self.u[k]),
                );
                let vnew = self
                    .v_solver
                    .as_ref()
                    .expect("imex inhibitor solver present")
                    .solve(&rhs)
                    .ok_or_else(|| Error::Numerical("singular inhibitor operator".into()))?;
                self.v.copy_from_slice(vnew.as_slice());
            }
            IntegrationMode::Explicit => {
                let mut unew = self.u.clone();
                let mut vnew = self.v.clone();
                for k in 0..n {
                    unew[k] += dt
                        * (self.params.d_u * Self::laplacian(&self.u, k) - self.u[k]
                            + self.u[k] * self.u[k] / self.v[k]);
                    vnew[k] += dt / self.params.tau
                        * (self.params.d_v * Self::laplacian(&self.v, k) - self.v[k]
                            + self.u[k] * self.u[k]);
                }
                self.u = unew;
                self.v = vnew;
            }
        }
        let healthy = self.u.iter().all(|x| x.is_finite())
            && self.v.iter().all(|&x| x.is_finite() && x > 0.0);
        Ok(healthy)
    }

    fn state(&self) -> Result<LatticeState> {
        LatticeState::new(self.u.clone(), self.v.clone())
    }
}

/// Integrates the system from `initial` and samples every
/// `cfg.sample_every` steps (plus the initial and final instants).
pub fn integrate(
    params: &LatticeParams,
    initial: &LatticeState,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate(params)?;
    if initial.n() != params.n {
        return Err(Error::InvalidInput(format!(
            "state has {} nodes, params say {}",
            initial.n(),
            params.n
        )));
    }
    let mut stepper = Stepper::new(params, initial, cfg)?;
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        max_u: Vec::new(),
        spike_nodes: Vec::new(),
        residual_norm: Vec::new(),
        outcome: Outcome::Completed,
    };
    let mut record = |t: f64, stepper: &Stepper| -> Result<()> {
        let state = stepper.state()?;
        traj.times.push(t);
        traj.max_u
            .push(stepper.u.iter().fold(0.0f64, |a, x| a.max(x.abs())));
        traj.spike_nodes.push(spike_node_set(&stepper.u));
        traj.residual_norm
            .push(residual_inf_norm(params, &state).unwrap_or(f64::NAN));
        traj.states.push(state);
        Ok(())
    };
    record(0.0, &stepper)?;
    for step in 1..=steps {
        let healthy = stepper.step()?;
        let t = step as f64 * cfg.dt;
        if !healthy {
            traj.outcome = Outcome::BlowUp { time: t };
            break;
        }
        if step % cfg.sample_every == 0 || step == steps {
            record(t, &stepper)?;
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimClassification {
    Stable,
    Unstable,
    Inconclusive,
}

impl std::fmt::Display for SimClassification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimClassification::Stable => write!(f, "stable"),
            SimClassification::Unstable => write!(f, "unstable"),
            SimClassification::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

/// Perturbs a converged steady state with seeded mean-zero noise on `u`
/// (amplitude `cfg.perturb_amp`), integrates, and classifies by whether the
/// deviation norm decays below 0.1x or grows above 10x its baseline before
/// `t_end`. Blow-up counts as unstable.
///
/// The baseline is re-measured after a short burn-in (`min(5, t_end/10)`
/// time units) so that the instantly-decaying bulk of a random perturbation
/// cannot masquerade as stability while a slow unstable mode is still
/// growing; growth is also checked against the initial deviation throughout.
pub fn classify_by_simulation(
    params: &LatticeParams,
    state: &LatticeState,
    cfg: &SimConfig,
) -> Result<SimClassification> {
    cfg.validate(params)?;
    let residual = residual_inf_norm(params, state)?;
    if residual >= 1e-9 {
        return Err(Error::InvalidInput(format!(
            "classify_by_simulation needs a converged steady state \
             (residual {residual:.3e} >= 1e-9)"
        )));
    }
    let n = params.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = noise.iter().sum::<f64>() / n as f64;
    for x in &mut noise {
        *x = (*x - mean) * cfg.perturb_amp;
    }
    let u: Vec<f64> = state.u().iter().zip(&noise).map(|(&u, &d)| u + d).collect();
    let perturbed = LatticeState::new(u, state.v().to_vec())?;

    let mut stepper = Stepper::new(params, &perturbed, cfg)?;
    let deviation = |stepper: &Stepper| -> f64 {
        let mut sum = 0.0;
        for k in 0..n {
            let du = stepper.u[k] - state.u()[k];
            let dv = stepper.v[k] - state.v()[k];
            sum += du * du + dv * dv;
        }
        sum.sqrt()
    };
    let dev0 = deviation(&stepper);
    if dev0 == 0.0 {
        return Ok(SimClassification::Inconclusive);
    }
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let burn_in_steps = ((cfg.t_end / 10.0).min(5.0) / cfg.dt).round() as usize;
    let check_every = cfg.sample_every.min(100).max(1);
    let mut baseline = dev0;
    for step in 1..=steps {
        let healthy = stepper.step()?;
        if !healthy {
            return Ok(SimClassification::Unstable);
        }
        if step == burn_in_steps {
            baseline = deviation(&stepper).max(f64::MIN_POSITIVE);
        }
        if step % check_every == 0 {
            let dev = deviation(&stepper);
            if dev > 10.0 * dev0 {
                return Ok(SimClassification::Unstable);
            }
            if step > burn_in_steps {
                if dev > 10.0 * baseline {
                    return Ok(SimClassification::Unstable);
                }
                if dev < 0.1 * baseline {
                    return Ok(SimClassification::Stable);
                }
            }
        }
    }
    Ok(SimClassification::Inconclusive)
}

/// Per-sample spike-node sets and counts of a trajectory. The count is the
/// number of cyclically contiguous runs in the set, so a widening front
/// stays one "spike" while a splitting event raises the count.
#[derive(Debug, Clone)]
pub struct SpikeTrack {
    pub times: Vec<f64>,
    pub node_sets: Vec<Vec<usize>>,
    pub counts: Vec<usize>,
}

pub fn track_spikes(traj: &Trajectory) -> Result<SpikeTrack> {
    if traj.times.is_empty() {
        return Err(Error::InvalidInput("trajectory is empty".into()));
    }
    let mut counts = Vec::with_capacity(traj.spike_nodes.len());
    for (set, state) in traj.spike_nodes.iter().zip(&traj.states) {
        let n = state.n();
        let mut in_set = vec![false; n];
        for &k in set {
            in_set[k] = true;
        }
        let mut count = 0;
        for k in 0..n {
            if in_set[k] && !in_set[(k + n - 1) % n] {
                count += 1;
            }
        }
        if count == 0 && !set.is_empty() {
            count = 1; // the whole ring
        }
        counts.push(count);
    }
    Ok(SpikeTrack {
        times: traj.times.clone(),
        node_sets: traj.spike_nodes.clone(),
        counts,
    })
}
