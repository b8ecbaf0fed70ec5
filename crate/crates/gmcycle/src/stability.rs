//! Linear stability of spike configurations: the reduced K x K eigenproblem,
//! Floquet closed forms and thresholds for symmetric arrangements, direct
//! eigensolves of the full lattice pencil, and the local-optimality probe.
//!
//! A configuration is linearly stable when the eigenvalues of `I - M`,
//! `M_kj = 2 V_j G_per(x_k, x_j)`, have no positive real part. For evenly
//! spaced equal-height spikes the spectrum diagonalizes over Floquet phases
//! `exp(2 pi i m / K)` and comes out in closed form, which pins the
//! stability threshold `d_c(K)` analytically.

use nalgebra::{Complex, DMatrix};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::green_periodic;
use crate::lattice::{full_jacobian, LatticeParams, LatticeState};
use crate::spikes::{green_matrix, solve_heights, SpikeConfiguration};

pub const DEFAULT_MARGINAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Stable,
    Unstable,
    Marginal,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Classification::Stable => write!(f, "stable"),
            Classification::Unstable => write!(f, "unstable"),
            Classification::Marginal => write!(f, "marginal"),
        }
    }
}

/// Eigenvalue set with its stability verdict: stable when the largest real
/// part sits below `-marginal_tol`, unstable above `+marginal_tol`, and
/// marginal in between.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    eigenvalues: Vec<Complex<f64>>,
    max_real: f64,
    classification: Classification,
    marginal_tol: f64,
}

impl StabilityReport {
    pub fn from_eigenvalues(mut eigenvalues: Vec<Complex<f64>>, marginal_tol: f64) -> Self {
        eigenvalues.sort_by(|a, b| {
            (a.re, a.im)
                .partial_cmp(&(b.re, b.im))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let max_real = eigenvalues
            .iter()
            .map(|e| e.re)
            .fold(f64::NEG_INFINITY, f64::max);
        let classification = if max_real < -marginal_tol {
            Classification::Stable
        } else if max_real > marginal_tol {
            Classification::Unstable
        } else {
            Classification::Marginal
        };
        Self {
            eigenvalues,
            max_real,
            classification,
            marginal_tol,
        }
    }

    pub fn from_real_eigenvalues(eigenvalues: Vec<f64>, marginal_tol: f64) -> Self {
        Self::from_eigenvalues(
            eigenvalues.into_iter().map(|re| Complex::new(re, 0.0)).collect(),
            marginal_tol,
        )
    }

    pub fn eigenvalues(&self) -> &[Complex<f64>] {
        &self.eigenvalues
    }

    pub fn eigenvalues_re(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e.re).collect()
    }

    pub fn max_real(&self) -> f64 {
        self.max_real
    }

    pub fn classification(&self) -> Classification {
        self.classification
    }

    pub fn marginal_tol(&self) -> f64 {
        self.marginal_tol
    }

    /// JSON object with keys `eigenvalues_re, eigenvalues_im, max_real,
    /// classification`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "eigenvalues_re": self.eigenvalues.iter().map(|e| e.re).collect::<Vec<_>>(),
            "eigenvalues_im": self.eigenvalues.iter().map(|e| e.im).collect::<Vec<_>>(),
            "max_real": self.max_real,
            "classification": self.classification.to_string(),
        })
    }
}

/// The reduced interaction matrix `M_kj = 2 V_j G_per(x_k, x_j)`.
pub fn interaction_matrix(config: &SpikeConfiguration) -> Result<DMatrix<f64>> {
    let g = green_matrix(config.positions(), config.d())?;
    let k = config.k();
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            m[(i, j)] = 2.0 * config.heights()[j] * g[(i, j)];
        }
    }
    Ok(m)
}

/// Eigenvalues of `I - M` and the resulting classification.
pub fn reduced_spectrum(config: &SpikeConfiguration) -> Result<StabilityReport> {
    reduced_spectrum_with_tol(config, DEFAULT_MARGINAL_TOL)
}

pub fn reduced_spectrum_with_tol(
    config: &SpikeConfiguration,
    marginal_tol: f64,
) -> Result<StabilityReport> {
    let m = interaction_matrix(config)?;
    let k = config.k();
    let mut i_minus_m = DMatrix::identity(k, k);
    i_minus_m -= &m;
    let eigenvalues = i_minus_m.complex_eigenvalues();
    if eigenvalues.iter().any(|e| !e.re.is_finite()) {
        return Err(Error::Numerical(
            "eigensolver returned non-finite reduced eigenvalues".into(),
        ));
    }
    Ok(StabilityReport::from_eigenvalues(
        eigenvalues.iter().cloned().collect(),
        marginal_tol,
    ))
}

/// Closed-form spectrum of the symmetric K-spike configuration via Floquet
/// phases:
///
/// ```text
///     lambda_m = 1 - 2 (cosh(2l) - 1) / (cosh(2l) - cos(2 pi m / K)),
/// ```
///
/// with half-separation `l` fixed by `2l = 1/(K d)`. Mode `m = 0` is always
/// `-1`; modes `m` and `K - m` coincide, so the spectrum is real.
pub fn floquet_eigenvalues(k: usize, d: f64) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidInput("need K >= 1".into()));
    }
    if !(d > 0.0) {
        return Err(Error::InvalidInput(format!("need d > 0, got {d}")));
    }
    let x = 1.0 / (k as f64 * d); // cosh argument 2l
    let em = (-x).exp(); // overflow-safe: cosh(x) = e^x (1 + e^{-2x}) / 2
    Ok((0..k)
        .map(|m| {
            let theta = 2.0 * std::f64::consts::PI * m as f64 / k as f64;
            let num = 1.0 + em * em - 2.0 * em;
            let den = 1.0 + em * em - 2.0 * theta.cos() * em;
            1.0 - 2.0 * num / den
        })
        .collect())
}

/// The stability threshold of the symmetric K-spike pattern,
///
/// ```text
///     d_c = 1 / (K arccosh(2 - cos(2 pi floor(K/2) / K))),
/// ```
///
/// which reduces to `1 / (K arccosh 3)` for even `K`. The pattern is stable
/// for `d < d_c`.
pub fn symmetric_threshold(k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "single spike has no threshold, need K >= 2, got {k}"
        )));
    }
    let theta = 2.0 * std::f64::consts::PI * (k / 2) as f64 / k as f64;
    Ok(1.0 / (k as f64 * (2.0 - theta.cos()).acosh()))
}

/// The symmetric K-spike configuration itself (positions `j/K`, heights
/// `1 / sum_j G`), used by the probe and the CLI.
pub fn symmetric_configuration(k: usize, d: f64) -> Result<SpikeConfiguration> {
    if k == 0 {
        return Err(Error::InvalidInput("need K >= 1".into()));
    }
    let positions: Vec<f64> = (0..k).map(|j| j as f64 / k as f64).collect();
    let row_sum: f64 = positions
        .iter()
        .map(|&x| green_periodic(x, 0.0, d))
        .sum::<Result<f64>>()?;
    SpikeConfiguration::new(positions, vec![1.0 / row_sum; k], d)
}

/// Per-spike displacement directions and amplitude for the local-optimality
/// probe. A uniform `s` is a pure rotation of the pattern and is rejected.
#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    s: Vec<f64>,
    sigma: f64,
}

impl PerturbationSpec {
    pub fn new(s: Vec<f64>, sigma: f64) -> Result<Self> {
        if s.len() < 2 {
            return Err(Error::InvalidInput(
                "need at least two displacement directions".into(),
            ));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "amplitude must be a nonnegative real, got {sigma}"
            )));
        }
        let spread = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - s.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(spread > 1e-14) {
            return Err(Error::InvalidInput(
                "displacements must not all be equal (a uniform shift is a rotation)".into(),
            ));
        }
        Ok(Self { s, sigma })
    }

    /// Draws a random non-uniform direction vector in `[-1, 1]^K`.
    pub fn random(k: usize, sigma: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let s: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Ok(spec) = Self::new(s, sigma) {
                return Ok(spec);
            }
        }
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Numerical probe of the claim that the symmetric arrangement is locally
/// the most stable: at `d` near the threshold `d_c(K)`, displacing the spike
/// positions by `sigma * s` (non-uniform `s`), re-solving the heights, and
/// re-computing the reduced spectrum raises the largest real part.
///
/// Returns `(max_real_symmetric, max_real_perturbed)`.
pub fn local_optimality_probe(
    k: usize,
    d: f64,
    spec: &PerturbationSpec,
) -> Result<(f64, f64)> {
    let dc = symmetric_threshold(k)?;
    if (d - dc).abs() > 0.02 * dc + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "probe expects d within 2% of the threshold {dc:.6}, got {d}"
        )));
    }
    if spec.s().len() != k {
        return Err(Error::InvalidInput(format!(
            "displacement vector has {} entries, expected {k}",
            spec.s().len()
        )));
    }
    let symmetric = symmetric_configuration(k, d)?;
    let max_real_symmetric = reduced_spectrum(&symmetric)?.max_real();

    // shift everything by sigma * max|s| so positions stay in [0, 1) and
    // ordered; a common shift is a rotation and cannot change the spectrum
    let shift = spec.sigma() * spec.s().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let positions: Vec<f64> = (0..k)
        .map(|j| j as f64 / k as f64 + spec.sigma() * spec.s()[j] + shift)
        .collect();
    for w in positions.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidInput(
                "perturbation reorders the spike positions; reduce sigma".into(),
            ));
        }
    }
    let solve = solve_heights(&positions, d, &[symmetric.heights().to_vec()])?;
    let perturbed = solve.configurations.first().ok_or_else(|| {
        Error::Numerical("height re-solve at the perturbed positions failed".into())
    })?;
    let max_real_perturbed = reduced_spectrum(perturbed)?.max_real();
    Ok((max_real_symmetric, max_real_perturbed))
}

/// Finite eigenvalues of the full-lattice stability pencil at a steady
/// state.
///
/// For `tau = 0` the `v` rows are algebraic and the finite spectrum is that
/// of the Schur complement `A - B E^{-1} C` of the `u` block (an `n x n`
/// dense nonsymmetric eigenproblem). For `tau > 0` the pencil is regular
/// and the spectrum is that of `diag(1, 1/tau) J` (all `2n` eigenvalues).
pub fn pencil_spectrum(params: &LatticeParams, state: &LatticeState) -> Result<StabilityReport> {
    pencil_spectrum_with_tol(params, state, DEFAULT_MARGINAL_TOL)
}

pub fn pencil_spectrum_with_tol(
    params: &LatticeParams,
    state: &LatticeState,
    marginal_tol: f64,
) -> Result<StabilityReport> {
    let n = params.n;
    let jac = full_jacobian(params, state)?;
    let matrix = if params.tau == 0.0 {
        let a = jac.view((0, 0), (n, n)).into_owned();
        let b = jac.view((0, n), (n, n)).into_owned();
        let c = jac.view((n, 0), (n, n)).into_owned();
        let e = jac.view((n, n), (n, n)).into_owned();
        let e_inv_c = e
            .lu()
            .solve(&c)
            .ok_or_else(|| Error::Numerical("inhibitor block is singular".into()))?;
        a - b * e_inv_c
    } else {
        let mut scaled = jac;
        for i in n..2 * n {
            for j in 0..2 * n {
                scaled[(i, j)] /= params.tau;
            }
        }
        scaled
    };
    let eigenvalues = matrix.complex_eigenvalues();
    if eigenvalues.iter().any(|e| !e.re.is_finite() || !e.im.is_finite()) {
        return Err(Error::Numerical(
            "eigensolver returned non-finite pencil eigenvalues".into(),
        ));
    }
    Ok(StabilityReport::from_eigenvalues(
        eigenvalues.iter().cloned().collect(),
        marginal_tol,
    ))
}
