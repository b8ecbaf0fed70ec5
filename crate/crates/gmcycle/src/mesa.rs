//! Plateau ("mesa") states in the small-diffusion regime `D_u = eps^2`,
//! `D_v = kappa eps^2`.
//!
//! An m-mesa has `u = v = 1` on a block of `m` nodes and geometrically
//! decaying tails: at offset `j` from the plateau, `v ~ (kappa eps^2)^j` and
//! `u = eta_{j+1} v`, where the tail ratios obey
//!
//! ```text
//!     eta_k = (1 +- sqrt(1 - 4 eta_{k-1} / kappa)) / 2,    eta_1 = 1.
//! ```
//!
//! The discriminant at the first step is `1 - 4/kappa`, so no state with a
//! jump between adjacent nodes exists for `kappa < 4`. The minus branch
//! keeps `eta_k < 1/2` and gives the stable family; any plus step puts a
//! tail eigenvalue `2 eta - 1` above zero.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::lattice::{LatticeParams, LatticeState};
use crate::spikes::{refine_on_lattice, Refined};

/// Sign choice at one step of the tail recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchSign {
    Minus,
    Plus,
}

impl std::fmt::Display for BranchSign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BranchSign::Minus => write!(f, "-"),
            BranchSign::Plus => write!(f, "+"),
        }
    }
}

/// Tail ratio sequence `eta_1 .. eta_length` with `eta_1 = 1` fixed and one
/// sign choice per subsequent step (`branch.len() == length - 1`).
///
/// Fails with a nonexistence error naming the step at which the discriminant
/// `1 - 4 eta_{k-1} / kappa` turns negative.
pub fn eta_recursion(kappa: f64, length: usize, branch: &[BranchSign]) -> Result<Vec<f64>> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidInput(format!("need kappa > 0, got {kappa}")));
    }
    if length == 0 {
        return Err(Error::InvalidInput("need length >= 1".into()));
    }
    if branch.len() != length - 1 {
        return Err(Error::InvalidInput(format!(
            "need {} branch signs for length {length}, got {}",
            length - 1,
            branch.len()
        )));
    }
    let mut eta = Vec::with_capacity(length);
    eta.push(1.0);
    for (step, sign) in branch.iter().enumerate() {
        let k = step + 2;
        let disc = 1.0 - 4.0 * eta[step] / kappa;
        if disc < 0.0 {
            return Err(Error::Nonexistence(format!(
                "tail recursion discriminant {disc:.6e} < 0 at step {k} (kappa = {kappa})"
            )));
        }
        let next = match sign {
            // (1 - sqrt(1-x))/2 cancels catastrophically as eta -> 0;
            // the conjugate form x / (2 (1 + sqrt(1-x))) is exact
            BranchSign::Minus => (4.0 * eta[step] / kappa) / (2.0 * (1.0 + disc.sqrt())),
            BranchSign::Plus => (1.0 + disc.sqrt()) / 2.0,
        };
        eta.push(next);
    }
    Ok(eta)
}

/// Leading-order mesa data: the tail recursion, the branch it used, and the
/// node values before refinement.
#[derive(Debug, Clone)]
pub struct MesaProfile {
    pub n: usize,
    /// Plateau width in nodes.
    pub m: usize,
    pub kappa: f64,
    pub eps2: f64,
    /// `eta_1 .. eta_{L+1}` where `L` is the maximal tail offset.
    pub eta: Vec<f64>,
    pub branch: Vec<BranchSign>,
    /// Leading-order activator values (tail entries below 1e-300 flushed to 0).
    pub u0: Vec<f64>,
    /// Leading-order inhibitor values (same flushing).
    pub v0: Vec<f64>,
    /// Cyclic distance of each node from the plateau block.
    pub offsets: Vec<usize>,
}

impl MesaProfile {
    /// CSV trace of the recursion: header `k,eta,branch` (the first step has
    /// no sign choice).
    pub fn write_recursion_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,eta,branch")?;
        for (i, eta) in self.eta.iter().enumerate() {
            let sign = if i == 0 {
                String::new()
            } else {
                self.branch[i - 1].to_string()
            };
            writeln!(out, "{},{},{}", i + 1, eta, sign)?;
        }
        Ok(())
    }
}

fn plateau_offsets(n: usize, m: usize) -> Vec<usize> {
    (0..n)
        .map(|i| {
            (0..m)
                .map(|p| {
                    let fwd = (i + n - p) % n;
                    let bwd = (p + n - i) % n;
                    fwd.min(bwd)
                })
                .min()
                .expect("m >= 1")
        })
        .collect()
}

/// Builds the leading-order m-mesa (minus branch everywhere; the stable
/// family) and returns it with the corresponding lattice seed state.
///
/// The plateau occupies nodes `0 .. m-1`; the two tails wrap symmetrically
/// and meet at the far side, giving a maximal offset of `ceil((n - m)/2)`.
pub fn mesa_profile(
    n: usize,
    m: usize,
    kappa: f64,
    eps2: f64,
) -> Result<(MesaProfile, LatticeState)> {
    let max_offset = max_offset(n, m)?;
    mesa_profile_with_branch(n, m, kappa, eps2, &vec![BranchSign::Minus; max_offset])
}

fn max_offset(n: usize, m: usize) -> Result<usize> {
    if n < 3 {
        return Err(Error::InvalidInput(format!("need n >= 3, got {n}")));
    }
    if m == 0 || m >= n {
        return Err(Error::InvalidInput(format!(
            "plateau width must satisfy 1 <= m < n, got m = {m}, n = {n}"
        )));
    }
    Ok((n - m).div_ceil(2))
}

/// As `mesa_profile`, with an explicit sign sequence for the tail steps
/// (one sign per offset `1 .. ceil((n-m)/2)`). Plus steps produce the
/// unstable variants.
pub fn mesa_profile_with_branch(
    n: usize,
    m: usize,
    kappa: f64,
    eps2: f64,
    branch: &[BranchSign],
) -> Result<(MesaProfile, LatticeState)> {
    if !(eps2 > 0.0) {
        return Err(Error::InvalidInput(format!("need eps^2 > 0, got {eps2}")));
    }
    let max_off = max_offset(n, m)?;
    let eta = eta_recursion(kappa, max_off + 1, branch)?;
    let offsets = plateau_offsets(n, m);
    let ratio = kappa * eps2;
    let mut u0 = vec![0.0; n];
    let mut v0 = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for i in 0..n {
        let off = offsets[i];
        let raw = ratio.powi(off as i32);
        // profile record flushes underflowing tail entries to 0; the lattice
        // seed needs v > 0, so it clamps instead (Newton restores the rest)
        v0[i] = if raw < 1e-300 { 0.0 } else { raw };
        u0[i] = eta[off] * v0[i];
        v[i] = raw.max(1e-300);
        u[i] = eta[off] * v[i];
    }
    let state = LatticeState::new(u, v)?;
    Ok((
        MesaProfile {
            n,
            m,
            kappa,
            eps2,
            eta,
            branch: branch.to_vec(),
            u0,
            v0,
            offsets,
        },
        state,
    ))
}

/// Refines the leading-order mesa into an exact lattice steady state.
pub fn refined_mesa(profile_state: &LatticeState, n: usize, kappa: f64, eps2: f64) -> Result<Refined> {
    let params = LatticeParams::new(n, eps2, kappa * eps2, 0.0)?;
    refine_on_lattice(profile_state, &params)
}

/// Leading-order eigenvalues, one per node: plateau nodes carry `-1` (the
/// value the dense eigensolve of the refined state confirms; see the tests),
/// tail nodes at offset `j` carry `2 eta_{j+1} - 1`.
pub fn mesa_leading_spectrum(profile: &MesaProfile) -> Vec<f64> {
    profile
        .offsets
        .iter()
        .map(|&off| {
            if off == 0 {
                -1.0
            } else {
                2.0 * profile.eta[off] - 1.0
            }
        })
        .collect()
}

/// Operational estimate of the fold `kappa_f` below which the m-mesa ceases
/// to exist: the smallest `kappa` in `[3, 8]` at which Newton refinement
/// from the leading-order seed still converges to a localized state, found
/// by bisection to 1e-3.
///
/// Convergence to the homogeneous state does not count as existence, so the
/// refined state must stay small at the node farthest from the plateau.
pub fn fold_kappa(eps2: f64, n: usize, m: usize) -> Result<f64> {
    if !(eps2 > 0.0) {
        return Err(Error::InvalidInput(format!("need eps^2 > 0, got {eps2}")));
    }
    max_offset(n, m)?;
    let exists = |kappa: f64| -> bool {
        let seed = match mesa_profile(n, m, kappa, eps2) {
            Ok((_, state)) => state,
            Err(_) => return false,
        };
        let far_node = plateau_offsets(n, m)
            .iter()
            .enumerate()
            .max_by_key(|(_, &off)| off)
            .map(|(i, _)| i)
            .unwrap();
        match refined_mesa(&seed, n, kappa, eps2) {
            Ok(refined) => refined.state.u()[far_node] < 0.5,
            Err(_) => false,
        }
    };
    let (mut lo, mut hi) = (3.0, 8.0);
    let (elo, ehi) = (exists(lo), exists(hi));
    if elo || !ehi {
        return Err(Error::Numerical(format!(
            "fold bracket [3, 8] invalid at eps^2 = {eps2}, n = {n}, m = {m}: \
             exists(3) = {elo}, exists(8) = {ehi}"
        )));
    }
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if exists(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
