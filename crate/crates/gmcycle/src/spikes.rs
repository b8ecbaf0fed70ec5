//! Reduced algebraic model for spike heights, its closed-form branches for
//! two and three spikes, and assembly/refinement of full-lattice profiles.
//!
//! In the scaling `D_u = 0`, `D_v = d^2 n^2`, `tau = 0` a K-spike steady
//! state is governed by the height system
//!
//! ```text
//!     V_k = sum_j V_j^2 G_per(x_k, x_j),    k = 1..K,
//! ```
//!
//! where the heights are scaled so the lattice carries `u = v = n V_k` at
//! the spike nodes. `solve_heights` attacks this system by damped Newton
//! from a list of guesses; the two- and three-spike branches also come in
//! closed form and serve as oracles for it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::{green_periodic, periodic_separation};
use crate::lattice::{residual_inf_norm, steady_residual, LatticeParams, LatticeState};

/// Residual tolerance a valid `SpikeConfiguration` must meet.
pub const HEIGHT_RESIDUAL_TOL: f64 = 1e-10;
/// Two solutions closer than this in max norm are considered the same.
pub const DEDUP_TOL: f64 = 1e-8;
/// Heights at or below this are degenerate remnants of a lower-K family.
pub const DEGENERATE_HEIGHT: f64 = 1e-12;

/// A solved spike configuration: positions on the unit circle, heights of
/// the reduced system, and the diffusion length they were solved at.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeConfiguration {
    positions: Vec<f64>,
    heights: Vec<f64>,
    d: f64,
    residual_norm: f64,
}

#[derive(Serialize, Deserialize)]
struct SpikeConfigurationJson {
    #[serde(rename = "K")]
    k: usize,
    d: f64,
    positions: Vec<f64>,
    heights: Vec<f64>,
    residual_norm: f64,
}

impl SpikeConfiguration {
    /// Validates positions (strictly increasing in `[0, 1)`, distinct mod 1),
    /// heights (all positive), and that the height system residual is below
    /// `HEIGHT_RESIDUAL_TOL`.
    pub fn new(positions: Vec<f64>, heights: Vec<f64>, d: f64) -> Result<Self> {
        if !(d > 0.0) {
            return Err(Error::InvalidInput(format!("need d > 0, got {d}")));
        }
        if positions.is_empty() || positions.len() != heights.len() {
            return Err(Error::InvalidInput(format!(
                "need matching nonempty positions/heights, got {} and {}",
                positions.len(),
                heights.len()
            )));
        }
        for w in positions.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(format!(
                    "positions must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if positions.iter().any(|&x| !(0.0..1.0).contains(&x)) {
            return Err(Error::InvalidInput("positions must lie in [0, 1)".into()));
        }
        let k = positions.len();
        if k > 1 {
            for i in 0..k {
                let gap = periodic_separation(positions[(i + 1) % k], positions[i]);
                if gap <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "positions {} and {} coincide mod 1",
                        i,
                        (i + 1) % k
                    )));
                }
            }
        }
        if let Some(i) = heights.iter().position(|&h| !(h > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "height {} must be positive, got {}",
                i, heights[i]
            )));
        }
        let residual_norm = height_residual(&positions, &heights, d)?
            .iter()
            .fold(0.0f64, |a, r| a.max(r.abs()));
        if residual_norm >= HEIGHT_RESIDUAL_TOL {
            return Err(Error::InvalidInput(format!(
                "height system residual {residual_norm:.3e} exceeds {HEIGHT_RESIDUAL_TOL:.0e}"
            )));
        }
        Ok(Self {
            positions,
            heights,
            d,
            residual_norm,
        })
    }

    pub fn k(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    /// JSON object with keys `K, d, positions, heights, residual_norm`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "K": self.k(),
            "d": self.d,
            "positions": self.positions,
            "heights": self.heights,
            "residual_norm": self.residual_norm,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let parsed: SpikeConfigurationJson = serde_json::from_value(value.clone())?;
        if parsed.k != parsed.positions.len() {
            return Err(Error::InvalidInput(format!(
                "JSON claims K = {} but has {} positions",
                parsed.k,
                parsed.positions.len()
            )));
        }
        Self::new(parsed.positions, parsed.heights, parsed.d)
    }
}

/// Pairwise periodic Green's matrix `G_kj = G_per(x_k, x_j)`.
pub fn green_matrix(positions: &[f64], d: f64) -> Result<DMatrix<f64>> {
    let k = positions.len();
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            g[(i, j)] = green_periodic(positions[i], positions[j], d)?;
        }
    }
    Ok(g)
}

/// Residual of the height system, `V_k - sum_j V_j^2 G_kj`.
pub fn height_residual(positions: &[f64], heights: &[f64], d: f64) -> Result<Vec<f64>> {
    let g = green_matrix(positions, d)?;
    let k = positions.len();
    Ok((0..k)
        .map(|i| heights[i] - (0..k).map(|j| heights[j] * heights[j] * g[(i, j)]).sum::<f64>())
        .collect())
}

/// One failed multistart guess, with the reason it was dropped.
#[derive(Debug, Clone)]
pub struct GuessFailure {
    pub guess: usize,
    pub reason: String,
}

/// Outcome of `solve_heights`: the deduplicated solutions (sorted
/// lexicographically by height vector) and any per-guess failures.
#[derive(Debug, Clone, Default)]
pub struct MultistartSolve {
    pub configurations: Vec<SpikeConfiguration>,
    pub failures: Vec<GuessFailure>,
}

/// The canonical multistart seeds: the symmetric guess `V_k = 1 / sum_j G_kj`
/// plus, for `K <= 6`, every sign pattern of a 30% perturbation and every
/// strongly lopsided pattern (factors 3.0 / 0.02). The mild patterns catch
/// nearby branches; the lopsided ones reach the strongly asymmetric roots,
/// whose small heights shrink like the cross-interaction as `d` decreases.
pub fn default_guesses(positions: &[f64], d: f64) -> Result<Vec<Vec<f64>>> {
    let g = green_matrix(positions, d)?;
    let k = positions.len();
    let base: Vec<f64> = (0..k)
        .map(|i| 1.0 / (0..k).map(|j| g[(i, j)]).sum::<f64>())
        .collect();
    let mut guesses = vec![base.clone()];
    if k <= 6 {
        for &(up, down) in &[(1.3, 0.7), (3.0, 0.02)] {
            for mask in 0..(1usize << k) {
                let guess: Vec<f64> = (0..k)
                    .map(|i| base[i] * if mask >> i & 1 == 1 { up } else { down })
                    .collect();
                guesses.push(guess);
            }
        }
    }
    Ok(guesses)
}

/// Newton-solves the height system from every guess, keeping all distinct
/// converged solutions with strictly positive heights.
///
/// A guess that fails to converge simply contributes nothing (an empty
/// result is not an error); a guess that produces a non-finite iterate is
/// reported in `failures`. Solutions with any height at or below
/// `DEGENERATE_HEIGHT` belong to a lower-K family and are discarded.
pub fn solve_heights(positions: &[f64], d: f64, guesses: &[Vec<f64>]) -> Result<MultistartSolve> {
    if guesses.is_empty() {
        return Err(Error::InvalidInput("need at least one guess".into()));
    }
    let k = positions.len();
    if k == 0 {
        return Err(Error::InvalidInput("need at least one spike".into()));
    }
    let g = green_matrix(positions, d)?;
    let mut out = MultistartSolve::default();
    'guess: for (gi, guess) in guesses.iter().enumerate() {
        if guess.len() != k {
            out.failures.push(GuessFailure {
                guess: gi,
                reason: format!("guess has {} entries, expected {k}", guess.len()),
            });
            continue;
        }
        let mut heights = DVector::from_column_slice(guess);
        let mut converged = false;
        for _ in 0..100 {
            if heights.iter().any(|h| !h.is_finite()) {
                out.failures.push(GuessFailure {
                    guess: gi,
                    reason: "non-finite iterate".into(),
                });
                continue 'guess;
            }
            let res = DVector::from_iterator(
                k,
                (0..k).map(|i| {
                    heights[i]
                        - (0..k)
                            .map(|j| heights[j] * heights[j] * g[(i, j)])
                            .sum::<f64>()
                }),
            );
            if res.amax() < HEIGHT_RESIDUAL_TOL {
                converged = true;
                break;
            }
            // Jacobian is I - M with M_ij = 2 V_j G_ij
            let mut jac = DMatrix::identity(k, k);
            for i in 0..k {
                for j in 0..k {
                    jac[(i, j)] -= 2.0 * heights[j] * g[(i, j)];
                }
            }
            let step = match jac.lu().solve(&res) {
                Some(s) => s,
                None => {
                    out.failures.push(GuessFailure {
                        guess: gi,
                        reason: "singular Jacobian".into(),
                    });
                    continue 'guess;
                }
            };
            heights -= step;
        }
        if !converged {
            continue;
        }
        if heights.iter().any(|&h| h <= DEGENERATE_HEIGHT) {
            continue; // lower-K degenerate root
        }
        let candidate: Vec<f64> = heights.iter().cloned().collect();
        let duplicate = out.configurations.iter().any(|c| {
            c.heights()
                .iter()
                .zip(&candidate)
                .all(|(a, b)| (a - b).abs() < DEDUP_TOL)
        });
        if !duplicate {
            out.configurations
                .push(SpikeConfiguration::new(positions.to_vec(), candidate, d)?);
        }
    }
    out.configurations.sort_by(|a, b| {
        a.heights()
            .partial_cmp(b.heights())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(out)
}

/// Self- and cross-interaction coefficients of a two-spike configuration
/// with separation `l`: `a = G_per(0, 0)`, `b = G_per(0, l)`.
#[derive(Debug, Clone, Copy)]
pub struct TwoSpikeCoefficients {
    pub a: f64,
    pub b: f64,
    pub l: f64,
}

pub fn two_spike_coefficients(l: f64, d: f64) -> Result<TwoSpikeCoefficients> {
    if !(l > 0.0 && l <= 0.5) {
        return Err(Error::InvalidInput(format!(
            "separation must lie in (0, 1/2], got {l}"
        )));
    }
    let a = green_periodic(0.0, 0.0, d)?;
    let b = green_periodic(0.0, l, d)?;
    debug_assert!(a > b && b > 0.0);
    Ok(TwoSpikeCoefficients { a, b, l })
}

/// Closed-form two-spike branches at separation `l`.
///
/// The equal-height solution `V1 = V2 = 1/(a+b)` always exists. When
/// `a^2 - 2ab - 3b^2 >= 0` (equivalently `a >= 3b`) the asymmetric pair
///
/// ```text
///     V1, V2 = (a + b +- sqrt(a^2 - 2ab - 3b^2)) / (2 (a+b)(a-b))
/// ```
///
/// exists as well; both orderings are returned.
pub fn two_spike_closed_form(l: f64, d: f64) -> Result<Vec<SpikeConfiguration>> {
    let TwoSpikeCoefficients { a, b, .. } = two_spike_coefficients(l, d)?;
    let positions = vec![0.0, l];
    let mut out = vec![SpikeConfiguration::new(
        positions.clone(),
        vec![1.0 / (a + b); 2],
        d,
    )?];
    let disc = a * a - 2.0 * a * b - 3.0 * b * b;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let den = 2.0 * (a + b) * (a - b);
        let hi = (a + b + s) / den;
        let lo = (a + b - s) / den;
        out.push(SpikeConfiguration::new(
            positions.clone(),
            vec![hi, lo],
            d,
        )?);
        if s > 0.0 {
            out.push(SpikeConfiguration::new(positions, vec![lo, hi], d)?);
        }
    }
    Ok(out)
}

/// Closed-form branches for three evenly spaced spikes (`l = 1/3`).
///
/// The symmetric root `V = 1/(a + 2b)` always exists. When
/// `a^2 - 2ab - 7b^2 >= 0` the two-heights roots
///
/// ```text
///     V1 = (a + 3b +- sqrt(a^2 - 2ab - 7b^2)) / (2 (a+2b)(a-b)),
///     V2 = V3 = (a + b -+ sqrt(a^2 - 2ab - 7b^2)) / (2 (a+2b)(a-b))
/// ```
///
/// exist as well and are returned in all three rotations.
pub fn three_spike_even_closed_form(d: f64) -> Result<Vec<SpikeConfiguration>> {
    if !(d > 0.0) {
        return Err(Error::InvalidInput(format!("need d > 0, got {d}")));
    }
    let a = green_periodic(0.0, 0.0, d)?;
    let b = green_periodic(0.0, 1.0 / 3.0, d)?;
    let positions = vec![0.0, 1.0 / 3.0, 2.0 / 3.0];
    let mut out = vec![SpikeConfiguration::new(
        positions.clone(),
        vec![1.0 / (a + 2.0 * b); 3],
        d,
    )?];
    let disc = a * a - 2.0 * a * b - 7.0 * b * b;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let den = 2.0 * (a + 2.0 * b) * (a - b);
        for &(v1, v2) in &[
            ((a + 3.0 * b + s) / den, (a + b - s) / den),
            ((a + 3.0 * b - s) / den, (a + b + s) / den),
        ] {
            // distinct spike at each of the three positions
            for rot in 0..3 {
                let heights: Vec<f64> =
                    (0..3).map(|i| if i == rot { v1 } else { v2 }).collect();
                let candidate = SpikeConfiguration::new(positions.clone(), heights, d)?;
                if !out.iter().any(|c| {
                    c.heights()
                        .iter()
                        .zip(candidate.heights())
                        .all(|(x, y)| (x - y).abs() < DEDUP_TOL)
                }) {
                    out.push(candidate);
                }
            }
        }
    }
    Ok(out)
}

/// Builds the leading-order lattice profile of a configuration on `n` nodes:
/// `u = n V_k` at each spike node (matching `v` there, as the steady state
/// requires) and zero elsewhere, with
/// `v(j/n) = sum_k n V_k^2 G_per(j/n, x_k)`.
///
/// Every position must sit on the grid: `n x_k` integral to within 1e-6.
pub fn assemble_profile(config: &SpikeConfiguration, n: usize) -> Result<LatticeState> {
    if n < 3 {
        return Err(Error::InvalidInput(format!("need n >= 3, got {n}")));
    }
    let mut nodes = Vec::with_capacity(config.k());
    for (i, &x) in config.positions().iter().enumerate() {
        let fractional = x * n as f64;
        let node = fractional.round();
        if (fractional - node).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "spike {i} at position {x} is off-grid for n = {n} (n*x = {fractional})"
            )));
        }
        nodes.push(node as usize % n);
    }
    let nf = n as f64;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for (j, vj) in v.iter_mut().enumerate() {
        let x = j as f64 / nf;
        for (k, &xk) in config.positions().iter().enumerate() {
            let h = config.heights()[k];
            *vj += nf * h * h * green_periodic(x, xk, config.d())?;
        }
    }
    for (k, &node) in nodes.iter().enumerate() {
        u[node] = nf * config.heights()[k];
    }
    LatticeState::new(u, v)
}

/// Result of a Newton polish on the lattice.
#[derive(Debug, Clone)]
pub struct Refined {
    pub state: LatticeState,
    pub iterations: usize,
    pub residual: f64,
}

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_MAX_HALVINGS: usize = 30;

/// Attainable accuracy of the steady-state residual in f64: the `D_v L v`
/// terms cancel to roundoff, so for large `D_v` the residual cannot be
/// driven below this floor no matter how close the iterate is.
fn residual_floor(params: &LatticeParams, state: &LatticeState) -> f64 {
    let umax = state.u().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let vmax = state.v().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    16.0 * f64::EPSILON
        * (1.0 + params.d_u * umax + params.d_v * vmax + umax + vmax + umax * umax)
}

/// Damped Newton refinement of a lattice steady state.
///
/// Iterates until `max|steady_residual| < 1e-11` (or the f64 rounding floor
/// of the residual evaluation, whichever is larger), halving the step up to
/// 30 times whenever a full step fails to decrease the residual or leaves
/// the `v > 0` region. Fails after 50 iterations.
pub fn refine_on_lattice(initial: &LatticeState, params: &LatticeParams) -> Result<Refined> {
    refine_on_lattice_tol(initial, params, 1e-11)
}

pub fn refine_on_lattice_tol(
    initial: &LatticeState,
    params: &LatticeParams,
    tol: f64,
) -> Result<Refined> {
    let n = params.n;
    let mut state = initial.clone();
    let mut residual = steady_residual(params, &state)?;
    let mut rnorm = residual.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    for iteration in 0..NEWTON_MAX_ITER {
        if rnorm < tol.max(residual_floor(params, &state)) {
            return Ok(Refined {
                state,
                iterations: iteration,
                residual: rnorm,
            });
        }
        let jac = crate::lattice::full_jacobian(params, &state)?;
        let rhs = DVector::from_vec(residual.clone());
        let mut accepted = false;
        let mut solved_any = false;
        // plain Newton first; on stall, retry with escalating Tikhonov shifts
        // (the Jacobian degenerates on uniform states and near folds)
        for &mu in &[0.0, 1e-10, 1e-6, 1e-3, 1e-1] {
            let step = if mu == 0.0 {
                jac.clone().lu().solve(&rhs)
            } else {
                let mut shifted = jac.clone();
                for i in 0..2 * n {
                    shifted[(i, i)] += mu * (1.0 + jac[(i, i)].abs());
                }
                shifted.lu().solve(&rhs)
            };
            let step = match step {
                Some(s) => s,
                None => continue,
            };
            solved_any = true;
            let mut damping = 1.0;
            for _ in 0..=NEWTON_MAX_HALVINGS {
                let u: Vec<f64> = (0..n).map(|k| state.u()[k] - damping * step[k]).collect();
                let v: Vec<f64> = (0..n)
                    .map(|k| state.v()[k] - damping * step[n + k])
                    .collect();
                if v.iter().all(|&x| x > 0.0) {
                    let candidate = LatticeState::new(u, v)?;
                    let cres = steady_residual(params, &candidate)?;
                    let cnorm = cres.iter().fold(0.0f64, |a, r| a.max(r.abs()));
                    if cnorm.is_finite() && cnorm < rnorm {
                        state = candidate;
                        residual = cres;
                        rnorm = cnorm;
                        accepted = true;
                        break;
                    }
                }
                damping *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            if !solved_any {
                return Err(Error::SingularJacobian);
            }
            // stuck at the evaluation floor counts as converged
            if rnorm < tol.max(4.0 * residual_floor(params, &state)) {
                return Ok(Refined {
                    state,
                    iterations: iteration,
                    residual: rnorm,
                });
            }
            return Err(Error::NonConvergence {
                iterations: iteration,
                residual: rnorm,
            });
        }
    }
    if rnorm < tol.max(residual_floor(params, &state)) {
        return Ok(Refined {
            state,
            iterations: NEWTON_MAX_ITER,
            residual: rnorm,
        });
    }
    Err(Error::NonConvergence {
        iterations: NEWTON_MAX_ITER,
        residual: rnorm,
    })
}

/// Convenience check used by tests and the CLI.
pub fn lattice_residual_norm(params: &LatticeParams, state: &LatticeState) -> Result<f64> {
    residual_inf_norm(params, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::exact_symmetric_solution;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn single_spike_height_is_reciprocal_self_interaction() {
        for &d in &[0.05, 0.2, 0.7] {
            let solve = solve_heights(&[0.25], d, &default_guesses(&[0.25], d).unwrap()).unwrap();
            assert_eq!(solve.configurations.len(), 1);
            let expect = 1.0 / green_periodic(0.0, 0.0, d).unwrap();
            assert_relative_eq!(
                solve.configurations[0].heights()[0],
                expect,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn two_spike_multistart_finds_all_three_branches() {
        let d = 0.2;
        let positions = [0.0, 0.5];
        let solve = solve_heights(&positions, d, &default_guesses(&positions, d).unwrap()).unwrap();
        assert_eq!(
            solve.configurations.len(),
            3,
            "expected equal + swapped asymmetric pair at d = {d}"
        );
        let closed = two_spike_closed_form(0.5, d).unwrap();
        for c in &closed {
            assert!(solve.configurations.iter().any(|s| s
                .heights()
                .iter()
                .zip(c.heights())
                .all(|(a, b)| (a - b).abs() < 1e-8)));
        }
    }

    #[test]
    fn asymmetric_pair_requires_a_geq_3b() {
        // just below and above the critical ratio
        let near = 1.0 / (2.0 * 3.0f64.acosh());
        let below = two_spike_closed_form(0.5, near - 1e-3).unwrap();
        let above = two_spike_closed_form(0.5, near + 1e-3).unwrap();
        assert_eq!(below.len(), 3);
        assert_eq!(above.len(), 1);
        // boundary: discriminant ~ 0, the two asymmetric roots coincide
        let at = two_spike_closed_form(0.5, near).unwrap();
        if at.len() > 1 {
            let h = at[1].heights();
            assert_abs_diff_eq!(h[0], h[1], epsilon = 1e-5);
        }
    }

    #[test]
    fn two_spike_solution_set_is_swap_symmetric() {
        let all = two_spike_closed_form(0.4, 0.18).unwrap();
        for c in &all {
            let swapped: Vec<f64> = vec![c.heights()[1], c.heights()[0]];
            assert!(all.iter().any(|o| o
                .heights()
                .iter()
                .zip(&swapped)
                .all(|(a, b)| (a - b).abs() < 1e-10)));
        }
    }

    #[test]
    fn equal_height_depends_on_l_only_through_b() {
        // as l -> 1/2 the equal-height V matches the symmetric K = 2 value
        let d = 0.2;
        let sym = 1.0
            / (green_periodic(0.0, 0.0, d).unwrap() + green_periodic(0.0, 0.5, d).unwrap());
        let closed = two_spike_closed_form(0.5, d).unwrap();
        assert_relative_eq!(closed[0].heights()[0], sym, max_relative = 1e-12);
    }

    #[test]
    fn three_spike_branches_and_collision_at_a_eq_4b() {
        let d = 0.2;
        let branches = three_spike_even_closed_form(d).unwrap();
        assert_eq!(branches.len(), 7, "symmetric + 2 roots x 3 rotations");
        let solve = solve_heights(
            &[0.0, 1.0 / 3.0, 2.0 / 3.0],
            d,
            &default_guesses(&[0.0, 1.0 / 3.0, 2.0 / 3.0], d).unwrap(),
        )
        .unwrap();
        for c in &solve.configurations {
            assert!(
                branches.iter().any(|b| b
                    .heights()
                    .iter()
                    .zip(c.heights())
                    .all(|(x, y)| (x - y).abs() < 1e-8)),
                "multistart found a branch outside the closed form: {:?}",
                c.heights()
            );
        }
        // at d_c(3), a = 4b and the minus root collides with the symmetric
        // one, so the rotations of that root dedup away (4 entries survive)
        let dc3 = 1.0 / (3.0 * 2.5f64.acosh());
        let a = green_periodic(0.0, 0.0, dc3).unwrap();
        let b = green_periodic(0.0, 1.0 / 3.0, dc3).unwrap();
        assert_relative_eq!(a, 4.0 * b, max_relative = 1e-10);
        let s = (a * a - 2.0 * a * b - 7.0 * b * b).sqrt();
        let v1_minus = (a + 3.0 * b - s) / (2.0 * (a + 2.0 * b) * (a - b));
        assert_relative_eq!(v1_minus, 1.0 / (6.0 * b), max_relative = 1e-7);
        let at = three_spike_even_closed_form(dc3).unwrap();
        assert_eq!(at.len(), 4, "symmetric + 3 rotations of the plus root");
    }

    #[test]
    fn three_spike_existence_boundary() {
        // asymmetric branches exist iff cosh(1/2d) >= (1 + 2 sqrt 2) cosh(1/6d)
        assert_eq!(three_spike_even_closed_form(0.218).unwrap().len(), 7);
        assert_eq!(three_spike_even_closed_form(0.219).unwrap().len(), 1);
    }

    #[test]
    fn symmetric_root_satisfies_height_system() {
        let d = 0.13;
        let config = &three_spike_even_closed_form(d).unwrap()[0];
        let res = height_residual(config.positions(), config.heights(), d).unwrap();
        assert!(res.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn closed_form_oracle_equivalence_over_d_sweep() {
        // Newton seeded from each closed-form branch reproduces it
        for i in 0..20 {
            let d = 0.05 + 0.25 * i as f64 / 19.0;
            let pos2 = [0.0, 0.5];
            let closed = two_spike_closed_form(0.5, d).unwrap();
            let seeds: Vec<Vec<f64>> = closed.iter().map(|c| c.heights().to_vec()).collect();
            let found = solve_heights(&pos2, d, &seeds).unwrap();
            for c in &closed {
                assert!(
                    found.configurations.iter().any(|s| s
                        .heights()
                        .iter()
                        .zip(c.heights())
                        .all(|(a, b)| (a - b).abs() < 1e-8)),
                    "missing 2-spike branch at d = {d}"
                );
            }
            let pos3 = [0.0, 1.0 / 3.0, 2.0 / 3.0];
            let closed = three_spike_even_closed_form(d).unwrap();
            let seeds: Vec<Vec<f64>> = closed.iter().map(|c| c.heights().to_vec()).collect();
            let found = solve_heights(&pos3, d, &seeds).unwrap();
            for c in &closed {
                assert!(
                    found.configurations.iter().any(|s| s
                        .heights()
                        .iter()
                        .zip(c.heights())
                        .all(|(a, b)| (a - b).abs() < 1e-8)),
                    "missing 3-spike branch at d = {d}"
                );
            }
        }
    }

    #[test]
    fn assembled_profile_matches_height_identity_at_spikes() {
        // v at a spike node is n V_k exactly when the height system holds
        let n = 240;
        let d = 0.2;
        let config = two_spike_closed_form(0.5, d).unwrap()[0].clone();
        let state = assemble_profile(&config, n).unwrap();
        for (k, &x) in config.positions().iter().enumerate() {
            let node = (x * n as f64).round() as usize;
            let expect = n as f64 * config.heights()[k];
            assert!(
                (state.v()[node] - expect).abs() / expect < 5.0 / n as f64,
                "v mismatch at spike {k}"
            );
            assert_eq!(state.u()[node], expect);
        }
    }

    #[test]
    fn single_spike_inhibitor_peaks_at_spike_node() {
        let n = 60;
        let d = 0.15;
        let v1 = 1.0 / green_periodic(0.0, 0.0, d).unwrap();
        let config = SpikeConfiguration::new(vec![0.5], vec![v1], d).unwrap();
        let state = assemble_profile(&config, n).unwrap();
        let peak = state
            .v()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 30);
    }

    #[test]
    fn off_grid_position_is_rejected() {
        let d = 0.2;
        let v1 = 1.0 / green_periodic(0.0, 0.0, d).unwrap();
        let config = SpikeConfiguration::new(vec![0.123], vec![v1], d).unwrap();
        match assemble_profile(&config, 10) {
            Err(Error::InvalidInput(msg)) => assert!(msg.contains("spike 0"), "{msg}"),
            other => panic!("expected off-grid error, got {other:?}"),
        }
    }

    #[test]
    fn refine_is_a_fixed_point_on_exact_solutions() {
        let (_, state) = exact_symmetric_solution(60, 30, 1.0).unwrap();
        let params = LatticeParams::new(60, 0.0, 1.0, 0.0).unwrap();
        let refined = refine_on_lattice(&state, &params).unwrap();
        assert!(refined.iterations <= 2, "took {} steps", refined.iterations);
    }

    #[test]
    fn refine_polishes_assembled_two_spike() {
        let n = 60;
        let d = 0.2;
        let config = two_spike_closed_form(0.5, d).unwrap()[0].clone();
        let state = assemble_profile(&config, n).unwrap();
        let params = LatticeParams::from_diffusion_length(n, d).unwrap();
        let refined = refine_on_lattice(&state, &params).unwrap();
        assert!(refined.residual < 1e-11);
        // refined spike heights stay within O(1/n) of n V_k
        for (k, &x) in config.positions().iter().enumerate() {
            let node = (x * n as f64).round() as usize;
            let expect = n as f64 * config.heights()[k];
            assert!(
                (refined.state.u()[node] - expect).abs() / expect < 5.0 / n as f64,
                "spike {k}: refined {} vs leading order {expect}",
                refined.state.u()[node]
            );
        }
    }

    #[test]
    fn refine_reaches_homogeneous_state_from_uniform_start() {
        let n = 20;
        let params = LatticeParams::new(n, 0.0, 4.0, 0.0).unwrap();
        let start = LatticeState::new(vec![0.5; n], vec![0.5; n]).unwrap();
        let refined = refine_on_lattice(&start, &params).unwrap();
        for k in 0..n {
            assert_abs_diff_eq!(refined.state.u()[k], 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(refined.state.v()[k], 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fig1_three_spike_profile_refines_quickly() {
        // n = 60, D_v = 0.01 n^2 so d = 0.1, three evenly spaced spikes
        let n = 60;
        let d = 0.1;
        let config = three_spike_even_closed_form(d).unwrap()[0].clone();
        let state = assemble_profile(&config, n).unwrap();
        let params = LatticeParams::from_diffusion_length(n, d).unwrap();
        let refined = refine_on_lattice(&state, &params).unwrap();
        assert!(refined.iterations < 20, "took {}", refined.iterations);
        assert!(refined.residual < 1e-11);
    }

    #[test]
    fn every_solution_resatisfies_the_height_system() {
        let d = 0.22;
        let positions = [0.0, 0.3, 0.7];
        let solve = solve_heights(&positions, d, &default_guesses(&positions, d).unwrap()).unwrap();
        assert!(!solve.configurations.is_empty());
        for c in &solve.configurations {
            let res = height_residual(c.positions(), c.heights(), d).unwrap();
            assert!(res.iter().all(|r| r.abs() < 1e-10));
        }
    }

    #[test]
    fn no_converging_guess_yields_empty_list() {
        // a non-finite seed is reported as a per-guess failure, not an error
        let solve = solve_heights(&[0.0, 0.5], 0.2, &[vec![f64::NAN, 1.0]]).unwrap();
        assert!(solve.configurations.is_empty());
        assert_eq!(solve.failures.len(), 1);
        assert_eq!(solve.failures[0].guess, 0);
    }
}
