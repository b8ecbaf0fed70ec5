//! Exact symmetric K-spike solutions of the discrete system with `D_u = 0`,
//! no continuum approximation.
//!
//! With `m = n/K` nodes per spike period, the inhibitor between spikes obeys
//! the three-term recurrence `D_v (C_{j-1} - 2 C_j + C_{j+1}) = C_j` whose
//! characteristic roots are
//!
//! ```text
//!     alpha = 1 + 1/(2 D_v) -+ sqrt(1/D_v + 1/(4 D_v^2)),
//! ```
//!
//! with `alpha_1 alpha_2 = 1`. In terms of the contracting root the
//! inter-spike profile is `C_j = C_0 (a1^j + a1^(m-j)) / (1 + a1^m)` and the
//! spike value follows from the node equation at the spike,
//! `C_0 = 1 + 2 D_v - 2 D_v (a + b)`. All expressions here are evaluated in
//! powers of `alpha_1 < 1` only, so large `m / sqrt(D_v)` cannot overflow.
//!
//! The `m = 2` case is the zigzag ("shark teeth") pattern.

use crate::error::{Error, Result};
use crate::lattice::LatticeState;
use crate::stability::StabilityReport;

/// Exact symmetric K-spike data: recurrence roots, inter-spike profile,
/// and the spectral coefficients `a`, `b` of the reduced eigenproblem.
#[derive(Debug, Clone)]
pub struct ExactSymmetricSolution {
    pub n: usize,
    pub k: usize,
    /// Spike spacing `m = n / K`.
    pub m: usize,
    pub d_v: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Inter-spike inhibitor values `C_0 .. C_{m-1}` (period pattern).
    pub c: Vec<f64>,
    /// Spectral coefficient `a = (a2 - a1) / (a2^m - a1^m)`.
    pub a_coef: f64,
    /// Spectral coefficient `b = (a2^(m-1) - a1^(m-1)) / (a2^m - a1^m)`.
    pub b_coef: f64,
}

impl ExactSymmetricSolution {
    pub fn c0(&self) -> f64 {
        self.c[0]
    }
}

/// Roots of the inter-spike recurrence, `alpha_1 < 1 < alpha_2` with
/// `alpha_1 alpha_2 = 1`.
pub fn roots_alpha(d_v: f64) -> Result<(f64, f64)> {
    if !(d_v > 0.0) {
        return Err(Error::InvalidInput(format!("need D_v > 0, got {d_v}")));
    }
    let half = 1.0 + 1.0 / (2.0 * d_v);
    let root = (1.0 / d_v + 1.0 / (4.0 * d_v * d_v)).sqrt();
    Ok((half - root, half + root))
}

fn spectral_coefficients(alpha1: f64, m: usize) -> (f64, f64) {
    // multiply numerator and denominator by alpha1^m and use alpha2 = 1/alpha1
    let a1m = alpha1.powi(m as i32);
    let den = 1.0 - a1m * a1m;
    let a = (alpha1.powi(m as i32 - 1) - alpha1.powi(m as i32 + 1)) / den;
    let b = alpha1 * (1.0 - alpha1.powi(2 * (m as i32 - 1))) / den;
    (a, b)
}

/// Constructs the exact symmetric K-spike solution on `n = K m` nodes.
///
/// Returns the solution data plus the lattice state with `u = v = C_0` at
/// the spike nodes and `u = 0`, `v = C_j` between them. The state solves the
/// `D_u = 0` steady equations to rounding. Fails with a nonexistence error
/// when the `C_0` formula goes nonpositive.
pub fn exact_symmetric_solution(
    n: usize,
    k: usize,
    d_v: f64,
) -> Result<(ExactSymmetricSolution, LatticeState)> {
    if k == 0 || n % k != 0 {
        return Err(Error::InvalidInput(format!(
            "spike count {k} must divide the node count {n}"
        )));
    }
    if n < 3 {
        return Err(Error::InvalidInput(format!("need n >= 3, got {n}")));
    }
    let m = n / k;
    let (alpha1, alpha2) = roots_alpha(d_v)?;
    let (a, b) = spectral_coefficients(alpha1, m);
    let c0 = 1.0 + 2.0 * d_v - 2.0 * d_v * (a + b);
    if !(c0 > 0.0) {
        return Err(Error::Nonexistence(format!(
            "C_0 = {c0:.6e} <= 0 at n = {n}, K = {k}, D_v = {d_v}; \
             the symmetric pattern does not exist there"
        )));
    }
    let a1m = alpha1.powi(m as i32);
    let c: Vec<f64> = (0..m)
        .map(|j| c0 * (alpha1.powi(j as i32) + alpha1.powi((m - j) as i32)) / (1.0 + a1m))
        .collect();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for i in 0..n {
        let j = i % m;
        v[i] = c[j];
        if j == 0 {
            u[i] = c0;
        }
    }
    let state = LatticeState::new(u, v)?;
    Ok((
        ExactSymmetricSolution {
            n,
            k,
            m,
            d_v,
            alpha1,
            alpha2,
            c,
            a_coef: a,
            b_coef: b,
        },
        state,
    ))
}

/// Eigenvalues of the exact symmetric solution under the `tau = 0` pencil:
///
/// ```text
///     lambda_j = 1 - 2 C_0 / (1 - lambda_M_j),
///     lambda_M_j = D_v (2b - 2 + 2a cos(2 pi j / K)),   j = 0..K-1.
/// ```
///
/// The mode `j = 0` always gives `lambda = -1`; the largest eigenvalue comes
/// from the mode with `cos` closest to `-1`.
pub fn exact_spectrum(sol: &ExactSymmetricSolution) -> StabilityReport {
    exact_spectrum_with_tol(sol, 1e-8)
}

pub fn exact_spectrum_with_tol(sol: &ExactSymmetricSolution, marginal_tol: f64) -> StabilityReport {
    StabilityReport::from_real_eigenvalues(exact_mode_eigenvalues(sol), marginal_tol)
}

/// The same eigenvalues in mode order `j = 0..K-1` (mode 0 first).
pub fn exact_mode_eigenvalues(sol: &ExactSymmetricSolution) -> Vec<f64> {
    (0..sol.k)
        .map(|j| {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / sol.k as f64;
            let lam_m = sol.d_v * (2.0 * sol.b_coef - 2.0 + 2.0 * sol.a_coef * theta.cos());
            1.0 - 2.0 * sol.c0() / (1.0 - lam_m)
        })
        .collect()
}

/// The critical inhibitor diffusion for the symmetric K-spike pattern:
/// the root of `2 C_0(D_v) = 1 - lambda_M_worst(D_v)` where the worst mode
/// is `j = floor(K/2)`. For even `K` (`cos = -1`) this is exactly
///
/// ```text
///     2 (1 + 2 D_v - 2 D_v (a + b)) = 1 + 2 D_v + 2 D_v (a - b).
/// ```
///
/// Bracketed on `[1e-6, 1e6]` and bisected to relative tolerance 1e-10.
/// The pattern is stable for `D_v` below the returned value.
pub fn critical_dv(n: usize, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "single spike has no threshold, need K >= 2, got {k}"
        )));
    }
    if n % k != 0 {
        return Err(Error::InvalidInput(format!(
            "spike count {k} must divide the node count {n}"
        )));
    }
    let m = n / k;
    let cos_worst = (2.0 * std::f64::consts::PI * (k / 2) as f64 / k as f64).cos();
    let margin = |d_v: f64| -> f64 {
        let (alpha1, _) = roots_alpha(d_v).expect("bracket is positive");
        let (a, b) = spectral_coefficients(alpha1, m);
        let c0 = 1.0 + 2.0 * d_v - 2.0 * d_v * (a + b);
        let lam_m_worst = d_v * (2.0 * b - 2.0 + 2.0 * a * cos_worst);
        2.0 * c0 - (1.0 - lam_m_worst)
    };
    let (mut lo, mut hi) = (1e-6, 1e6);
    let (flo, fhi) = (margin(lo), margin(hi));
    if flo.signum() == fhi.signum() {
        return Err(Error::Numerical(format!(
            "no sign change for the critical D_v bracket at n = {n}, K = {k}: \
             F({lo:.1e}) = {flo:.3e}, F({hi:.1e}) = {fhi:.3e}"
        )));
    }
    while (hi - lo) > 1e-10 * hi.abs() {
        let mid = 0.5 * (lo + hi);
        if margin(mid).signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{residual_inf_norm, LatticeParams};
    use crate::stability::Classification;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn alpha_roots_satisfy_vieta() {
        for &dv in &[0.1, 1.0, 36.0, 1e4] {
            let (a1, a2) = roots_alpha(dv).unwrap();
            assert!(0.0 < a1 && a1 < 1.0 && 1.0 < a2);
            assert_relative_eq!(a1 * a2, 1.0, max_relative = 1e-12);
            assert_relative_eq!(a1 + a2, 2.0 + 1.0 / dv, max_relative = 1e-12);
        }
    }

    #[test]
    fn alpha_roots_at_unit_diffusion() {
        // D_v = 1: alpha = 3/2 -+ sqrt(5)/2
        let (a1, a2) = roots_alpha(1.0).unwrap();
        assert_relative_eq!(a1, 1.5 - 5.0f64.sqrt() / 2.0, max_relative = 1e-14);
        assert_relative_eq!(a2, 1.5 + 5.0f64.sqrt() / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn inter_spike_profile_solves_the_recurrence_and_is_symmetric() {
        let (sol, _) = exact_symmetric_solution(60, 5, 7.3).unwrap();
        let m = sol.m;
        let c = &sol.c;
        let cm = sol.c0(); // C_m wraps to C_0
        for j in 1..m {
            let prev = c[j - 1];
            let next = if j + 1 == m { cm } else { c[j + 1] };
            let res = sol.d_v * (prev - 2.0 * c[j] + next) - c[j];
            assert!(res.abs() < 1e-12 * cm.max(1.0), "recurrence fails at j = {j}");
        }
        for j in 1..m {
            assert_relative_eq!(c[j], c[m - j], max_relative = 1e-13);
        }
    }

    #[test]
    fn zigzag_state_is_an_exact_steady_state() {
        let (sol, state) = exact_symmetric_solution(60, 30, 1.0).unwrap();
        assert_eq!(sol.m, 2);
        let params = LatticeParams::new(60, 0.0, 1.0, 0.0).unwrap();
        assert!(residual_inf_norm(&params, &state).unwrap() < 1e-10);
    }

    #[test]
    fn residual_check_at_moderate_parameters() {
        let (_, state) = exact_symmetric_solution(60, 3, 36.0).unwrap();
        let params = LatticeParams::new(60, 0.0, 36.0, 0.0).unwrap();
        assert!(residual_inf_norm(&params, &state).unwrap() < 1e-10);
    }

    #[test]
    fn large_m_spike_value_approaches_tanh_asymptote() {
        // C_0 / (2 sqrt(D_v)) -> tanh(m / (2 sqrt(D_v)))
        let (sol, _) = exact_symmetric_solution(30, 1, 100.0).unwrap();
        let m = sol.m as f64;
        let lhs = sol.c0() / (2.0 * 10.0);
        let rhs = (m / 20.0).tanh();
        assert!((lhs - rhs).abs() / rhs < 0.01, "lhs = {lhs}, rhs = {rhs}");
    }

    #[test]
    fn single_spike_is_stable_across_dv() {
        for &dv in &[0.1, 1.0, 10.0, 100.0] {
            let (sol, _) = exact_symmetric_solution(60, 1, dv).unwrap();
            let report = exact_spectrum(&sol);
            assert_eq!(report.classification(), Classification::Stable);
            // the only mode is j = 0, which always sits at -1
            assert_abs_diff_eq!(report.max_real(), -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn spectrum_modes_pair_up() {
        let (sol, _) = exact_symmetric_solution(60, 6, 4.0).unwrap();
        let eig = exact_mode_eigenvalues(&sol);
        for j in 1..sol.k {
            assert_relative_eq!(eig[j], eig[sol.k - j], max_relative = 1e-12);
        }
    }

    #[test]
    fn max_real_vanishes_at_the_critical_diffusion() {
        for &(n, k) in &[(60usize, 2usize), (60, 6), (60, 30)] {
            let dvc = critical_dv(n, k).unwrap();
            let (sol, _) = exact_symmetric_solution(n, k, dvc).unwrap();
            let report = exact_spectrum(&sol);
            assert_abs_diff_eq!(report.max_real(), 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn stability_flips_exactly_at_critical_dv() {
        // Theorem-level agreement between the spectrum and the threshold on
        // a grid straddling it.
        for &(n, k) in &[(60usize, 2usize), (60, 3), (60, 6), (60, 30)] {
            let dvc = critical_dv(n, k).unwrap();
            for i in 0..10 {
                let factor = 0.5 + i as f64 / 9.0; // 0.5 .. 1.5
                let dv = factor * dvc;
                let (sol, _) = exact_symmetric_solution(n, k, dv).unwrap();
                let report = exact_spectrum(&sol);
                let expect = if dv < dvc {
                    Classification::Stable
                } else {
                    Classification::Unstable
                };
                assert_eq!(
                    report.classification(),
                    expect,
                    "n = {n}, K = {k}, D_v = {dv} (threshold {dvc})"
                );
            }
        }
    }

    #[test]
    fn critical_dv_rejects_single_spike() {
        assert!(critical_dv(60, 1).is_err());
    }

    #[test]
    fn threshold_scaling_approaches_continuum_constant() {
        // sqrt(D_vc)/m -> 1/arccosh(3) ~ 0.5673 as m grows (n = 60)
        let limit = 1.0 / 3.0f64.acosh();
        let mut prev_gap = f64::INFINITY;
        for &m in &[6usize, 10, 15, 30] {
            let dvc = critical_dv(60, 60 / m).unwrap();
            let val = dvc.sqrt() / m as f64;
            let gap = (val - limit).abs();
            assert!(gap < 0.05, "m = {m}: {val}");
            assert!(gap <= prev_gap + 1e-12, "not monotone at m = {m}");
            prev_gap = gap;
        }
    }
}
