//! Continuum Green's functions of `d^2 G'' - G = -delta(x - x0)` on the
//! unit interval (Neumann ends) and the unit circle.
//!
//! These kernels express the inhibitor field of the reduced spike model.
//! All ratios of hyperbolic functions are evaluated through exponentials of
//! nonpositive arguments so that sweeps down to very small `d` (where
//! `1/(2d)` is large) neither overflow nor lose the tail.

use crate::error::{Error, Result};

fn check_d(d: f64) -> Result<()> {
    if !(d > 0.0) {
        return Err(Error::InvalidInput(format!(
            "diffusion length must be positive, got {d}"
        )));
    }
    Ok(())
}

/// Green's function on `[0, 1]` with Neumann ends.
///
/// For `x <= x0` this is `cosh(x/d) cosh((x0-1)/d) / (d sinh(1/d))`, and the
/// symmetric expression for `x >= x0`. Continuous at `x = x0`, with a
/// derivative jump of `-1/d^2` across the source.
pub fn green_neumann(x: f64, x0: f64, d: f64) -> Result<f64> {
    check_d(d)?;
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&x0) {
        return Err(Error::InvalidInput(format!(
            "positions must lie in [0, 1], got x = {x}, x0 = {x0}"
        )));
    }
    let (lo, hi) = if x <= x0 { (x, x0) } else { (x0, x) };
    // cosh(lo/d) cosh((1-hi)/d) / (d sinh(1/d)), rewritten with the factor
    // e^{1/d} cancelled; every exponent below is <= 0.
    let e = |t: f64| (t / d).exp();
    let num = e(lo - hi) + e(lo + hi - 2.0) + e(-lo - hi) + e(hi - lo - 2.0);
    let den = 2.0 * d * (1.0 - e(-2.0));
    Ok(num / den)
}

/// Wraps a coordinate difference onto the circle and returns the separation
/// `l = min(|x - x0|, 1 - |x - x0|) <= 1/2`. Positions are reduced mod 1
/// first, so callers may pass unwrapped spike coordinates.
pub fn periodic_separation(x: f64, x0: f64) -> f64 {
    let diff = (x - x0).rem_euclid(1.0);
    diff.min(1.0 - diff)
}

fn green_periodic_at(l: f64, d: f64) -> f64 {
    // cosh((l - 1/2)/d) / (2 d sinh(1/(2d))) in overflow-safe form
    let e = |t: f64| (t / d).exp();
    (e(l - 1.0) + e(-l)) / (2.0 * d * (1.0 - e(-1.0)))
}

/// Green's function on the unit circle:
/// `cosh((l - 1/2)/d) / (2 d sinh(1/(2d)))` with
/// `l = min(|x - x0|, 1 - |x - x0|)`.
pub fn green_periodic(x: f64, x0: f64, d: f64) -> Result<f64> {
    check_d(d)?;
    if !x.is_finite() || !x0.is_finite() {
        return Err(Error::InvalidInput("positions must be finite".into()));
    }
    Ok(green_periodic_at(periodic_separation(x, x0), d))
}

/// Value, first and second derivative of the periodic Green's function with
/// respect to the separation `l`, for `0 < l <= 1/2`.
///
/// The first derivative is discontinuous at `l = 0` (the source), so that
/// point is rejected. Away from the source the kernel solves the homogeneous
/// equation, hence `G_xx = G / d^2` identically.
pub fn green_periodic_derivatives(l: f64, d: f64) -> Result<(f64, f64, f64)> {
    check_d(d)?;
    if !(l > 0.0 && l <= 0.5) {
        return Err(Error::InvalidInput(format!(
            "separation must lie in (0, 1/2], got {l} (the derivative jumps at l = 0)"
        )));
    }
    let e = |t: f64| (t / d).exp();
    let den = 1.0 - e(-1.0);
    let g = (e(l - 1.0) + e(-l)) / (2.0 * d * den);
    let gx = (e(l - 1.0) - e(-l)) / (2.0 * d * d * den);
    let gxx = g / (d * d);
    Ok((g, gx, gxx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    /// Tridiagonal solve (Thomas algorithm); the independent oracle for the
    /// Neumann boundary-value problem below.
    fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
        let n = diag.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        c[0] = sup[0] / diag[0];
        d[0] = rhs[0] / diag[0];
        for i in 1..n {
            let m = diag[i] - sub[i - 1] * c[i - 1];
            c[i] = if i < n - 1 { sup[i] / m } else { 0.0 };
            d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        x
    }

    /// Dense second-order finite-difference solve of
    /// `d^2 G'' - G = -delta(x - x0)` with Neumann ends on `n + 1` points.
    fn neumann_bvp_oracle(n: usize, d: f64, source: usize) -> (Vec<f64>, f64) {
        let h = 1.0 / n as f64;
        let w = d * d / (h * h);
        let len = n + 1;
        let mut sub = vec![w; len - 1];
        let mut sup = vec![w; len - 1];
        let diag = vec![-2.0 * w - 1.0; len];
        // ghost-node reflection keeps the ends second order
        sup[0] = 2.0 * w;
        sub[len - 2] = 2.0 * w;
        let mut rhs = vec![0.0; len];
        rhs[source] = -1.0 / h;
        (thomas(&sub, &diag, &sup, &rhs), h)
    }

    /// Cyclic tridiagonal solve via Sherman-Morrison; oracle for the
    /// periodic boundary-value problem.
    fn periodic_bvp_oracle(n: usize, d: f64, source: usize) -> (Vec<f64>, f64) {
        let h = 1.0 / n as f64;
        let w = d * d / (h * h);
        let a = -2.0 * w - 1.0; // diagonal
        let gamma = -a;
        let mut diag = vec![a; n];
        diag[0] -= gamma;
        diag[n - 1] -= w * w / gamma;
        let sub = vec![w; n - 1];
        let sup = vec![w; n - 1];
        let mut rhs = vec![0.0; n];
        rhs[source] = -1.0 / h;
        let y = thomas(&sub, &diag, &sup, &rhs);
        let mut q = vec![0.0; n];
        q[0] = gamma;
        q[n - 1] = w;
        let z = thomas(&sub, &diag, &sup, &q);
        let factor = (y[0] + w * y[n - 1] / gamma) / (1.0 + z[0] + w * z[n - 1] / gamma);
        let x: Vec<f64> = (0..n).map(|i| y[i] - factor * z[i]).collect();
        (x, h)
    }

    #[test]
    fn neumann_is_symmetric() {
        let d = 0.17;
        assert_eq!(
            green_neumann(0.3, 0.7, d).unwrap(),
            green_neumann(0.7, 0.3, d).unwrap()
        );
    }

    #[test]
    fn neumann_rejects_bad_inputs() {
        assert!(green_neumann(0.5, 0.5, 0.0).is_err());
        assert!(green_neumann(1.5, 0.5, 0.1).is_err());
    }

    #[test]
    fn neumann_derivative_jump() {
        // centered differences on either side of the source
        let d = 0.2;
        let x0 = 0.37;
        let h = 1e-7;
        let g = |x: f64| green_neumann(x, x0, d).unwrap();
        let right = (g(x0 + 2.0 * h) - g(x0)) / (2.0 * h);
        let left = (g(x0) - g(x0 - 2.0 * h)) / (2.0 * h);
        let jump = right - left;
        assert_relative_eq!(jump, -1.0 / (d * d), max_relative = 1e-6);
    }

    #[test]
    fn neumann_matches_dense_bvp() {
        let d = 0.2;
        let n = 10_000;
        let source = 3_700;
        let (sol, h) = neumann_bvp_oracle(n, d, source);
        let x0 = source as f64 * h;
        for &node in &[0, 1_500, 3_700, 5_000, 10_000] {
            let exact = green_neumann(node as f64 * h, x0, d).unwrap();
            assert_relative_eq!(sol[node], exact, max_relative = 1e-4);
        }
    }

    #[test]
    fn periodic_at_antipode() {
        let d = 0.23;
        let expect = 1.0 / (2.0 * d * (0.5f64 / d).sinh());
        assert_relative_eq!(
            green_periodic(0.0, 0.5, d).unwrap(),
            expect,
            max_relative = 1e-14
        );
    }

    #[test]
    fn periodic_wraps_positions() {
        let d = 0.2;
        // both pairs are separation 0.2 on the circle (up to one wrap rounding)
        assert_abs_diff_eq!(
            green_periodic(0.9, 0.1, d).unwrap(),
            green_periodic(0.2, 0.0, d).unwrap(),
            epsilon = 1e-14
        );
        // unwrapped coordinates reduce mod 1
        assert_abs_diff_eq!(
            green_periodic(2.3, 0.1, d).unwrap(),
            green_periodic(0.3, 0.1, d).unwrap(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn periodic_matches_dense_bvp() {
        let d = 0.2;
        let n = 10_000;
        let source = 2_000;
        let (sol, h) = periodic_bvp_oracle(n, d, source);
        let x0 = source as f64 * h;
        for &node in &[0, 1_000, 2_000, 4_500, 7_000, 9_999] {
            let exact = green_periodic(node as f64 * h, x0, d).unwrap();
            assert_relative_eq!(sol[node], exact, max_relative = 1e-4);
        }
    }

    #[test]
    fn periodic_agrees_with_naive_formula_and_survives_small_d() {
        for &d in &[0.4, 0.1, 0.03] {
            for &l in &[0.0, 0.1, 0.25, 0.5] {
                let naive = ((l - 0.5f64) / d).cosh() / (2.0 * d * (0.5f64 / d).sinh());
                assert_relative_eq!(green_periodic_at(l, d), naive, max_relative = 1e-13);
            }
        }
        // 1/(2d) = 500: the naive cosh/sinh forms overflow, this must not
        let tiny = green_periodic(0.0, 0.5, 0.001).unwrap();
        assert!(tiny.is_finite() && tiny >= 0.0);
        assert!(green_periodic(0.0, 0.0, 0.001).unwrap().is_finite());
    }

    #[test]
    fn derivatives_satisfy_the_ode_and_vanish_at_antipode() {
        let d = 0.21;
        for &l in &[0.05, 0.2, 0.35, 0.5] {
            let (g, _, gxx) = green_periodic_derivatives(l, d).unwrap();
            assert_relative_eq!(gxx * d * d, g, max_relative = 1e-14);
        }
        let (_, gx, _) = green_periodic_derivatives(0.5, d).unwrap();
        assert_abs_diff_eq!(gx, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let d = 0.18;
        let h = 1e-6;
        for &l in &[0.1, 0.25, 0.4] {
            let (_, gx, _) = green_periodic_derivatives(l, d).unwrap();
            let fd = (green_periodic_at(l + h, d) - green_periodic_at(l - h, d)) / (2.0 * h);
            assert_abs_diff_eq!(gx, fd, epsilon = 1e-7 * gx.abs().max(1.0));
        }
    }

    #[test]
    fn derivative_rejects_source_point() {
        assert!(green_periodic_derivatives(0.0, 0.2).is_err());
    }

    #[test]
    fn periodic_positive_and_decreasing_in_separation() {
        for &d in &[0.05, 0.2, 0.5] {
            let mut prev = f64::INFINITY;
            for i in 0..=50 {
                let l = 0.5 * i as f64 / 50.0;
                let g = green_periodic_at(l, d);
                assert!(g > 0.0);
                assert!(g <= prev, "not decreasing at l = {l}, d = {d}");
                prev = g;
            }
        }
    }

    #[test]
    fn self_interaction_dominates_and_decouples_as_d_shrinks() {
        let d = 0.05;
        let ratio = green_periodic(0.5, 0.0, d).unwrap() / green_periodic(0.0, 0.0, d).unwrap();
        assert!(ratio < 1e-4, "ratio = {ratio}");
    }
}
