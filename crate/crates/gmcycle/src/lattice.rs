//! Cycle-graph discretization of the Gierer-Meinhardt system.
//!
//! The model lives on `n` nodes arranged in a ring,
//!
//! ```text
//!     u_t   = D_u L u - u + u^2 / v
//!     tau v_t = D_v L v - v + u^2
//! ```
//!
//! where `L` is the periodic second-difference stencil
//! `(L w)(k) = w(k+1) + w(k-1) - 2 w(k)` with indices mod `n`.
//!
//! This module provides the Laplacian, the steady-state residual, and its
//! Jacobian. The `tau = 0` case turns the `v` equation into an algebraic
//! constraint; the linearization is then a pencil whose mass matrix has a
//! zero `v` block, and its finite eigenvalues come from the Schur-reduced
//! `u` block (see `stability::pencil_spectrum`).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Model parameters on a cycle of `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    /// Node count, at least 3.
    pub n: usize,
    /// Activator diffusion `D_u >= 0`.
    pub d_u: f64,
    /// Inhibitor diffusion `D_v > 0`.
    pub d_v: f64,
    /// Inhibitor time constant `tau >= 0` (0 makes the `v` equation algebraic).
    pub tau: f64,
}

impl LatticeParams {
    pub fn new(n: usize, d_u: f64, d_v: f64, tau: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidInput(format!("need n >= 3, got {n}")));
        }
        if !(d_v > 0.0) {
            return Err(Error::InvalidInput(format!("need D_v > 0, got {d_v}")));
        }
        if !(d_u >= 0.0) {
            return Err(Error::InvalidInput(format!("need D_u >= 0, got {d_u}")));
        }
        if !(tau >= 0.0) {
            return Err(Error::InvalidInput(format!("need tau >= 0, got {tau}")));
        }
        Ok(Self { n, d_u, d_v, tau })
    }

    /// Parameters in the large-inhibitor-diffusion scaling `D_v = d^2 n^2`
    /// with `D_u = 0` and `tau = 0`.
    pub fn from_diffusion_length(n: usize, d: f64) -> Result<Self> {
        if !(d > 0.0) {
            return Err(Error::InvalidInput(format!("need d > 0, got {d}")));
        }
        Self::new(n, 0.0, d * d * (n * n) as f64, 0.0)
    }

    /// The diffusion length `d = sqrt(D_v) / n` associated with these parameters.
    pub fn diffusion_length(&self) -> f64 {
        self.d_v.sqrt() / self.n as f64
    }
}

/// Paired activator/inhibitor values on the cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    u: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LatticeStateJson {
    n: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl LatticeState {
    /// Builds a state, checking that both sequences have the same length and
    /// that every inhibitor value is strictly positive (the reaction term
    /// `u^2 / v` must be evaluable).
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::InvalidInput(format!(
                "u and v lengths differ: {} vs {}",
                u.len(),
                v.len()
            )));
        }
        if let Some(node) = v.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::NonPositiveInhibitor {
                node,
                value: v[node],
            });
        }
        Ok(Self { u, v })
    }

    /// The homogeneous steady state `u = v = 1`.
    pub fn homogeneous(n: usize) -> Self {
        Self {
            u: vec![1.0; n],
            v: vec![1.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn max_u(&self) -> f64 {
        self.u.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cyclic rotation by `shift` nodes: node `k` of the result holds the
    /// values of node `k + shift` of `self`.
    pub fn rotated(&self, shift: usize) -> Self {
        let n = self.n();
        let rot = |w: &[f64]| (0..n).map(|k| w[(k + shift) % n]).collect();
        Self {
            u: rot(&self.u),
            v: rot(&self.v),
        }
    }

    /// CSV with header `node,u,v`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "node,u,v")?;
        for k in 0..self.n() {
            writeln!(out, "{},{},{}", k, self.u[k], self.v[k])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut u = Vec::new();
        let mut v = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != "node,u,v" {
                    return Err(Error::InvalidInput(format!(
                        "expected CSV header 'node,u,v', got '{line}'"
                    )));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::InvalidInput(format!("bad CSV row: '{line}'")));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad number '{s}': {e}")))
            };
            u.push(parse(fields[1])?);
            v.push(parse(fields[2])?);
        }
        Self::new(u, v)
    }

    /// JSON object with keys `n`, `u`, `v`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "n": self.n(), "u": self.u, "v": self.v })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let parsed: LatticeStateJson = serde_json::from_value(value.clone())?;
        if parsed.u.len() != parsed.n {
            return Err(Error::InvalidInput(format!(
                "JSON state claims n = {} but u has {} entries",
                parsed.n,
                parsed.u.len()
            )));
        }
        Self::new(parsed.u, parsed.v)
    }
}

/// Applies the cycle-graph Laplacian `(L w)(k) = w(k+1) + w(k-1) - 2 w(k)`.
///
/// The output sums to zero up to rounding: the stencil moves mass around
/// the ring without creating any.
pub fn laplacian_apply(w: &[f64]) -> Result<Vec<f64>> {
    let n = w.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "laplacian needs n >= 3 nodes, got {n}"
        )));
    }
    Ok((0..n)
        .map(|k| w[(k + 1) % n] + w[(k + n - 1) % n] - 2.0 * w[k])
        .collect())
}

/// Steady-state residual of the full model, `2n` entries.
///
/// The first `n` entries are `D_u L u - u + u^2/v`, the last `n` are
/// `D_v L v - v + u^2`. The state is not modified.
pub fn steady_residual(params: &LatticeParams, state: &LatticeState) -> Result<Vec<f64>> {
    let n = params.n;
    if state.n() != n {
        return Err(Error::InvalidInput(format!(
            "state has {} nodes, params say {}",
            state.n(),
            n
        )));
    }
    if let Some(node) = state.v.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NonPositiveInhibitor {
            node,
            value: state.v[node],
        });
    }
    let lu = laplacian_apply(&state.u)?;
    let lv = laplacian_apply(&state.v)?;
    let mut res = Vec::with_capacity(2 * n);
    for k in 0..n {
        res.push(params.d_u * lu[k] - state.u[k] + state.u[k] * state.u[k] / state.v[k]);
    }
    for k in 0..n {
        res.push(params.d_v * lv[k] - state.v[k] + state.u[k] * state.u[k]);
    }
    Ok(res)
}

pub fn residual_inf_norm(params: &LatticeParams, state: &LatticeState) -> Result<f64> {
    Ok(steady_residual(params, state)?
        .iter()
        .fold(0.0, |acc, r| acc.max(r.abs())))
}

/// Jacobian of `steady_residual`, a dense `2n x 2n` matrix in block form
///
/// ```text
///     [ D_u L + diag(-1 + 2u/v)    diag(-u^2/v^2) ]
///     [ diag(2u)                   D_v L - I      ]
/// ```
///
/// For the linear stability pencil the `v` block carries mass weight `tau`;
/// `tau = 0` yields a differential-algebraic pencil.
pub fn full_jacobian(params: &LatticeParams, state: &LatticeState) -> Result<DMatrix<f64>> {
    let n = params.n;
    if state.n() != n {
        return Err(Error::InvalidInput(format!(
            "state has {} nodes, params say {}",
            state.n(),
            n
        )));
    }
    if let Some(node) = state.v.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NonPositiveInhibitor {
            node,
            value: state.v[node],
        });
    }
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        let up = (k + 1) % n;
        let dn = (k + n - 1) % n;
        let (u, v) = (state.u[k], state.v[k]);
        // u block
        jac[(k, up)] += params.d_u;
        jac[(k, dn)] += params.d_u;
        jac[(k, k)] += -2.0 * params.d_u - 1.0 + 2.0 * u / v;
        jac[(k, n + k)] = -u * u / (v * v);
        // v block
        jac[(n + k, k)] = 2.0 * u;
        jac[(n + k, n + up)] += params.d_v;
        jac[(n + k, n + dn)] += params.d_v;
        jac[(n + k, n + k)] += -2.0 * params.d_v - 1.0;
    }
    Ok(jac)
}

/// Diagonal of the mass matrix for the stability pencil: ones on the `u`
/// block, `tau` on the `v` block.
pub fn mass_diagonal(params: &LatticeParams) -> Vec<f64> {
    let mut diag = vec![1.0; 2 * params.n];
    for entry in diag.iter_mut().skip(params.n) {
        *entry = params.tau;
    }
    diag
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn laplacian_annihilates_constants() {
        let res = laplacian_apply(&[3.7; 9]).unwrap();
        assert!(res.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_impulse_stencil() {
        let res = laplacian_apply(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(res, vec![-2.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn laplacian_rejects_short_input() {
        assert!(laplacian_apply(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn laplacian_sum_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..60).map(|_| rng.random_range(-5.0..5.0)).collect();
        let sum: f64 = laplacian_apply(&w).unwrap().iter().sum();
        assert!(sum.abs() < 1e-12, "sum = {sum}");
    }

    #[test]
    fn homogeneous_state_is_steady() {
        let params = LatticeParams::new(12, 0.3, 2.0, 1.0).unwrap();
        let state = LatticeState::homogeneous(12);
        let res = steady_residual(&params, &state).unwrap();
        assert!(res.iter().all(|&r| r.abs() < 1e-15));
    }

    #[test]
    fn zero_activator_residual() {
        // u = 0, v = 1: first block vanishes, second block is -1 everywhere.
        let params = LatticeParams::new(8, 0.0, 1.0, 0.0).unwrap();
        let state = LatticeState::new(vec![0.0; 8], vec![1.0; 8]).unwrap();
        let res = steady_residual(&params, &state).unwrap();
        assert!(res[..8].iter().all(|&r| r == 0.0));
        assert!(res[8..].iter().all(|&r| r == -1.0));
    }

    #[test]
    fn nonpositive_inhibitor_is_an_error() {
        let params = LatticeParams::new(4, 0.0, 1.0, 0.0).unwrap();
        let state = LatticeState {
            u: vec![1.0; 4],
            v: vec![1.0, 1.0, -0.5, 1.0],
        };
        match steady_residual(&params, &state) {
            Err(Error::NonPositiveInhibitor { node: 2, .. }) => {}
            other => panic!("expected domain error at node 2, got {other:?}"),
        }
    }

    #[test]
    fn residual_commutes_with_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 17;
        let params = LatticeParams::new(n, 0.2, 3.0, 0.5).unwrap();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let state = LatticeState::new(u, v).unwrap();
        let shift = 5;
        let res = steady_residual(&params, &state).unwrap();
        let res_rot = steady_residual(&params, &state.rotated(shift)).unwrap();
        for k in 0..n {
            assert_abs_diff_eq!(res_rot[k], res[(k + shift) % n], epsilon = 1e-13);
            assert_abs_diff_eq!(res_rot[n + k], res[n + (k + shift) % n], epsilon = 1e-13);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10;
        let params = LatticeParams::new(n, 0.4, 2.5, 0.0).unwrap();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let state = LatticeState::new(u.clone(), v.clone()).unwrap();
        let jac = full_jacobian(&params, &state).unwrap();

        let h = 1e-6;
        let dir: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let perturbed = |sign: f64| {
            let up: Vec<f64> = (0..n).map(|k| u[k] + sign * h * dir[k]).collect();
            let vp: Vec<f64> = (0..n).map(|k| v[k] + sign * h * dir[n + k]).collect();
            steady_residual(&params, &LatticeState::new(up, vp).unwrap()).unwrap()
        };
        let fp = perturbed(1.0);
        let fm = perturbed(-1.0);
        let jh: Vec<f64> = (0..2 * n)
            .map(|i| (0..2 * n).map(|j| jac[(i, j)] * dir[j]).sum())
            .collect();
        let scale = jh.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for i in 0..2 * n {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            assert!(
                (fd - jh[i]).abs() <= 1e-6 * scale,
                "entry {i}: fd = {fd}, J h = {}",
                jh[i]
            );
        }
    }

    #[test]
    fn jacobian_u_block_at_zero_activator() {
        // At u = 0, v = 1 the u block is exactly D_u L - I.
        let n = 6;
        let params = LatticeParams::new(n, 0.7, 1.0, 0.0).unwrap();
        let state = LatticeState::new(vec![0.0; n], vec![1.0; n]).unwrap();
        let jac = full_jacobian(&params, &state).unwrap();
        for i in 0..n {
            for j in 0..n {
                let lap = if i == j {
                    -2.0
                } else if (i + 1) % n == j || (j + 1) % n == i {
                    1.0
                } else {
                    0.0
                };
                let expect = params.d_u * lap - if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(jac[(i, j)], expect, epsilon = 1e-15);
                // u^2/v^2 coupling vanishes
                assert_eq!(jac[(i, n + j)], 0.0);
            }
        }
    }

    #[test]
    fn csv_roundtrip() {
        let state = LatticeState::new(vec![0.5, 1.5, 0.0], vec![1.0, 2.0, 0.25]).unwrap();
        let mut buf = Vec::new();
        state.write_csv(&mut buf).unwrap();
        let back = LatticeState::read_csv(buf.as_slice()).unwrap();
        assert_eq!(state, back);
    }

    #[test]
    fn json_roundtrip() {
        let state = LatticeState::new(vec![0.5, 1.5, 0.0], vec![1.0, 2.0, 0.25]).unwrap();
        let back = LatticeState::from_json(&state.to_json()).unwrap();
        assert_eq!(state, back);
    }
}
