//! Pseudo-arclength continuation of full-lattice steady states in a single
//! parameter, with fold detection.
//!
//! The augmented unknown is `y = (u, v, p)`. Steps follow the unit tangent
//! of the bordered system in a weighted norm (states are scaled down so the
//! parameter component of the tangent stays O(1)); the corrector is Newton
//! on the residual plus the arclength constraint. A fold is flagged where
//! the parameter component of the tangent changes sign between accepted
//! points and is then sharpened by bisection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::lattice::{laplacian_apply, steady_residual, LatticeParams, LatticeState};
use crate::spikes::refine_on_lattice;
use crate::stability::pencil_spectrum;

/// Which model parameter the branch varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchParameter {
    /// Diffusion length `d`, with `D_v = d^2 n^2`.
    #[serde(rename = "d")]
    DiffusionLength,
    /// `kappa = D_v / D_u` at fixed `D_u`.
    #[serde(rename = "kappa")]
    Kappa,
    /// `D_v` directly.
    #[serde(rename = "Dv")]
    Dv,
}

impl BranchParameter {
    pub fn name(&self) -> &'static str {
        match self {
            BranchParameter::DiffusionLength => "d",
            BranchParameter::Kappa => "kappa",
            BranchParameter::Dv => "Dv",
        }
    }

    fn apply(&self, base: &LatticeParams, value: f64) -> LatticeParams {
        let mut params = *base;
        match self {
            BranchParameter::DiffusionLength => {
                params.d_v = value * value * (base.n * base.n) as f64
            }
            BranchParameter::Kappa => params.d_v = value * base.d_u,
            BranchParameter::Dv => params.d_v = value,
        }
        params
    }

    /// `d F / d p` at the current state (only the `v` equations depend on
    /// `D_v`, and they do so linearly through `D_v L v`).
    fn residual_derivative(&self, base: &LatticeParams, value: f64, v: &[f64]) -> Vec<f64> {
        let n = base.n;
        let lv = laplacian_apply(v).expect("n >= 3");
        let scale = match self {
            BranchParameter::DiffusionLength => 2.0 * value * (n * n) as f64,
            BranchParameter::Kappa => base.d_u,
            BranchParameter::Dv => 1.0,
        };
        let mut out = vec![0.0; 2 * n];
        for k in 0..n {
            out[n + k] = scale * lv[k];
        }
        out
    }
}

/// One accepted branch point.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub param: f64,
    pub max_u: f64,
    pub state: LatticeState,
    /// Largest real part of the pencil spectrum at this point is negative.
    pub stable: bool,
}

/// A traced branch: accepted points in order, detected fold parameter
/// values, and a diagnostic if the corrector died at minimum step.
#[derive(Debug, Clone)]
pub struct Branch {
    pub parameter: BranchParameter,
    pub points: Vec<BranchPoint>,
    pub folds: Vec<f64>,
    pub truncated: Option<String>,
}

impl Branch {
    /// CSV `param,max_u,stable,fold_flag`; a point is fold-flagged when a
    /// detected fold lies between it and its successor.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "param,max_u,stable,fold_flag")?;
        for (i, point) in self.points.iter().enumerate() {
            let next = self.points.get(i + 1).map(|p| p.param);
            let fold_here = next.is_some_and(|np| {
                let (lo, hi) = if point.param <= np {
                    (point.param, np)
                } else {
                    (np, point.param)
                };
                self.folds.iter().any(|&f| f >= lo && f <= hi)
            });
            writeln!(
                out,
                "{},{},{},{}",
                point.param,
                point.max_u,
                if point.stable { 1 } else { 0 },
                if fold_here { 1 } else { 0 }
            )?;
        }
        Ok(())
    }
}

const CORRECTOR_TOL: f64 = 1e-9;
const CORRECTOR_MAX_ITER: usize = 12;
const MIN_STEP: f64 = 1e-5;

struct ArclengthProblem<'a> {
    base: &'a LatticeParams,
    parameter: BranchParameter,
    /// weight applied to state components in the arclength metric
    w2: f64,
}

impl<'a> ArclengthProblem<'a> {
    fn n2(&self) -> usize {
        2 * self.base.n
    }

    fn residual(&self, y: &DVector<f64>) -> Result<Vec<f64>> {
        let (state, p) = self.split(y)?;
        let params = self.parameter.apply(self.base, p);
        steady_residual(&params, &state)
    }

    fn split(&self, y: &DVector<f64>) -> Result<(LatticeState, f64)> {
        let n = self.base.n;
        let u = y.as_slice()[..n].to_vec();
        let v = y.as_slice()[n..2 * n].to_vec();
        Ok((LatticeState::new(u, v)?, y[2 * n]))
    }

    /// Bordered matrix `[[J, F_p], [w^2 t_x, t_p]]`.
    fn bordered(&self, y: &DVector<f64>, tangent: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n2 = self.n2();
        let (state, p) = self.split(y)?;
        let params = self.parameter.apply(self.base, p);
        let jac = crate::lattice::full_jacobian(&params, &state)?;
        let fp = self
            .parameter
            .residual_derivative(self.base, p, state.v());
        let mut m = DMatrix::zeros(n2 + 1, n2 + 1);
        m.view_mut((0, 0), (n2, n2)).copy_from(&jac);
        for i in 0..n2 {
            m[(i, n2)] = fp[i];
            m[(n2, i)] = self.w2 * tangent[i];
        }
        m[(n2, n2)] = tangent[n2];
        Ok(m)
    }

    fn dot(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let n2 = self.n2();
        let mut sum = 0.0;
        for i in 0..n2 {
            sum += self.w2 * a[i] * b[i];
        }
        sum + a[n2] * b[n2]
    }

    fn tangent(&self, y: &DVector<f64>, previous: &DVector<f64>) -> Result<DVector<f64>> {
        let n2 = self.n2();
        let m = self.bordered(y, previous)?;
        let mut rhs = DVector::zeros(n2 + 1);
        rhs[n2] = 1.0;
        let mut t = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular bordered system in tangent".into()))?;
        let norm = self.dot(&t, &t).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical("degenerate tangent".into()));
        }
        t /= norm;
        if self.dot(&t, previous) < 0.0 {
            t = -t;
        }
        Ok(t)
    }

    fn correct(
        &self,
        predicted: &DVector<f64>,
        anchor: &DVector<f64>,
        tangent: &DVector<f64>,
        ds: f64,
    ) -> Option<DVector<f64>> {
        let n = self.base.n;
        let n2 = self.n2();
        let mut y = predicted.clone();
        for _ in 0..CORRECTOR_MAX_ITER {
            if y.as_slice()[n..2 * n].iter().any(|&v| v <= 0.0)
                || y.iter().any(|x| !x.is_finite())
            {
                return None;
            }
            let res = self.residual(&y).ok()?;
            let rnorm = res.iter().fold(0.0f64, |a, r| a.max(r.abs()));
            let diff = &y - anchor;
            let arc = self.dot(&diff, tangent) - ds;
            if rnorm < CORRECTOR_TOL && arc.abs() < 1e-10 {
                return Some(y);
            }
            let m = self.bordered(&y, tangent).ok()?;
            let mut rhs = DVector::zeros(n2 + 1);
            for i in 0..n2 {
                rhs[i] = res[i];
            }
            rhs[n2] = arc;
            let step = m.lu().solve(&rhs)?;
            y -= step;
        }
        None
    }
}

/// Traces the branch through `start` (converged at `range.0`) until the
/// parameter leaves `[min(range), max(range)]` or the step controller gives
/// up. Adaptive steps halve on corrector failure, grow by 1.3x after three
/// straight successes, and live in `[1e-5, 0.05 |range|]`.
pub fn continue_branch(
    params: &LatticeParams,
    start: &LatticeState,
    parameter: BranchParameter,
    range: (f64, f64),
    step0: f64,
) -> Result<Branch> {
    let (from, to) = range;
    if !(step0 > 0.0) {
        return Err(Error::InvalidInput(format!("need step0 > 0, got {step0}")));
    }
    if from == to {
        return Err(Error::InvalidInput("empty continuation range".into()));
    }
    let start_params = parameter.apply(params, from);
    let res0 = crate::lattice::residual_inf_norm(&start_params, start)?;
    if res0 >= 1e-9 {
        return Err(Error::InvalidInput(format!(
            "start state is not converged at {} = {from} (residual {res0:.3e})",
            parameter.name()
        )));
    }
    let n = params.n;
    let n2 = 2 * n;
    let state_scale = start
        .u()
        .iter()
        .chain(start.v())
        .fold(1.0f64, |a, x| a.max(x.abs()));
    let problem = ArclengthProblem {
        base: params,
        parameter,
        w2: 1.0 / (n2 as f64 * state_scale * state_scale),
    };
    let (lo, hi) = (from.min(to), from.max(to));
    let width = hi - lo;
    let max_step = 0.05 * width;

    let mut y = DVector::zeros(n2 + 1);
    for k in 0..n {
        y[k] = start.u()[k];
        y[n + k] = start.v()[k];
    }
    y[n2] = from;

    // initial tangent, oriented toward `to`
    let mut seed = DVector::zeros(n2 + 1);
    seed[n2] = if to > from { 1.0 } else { -1.0 };
    let mut tangent = problem.tangent(&y, &seed)?;

    let point = |problem: &ArclengthProblem, y: &DVector<f64>| -> Result<BranchPoint> {
        let (state, p) = problem.split(y)?;
        let run_params = parameter.apply(params, p);
        let report = pencil_spectrum(&run_params, &state)?;
        Ok(BranchPoint {
            param: p,
            max_u: state.max_u(),
            stable: report.max_real() <= 0.0,
            state,
        })
    };

    let mut branch = Branch {
        parameter,
        points: vec![point(&problem, &y)?],
        folds: Vec::new(),
        truncated: None,
    };

    let mut ds = step0.min(max_step);
    let mut successes = 0usize;
    let mut prev_sign = sign_of(tangent[n2]);
    for _ in 0..5000 {
        let predicted = &y + &tangent * ds;
        match problem.correct(&predicted, &y, &tangent, ds) {
            Some(corrected) => {
                let new_tangent = match problem.tangent(&corrected, &tangent) {
                    Ok(t) => t,
                    Err(_) => {
                        ds *= 0.5;
                        successes = 0;
                        if ds < MIN_STEP {
                            branch.truncated =
                                Some(format!("degenerate tangent near {} = {}", parameter.name(), y[n2]));
                            break;
                        }
                        continue;
                    }
                };
                let new_sign = sign_of(new_tangent[n2]);
                if new_sign != 0 && prev_sign != 0 && new_sign != prev_sign {
                    let fold =
                        refine_fold(&problem, &y, &tangent, ds, prev_sign).unwrap_or(0.5 * (y[n2] + corrected[n2]));
                    branch.folds.push(fold);
                }
                if new_sign != 0 {
                    prev_sign = new_sign;
                }
                y = corrected;
                tangent = new_tangent;
                branch.points.push(point(&problem, &y)?);
                successes += 1;
                if successes >= 3 {
                    ds = (ds * 1.3).min(max_step);
                    successes = 0;
                }
                if y[n2] < lo - 1e-12 || y[n2] > hi + 1e-12 {
                    break;
                }
            }
            None => {
                ds *= 0.5;
                successes = 0;
                if ds < MIN_STEP {
                    branch.truncated = Some(format!(
                        "corrector failed at minimum step near {} = {}",
                        parameter.name(),
                        y[n2]
                    ));
                    break;
                }
            }
        }
    }
    Ok(branch)
}

fn sign_of(x: f64) -> i32 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Sharpens a fold bracketed by the step from `anchor` (tangent sign
/// `want`): bisection on the arclength increment until the parameter value
/// of the turning point settles to 1e-4 relative.
fn refine_fold(
    problem: &ArclengthProblem,
    anchor: &DVector<f64>,
    tangent: &DVector<f64>,
    ds: f64,
    want: i32,
) -> Option<f64> {
    let n2 = problem.n2();
    let mut lo = 0.0;
    let mut hi = ds;
    let mut best = None;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let predicted = anchor + tangent * mid;
        let corrected = problem.correct(&predicted, anchor, tangent, mid)?;
        let t = problem.tangent(&corrected, tangent).ok()?;
        let sign = sign_of(t[n2]);
        let param = corrected[n2];
        if let Some(prev) = best {
            if (param - prev as f64).abs() < 1e-4 * param.abs().max(1e-4) {
                return Some(param);
            }
        }
        best = Some(param);
        if sign == want || sign == 0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    best
}

/// One point of the fold-location curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldScanPoint {
    pub d_u: f64,
    pub kappa_f: f64,
    /// Whether continuation beyond the fold reached a dimple profile
    /// (activator no longer maximal at the original peak node) before
    /// running out of branch.
    pub connects_to_dimple: bool,
}

#[derive(Debug, Clone, Default)]
pub struct FoldScan {
    pub points: Vec<FoldScanPoint>,
    pub warnings: Vec<String>,
    pub failures: Vec<(f64, String)>,
}

/// For each activator diffusion in `du_grid`, finds a one-spike state at a
/// generous `kappa`, continues the branch downward in `kappa`, and records
/// the first fold. The resulting curve should rise with `D_u` and approach
/// `kappa_f = 4` as `D_u` shrinks; monotonicity violations produce warnings
/// rather than errors.
pub fn fold_scan_kappa(du_grid: &[f64], n: usize) -> Result<FoldScan> {
    if du_grid.iter().any(|&du| !(du > 0.0)) {
        return Err(Error::InvalidInput("grid values must be positive".into()));
    }
    let mut scan = FoldScan::default();
    for &du in du_grid {
        match fold_scan_point(du, n) {
            Ok(point) => scan.points.push(point),
            Err(err) => scan.failures.push((du, err.to_string())),
        }
    }
    for pair in scan.points.windows(2) {
        if pair[1].d_u > pair[0].d_u && pair[1].kappa_f < pair[0].kappa_f - 1e-6 {
            scan.warnings.push(format!(
                "kappa_f not monotone between D_u = {} and {}: {} -> {}",
                pair[0].d_u, pair[1].d_u, pair[0].kappa_f, pair[1].kappa_f
            ));
        }
    }
    if scan.points.is_empty() {
        return Err(Error::Numerical(
            "every grid point of the fold scan failed".into(),
        ));
    }
    Ok(scan)
}

fn one_spike_seed(n: usize, du: f64, kappa: f64) -> Result<LatticeState> {
    // small D_u: the tail-recursion profile is an excellent seed
    if kappa * du < 0.05 {
        if let Ok((_, state)) = crate::mesa::mesa_profile(n, 1, kappa, du) {
            if let Ok(refined) = crate::mesa::refined_mesa(&state, n, kappa, du) {
                return Ok(refined.state);
            }
        }
    }
    // otherwise start from a localized bump with a slaved inhibitor
    let params = LatticeParams::new(n, du, kappa * du, 0.0)?;
    let u: Vec<f64> = (0..n)
        .map(|i| {
            let dist = i.min(n - i) as f64;
            3.0 * (-(dist / 2.0) * (dist / 2.0)).exp()
        })
        .collect();
    let lap = {
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            l[(i, i)] = -2.0;
            l[(i, (i + 1) % n)] = 1.0;
            l[(i, (i + n - 1) % n)] = 1.0;
        }
        l
    };
    let m = DMatrix::identity(n, n) - params.d_v * lap;
    let rhs = DVector::from_iterator(n, u.iter().map(|&x| x * x));
    let v = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular inhibitor operator".into()))?;
    let seed = LatticeState::new(u, v.as_slice().to_vec())?;
    Ok(refine_on_lattice(&seed, &params)?.state)
}

fn fold_scan_point(du: f64, n: usize) -> Result<FoldScanPoint> {
    let kappa_start = 8.0f64.max(8.0 + 8.0 * du);
    let state = one_spike_seed(n, du, kappa_start)?;
    let base = LatticeParams::new(n, du, kappa_start * du, 0.0)?;
    let branch = continue_branch(
        &base,
        &state,
        BranchParameter::Kappa,
        (kappa_start, 2.0),
        0.1,
    )?;
    let fold = *branch.folds.first().ok_or_else(|| {
        Error::Numerical(format!(
            "no fold found continuing down from kappa = {kappa_start} at D_u = {du}"
        ))
    })?;
    // past the fold: does the branch reach a dimple (peak node no longer
    // the maximum)?
    let peak = 0usize;
    let connects_to_dimple = branch.points.iter().any(|p| {
        let u = p.state.u();
        let umax = p.state.max_u();
        umax > 1e-3 && u[peak] < 0.95 * umax
    });
    Ok(FoldScanPoint {
        d_u: du,
        kappa_f: fold,
        connects_to_dimple,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spikes::{assemble_profile, three_spike_even_closed_form, two_spike_closed_form};
    use crate::stability::symmetric_threshold;

    fn refined_config_state(
        config: &crate::spikes::SpikeConfiguration,
        n: usize,
    ) -> (LatticeParams, LatticeState) {
        let params = LatticeParams::from_diffusion_length(n, config.d()).unwrap();
        let refined =
            refine_on_lattice(&assemble_profile(config, n).unwrap(), &params).unwrap();
        (params, refined.state)
    }

    #[test]
    fn two_spike_asymmetric_branch_folds_at_the_symmetry_breaking_point() {
        let n = 60;
        let d0 = 0.25;
        let config = two_spike_closed_form(0.5, d0).unwrap()[1].clone();
        let (params, state) = refined_config_state(&config, n);
        let branch = continue_branch(
            &params,
            &state,
            BranchParameter::DiffusionLength,
            (d0, 0.32),
            0.01,
        )
        .unwrap();
        assert!(
            !branch.folds.is_empty(),
            "no fold detected (truncated: {:?})",
            branch.truncated
        );
        let expect = symmetric_threshold(2).unwrap();
        assert!(
            (branch.folds[0] - expect).abs() < 0.01,
            "fold at {} vs {expect}",
            branch.folds[0]
        );
    }

    #[test]
    fn three_spike_asymmetric_branch_folds_near_its_existence_boundary() {
        let n = 60;
        let d0 = 0.20;
        let config = three_spike_even_closed_form(d0).unwrap()[1].clone();
        let (params, state) = refined_config_state(&config, n);
        let branch = continue_branch(
            &params,
            &state,
            BranchParameter::DiffusionLength,
            (d0, 0.26),
            0.005,
        )
        .unwrap();
        assert!(!branch.folds.is_empty());
        assert!(
            (branch.folds[0] - 0.2171).abs() < 0.01,
            "fold at {}",
            branch.folds[0]
        );
    }

    #[test]
    fn single_spike_branch_has_no_fold() {
        let n = 60;
        let d0 = 0.1;
        let config = crate::stability::symmetric_configuration(1, d0).unwrap();
        let (params, state) = refined_config_state(&config, n);
        let branch = continue_branch(
            &params,
            &state,
            BranchParameter::DiffusionLength,
            (d0, 1.0),
            0.02,
        )
        .unwrap();
        assert!(branch.folds.is_empty(), "folds: {:?}", branch.folds);
        assert!(branch.points.last().unwrap().param > 0.9);
        // every accepted point re-verifies as a steady state
        for p in &branch.points {
            let run = BranchParameter::DiffusionLength.apply(&params, p.param);
            let res = crate::lattice::residual_inf_norm(&run, &p.state).unwrap();
            assert!(res < 1e-9, "point at {} has residual {res:.2e}", p.param);
        }
    }

    #[test]
    fn restart_reproduces_the_tail_of_the_branch() {
        let n = 60;
        let d0 = 0.1;
        let config = crate::stability::symmetric_configuration(2, d0).unwrap();
        let (params, state) = refined_config_state(&config, n);
        let full = continue_branch(
            &params,
            &state,
            BranchParameter::DiffusionLength,
            (d0, 0.2),
            0.01,
        )
        .unwrap();
        let mid = &full.points[full.points.len() / 2];
        let rest = continue_branch(
            &params,
            &mid.state,
            BranchParameter::DiffusionLength,
            (mid.param, 0.2),
            0.01,
        )
        .unwrap();
        // the restarted branch retraces the same (param, max_u) curve
        for p in rest.points.iter().step_by(3) {
            let nearest = full
                .points
                .iter()
                .map(|q| (q.param - p.param).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-3, "restart left the original branch at {}", p.param);
        }
    }

    #[test]
    fn stability_flag_flips_at_the_symmetric_threshold() {
        let n = 60;
        let d0 = 0.2;
        let config = crate::stability::symmetric_configuration(2, d0).unwrap();
        let (params, state) = refined_config_state(&config, n);
        let branch = continue_branch(
            &params,
            &state,
            BranchParameter::DiffusionLength,
            (d0, 0.35),
            0.01,
        )
        .unwrap();
        let dc = symmetric_threshold(2).unwrap();
        for p in &branch.points {
            if p.param < dc - 0.005 {
                assert!(p.stable, "stable flag wrong below threshold at {}", p.param);
            }
            if p.param > dc + 0.005 {
                assert!(!p.stable, "stable flag wrong above threshold at {}", p.param);
            }
        }
    }

    #[test]
    fn fold_scan_small_du_lands_near_four_and_rises() {
        let scan = fold_scan_kappa(&[1e-4, 1e-2, 0.5], 40).unwrap();
        assert_eq!(scan.points.len(), 3, "failures: {:?}", scan.failures);
        let first = &scan.points[0];
        assert!(
            (first.kappa_f - 4.0).abs() < 0.5,
            "kappa_f({}) = {}",
            first.d_u,
            first.kappa_f
        );
        assert!(
            scan.points[2].kappa_f > scan.points[0].kappa_f,
            "curve does not rise: {:?}",
            scan.points
        );
        assert!(scan.warnings.is_empty(), "warnings: {:?}", scan.warnings);
    }
}
