//! Independent checks of synthesized controllers: model-based LMI oracles,
//! frozen-parameter grid metrics and trajectory-level validators.

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{dim, Error, Result};
use crate::linalg::{eye, hcat, kron, min_eig_unchecked, spectral_radius, vcat, Mat, ParamBox, Vector};
use crate::lmi::SolverSettings;
use crate::par::{self, Execution};
use crate::synthesis::{model_run, Mode, SynthesisRequest, SynthesisResult};
use crate::system::{closed_loop_a, LpvSs, PerfWeights, StateFeedbackController};

/// Frequency samples used to seed the H∞ bisection.
pub const HINF_SWEEP: usize = 64;
/// Relative bisection tolerance for the H∞ norm.
pub const HINF_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GridSpec {
    pub points_per_axis: usize,
    pub pset: ParamBox,
    #[serde(skip)]
    pub execution: Execution,
}

impl GridSpec {
    pub fn new(points_per_axis: usize, pset: ParamBox) -> Result<Self> {
        if points_per_axis < 2 {
            return Err(Error::Invalid("a grid needs at least 2 points per axis".into()));
        }
        pset.validate()?;
        Ok(GridSpec { points_per_axis, pset, execution: Execution::default_mode() })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.pset.grid(self.points_per_axis)
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.pset.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Grid maximum and where it was attained.
#[derive(Clone, Debug, Serialize)]
pub struct GridMax {
    pub value: f64,
    pub argmax: Vec<f64>,
}

/// Max with ties going to the lexicographically smallest point, so the
/// result does not depend on evaluation order.
fn reduce_max(vals: Vec<(f64, Vec<f64>)>) -> GridMax {
    let mut best = GridMax { value: f64::NEG_INFINITY, argmax: Vec::new() };
    for (v, p) in vals {
        let better = v > best.value
            || (v == best.value && p.partial_cmp(&best.argmax) == Some(std::cmp::Ordering::Less));
        if better || best.argmax.is_empty() && v.is_nan() {
            best = GridMax { value: v, argmax: p };
        }
    }
    best
}

/// Quadratic-stability analysis of `ctrl` on the exact model.
pub fn model_analyze_stability(
    sys: &LpvSs,
    ctrl: &StateFeedbackController,
    pset: &ParamBox,
    settings: &SolverSettings,
) -> Result<SynthesisResult> {
    let mut req = SynthesisRequest::new(Mode::Analyze);
    req.settings = settings.clone();
    model_run(sys, pset, &req, Some(ctrl))
}

/// Model-based synthesis with the same LMI structure as the data-driven
/// side, with `A_CL(p)P = A(p)P + B(p)Y(p)`.
pub fn model_synth(sys: &LpvSs, pset: &ParamBox, req: &SynthesisRequest) -> Result<SynthesisResult> {
    req.validate()?;
    match req.mode {
        Mode::Analyze | Mode::Noisy => {
            Err(Error::Invalid(format!("model synthesis does not support mode {}", req.mode.as_str())))
        }
        _ => model_run(sys, pset, req, None),
    }
}

/// Smallest eigenvalue of `[[P, (A_CL P)ᵀ], [A_CL P, P]]` over the grid;
/// nonnegative means the certificate `P` holds on the true plant.
pub fn certificate_check(
    sys: &LpvSs,
    ctrl: &StateFeedbackController,
    p_mat: &Mat,
    grid: &GridSpec,
) -> Result<GridMax> {
    let pts = grid.points();
    let vals = par::map_with(grid.execution, &pts, |p| -> Result<(f64, Vec<f64>)> {
        let acl = closed_loop_a(sys, ctrl, p)?;
        let ap = acl * p_mat;
        let m = vcat(&[hcat(&[p_mat.clone(), ap.transpose()]), hcat(&[ap, p_mat.clone()])]);
        // report the negated eigenvalue so the grid reduction is a max
        Ok((-min_eig_unchecked(&crate::linalg::symmetrize(&m)), p.clone()))
    });
    let mut g = reduce_max(vals.into_iter().collect::<Result<_>>()?);
    g.value = -g.value;
    Ok(g)
}

pub fn grid_spectral_radius(sys: &LpvSs, ctrl: &StateFeedbackController, grid: &GridSpec) -> Result<GridMax> {
    let pts = grid.points();
    let vals = par::map_with(grid.execution, &pts, |p| Ok((spectral_radius(&closed_loop_a(sys, ctrl, p)?), p.clone())));
    Ok(reduce_max(vals.into_iter().collect::<Result<_>>()?))
}

/// Solves `A X Aᵀ − X + W = 0` by vectorization.
pub fn dlyap(a: &Mat, w: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || w.shape() != (n, n) {
        return Err(dim("dlyap expects square matrices of equal size"));
    }
    let lhs = eye(n * n) - kron(a, a);
    let rhs = Vector::from_column_slice(w.as_slice());
    let v = lhs.lu().solve(&rhs).ok_or_else(|| Error::SolverFailure("singular Lyapunov operator".into()))?;
    let x = Mat::from_column_slice(n, n, v.as_slice());
    Ok(crate::linalg::symmetrize(&x))
}

/// H2 norm of `x⁺ = A x + w, z = C x`.
pub fn h2_norm(a: &Mat, c: &Mat) -> Result<f64> {
    if spectral_radius(a) >= 1.0 {
        return Err(Error::UnstableAtGridPoint { p: Vec::new() });
    }
    let x = dlyap(a, &eye(a.nrows()))?;
    Ok((c * x * c.transpose()).trace().max(0.0).sqrt())
}

fn frozen(sys: &LpvSs, ctrl: &StateFeedbackController, w: &PerfWeights, p: &[f64]) -> Result<(Mat, Mat)> {
    let a = closed_loop_a(sys, ctrl, p)?;
    if spectral_radius(&a) >= 1.0 {
        return Err(Error::UnstableAtGridPoint { p: p.to_vec() });
    }
    Ok((a, w.output_matrix(ctrl, p)?))
}

pub fn grid_h2_norm(
    sys: &LpvSs,
    ctrl: &StateFeedbackController,
    weights: &PerfWeights,
    grid: &GridSpec,
) -> Result<GridMax> {
    let pts = grid.points();
    let vals = par::map_with(grid.execution, &pts, |p| {
        let (a, c) = frozen(sys, ctrl, weights, p)?;
        Ok((h2_norm(&a, &c)?, p.clone()))
    });
    Ok(reduce_max(vals.into_iter().collect::<Result<_>>()?))
}

/// Largest singular value of `C (e^{jω} I − A)^{-1} B + D`.
pub fn freq_gain(a: &Mat, b: &Mat, c: &Mat, d: &Mat, omega: f64) -> Result<f64> {
    let n = a.nrows();
    let z = Complex::new(omega.cos(), omega.sin());
    let cx = |m: &Mat| m.map(|v| Complex::new(v, 0.0));
    let lhs = nalgebra::DMatrix::<Complex<f64>>::identity(n, n) * z - cx(a);
    let sol = lhs.lu().solve(&cx(b)).ok_or_else(|| Error::SolverFailure("pole on the unit circle".into()))?;
    let g = cx(c) * sol + cx(d);
    Ok(g.singular_values().iter().cloned().fold(0.0, f64::max))
}

/// Peak gain over `n` equally spaced frequencies in `[0, π]`.
pub fn freq_sweep(a: &Mat, b: &Mat, c: &Mat, d: &Mat, n: usize) -> Result<f64> {
    let n = n.max(2);
    let mut best = 0.0f64;
    for k in 0..n {
        best = best.max(freq_gain(a, b, c, d, std::f64::consts::PI * k as f64 / (n - 1) as f64)?);
    }
    Ok(best)
}

/// `true` when the H∞ norm of the continuous-time system is below `gamma`,
/// i.e. the Hamiltonian has no eigenvalues on the imaginary axis.
fn below_gamma(a: &Mat, b: &Mat, c: &Mat, d: &Mat, gamma: f64) -> bool {
    let dtd = d.transpose() * d;
    let r = Mat::identity(dtd.nrows(), dtd.ncols()) * (gamma * gamma) - &dtd;
    let Some(ri) = r.clone().try_inverse() else { return false };
    if min_eig_unchecked(&r) <= 0.0 {
        return false;
    }
    let ah = a + b * &ri * d.transpose() * c;
    let s = d * &ri * d.transpose();
    let top = hcat(&[ah.clone(), b * &ri * b.transpose()]);
    let bot = hcat(&[-(c.transpose() * (Mat::identity(s.nrows(), s.ncols()) + s) * c), -ah.transpose()]);
    let h = vcat(&[top, bot]);
    let scale = 1.0 + h.amax();
    !h.complex_eigenvalues().iter().any(|l| l.re.abs() < 1e-8 * scale)
}

/// Discrete-time H∞ norm of `(A, B, C, D)`: a frequency sweep gives the
/// lower bracket, then bisection on the Hamiltonian test of the Cayley
/// transformed system.
pub fn hinf_norm(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Result<f64> {
    let n = a.nrows();
    if spectral_radius(a) >= 1.0 {
        return Err(Error::UnstableAtGridPoint { p: Vec::new() });
    }
    let lo0 = freq_sweep(a, b, c, d, HINF_SWEEP)?;
    let m = (a + eye(n))
        .try_inverse()
        .ok_or_else(|| Error::SolverFailure("A has an eigenvalue at -1".into()))?;
    let s2 = std::f64::consts::SQRT_2;
    let ac = &m * (a - eye(n));
    let bc = &m * b * s2;
    let cc = c * &m * s2;
    let dc = d - c * &m * b;
    let mut lo = lo0;
    let mut hi = lo0.max(1e-12) * 2.0;
    let mut guard = 0;
    while !below_gamma(&ac, &bc, &cc, &dc, hi) {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 60 {
            return Err(Error::SolverFailure("H-infinity bracket did not close".into()));
        }
    }
    if lo == 0.0 {
        return Ok(0.0);
    }
    while hi - lo > HINF_TOL * lo {
        let mid = 0.5 * (lo + hi);
        if below_gamma(&ac, &bc, &cc, &dc, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

pub fn grid_hinf_norm(
    sys: &LpvSs,
    ctrl: &StateFeedbackController,
    weights: &PerfWeights,
    grid: &GridSpec,
) -> Result<GridMax> {
    let pts = grid.points();
    let n_x = sys.n_x();
    let vals = par::map_with(grid.execution, &pts, |p| {
        let (a, c) = frozen(sys, ctrl, weights, p)?;
        let d = Mat::zeros(c.nrows(), n_x);
        Ok((hinf_norm(&a, &eye(n_x), &c, &d)?, p.clone()))
    });
    Ok(reduce_max(vals.into_iter().collect::<Result<_>>()?))
}

/// Monte-Carlo lower bound on the ℓ2-gain from `w` to `z` of the closed
/// loop, `x_0 = 0`, Gaussian disturbances and uniform scheduling in the
/// plant's set.
pub fn simulated_l2_gain(
    sys: &LpvSs,
    ctrl: &StateFeedbackController,
    weights: &PerfWeights,
    trials: usize,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = sys.n_x();
    let n_p = sys.n_p();
    let mut best = 0.0f64;
    for _ in 0..trials {
        let p_seq: Vec<Vec<f64>> = (0..horizon)
            .map(|_| {
                (0..n_p)
                    .map(|i| rand::Rng::random_range(&mut rng, sys.p_set.lower[i]..=sys.p_set.upper[i]))
                    .collect()
            })
            .collect();
        let w_seq: Vec<Vector> =
            (0..horizon).map(|_| Vector::from_fn(n_x, |_, _| StandardNormal.sample(&mut rng))).collect();
        best = best.max(l2_ratio(sys, ctrl, weights, &p_seq, &w_seq)?);
    }
    Ok(best)
}

/// `‖z‖₂ / ‖w‖₂` for one disturbance realization from `x_0 = 0`.
pub fn l2_ratio(
    sys: &LpvSs,
    ctrl: &StateFeedbackController,
    weights: &PerfWeights,
    p_seq: &[Vec<f64>],
    w_seq: &[Vector],
) -> Result<f64> {
    if p_seq.len() != w_seq.len() {
        return Err(dim("scheduling and disturbance lengths differ"));
    }
    let mut x = Vector::zeros(sys.n_x());
    let (mut zz, mut ww) = (0.0, 0.0);
    for (p, w) in p_seq.iter().zip(w_seq) {
        zz += (weights.output_matrix(ctrl, p)? * &x).norm_squared();
        ww += w.norm_squared();
        x = closed_loop_a(sys, ctrl, p)? * &x + w;
    }
    if ww == 0.0 {
        return Ok(0.0);
    }
    Ok((zz / ww).sqrt())
}

/// One initial state and scheduling sequence.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub x0: Vector,
    pub p_seq: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovCheck {
    pub pass: bool,
    /// Largest `(V(x⁺) − V(x)) / V(x)` seen; negative on pass.
    pub worst_margin: f64,
    pub steps_checked: usize,
}

/// Norm below which a trajectory counts as converged.
pub const NORM_FLOOR: f64 = 1e-9;

/// Checks that `V(x) = xᵀ P⁻¹ x` strictly decreases along each closed-loop
/// trajectory until the state reaches the norm floor.
pub fn lyapunov_decrease_check(
    sys: &LpvSs,
    ctrl: &StateFeedbackController,
    p_mat: &Mat,
    trajectories: &[Trajectory],
) -> Result<LyapunovCheck> {
    let n = sys.n_x();
    if p_mat.shape() != (n, n) {
        return Err(dim("P has the wrong size"));
    }
    let pinv = p_mat.clone().try_inverse().ok_or(Error::IllConditionedP { cond: f64::INFINITY })?;
    let v = |x: &Vector| (x.transpose() * &pinv * x)[(0, 0)];
    let mut worst = f64::NEG_INFINITY;
    let mut steps = 0;
    for t in trajectories {
        if t.x0.len() != n {
            return Err(dim("initial state length"));
        }
        let mut x = t.x0.clone();
        for p in &t.p_seq {
            if x.norm() < NORM_FLOOR {
                break;
            }
            let next = closed_loop_a(sys, ctrl, p)? * &x;
            let (v0, v1) = (v(&x), v(&next));
            worst = worst.max((v1 - v0) / v0);
            steps += 1;
            x = next;
        }
    }
    Ok(LyapunovCheck { pass: steps == 0 || worst < 0.0, worst_margin: worst, steps_checked: steps })
}

/// Random trajectories with initial states on the unit sphere and uniform
/// scheduling in the plant's set.
pub fn random_trajectories(sys: &LpvSs, count: usize, horizon: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut x0 = Vector::from_fn(sys.n_x(), |_, _| StandardNormal.sample(&mut rng));
            let nrm = x0.norm();
            if nrm > 0.0 {
                x0 /= nrm;
            }
            let p_seq = (0..horizon)
                .map(|_| {
                    (0..sys.n_p())
                        .map(|i| rand::Rng::random_range(&mut rng, sys.p_set.lower[i]..=sys.p_set.upper[i]))
                        .collect()
                })
                .collect();
            Trajectory { x0, p_seq }
        })
        .collect()
}

/// Summary merged into reports under `"verify"`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct VerifyBlock {
    pub grid_rho: Option<GridMax>,
    pub grid_h2: Option<GridMax>,
    pub grid_hinf: Option<GridMax>,
    pub sim_l2: Option<f64>,
    pub lyap_pass: Option<bool>,
    pub model_certifies: Option<bool>,
}

/// Runs every applicable check of `ctrl` on the true plant.
pub fn verify_controller(
    sys: &LpvSs,
    ctrl: &StateFeedbackController,
    p_mat: Option<&Mat>,
    weights: Option<&PerfWeights>,
    grid: &GridSpec,
    seed: u64,
) -> Result<VerifyBlock> {
    let mut out = VerifyBlock { grid_rho: Some(grid_spectral_radius(sys, ctrl, grid)?), ..Default::default() };
    let stable = out.grid_rho.as_ref().is_some_and(|g| g.value < 1.0);
    if let (Some(w), true) = (weights, stable) {
        out.grid_h2 = Some(grid_h2_norm(sys, ctrl, w, grid)?);
        out.grid_hinf = Some(grid_hinf_norm(sys, ctrl, w, grid)?);
        out.sim_l2 = Some(simulated_l2_gain(sys, ctrl, w, 50, 200, seed)?);
    }
    if let Some(p) = p_mat {
        let trajs = random_trajectories(sys, 20, 100, seed);
        out.lyap_pass = Some(lyapunov_decrease_check(sys, ctrl, p, &trajs)?.pass);
    }
    out.model_certifies = Some(match model_analyze_stability(sys, ctrl, &sys.p_set, &SolverSettings::default()) {
        Ok(r) => r.status.is_success(),
        Err(Error::Infeasible) | Err(Error::SolverFailure(_)) | Err(Error::IllConditionedP { .. }) => false,
        Err(e) => return Err(e),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> Mat {
        Mat::from_element(1, 1, a)
    }

    #[test]
    fn h2_of_static_and_scalar() {
        assert!((h2_norm(&Mat::zeros(3, 3), &eye(3)).unwrap() - 3f64.sqrt()).abs() < 1e-12);
        let a = 0.6;
        let want = 1.0 / (1.0 - a * a as f64).sqrt();
        assert!((h2_norm(&scalar(a), &scalar(1.0)).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn hinf_of_scalar_lag() {
        // peak of 1/|z − a| is at z = 1
        let a = 0.5;
        let g = hinf_norm(&scalar(a), &scalar(1.0), &scalar(1.0), &scalar(0.0)).unwrap();
        assert!((g - 1.0 / (1.0 - a)).abs() < 2e-4 * g, "{g}");
    }

    #[test]
    fn hinf_matches_dense_sweep() {
        let a = Mat::from_row_slice(2, 2, &[0.3, 0.8, -0.7, 0.2]);
        let b = Mat::from_row_slice(2, 1, &[1.0, 0.5]);
        let c = Mat::from_row_slice(1, 2, &[1.0, -1.0]);
        let d = scalar(0.1);
        let g = hinf_norm(&a, &b, &c, &d).unwrap();
        let dense = freq_sweep(&a, &b, &c, &d, 20001).unwrap();
        assert!(g >= dense * (1.0 - 1e-6) && g <= dense * (1.0 + 2e-4), "{g} vs {dense}");
    }

    #[test]
    fn tie_break_prefers_smallest_point() {
        let g = reduce_max(vec![(1.0, vec![0.5]), (1.0, vec![-0.5]), (0.2, vec![-1.0])]);
        assert_eq!(g.argmax, vec![-0.5]);
    }

    #[test]
    fn dlyap_residual() {
        let a = Mat::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        let x = dlyap(&a, &eye(2)).unwrap();
        assert!((&a * &x * a.transpose() - &x + eye(2)).amax() < 1e-12);
    }
}
