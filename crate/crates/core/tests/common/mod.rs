//! Seed-driven property checks shared by the proptest suite and the
//! acceptance summary.
#![allow(dead_code)]

use ddlpv::data::{build_matrices, excite, DataMatrices};
use ddlpv::ddrep::{closed_loop_from_v, fq_eval_dense, recover_controller, solve_v, FqMatrix};
use ddlpv::linalg::{kron, lift2, Mat, ParamBox, RANK_TOL};
use ddlpv::lmi::{grid_min_eig, solve, sproc_expand, AffExpr, LftSpec, LmiProblem, SolverSettings, SprocOptions};
use ddlpv::synthesis::{synthesize, GammaMode, Mode, SynthesisRequest, SynthesisResult};
use ddlpv::system::{closed_loop_a, LpvSs, PerfWeights, StateFeedbackController};
use ddlpv::verify::{lyapunov_decrease_check, random_trajectories, simulated_l2_gain};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug)]
pub enum Verdict {
    Pass,
    /// The drawn case does not exercise the property (e.g. infeasible).
    Skip,
    Fail(String),
}

fn verdict(ok: bool, msg: impl FnOnce() -> String) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail(msg())
    }
}

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Small plant dimensions `(n_x, n_u, n_p)`.
pub fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(1..=2))
}

/// Random affine LPV plant on `[-1, 1]^n_p` and a PE dictionary from it.
pub fn random_case(n_x: usize, n_u: usize, n_p: usize, seed: u64) -> (LpvSs, DataMatrices) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = vec![rand_mat(&mut rng, n_x, n_x, 1.0)];
    let mut b = vec![rand_mat(&mut rng, n_x, n_u, 1.0)];
    for _ in 0..n_p {
        a.push(rand_mat(&mut rng, n_x, n_x, 0.2));
        b.push(rand_mat(&mut rng, n_x, n_u, 0.1));
    }
    let sys = LpvSs::new(a, b, ParamBox::symmetric(n_p, 1.0)).unwrap();
    let cols = (1 + n_p) * (n_x + n_u) + 2;
    let d = excite(&sys, cols, seed ^ 0x5eed, (-1.0, 1.0), (-1.0, 1.0), None).unwrap();
    (sys, build_matrices(&d).unwrap())
}

fn seeded_case(seed: u64) -> (LpvSs, DataMatrices, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_x, n_u, n_p) = dims(&mut rng);
    let (sys, dm) = random_case(n_x, n_u, n_p, seed);
    (sys, dm, n_x, n_u)
}

pub fn ok(r: ddlpv::Result<SynthesisResult>) -> Option<SynthesisResult> {
    r.ok().filter(|r| r.status.is_success())
}

pub fn weights(n_x: usize, n_u: usize) -> PerfWeights {
    PerfWeights::diag(&vec![1.0; n_x], &vec![0.5; n_u]).unwrap()
}

/// `(A⊗B)(C⊗D) = AC⊗BD` for random conformable factors.
pub fn kronecker_mixed_product(seed: u64) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = |rng: &mut ChaCha8Rng, r: usize, c: usize| rand_mat(rng, r, c, 3.0);
    let (ra, ca, rb, cb) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
    let a = m(&mut rng, ra, ca);
    let b = m(&mut rng, rb, cb);
    let c = m(&mut rng, ca, 2);
    let d = m(&mut rng, cb, 3);
    let lhs = kron(&a, &b) * kron(&c, &d);
    let rhs = kron(&(&a * &c), &(&b * &d));
    let err = (&lhs - &rhs).amax();
    verdict(err <= 1e-12 * (1.0 + lhs.amax()), || format!("mismatch {err:e}"))
}

/// Direct evaluation, dense evaluation and the lifted form of `F_Q` agree.
pub fn fq_forms_agree(seed: u64) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, n_x, n_p) = (rng.random_range(1..4), rng.random_range(1..3), rng.random_range(1..3));
    let f = rand_mat(&mut rng, n * (1 + n_p), n_x * (1 + n_p), 2.0);
    let p: Vec<f64> = (0..n_p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fq = FqMatrix::from_assembled(&f, n, n_x, n_p).unwrap();
    let direct = fq.eval(&p).unwrap();
    let dense = fq_eval_dense(&fq, &p);
    let calf = fq.to_calf() * lift2(&p, n_x);
    let err = (&direct - &dense).amax().max((&direct - &calf).amax());
    verdict(err < 1e-12, || format!("mismatch {err:e}"))
}

/// A gain mapped to data coordinates and back is unchanged, and the data
/// closed loop equals the model closed loop.
pub fn controller_recovery_roundtrip(seed: u64) -> Verdict {
    let (sys, dm, n_x, n_u) = seeded_case(seed);
    let n_p = sys.n_p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
    let ctrl = StateFeedbackController::new((0..=n_p).map(|_| rand_mat(&mut rng, n_u, n_x, 2.0)).collect()).unwrap();
    let v = solve_v(&dm, &ctrl, RANK_TOL).unwrap();
    let back = recover_controller(&dm.u_mat, &v, n_x, n_p).unwrap();
    for (a, b) in back.k.iter().zip(&ctrl.k) {
        if (a - b).amax() >= 1e-8 * (1.0 + b.amax()) {
            return Verdict::Fail(format!("recovered gain off by {:e}", (a - b).amax()));
        }
    }
    for p in [vec![0.3; n_p], vec![-1.0; n_p]] {
        let rep = closed_loop_from_v(&dm.xplus, &v, &p, n_x);
        let truth = closed_loop_a(&sys, &ctrl, &p).unwrap();
        if (&rep - &truth).amax() >= 1e-8 * (1.0 + truth.amax()) {
            return Verdict::Fail(format!("closed loop off by {:e} at {p:?}", (&rep - &truth).amax()));
        }
    }
    Verdict::Pass
}

/// A feasible multiplier certificate holds on a dense grid.
pub fn sproc_sound_on_dense_grid(seed: u64) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_p, m) = (rng.random_range(1..=2), rng.random_range(1..=2));
    let shift = rng.random_range(0.0..3.0);
    let n = (1 + n_p) * m;
    let r = rand_mat(&mut rng, n, n, 1.0);
    let w = (&r + r.transpose()) * 0.5 + Mat::identity(n, n) * shift;
    let lft = LftSpec::lifted_param_major(n_p, &[m], 0);
    let pset = ParamBox::symmetric(n_p, 1.0);
    let mut prob = LmiProblem::new();
    sproc_expand(&mut prob, "s", &AffExpr::constant(w.clone()), &lft, &pset, SprocOptions { margin: 1e-7, delta: 1e-7 })
        .unwrap();
    let sol = solve(&prob, &SolverSettings::default()).unwrap();
    if !sol.status.is_success() {
        return Verdict::Skip;
    }
    let per_axis = if n_p == 1 { 401 } else { 61 };
    let g = grid_min_eig(&w, &lft, &pset, per_axis).unwrap();
    verdict(g >= -1e-6, || format!("grid min eig {g:e}"))
}

/// A stabilizing certificate decreases along 20 random trajectories.
pub fn lyapunov_decreases_along_trajectories(seed: u64) -> Verdict {
    let (sys, dm, ..) = seeded_case(seed);
    let Some(r) = ok(synthesize(&dm, &sys.p_set, &SynthesisRequest::new(Mode::Stabilize))) else {
        return Verdict::Skip;
    };
    let trajs = random_trajectories(&sys, 20, 60, seed);
    let chk = lyapunov_decrease_check(&sys, &r.controller, &r.certificate.p_mat, &trajs).unwrap();
    verdict(chk.pass, || format!("worst relative change {}", chk.worst_margin))
}

/// Any level above the minimized one stays feasible.
pub fn gamma_feasibility_is_monotone(seed: u64) -> Verdict {
    let (sys, dm, n_x, n_u) = seeded_case(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a);
    let mode = if rng.random_bool(0.5) { Mode::H2 } else { Mode::L2 };
    let t = rng.random_range(0.01..1.0);
    let mut req = SynthesisRequest::new(mode).with_weights(weights(n_x, n_u));
    let Some(best) = ok(synthesize(&dm, &sys.p_set, &req)) else {
        return Verdict::Skip;
    };
    let g = best.certificate.gamma.unwrap();
    req.gamma_mode = GammaMode::Fixed(g * (1.0 + t));
    verdict(ok(synthesize(&dm, &sys.p_set, &req)).is_some(), || {
        format!("{mode:?} level {} infeasible although {g} was reached", g * (1.0 + t))
    })
}

/// Simulated energy gain over 50 disturbances stays below the certified level.
pub fn simulated_l2_below_certified_gamma(seed: u64) -> Verdict {
    let (sys, dm, n_x, n_u) = seeded_case(seed);
    let w = weights(n_x, n_u);
    let Some(r) = ok(synthesize(&dm, &sys.p_set, &SynthesisRequest::new(Mode::L2).with_weights(w.clone()))) else {
        return Verdict::Skip;
    };
    let g = r.certificate.gamma.unwrap();
    let sim = simulated_l2_gain(&sys, &r.controller, &w, 50, 200, seed).unwrap();
    verdict(sim <= g * (1.0 + 1e-3), || format!("simulated {sim} above certified {g}"))
}

pub type Property = (&'static str, fn(u64) -> Verdict);

/// The always-on property checks.
pub const PROPERTIES: [Property; 7] = [
    ("kronecker mixed product", kronecker_mixed_product),
    ("multiplier soundness vs dense grid", sproc_sound_on_dense_grid),
    ("lyapunov decrease along trajectories", lyapunov_decreases_along_trajectories),
    ("gamma monotonicity", gamma_feasibility_is_monotone),
    ("controller recovery roundtrip", controller_recovery_roundtrip),
    ("fq evaluation forms agree", fq_forms_agree),
    ("simulated l2 below certified gamma", simulated_l2_below_certified_gamma),
];
