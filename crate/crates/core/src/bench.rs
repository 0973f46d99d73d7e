//! Benchmark plants and the end-to-end study pipelines: data generation,
//! excitation check, synthesis, verification, closed-loop simulation and
//! report emission.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{build_matrices, build_noisy_matrices, check_pe, epsilon_bound, excite, DataDictionary, DataMatrices, NoisyDictionary};
use crate::ddrep::open_loop_rep;
use crate::error::{Error, Result};
use crate::linalg::{mat_to_rows, Mat, ParamBox, Vector, RANK_TOL};
use crate::lmi::SolverSettings;
use crate::synthesis::{synth_noisy_stabilizing, synthesize, GammaMode, Mode, SynthesisRequest, SynthesisResult};
use crate::system::{simulate_closed_loop, LpvSs, PerfWeights, StateFeedbackController};
use crate::verify::{self, GridSpec, VerifyBlock};

fn m(r: usize, c: usize, v: &[f64]) -> Mat {
    Mat::from_row_slice(r, c, v)
}

/// Two-state plant with scheduling in `A` only and `ℙ = [−1, 1]²`.
pub fn study1_system() -> LpvSs {
    let a1 = m(2, 2, &[-0.0063, -0.0938, 0.0, 0.0188]);
    LpvSs::new(
        vec![m(2, 2, &[0.2485, -1.0355, 0.8910, 0.4065]), a1.clone(), a1],
        vec![m(2, 1, &[0.3190, -1.3080]), Mat::zeros(2, 1), Mat::zeros(2, 1)],
        ParamBox::symmetric(2, 1.0),
    )
    .expect("study-1 matrices are consistent")
}

/// Four-state plant with scheduling in both `A` and `B`; `alpha` scales the
/// scheduling effect on `A`.
pub fn study2_system(alpha: f64) -> LpvSs {
    let a0 = m(4, 4, &[0.8, -0.25, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2, 0.03, 0.0, 0.0, 1.0, 0.0]);
    let mut a1 = Mat::zeros(4, 4);
    a1.row_mut(2).copy_from_slice(&[0.8 * alpha, -0.5 * alpha, 0.0, alpha]);
    LpvSs::new(
        vec![a0, a1, Mat::zeros(4, 4)],
        vec![m(4, 1, &[0.5, 0.0, 0.5, 0.0]), Mat::zeros(4, 1), m(4, 1, &[0.5, 0.0, -0.5, 0.0])],
        ParamBox::symmetric(2, 1.0),
    )
    .expect("study-2 matrices are consistent")
}

/// Default scheduling-range parameter of the four-state plant.
pub const STUDY2_ALPHA: f64 = 0.53;

/// Robust gain reported for the two-state plant.
pub fn study1_reference_k0() -> [f64; 2] {
    [0.4832, 0.4839]
}

/// Published stabilizing gains `[K_0, K_1, K_2]` for the four-state plant:
/// the data-driven design first, the model-based one second.
pub fn study2_reference_gains() -> (StateFeedbackController, StateFeedbackController) {
    let k = |rows: [[f64; 4]; 3]| {
        StateFeedbackController::new(rows.iter().map(|r| m(1, 4, r)).collect()).expect("1x4 gains")
    };
    (
        k([
            [-0.2553, 0.1265, -0.3894, -0.4131],
            [-0.3066, 0.1611, -0.0445, -0.4056],
            [-0.0844, 0.0389, -0.0652, -0.1650],
        ]),
        k([
            [-0.2447, 0.0990, -0.4591, -0.4232],
            [-0.3120, 0.2052, 0.0132, -0.3834],
            [-0.0676, 0.0362, -0.0683, -0.1451],
        ]),
    )
}

/// Published quadratic-performance gains `[K_0, K_1, K_2]` for the
/// four-state plant: data-driven first, model-based second.
pub fn study2_reference_quadratic_gains() -> (StateFeedbackController, StateFeedbackController) {
    let k = |rows: [[f64; 4]; 3]| {
        StateFeedbackController::new(rows.iter().map(|r| m(1, 4, r)).collect()).expect("1x4 gains")
    };
    (
        k([
            [-0.0989, 0.0878, -0.3018, -0.2412],
            [-0.2043, 0.1308, -0.0349, -0.2645],
            [-0.0963, 0.0593, -0.0123, -0.1767],
        ]),
        k([
            [-0.0082, 0.0332, -0.2916, -0.1401],
            [-0.1081, 0.0676, -0.0002, -0.1353],
            [0.0062, -0.0026, -0.0116, 0.0088],
        ]),
    )
}

/// Grid H2 norms reported for the published quadratic-performance
/// controllers, data-driven then model-based.
pub const STUDY2_QUADRATIC_GRID_H2: [f64; 2] = [5.27, 5.79];

/// Unbalanced disc: `θ̈ = −(mgl/J) sin θ − θ̇/τ + (K_m/τ) u`.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscParams {
    pub g: f64,
    pub j: f64,
    pub k_m: f64,
    /// Meters.
    pub l: f64,
    pub m: f64,
    pub tau: f64,
    pub t_s: f64,
}

impl Default for DiscParams {
    fn default() -> Self {
        DiscParams { g: 9.8, j: 2.2e-4, k_m: 15.3, l: 0.42e-3, m: 0.07, tau: 0.6, t_s: 0.01 }
    }
}

impl DiscParams {
    /// Same parameters with the arm length read as 0.42 m.
    pub fn long_arm() -> Self {
        DiscParams { l: 0.42, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.g, self.j, self.k_m, self.l, self.m, self.tau, self.t_s];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Invalid("disc parameters must be positive".into()))
        }
    }

    fn rhs(&self, theta: f64, omega: f64, u: f64) -> (f64, f64) {
        (omega, -(self.m * self.g * self.l / self.j) * theta.sin() - omega / self.tau + self.k_m / self.tau * u)
    }
}

/// Internal RK4 substeps per sample.
pub const DISC_SUBSTEPS: usize = 10;

/// One sample period with `u` held, integrated by RK4.
pub fn disc_step(params: &DiscParams, theta: f64, omega: f64, u: f64) -> Result<(f64, f64)> {
    disc_step_with(params, theta, omega, u, DISC_SUBSTEPS)
}

pub fn disc_step_with(params: &DiscParams, theta: f64, omega: f64, u: f64, substeps: usize) -> Result<(f64, f64)> {
    if !(theta.is_finite() && omega.is_finite() && u.is_finite()) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    let h = params.t_s / substeps.max(1) as f64;
    let (mut th, mut om) = (theta, omega);
    for _ in 0..substeps.max(1) {
        let k1 = params.rhs(th, om, u);
        let k2 = params.rhs(th + 0.5 * h * k1.0, om + 0.5 * h * k1.1, u);
        let k3 = params.rhs(th + 0.5 * h * k2.0, om + 0.5 * h * k2.1, u);
        let k4 = params.rhs(th + h * k3.0, om + h * k3.1, u);
        th += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        om += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    if !(th.is_finite() && om.is_finite()) || th.abs().max(om.abs()) > crate::system::OVERFLOW_GUARD {
        return Err(Error::NonFiniteState { step: 1 });
    }
    Ok((th, om))
}

pub fn sinc(theta: f64) -> f64 {
    if theta.abs() < 1e-8 {
        1.0 - theta * theta / 6.0
    } else {
        theta.sin() / theta
    }
}

/// `sinc θ` mapped affinely from `[−0.22, 1]` onto `[−1, 1]`.
pub fn disc_scheduling(theta: f64) -> f64 {
    (2.0 * sinc(theta) - 0.78) / 1.22
}

/// Input holding the disc at rest at `theta_ss`.
pub fn disc_equilibrium_input(params: &DiscParams, theta_ss: f64) -> f64 {
    params.tau * params.m * params.g * params.l / (params.j * params.k_m) * theta_ss.sin()
}

/// Excites the disc with `n_d` uniform inputs in `u_range`; the initial
/// angle and rate are drawn from U(−1, 1).
pub fn disc_dictionary(params: &DiscParams, n_d: usize, seed: u64, u_range: (f64, f64)) -> Result<DataDictionary> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut th: f64 = rng.random_range(-1.0..=1.0);
    let mut om: f64 = rng.random_range(-1.0..=1.0);
    let (mut u, mut p, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..=n_d {
        let uk: f64 = rng.random_range(u_range.0..=u_range.1);
        u.push(Vector::from_element(1, uk));
        p.push(vec![disc_scheduling(th)]);
        x.push(Vector::from_column_slice(&[th, om]));
        if k < n_d {
            (th, om) = disc_step(params, th, om, uk)?;
        }
    }
    Ok(DataDictionary { u, p, x, seed: Some(seed) })
}

/// LPV surrogate `[A_0 A_1 B_0 B_1] = X_+ 𝒟_p^†` identified from the data.
pub fn identified_system(dm: &DataMatrices, pset: ParamBox) -> Result<LpvSs> {
    let (a, b) = open_loop_rep(dm, RANK_TOL)?.matrices();
    LpvSs::new(a, b, pset)
}

/// Closed-loop disc run; one row per sample.
#[derive(Clone, Debug, Default)]
pub struct DiscRun {
    pub t: Vec<f64>,
    pub x: Vec<[f64; 2]>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub x_ss: Vec<[f64; 2]>,
    /// `|θ − θ_ss|` at the end of each dwell period.
    pub terminal_errors: Vec<f64>,
}

/// Nonlinear setpoint tracking with `u = K(p)(x − x_ss) + u_eq(θ_ss)`, the
/// scheduling taken from the measured angle.
pub fn simulate_disc(
    params: &DiscParams,
    ctrl: &StateFeedbackController,
    setpoints: &[f64],
    dwell_steps: usize,
) -> Result<DiscRun> {
    let mut run = DiscRun::default();
    let (mut th, mut om) = (0.0, 0.0);
    let mut step = 0usize;
    for &ts in setpoints {
        let u_eq = disc_equilibrium_input(params, ts);
        for _ in 0..dwell_steps {
            let p = disc_scheduling(th);
            let k = ctrl.eval_k(&[p])?;
            let u = (k[(0, 0)] * (th - ts) + k[(0, 1)] * om) + u_eq;
            run.t.push(step as f64 * params.t_s);
            run.x.push([th, om]);
            run.u.push(u);
            run.p.push(p);
            run.x_ss.push([ts, 0.0]);
            (th, om) = disc_step(params, th, om, u).map_err(|_| Error::NonFiniteState { step: step + 1 })?;
            step += 1;
        }
        run.terminal_errors.push((th - ts).abs());
    }
    Ok(run)
}

/// One numeric claim with its acceptance band.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub band: (f64, f64),
    /// `reference` for published values, `derived` for consequences of
    /// the certificates.
    pub source: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, band: (f64, f64), source: &str) -> Self {
        Check {
            name: name.to_string(),
            value,
            band,
            source: source.to_string(),
            pass: value >= band.0 && value <= band.1,
        }
    }

    /// `target · (1 ± rel)`.
    pub fn relative(name: &str, value: f64, target: f64, rel: f64, source: &str) -> Self {
        Self::new(name, value, (target * (1.0 - rel), target * (1.0 + rel)), source)
    }

    pub fn flag(name: &str, ok: bool, source: &str) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, (1.0, 1.0), source)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DictionaryInfo {
    pub name: String,
    pub file: String,
    pub columns: usize,
    pub rank: usize,
    pub required: usize,
    pub is_pe: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ControllerEntry {
    pub name: String,
    pub synthesis: Option<serde_json::Value>,
    pub verify: Option<VerifyBlock>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyReport {
    pub study: String,
    pub seed: u64,
    pub dictionaries: Vec<DictionaryInfo>,
    pub controllers: Vec<ControllerEntry>,
    pub checks: Vec<Check>,
    pub tables: serde_json::Value,
    pub trajectories: Vec<String>,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyId {
    Study1,
    Study2,
    Disc,
}

impl std::str::FromStr for StudyId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "study1" | "1" => Ok(StudyId::Study1),
            "study2" | "2" => Ok(StudyId::Study2),
            "disc" | "study3" | "3" => Ok(StudyId::Disc),
            _ => Err(Error::Invalid(format!("unknown study {s:?}; expected study1, study2 or disc"))),
        }
    }
}

impl StudyId {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyId::Study1 => "study1",
            StudyId::Study2 => "study2",
            StudyId::Disc => "disc",
        }
    }
}

/// Knobs of the study pipelines.
#[derive(Clone, Debug)]
pub struct StudyOptions {
    pub settings: SolverSettings,
    pub noisy_seeds: usize,
    pub include_noisy: bool,
    pub disc: DiscParams,
    pub dwell_s: f64,
    pub write_files: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            settings: SolverSettings::default(),
            noisy_seeds: 10,
            include_noisy: true,
            disc: DiscParams::default(),
            dwell_s: 5.0,
            write_files: true,
        }
    }
}

pub fn run_study(id: StudyId, seed: u64, out_dir: &Path) -> Result<StudyReport> {
    run_study_with(id, seed, out_dir, &StudyOptions::default())
}

pub fn run_study_with(id: StudyId, seed: u64, out_dir: &Path, opts: &StudyOptions) -> Result<StudyReport> {
    let mut ctx = Ctx::new(id, seed, out_dir, opts)?;
    match id {
        StudyId::Study1 => study1(&mut ctx)?,
        StudyId::Study2 => study2(&mut ctx)?,
        StudyId::Disc => disc(&mut ctx)?,
    }
    ctx.finish()
}

struct Ctx<'a> {
    report: StudyReport,
    out: PathBuf,
    opts: &'a StudyOptions,
}

impl<'a> Ctx<'a> {
    fn new(id: StudyId, seed: u64, out_dir: &Path, opts: &'a StudyOptions) -> Result<Self> {
        if opts.write_files {
            std::fs::create_dir_all(out_dir.join("trajectories"))?;
        }
        Ok(Ctx {
            report: StudyReport {
                study: id.as_str().to_string(),
                seed,
                dictionaries: Vec::new(),
                controllers: Vec::new(),
                checks: Vec::new(),
                tables: serde_json::json!({}),
                trajectories: Vec::new(),
                passed: false,
            },
            out: out_dir.to_path_buf(),
            opts,
        })
    }

    fn dictionary(&mut self, name: &str, file: &str, csv: String, dm: &DataMatrices) -> Result<bool> {
        let pe = check_pe(dm, RANK_TOL);
        if self.opts.write_files {
            std::fs::write(self.out.join(file), csv)?;
        }
        self.report.dictionaries.push(DictionaryInfo {
            name: name.to_string(),
            file: file.to_string(),
            columns: dm.columns(),
            rank: pe.rank,
            required: pe.required,
            is_pe: pe.is_pe,
        });
        Ok(pe.is_pe)
    }

    /// Records a synthesis outcome; a failure is kept in the report rather
    /// than aborting the study.
    fn controller(&mut self, name: &str, r: Result<SynthesisResult>) -> Option<SynthesisResult> {
        match r {
            Ok(res) => {
                self.report.controllers.push(ControllerEntry {
                    name: name.to_string(),
                    synthesis: Some(res.report()),
                    verify: None,
                    error: None,
                });
                Some(res)
            }
            Err(e) => {
                self.report.controllers.push(ControllerEntry {
                    name: name.to_string(),
                    synthesis: None,
                    verify: None,
                    error: Some(e.to_string()),
                });
                None
            }
        }
    }

    fn verify(&mut self, name: &str, v: Result<VerifyBlock>) -> Option<VerifyBlock> {
        let entry = match self.report.controllers.iter_mut().find(|c| c.name == name) {
            Some(e) => e,
            None => {
                self.report.controllers.push(ControllerEntry {
                    name: name.to_string(),
                    synthesis: None,
                    verify: None,
                    error: None,
                });
                self.report.controllers.last_mut().expect("just pushed")
            }
        };
        match v {
            Ok(b) => {
                entry.verify = Some(b.clone());
                Some(b)
            }
            Err(e) => {
                entry.error = Some(format!("verification: {e}"));
                None
            }
        }
    }

    fn check(&mut self, c: Check) {
        self.report.checks.push(c);
    }

    fn trajectory(&mut self, name: &str, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
        let file = format!("trajectories/{name}.csv");
        if self.opts.write_files {
            let mut w = csv::Writer::from_path(self.out.join(&file)).map_err(csv_err)?;
            w.write_record(header).map_err(csv_err)?;
            for r in rows {
                w.write_record(r.iter().map(|v| v.to_string())).map_err(csv_err)?;
            }
            w.flush()?;
        }
        self.report.trajectories.push(file);
        Ok(())
    }

    fn finish(mut self) -> Result<StudyReport> {
        self.report.passed = !self.report.checks.is_empty() && self.report.checks.iter().all(|c| c.pass);
        if self.opts.write_files {
            let text = serde_json::to_string_pretty(&self.report)?;
            std::fs::write(self.out.join("report.json"), text + "\n")?;
        }
        Ok(self.report)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Header `t, x_1.., u_1.., p_1..`.
pub fn trajectory_header(n_x: usize, n_u: usize, n_p: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n_x).map(|i| format!("x_{i}")));
    h.extend((1..=n_u).map(|i| format!("u_{i}")));
    h.extend((1..=n_p).map(|i| format!("p_{i}")));
    h
}

/// Closed-loop run of an LPV plant from `x0` under uniform random
/// scheduling; rows follow [`trajectory_header`]. The final row repeats the
/// last input and scheduling.
pub fn lpv_trajectory(
    sys: &LpvSs,
    ctrl: &StateFeedbackController,
    x0: &Vector,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_seq: Vec<Vec<f64>> = (0..horizon)
        .map(|_| (0..sys.n_p()).map(|i| rng.random_range(sys.p_set.lower[i]..=sys.p_set.upper[i])).collect())
        .collect();
    let run = simulate_closed_loop(sys, ctrl, x0, &p_seq, None, None)?;
    let mut rows = Vec::with_capacity(run.x.len());
    for (k, x) in run.x.iter().enumerate().take(horizon) {
        let mut r = vec![k as f64];
        r.extend(x.iter());
        r.extend(run.u[k].iter());
        r.extend(p_seq[k].iter());
        rows.push(r);
    }
    Ok(rows)
}

fn grid(pts: usize, pset: &ParamBox) -> Result<GridSpec> {
    GridSpec::new(pts, pset.clone())
}

fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).amax()
}

fn analyze_ok(sys: &LpvSs, ctrl: &StateFeedbackController, s: &SolverSettings) -> Result<bool> {
    match verify::model_analyze_stability(sys, ctrl, &sys.p_set, s) {
        Ok(r) => Ok(r.status.is_success()),
        Err(Error::Infeasible) | Err(Error::SolverFailure(_)) | Err(Error::IllConditionedP { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Dictionary of the two-state plant at the minimal excitation length.
pub fn study1_dictionary(seed: u64) -> Result<DataDictionary> {
    excite(&study1_system(), 9, seed, (-1.0, 1.0), (-1.0, 1.0), None)
}

/// Dictionary of the four-state plant at the minimal excitation length.
pub fn study2_dictionary(seed: u64) -> Result<DataDictionary> {
    excite(&study2_system(STUDY2_ALPHA), 15, seed, (-1.0, 1.0), (-1.0, 1.0), None)
}

/// Noise standard deviation of the noisy branch.
pub fn study2_noise_std() -> f64 {
    0.1
}

/// Samples in the noisy dictionary.
pub const STUDY2_NOISY_SAMPLES: usize = 26;

/// Noisy dictionary of the four-state plant: `STUDY2_NOISY_SAMPLES` samples,
/// i.e. one fewer data column.
pub fn study2_noisy_dictionary(seed: u64) -> Result<NoisyDictionary> {
    let clean = excite(&study2_system(STUDY2_ALPHA), STUDY2_NOISY_SAMPLES - 1, seed, (-1.0, 1.0), (-1.0, 1.0), None)?;
    NoisyDictionary::with_noise(&clean, study2_noise_std(), seed ^ 0x9e37_79b9)
}

/// Robust quadratic-performance request used on the two-state plant.
pub fn study1_request(settings: &SolverSettings) -> Result<SynthesisRequest> {
    let mut req = SynthesisRequest::new(Mode::Quadratic).with_weights(PerfWeights::diag(&[1.0, 1.0], &[1.0])?);
    req.robust = true;
    req.settings = settings.clone();
    Ok(req)
}

fn study1(ctx: &mut Ctx) -> Result<()> {
    let sys = study1_system();
    let s = ctx.opts.settings.clone();
    let seed = ctx.report.seed;
    let dict = study1_dictionary(seed)?;
    let dm = build_matrices(&dict)?;
    let pe = ctx.dictionary("clean", "dictionary.csv", dict.to_csv()?, &dm)?;
    ctx.check(Check::flag("dictionary_pe", pe, "reference"));
    let req = study1_request(&s)?;
    let dd = ctx.controller("data_robust_quadratic", synthesize(&dm, &sys.p_set, &req));
    let mb = ctx.controller("model_robust_quadratic", verify::model_synth(&sys, &sys.p_set, &req));
    let target = study1_reference_k0();
    let g = grid(10, &sys.p_set)?;
    if let Some(r) = &dd {
        let k0 = r.controller.k0();
        for (i, t) in target.iter().enumerate() {
            ctx.check(Check::new(&format!("data_k0_{}", i + 1), k0[(0, i)], (t - 1e-2, t + 1e-2), "reference"));
        }
        ctx.check(Check::new("data_kbar_norm", r.controller.kbar().norm(), (0.0, 1e-6), "derived"));
        let v = verify::verify_controller(&sys, &r.controller, Some(&r.certificate.p_mat), req.weights.as_ref(), &g, seed);
        if let Some(v) = ctx.verify("data_robust_quadratic", v) {
            ctx.check(Check::flag("data_model_certifies", v.model_certifies == Some(true), "derived"));
            ctx.check(Check::flag("data_lyapunov_decrease", v.lyap_pass == Some(true), "derived"));
        }
        let rows = lpv_trajectory(&sys, &r.controller, &Vector::from_column_slice(&[1.0, -1.0]), 40, seed)?;
        ctx.trajectory("data_robust_quadratic", &trajectory_header(2, 1, 2), &rows)?;
    }
    if let (Some(a), Some(b)) = (&dd, &mb) {
        let diff = max_abs_diff(a.controller.k0(), b.controller.k0());
        ctx.check(Check::new("data_vs_model_k0", diff, (0.0, 1e-2), "reference"));
        ctx.report.tables = serde_json::json!({
            "k0": { "data": mat_to_rows(a.controller.k0()), "model": mat_to_rows(b.controller.k0()), "reference": target },
            "p_inverse": {
                "data": a.certificate.p_mat.clone().try_inverse().map(|m| mat_to_rows(&m)),
                "model": b.certificate.p_mat.clone().try_inverse().map(|m| mat_to_rows(&m)),
            },
        });
    }
    if let Some(r) = &mb {
        let v = verify::verify_controller(&sys, &r.controller, Some(&r.certificate.p_mat), req.weights.as_ref(), &g, seed);
        ctx.verify("model_robust_quadratic", v);
        let rows = lpv_trajectory(&sys, &r.controller, &Vector::from_column_slice(&[1.0, -1.0]), 40, seed)?;
        ctx.trajectory("model_robust_quadratic", &trajectory_header(2, 1, 2), &rows)?;
    }
    if dd.is_none() || mb.is_none() {
        ctx.check(Check::flag("all_syntheses_succeeded", false, "derived"));
    }
    Ok(())
}

/// Stabilizing request with the conditioning box `0.1 ≤ trace P ≤ 10`.
pub fn study2_stabilize_request(settings: &SolverSettings) -> SynthesisRequest {
    let mut req = SynthesisRequest::new(Mode::Stabilize);
    req.trace_box = Some((0.1, 10.0));
    req.settings = settings.clone();
    req
}

pub fn study2_h2_request(settings: &SolverSettings) -> Result<SynthesisRequest> {
    let mut req = SynthesisRequest::new(Mode::H2).with_weights(PerfWeights::diag(&[1.0; 4], &[1.0])?);
    req.gamma_mode = GammaMode::Minimize;
    req.settings = settings.clone();
    Ok(req)
}

pub fn study2_quadratic_request(settings: &SolverSettings) -> Result<SynthesisRequest> {
    let mut req = SynthesisRequest::new(Mode::Quadratic).with_weights(PerfWeights::diag(&[1.0; 4], &[1.0])?);
    req.settings = settings.clone();
    Ok(req)
}

/// Grid with 16 points per axis (256 points) for the frozen H2 comparison.
pub const H2_GRID_AXIS: usize = 16;

/// Outcome of the noisy branch for one noise realization.
#[derive(Clone, Debug, Serialize)]
pub struct NoisyOutcome {
    pub seed: u64,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub eps_opt: Option<f64>,
    pub guaranteed: Option<bool>,
    pub grid_rho: Option<f64>,
    pub error: Option<String>,
}

/// Noisy-data stabilizing synthesis for one seed, verified on the true plant.
pub fn study2_noisy_run(seed: u64, settings: &SolverSettings) -> Result<(NoisyOutcome, Option<SynthesisResult>)> {
    let sys = study2_system(STUDY2_ALPHA);
    let nd = study2_noisy_dictionary(seed)?;
    let eps = epsilon_bound(&sys, &nd)?;
    let nm = build_noisy_matrices(&nd)?;
    let mut req = SynthesisRequest::new(Mode::Noisy);
    req.eps_claim = Some(eps);
    req.settings = settings.clone();
    let mut out =
        NoisyOutcome { seed, epsilon: Some(eps), alpha: None, eps_opt: None, guaranteed: None, grid_rho: None, error: None };
    match synth_noisy_stabilizing(&nm, &sys.p_set, &req) {
        Ok(r) => {
            out.alpha = r.certificate.alpha;
            out.eps_opt = r.certificate.eps_opt;
            out.guaranteed = r.guaranteed;
            out.grid_rho = Some(verify::grid_spectral_radius(&sys, &r.controller, &GridSpec::new(10, sys.p_set.clone())?)?.value);
            Ok((out, Some(r)))
        }
        Err(e) => {
            out.error = Some(e.to_string());
            Ok((out, None))
        }
    }
}

fn study2(ctx: &mut Ctx) -> Result<()> {
    let sys = study2_system(STUDY2_ALPHA);
    let s = ctx.opts.settings.clone();
    let seed = ctx.report.seed;
    let dict = study2_dictionary(seed)?;
    let dm = build_matrices(&dict)?;
    let pe = ctx.dictionary("clean", "dictionary.csv", dict.to_csv()?, &dm)?;
    ctx.check(Check::flag("dictionary_pe", pe, "reference"));
    let g100 = grid(10, &sys.p_set)?;
    let g256 = grid(H2_GRID_AXIS, &sys.p_set)?;
    let x0 = Vector::from_column_slice(&[1.0, -0.5, 0.5, -1.0]);
    let mut tables = serde_json::Map::new();

    let open = verify::grid_spectral_radius(&sys, &StateFeedbackController::zero(1, 4, 2), &g100)?;
    tables.insert("open_loop_grid_rho".into(), serde_json::json!(open));

    // stabilizing
    let req = study2_stabilize_request(&s);
    let runs = [
        ("data_stabilize", synthesize(&dm, &sys.p_set, &req)),
        ("model_stabilize", verify::model_synth(&sys, &sys.p_set, &req)),
    ];
    for (name, r) in runs {
        if let Some(r) = ctx.controller(name, r) {
            let v = verify::verify_controller(&sys, &r.controller, Some(&r.certificate.p_mat), None, &g100, seed);
            if let Some(v) = ctx.verify(name, v) {
                ctx.check(Check::flag(&format!("{name}_model_certifies"), v.model_certifies == Some(true), "derived"));
                let rho = v.grid_rho.map_or(f64::INFINITY, |g| g.value);
                ctx.check(Check::new(&format!("{name}_grid_rho"), rho, (0.0, 1.0 - 1e-9), "derived"));
            }
            ctx.trajectory(name, &trajectory_header(4, 1, 2), &lpv_trajectory(&sys, &r.controller, &x0, 60, seed)?)?;
        } else {
            ctx.check(Check::flag(&format!("{name}_feasible"), false, "derived"));
        }
    }
    let (ref_data, ref_model) = study2_reference_gains();
    for (name, k) in [("reference_data_gains", &ref_data), ("reference_model_gains", &ref_model)] {
        let ok = analyze_ok(&sys, k, &s)?;
        ctx.check(Check::flag(&format!("{name}_certify"), ok, "reference"));
        let rho = verify::grid_spectral_radius(&sys, k, &g100)?.value;
        ctx.check(Check::new(&format!("{name}_grid_rho"), rho, (0.0, 1.0 - 1e-9), "reference"));
    }

    // quadratic performance
    let qreq = study2_quadratic_request(&s)?;
    let mut traces = serde_json::Map::new();
    let qw = qreq.weights.clone().expect("weights");
    let (ref_qd, ref_qm) = study2_reference_quadratic_gains();
    let [h2_data, h2_model] = STUDY2_QUADRATIC_GRID_H2;
    for (name, k, target) in [("reference_data_quadratic", &ref_qd, h2_data), ("reference_model_quadratic", &ref_qm, h2_model)] {
        let h2 = verify::grid_h2_norm(&sys, k, &qw, &g256)?.value;
        ctx.check(Check::relative(&format!("{name}_grid_h2"), h2, target, 0.01, "reference"));
    }
    for (name, r, target) in [
        ("data_quadratic", synthesize(&dm, &sys.p_set, &qreq), h2_data),
        ("model_quadratic", verify::model_synth(&sys, &sys.p_set, &qreq), h2_model),
    ] {
        if let Some(r) = ctx.controller(name, r) {
            traces.insert(name.into(), serde_json::json!(r.certificate.p_mat.trace()));
            let v = verify::verify_controller(&sys, &r.controller, Some(&r.certificate.p_mat), Some(&qw), &g256, seed);
            if let Some(v) = ctx.verify(name, v) {
                let h2 = v.grid_h2.map_or(f64::INFINITY, |g| g.value);
                ctx.check(Check::relative(&format!("{name}_grid_h2"), h2, target, 0.15, "reference"));
            }
            ctx.trajectory(name, &trajectory_header(4, 1, 2), &lpv_trajectory(&sys, &r.controller, &x0, 60, seed)?)?;
        } else {
            ctx.check(Check::flag(&format!("{name}_feasible"), false, "derived"));
        }
    }
    traces.insert("reference".into(), serde_json::json!({"data": 0.9151, "model": 0.7146}));
    tables.insert("quadratic_trace_p".into(), serde_json::Value::Object(traces));

    // H2
    let hreq = study2_h2_request(&s)?;
    let mut h2_table = serde_json::Map::new();
    for (name, r) in [
        ("data_h2", synthesize(&dm, &sys.p_set, &hreq)),
        ("model_h2", verify::model_synth(&sys, &sys.p_set, &hreq)),
    ] {
        if let Some(r) = ctx.controller(name, r) {
            let gamma = r.certificate.gamma.unwrap_or(f64::NAN);
            ctx.check(Check::flag(&format!("{name}_model_certifies"), analyze_ok(&sys, &r.controller, &s)?, "derived"));
            match verify::grid_h2_norm(&sys, &r.controller, hreq.weights.as_ref().expect("weights"), &g256) {
                Ok(h2) => {
                    h2_table.insert(name.into(), serde_json::json!({"gamma": gamma, "grid_h2": h2.value}));
                    ctx.check(Check::new(
                        &format!("{name}_grid_h2_below_gamma"),
                        h2.value,
                        (0.0, gamma * (1.0 + 1e-3)),
                        "derived",
                    ));
                }
                Err(e) => {
                    ctx.check(Check::flag(&format!("{name}_grid_h2_defined"), false, "derived"));
                    log::warn!("{name}: {e}");
                }
            }
            let v = verify::verify_controller(&sys, &r.controller, Some(&r.certificate.p_mat), hreq.weights.as_ref(), &g256, seed);
            ctx.verify(name, v);
            ctx.trajectory(name, &trajectory_header(4, 1, 2), &lpv_trajectory(&sys, &r.controller, &x0, 60, seed)?)?;
        } else {
            ctx.check(Check::flag(&format!("{name}_feasible"), false, "derived"));
        }
    }

    tables.insert("h2_design".into(), serde_json::Value::Object(h2_table));

    if ctx.opts.include_noisy {
        let seeds: Vec<u64> = (0..ctx.opts.noisy_seeds as u64).map(|i| seed.wrapping_add(i)).collect();
        let mut outcomes = Vec::new();
        for (i, sd) in seeds.iter().enumerate() {
            let (o, r) = study2_noisy_run(*sd, &s)?;
            if i == 0 {
                let nd = study2_noisy_dictionary(*sd)?;
                let nm = build_noisy_matrices(&nd)?;
                ctx.dictionary("noisy", "dictionary_noisy.csv", nd.to_csv()?, &nm.data)?;
                if let Some(r) = ctx.controller("noisy_stabilize", r.ok_or(Error::Infeasible)) {
                    ctx.trajectory(
                        "noisy_stabilize",
                        &trajectory_header(4, 1, 2),
                        &lpv_trajectory(&sys, &r.controller, &x0, 60, seed)?,
                    )?;
                }
            }
            outcomes.push(o);
        }
        let feasible = outcomes.iter().filter(|o| o.alpha.is_some_and(|a| a > 0.0)).count();
        let in_band = outcomes.iter().filter(|o| o.epsilon.is_some_and(|e| (0.05..=0.6).contains(&e))).count();
        let stable = outcomes.iter().filter(|o| o.grid_rho.is_some_and(|r| r < 1.0)).count();
        let n = outcomes.len() as f64;
        ctx.check(Check::new("noisy_feasible_fraction", feasible as f64 / n, (1.0, 1.0), "derived"));
        ctx.check(Check::new("noisy_epsilon_in_band_fraction", in_band as f64 / n, (1.0, 1.0), "derived"));
        ctx.check(Check::new("noisy_true_plant_stable_fraction", stable as f64 / n, (0.9, 1.0), "derived"));
        tables.insert("noisy".into(), serde_json::json!(outcomes));
    }
    ctx.report.tables = serde_json::Value::Object(tables);
    Ok(())
}

/// Disc tuning shared by the three controllers.
pub fn disc_q() -> [f64; 2] {
    [8.0, 0.1]
}

/// Input weights of the quadratic, H2 and ℓ2 controllers.
pub const DISC_R: [f64; 3] = [0.5, 0.05, 0.005];
/// Trace regularization of the ℓ2 controller.
pub const DISC_LAMBDA: f64 = 0.1;
/// Data columns of the disc dictionary.
pub const DISC_COLUMNS: usize = 6;
/// Input amplitude during data collection.
pub const DISC_U_RANGE: (f64, f64) = (-10.0, 10.0);

/// Requests for the three disc controllers.
pub fn disc_requests(settings: &SolverSettings) -> Result<[SynthesisRequest; 3]> {
    let w = |r: f64| PerfWeights::diag(&disc_q(), &[r]);
    let mut c1 = SynthesisRequest::new(Mode::Quadratic).with_weights(w(DISC_R[0])?);
    let mut c2 = SynthesisRequest::new(Mode::H2).with_weights(w(DISC_R[1])?);
    let mut c3 = SynthesisRequest::new(Mode::L2).with_weights(w(DISC_R[2])?);
    c3.reg_lambda = DISC_LAMBDA;
    for c in [&mut c1, &mut c2, &mut c3] {
        c.settings = settings.clone();
    }
    Ok([c1, c2, c3])
}

/// Published `(γ, grid H2, grid ℓ2)` per disc controller; `None` where no
/// value exists.
pub fn disc_reference_table() -> [(Option<f64>, f64, f64); 3] {
    [(None, 18.6, 92.0), (Some(11.6), 11.6, 54.7), (Some(36.0), 13.6, 35.6)]
}

/// Scheduling grid points used for the disc metrics.
pub const DISC_GRID: usize = 101;

fn disc(ctx: &mut Ctx) -> Result<()> {
    let params = ctx.opts.disc.clone();
    params.validate()?;
    let s = ctx.opts.settings.clone();
    let seed = ctx.report.seed;
    let dict = disc_dictionary(&params, DISC_COLUMNS, seed, DISC_U_RANGE)?;
    let dm = build_matrices(&dict)?;
    let pe = ctx.dictionary("clean", "dictionary.csv", dict.to_csv()?, &dm)?;
    ctx.check(Check::flag("dictionary_pe", pe, "reference"));
    let pset = ParamBox::symmetric(1, 1.0);
    let surrogate = identified_system(&dm, pset.clone())?;

    // the surrogate reproduces the measured samples
    let u_seq: Vec<Vector> = dict.u[..DISC_COLUMNS].to_vec();
    let p_seq: Vec<Vec<f64>> = dict.p[..DISC_COLUMNS].to_vec();
    let xs = surrogate.simulate(&dict.x[0], &u_seq, &p_seq)?;
    let embed_err = xs.iter().zip(&dict.x).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    ctx.check(Check::new("surrogate_matches_data", embed_err, (0.0, 1e-6), "derived"));

    let g = grid(DISC_GRID, &pset)?;
    let names = ["controller_1_quadratic", "controller_2_h2", "controller_3_l2"];
    let refs = disc_reference_table();
    let dwell = (ctx.opts.dwell_s / params.t_s).round() as usize;
    let setpoints = [0.0, PI / 2.0, -PI / 2.0];
    let mut table = Vec::new();
    for (i, req) in disc_requests(&s)?.into_iter().enumerate() {
        let name = names[i];
        let Some(r) = ctx.controller(name, synthesize(&dm, &pset, &req)) else {
            ctx.check(Check::flag(&format!("{name}_feasible"), false, "derived"));
            continue;
        };
        let w = req.weights.as_ref().expect("disc requests carry weights");
        let v = verify::verify_controller(&surrogate, &r.controller, Some(&r.certificate.p_mat), Some(w), &g, seed);
        let v = ctx.verify(name, v);
        let h2 = v.as_ref().and_then(|v| v.grid_h2.as_ref()).map(|g| g.value);
        let hinf = v.as_ref().and_then(|v| v.grid_hinf.as_ref()).map(|g| g.value);
        let gamma = r.certificate.gamma;
        table.push(serde_json::json!({ "controller": name, "gamma": gamma, "grid_h2": h2, "grid_l2": hinf }));
        let (rg, rh2, rl2) = refs[i];
        if i > 0 {
            if let (Some(gv), Some(t)) = (gamma, rg) {
                ctx.check(Check::relative(&format!("{name}_gamma"), gv, t, 0.25, "reference"));
            }
            ctx.check(Check::relative(&format!("{name}_grid_h2"), h2.unwrap_or(f64::NAN), rh2, 0.25, "reference"));
            ctx.check(Check::relative(&format!("{name}_grid_l2"), hinf.unwrap_or(f64::NAN), rl2, 0.25, "reference"));
        }
        if let (Some(sl2), Some(gv), 2) = (v.as_ref().and_then(|v| v.sim_l2), gamma, i) {
            ctx.check(Check::new(&format!("{name}_simulated_l2_below_gamma"), sl2, (0.0, gv * (1.0 + 1e-3)), "derived"));
        }
        match simulate_disc(&params, &r.controller, &setpoints, dwell) {
            Ok(run) => {
                let worst = run.terminal_errors.iter().cloned().fold(0.0, f64::max);
                ctx.check(Check::new(&format!("{name}_terminal_error"), worst, (0.0, 0.05), "derived"));
                let header: Vec<String> =
                    ["t", "x_1", "x_2", "u_1", "p_1", "xss_1", "xss_2"].iter().map(|s| s.to_string()).collect();
                let rows: Vec<Vec<f64>> = (0..run.t.len())
                    .map(|k| vec![run.t[k], run.x[k][0], run.x[k][1], run.u[k], run.p[k], run.x_ss[k][0], run.x_ss[k][1]])
                    .collect();
                ctx.trajectory(name, &header, &rows)?;
            }
            Err(e) => {
                log::warn!("{name}: nonlinear simulation failed: {e}");
                ctx.check(Check::flag(&format!("{name}_simulation_bounded"), false, "derived"));
            }
        }
    }
    ctx.report.tables = serde_json::json!({
        "metrics": table,
        "reference": refs.iter().map(|(g, h, l)| serde_json::json!({"gamma": g, "grid_h2": h, "grid_l2": l})).collect::<Vec<_>>(),
        "surrogate": surrogate.to_json(),
        "params": params,
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plant_entries() {
        let s1 = study1_system();
        assert_eq!(s1.b[0], m(2, 1, &[0.3190, -1.3080]));
        let s2 = study2_system(0.53);
        let row: Vec<f64> = s2.a[1].row(2).iter().cloned().collect();
        let want = [0.424, -0.265, 0.0, 0.53];
        assert!(row.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(study2_system(0.0).a[1], Mat::zeros(4, 4));
    }

    #[test]
    fn disc_equilibria_are_fixed_points() {
        let p = DiscParams::default();
        assert_eq!(disc_step(&p, 0.0, 0.0, 0.0).unwrap(), (0.0, 0.0));
        let (th, om) = disc_step(&p, PI, 0.0, 0.0).unwrap();
        assert!((th - PI).abs() < 1e-12 && om.abs() < 1e-9);
        let u = disc_equilibrium_input(&p, 0.7);
        let (th, om) = disc_step(&p, 0.7, 0.0, u).unwrap();
        assert!((th - 0.7).abs() < 1e-12 && om.abs() < 1e-9);
    }

    #[test]
    fn rk4_step_halving() {
        for p in [DiscParams::default(), DiscParams::long_arm()] {
            let a = disc_step_with(&p, 0.3, -2.0, 1.5, 10).unwrap();
            let b = disc_step_with(&p, 0.3, -2.0, 1.5, 20).unwrap();
            let scale = a.0.abs().max(a.1.abs()).max(1.0);
            assert!((a.0 - b.0).abs().max((a.1 - b.1).abs()) < 1e-8 * scale, "{a:?} {b:?}");
        }
    }

    #[test]
    fn scheduling_map() {
        assert_eq!(disc_scheduling(0.0), 1.0);
        assert!((disc_scheduling(PI) + 0.78 / 1.22).abs() < 1e-12);
        assert!(((2.0 * -0.22 - 0.78) / 1.22f64 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_input_symmetry() {
        let p = DiscParams::default();
        assert_eq!(disc_equilibrium_input(&p, 0.0), 0.0);
        let want = p.tau * p.m * p.g * p.l / (p.j * p.k_m);
        assert!((disc_equilibrium_input(&p, PI / 2.0) - want).abs() < 1e-12);
        assert_eq!(disc_equilibrium_input(&p, -0.4), -disc_equilibrium_input(&p, 0.4));
    }

    #[test]
    fn study_ids_parse() {
        assert_eq!("study3".parse::<StudyId>().unwrap(), StudyId::Disc);
        assert!("study9".parse::<StudyId>().is_err());
    }
}
