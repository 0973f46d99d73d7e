//! Stability analysis and state-feedback synthesis as SDPs, either from data
//! or, for comparison, from a known plant.

use serde::{Deserialize, Serialize};

use crate::data::{check_noisy_ranks, check_pe, DataMatrices, NoisyMatrices};
use crate::ddrep::FqMatrix;
use crate::error::{dim, Error, Result};
use crate::linalg::{blkdiag, cond, eye, kron_eye, mat_to_rows, min_eig_unchecked, monomial_fold, pinv_right, Mat, ParamBox, RANK_TOL};
use crate::lmi::{
    solve, sproc_expand, AffExpr, LftSpec, LmiProblem, LmiSolution, Multiplier, ResidualReport, SolveStatus,
    SolverDiagnostics, SolverSettings, SprocOptions, VarId,
};
use crate::system::{LpvSs, PerfWeights, StateFeedbackController};

/// Reject controller extraction above this condition number of `P`.
pub const P_COND_CAP: f64 = 1e10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Analyze,
    Stabilize,
    Quadratic,
    H2,
    L2,
    #[serde(alias = "noisy-stabilize")]
    Noisy,
}

impl Mode {
    pub fn needs_weights(self) -> bool {
        matches!(self, Mode::Quadratic | Mode::H2 | Mode::L2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Analyze => "analyze",
            Mode::Stabilize => "stabilize",
            Mode::Quadratic => "quadratic",
            Mode::H2 => "h2",
            Mode::L2 => "l2",
            Mode::Noisy => "noisy",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "analyze" => Mode::Analyze,
            "stabilize" => Mode::Stabilize,
            "quadratic" => Mode::Quadratic,
            "h2" => Mode::H2,
            "l2" => Mode::L2,
            "noisy" | "noisy-stabilize" => Mode::Noisy,
            _ => return Err(Error::Invalid(format!("unknown mode {s:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    Fixed(f64),
    Minimize,
}

/// Direction of the `trace(P)` objective in quadratic mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceObjective {
    #[default]
    Maximize,
    Minimize,
}

/// LFT used for the second noisy-data inequality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoisyLft {
    /// `F(p) = 𝓕[I; p⊗I; p⊗p⊗I]` with one multiplier per inequality.
    #[default]
    Compact,
    /// Both inequalities under one multiplier, scheduling lifted on the
    /// `N_d − 1` side as well.
    Full,
}

#[derive(Clone, Debug)]
pub struct SynthesisRequest {
    pub mode: Mode,
    pub weights: Option<PerfWeights>,
    pub gamma_mode: GammaMode,
    pub robust: bool,
    pub reg_lambda: f64,
    pub trace_box: Option<(f64, f64)>,
    pub trace_objective: TraceObjective,
    pub noisy_lft: NoisyLft,
    pub eps_claim: Option<f64>,
    pub settings: SolverSettings,
}

impl SynthesisRequest {
    pub fn new(mode: Mode) -> Self {
        SynthesisRequest {
            mode,
            weights: None,
            gamma_mode: GammaMode::Minimize,
            robust: false,
            reg_lambda: 0.0,
            trace_box: None,
            trace_objective: TraceObjective::default(),
            noisy_lft: NoisyLft::default(),
            eps_claim: None,
            settings: SolverSettings::default(),
        }
    }

    pub fn with_weights(mut self, w: PerfWeights) -> Self {
        self.weights = Some(w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode.needs_weights() && self.weights.is_none() {
            return Err(Error::Invalid(format!("mode {} needs weights", self.mode.as_str())));
        }
        if let GammaMode::Fixed(g) = self.gamma_mode {
            if !(g > 0.0) {
                return Err(Error::Invalid("fixed gamma must be positive".into()));
            }
        }
        if let Some((lo, hi)) = self.trace_box {
            if !(lo >= 0.0 && lo < hi) {
                return Err(Error::Invalid("trace box needs 0 ≤ lo < hi".into()));
            }
        }
        if !(self.reg_lambda >= 0.0) {
            return Err(Error::Invalid("reg_lambda must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Pins `F22 = 0` and `Ȳ = 0`, which yields a scheduling-independent gain.
pub fn apply_robust_restriction(mut req: SynthesisRequest) -> SynthesisRequest {
    req.robust = true;
    req
}

#[derive(Clone, Debug, Serialize)]
pub struct SynthesisCertificate {
    #[serde(serialize_with = "ser_mat")]
    pub p_mat: Mat,
    #[serde(skip)]
    pub fq: Option<FqMatrix>,
    #[serde(serialize_with = "ser_mat")]
    pub y0: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub ybar: Mat,
    #[serde(serialize_with = "ser_opt_mat")]
    pub s_mat: Option<Mat>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub eps_opt: Option<f64>,
    pub multipliers: Vec<Multiplier>,
    pub residuals: ResidualReport,
}

fn ser_mat<S: serde::Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    mat_to_rows(m).serialize(s)
}

fn ser_opt_mat<S: serde::Serializer>(m: &Option<Mat>, s: S) -> std::result::Result<S::Ok, S::Error> {
    m.as_ref().map(mat_to_rows).serialize(s)
}

#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub mode: Mode,
    pub status: SolveStatus,
    pub controller: StateFeedbackController,
    pub certificate: SynthesisCertificate,
    pub self_check: bool,
    /// `eps_opt > eps_claim` when a claim was given.
    pub guaranteed: Option<bool>,
    pub diagnostics: SolverDiagnostics,
    pub settings: SolverSettings,
}

/// `α²/(4+2α)`.
pub fn eps_from_alpha(alpha: f64) -> f64 {
    alpha * alpha / (4.0 + 2.0 * alpha)
}

/// Where the closed-loop term `A_CL(p)P` comes from.
#[derive(Clone, Copy)]
pub(crate) enum Plant<'a> {
    Data(&'a DataMatrices),
    Model(&'a LpvSs),
}

impl Plant<'_> {
    fn dims(&self) -> (usize, usize, usize) {
        match self {
            Plant::Data(d) => (d.n_x, d.n_u, d.n_p),
            Plant::Model(s) => (s.n_x(), s.n_u(), s.n_p()),
        }
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Gains<'a> {
    Free,
    Fixed(&'a StateFeedbackController),
}

struct Core {
    p_id: VarId,
    p: AffExpr,
    y0: AffExpr,
    ybar: AffExpr,
    /// `n_x(1+n_p)` square block whose quadratic form in `[I; p⊗I]` is `A_CL(p)P`.
    xf: AffExpr,
    /// `F_Q` for data plants.
    fq: Option<AffExpr>,
    /// `G` with `Gᵀ G = 𝓕ᵀ 𝓕` and as few rows as the structure allows.
    calf_gram: Option<AffExpr>,
}

fn zeros(r: usize, c: usize) -> AffExpr {
    AffExpr::zeros(r, c)
}

fn konst(m: Mat) -> AffExpr {
    AffExpr::constant(m)
}

/// Declares `P`, the gain variables and the closed-loop term.
/// `noisy` keeps the part of `𝓕` in `ker 𝒟_p`, which only matters when
/// the successor states do not annihilate it.
fn build_core(prob: &mut LmiProblem, plant: Plant, gains: Gains, robust: bool, noisy: bool) -> Result<Core> {
    let (n_x, n_u, n_p) = plant.dims();
    let (p_id, p) = prob.sym("P", n_x);
    let pk = p.kron_eye(n_p);
    let (y0, ybar) = match gains {
        Gains::Fixed(k) => {
            if k.n_x() != n_x || k.n_u() != n_u || k.n_p() != n_p {
                return Err(dim("controller and data dimensions differ"));
            }
            (p.mul_left(k.k0())?, pk.mul_left(&k.kbar())?)
        }
        Gains::Free => {
            let y0 = prob.rect("Y0", n_u, n_x).1;
            let ybar = if robust || n_p == 0 { zeros(n_u, n_x * n_p) } else { prob.rect("Ybar", n_u, n_x * n_p).1 };
            (y0, ybar)
        }
    };
    match plant {
        Plant::Data(dm) => {
            let n = dm.columns();
            let c1 = n_x * n_p;
            let c2 = n_x * n_p * n_p;
            let lhs = AffExpr::blocks(&[
                vec![Some(p.clone()), Some(zeros(n_x, c1)), Some(zeros(n_x, c2))],
                vec![Some(zeros(c1, n_x)), Some(pk.clone()), Some(zeros(c1, c2))],
                vec![Some(y0.clone()), Some(ybar.clone()), Some(zeros(n_u, c2))],
                vec![Some(zeros(n_u * n_p, n_x)), Some(y0.kron_eye(n_p)), Some(ybar.kron_eye(n_p))],
            ])?;
            let (calf, gram, f12, f21, f22) = match pinv_right(&dm.dp, RANK_TOL) {
                // full row rank: 𝓕 = 𝒟_p^† lhs + N Z with N spanning ker 𝒟_p,
                // which satisfies the coupling identically
                Ok(dpinv) => {
                    let mut calf = lhs.mul_left(&dpinv)?;
                    let qr = dpinv.clone().qr();
                    let mut gram = vec![lhs.mul_left(&qr.r())?];
                    let nb = null_basis(&dm.dp, &dpinv);
                    // only X₊ N Z and ZᵀZ matter, so Z lives in the row space of X₊ N
                    let nz = if noisy && nb.ncols() > 0 { &nb * row_space(&(&dm.xplus * &nb)) } else { Mat::zeros(n, 0) };
                    let with_null = nz.ncols() > 0;
                    if with_null {
                        let z = prob.rect("Z", nz.ncols(), calf.ncols()).1;
                        calf = calf.add(&z.mul_left(&nz)?)?;
                        gram.push(z);
                    }
                    let gram = AffExpr::vcat(&gram)?;
                    // only X₊F21 enters the conditions, so F21 = X₊^† G
                    let f21 = if n_p == 0 {
                        zeros(0, n_x)
                    } else {
                        match pinv_right(&dm.xplus, RANK_TOL) {
                            Ok(xpinv) => prob.rect("G21", n_x * n_p, n_x).1.mul_left(&kron_eye(n_p, &xpinv))?,
                            Err(Error::RankDeficient { .. }) => prob.rect("F21", n * n_p, n_x).1,
                            Err(e) => return Err(e),
                        }
                    };
                    let f12 = AffExpr::hcat(
                        &(0..n_p)
                            .map(|i| calf.sub_block(0, n_x * (1 + i), n, n_x).sub(&f21.sub_block(i * n, 0, n, n_x)))
                            .collect::<Result<Vec<_>>>()?,
                    )
                    .unwrap_or_else(|_| zeros(n, 0));
                    let f22 = AffExpr::vcat(
                        &(0..n_p)
                            .map(|i| {
                                AffExpr::hcat(
                                    &(0..n_p)
                                        .map(|j| calf.sub_block(0, n_x * (1 + n_p + i * n_p + j), n, n_x))
                                        .collect::<Vec<_>>(),
                                )
                            })
                            .collect::<Result<Vec<_>>>()?,
                    )
                    .unwrap_or_else(|_| zeros(0, 0));
                    if robust && with_null && n_p > 0 {
                        prob.add_equality("robust F22", f22.clone())?;
                    }
                    (calf, gram, f12, f21, f22)
                }
                Err(Error::RankDeficient { .. }) => {
                    let f11 = prob.rect("F11", n, n_x).1;
                    let f12 = prob.rect("F12", n, n_x * n_p).1;
                    let f21 = prob.rect("F21", n * n_p, n_x).1;
                    let f22 = if robust { zeros(n * n_p, n_x * n_p) } else { prob.rect("F22", n * n_p, n_x * n_p).1 };
                    let mut parts = vec![f11];
                    for i in 0..n_p {
                        parts.push(f12.sub_block(0, i * n_x, n, n_x).add(&f21.sub_block(i * n, 0, n, n_x))?);
                    }
                    for i in 0..n_p {
                        for j in 0..n_p {
                            parts.push(f22.sub_block(i * n, j * n_x, n, n_x));
                        }
                    }
                    let calf = AffExpr::hcat(&parts)?;
                    prob.add_equality("coupling", lhs.sub(&calf.mul_left(&dm.dp)?)?)?;
                    (calf.clone(), calf, f12, f21, f22)
                }
                Err(e) => return Err(e),
            };
            let f11 = calf.sub_block(0, 0, n, n_x);
            let fq = if n_p == 0 {
                f11
            } else {
                AffExpr::blocks(&[vec![Some(f11), Some(f12)], vec![Some(f21), Some(f22)]])?
            };
            let xcal = blkdiag(&[dm.xplus.clone(), kron_eye(n_p, &dm.xplus)]);
            let xf = fq.mul_left(&xcal)?;
            Ok(Core { p_id, p, y0, ybar, xf, fq: Some(fq), calf_gram: Some(gram) })
        }
        Plant::Model(sys) => {
            // G11 = A0P + B0Y0, G12_j = A_jP + B0Y_j, G21_i = B_iY0, G22_ij = B_iY_j
            let yj = |j: usize| ybar.sub_block(0, j * n_x, n_u, n_x);
            let mut grid: Vec<Vec<Option<AffExpr>>> = Vec::new();
            let mut row0 = vec![Some(p.mul_left(&sys.a[0])?.add(&y0.mul_left(&sys.b[0])?)?)];
            for j in 0..n_p {
                row0.push(Some(p.mul_left(&sys.a[j + 1])?.add(&yj(j).mul_left(&sys.b[0])?)?));
            }
            grid.push(row0);
            for i in 0..n_p {
                let bi = &sys.b[i + 1];
                let mut row = vec![Some(y0.mul_left(bi)?)];
                for j in 0..n_p {
                    row.push(Some(yj(j).mul_left(bi)?));
                }
                grid.push(row);
            }
            let xf = AffExpr::blocks(&grid)?;
            Ok(Core { p_id, p, y0, ybar, xf, fq: None, calf_gram: None })
        }
    }
}

/// `blkdiag(P, 0_{n_x n_p})`.
fn p0(core: &Core, n_x: usize, n_p: usize) -> Result<AffExpr> {
    AffExpr::blocks(&[
        vec![Some(core.p.clone()), Some(zeros(n_x, n_x * n_p))],
        vec![Some(zeros(n_x * n_p, n_x)), Some(zeros(n_x * n_p, n_x * n_p))],
    ])
}

/// `[M, 0]` padded to `n_x(1+n_p)` columns.
fn pad_cols(e: &AffExpr, total: usize) -> Result<AffExpr> {
    let r = e.nrows();
    if e.ncols() == total {
        return Ok(e.clone());
    }
    AffExpr::hcat(&[e.clone(), zeros(r, total - e.ncols())])
}

fn sym_grid(blocks: Vec<Vec<Option<AffExpr>>>) -> Result<AffExpr> {
    AffExpr::blocks(&blocks)
}

struct Built {
    prob: LmiProblem,
    core: Core,
    multipliers: Vec<Multiplier>,
    gamma_id: Option<(VarId, bool)>,
    gamma_fixed: Option<f64>,
    s_id: Option<VarId>,
    alpha_id: Option<VarId>,
}

fn build(plant: Plant, pset: &ParamBox, req: &SynthesisRequest, gains: Gains) -> Result<Built> {
    req.validate()?;
    let (n_x, n_u, n_p) = plant.dims();
    if pset.dim() != n_p {
        return Err(dim(format!("scheduling box has {} components, plant has {n_p}", pset.dim())));
    }
    let mut prob = LmiProblem::new();
    let robust = req.robust && matches!(gains, Gains::Free);
    let core = build_core(&mut prob, plant, gains, robust, matches!(req.mode, Mode::Noisy))?;
    let s = &req.settings;
    let opts = SprocOptions { margin: s.margin, delta: s.delta };
    let m = n_x * (1 + n_p);
    let p0e = p0(&core, n_x, n_p)?;
    let homogeneous = matches!(req.mode, Mode::Analyze | Mode::Stabilize);
    if homogeneous && req.trace_box.is_none() {
        // these conditions are invariant under scaling; fix the scale
        prob.add_psd("P>=I", core.p.sub(&konst(eye(n_x)))?, 0.0)?;
    } else {
        prob.add_psd("P>0", core.p.clone(), s.margin)?;
    }
    if let Some((lo, hi)) = req.trace_box {
        let tr = core.p.trace()?;
        prob.add_psd("trace>=lo", tr.add_const(&Mat::from_element(1, 1, -lo))?, 0.0)?;
        prob.add_psd("trace<=hi", tr.scale(-1.0).add_const(&Mat::from_element(1, 1, hi))?, 0.0)?;
    }
    let mut multipliers = Vec::new();
    let mut gamma_id = None;
    let mut gamma_fixed = None;
    let mut s_id = None;
    let mut alpha_id = None;
    let xf = core.xf.clone();
    let xft = xf.transpose();
    let weights = req.weights.as_ref();
    let ycal = AffExpr::hcat(&[core.y0.clone(), core.ybar.clone()])?;

    match req.mode {
        Mode::Analyze | Mode::Stabilize => {
            let w = sym_grid(vec![vec![Some(p0e.clone()), Some(xft)], vec![Some(xf), Some(p0e.clone())]])?;
            let lft = LftSpec::lifted_param_major(n_p, &[n_x, n_x], 0);
            multipliers.push(sproc_expand(&mut prob, "lyap", &w, &lft, pset, opts)?);
        }
        Mode::Quadratic => {
            let wt = weights.expect("validated");
            let qp = pad_cols(&core.p.mul_left(&wt.q_half)?, m)?;
            let ry = ycal.mul_left(&wt.r_half)?;
            let w = sym_grid(vec![
                vec![Some(p0e.clone()), Some(xft), Some(qp.transpose()), Some(ry.transpose())],
                vec![Some(xf), Some(p0e.clone()), Some(zeros(m, n_x)), Some(zeros(m, n_u))],
                vec![Some(qp), Some(zeros(n_x, m)), Some(konst(eye(n_x))), Some(zeros(n_x, n_u))],
                vec![Some(ry), Some(zeros(n_u, m)), Some(zeros(n_u, n_x)), Some(konst(eye(n_u)))],
            ])?;
            let lft = LftSpec::lifted_param_major(n_p, &[n_x, n_x], n_x + n_u);
            multipliers.push(sproc_expand(&mut prob, "quad", &w, &lft, pset, opts)?);
            let tr = core.p.trace()?;
            match req.trace_objective {
                TraceObjective::Maximize => prob.maximize(tr)?,
                TraceObjective::Minimize => prob.minimize(tr)?,
            }
        }
        Mode::H2 => {
            let wt = weights.expect("validated");
            let ix0 = blkdiag(&[eye(n_x), Mat::zeros(n_x * n_p, n_x * n_p)]);
            let w = sym_grid(vec![
                vec![Some(p0e.sub(&konst(ix0))?), Some(xf.clone())],
                vec![Some(xft), Some(p0e.clone())],
            ])?;
            let lft = LftSpec::lifted_param_major(n_p, &[n_x, n_x], 0);
            multipliers.push(sproc_expand(&mut prob, "h2", &w, &lft, pset, opts)?);
            let (sid, se) = prob.sym("S", n_u);
            s_id = Some(sid);
            for (k, v) in pset.vertices_capped(crate::linalg::VERTEX_CAP)?.iter().enumerate() {
                let yv = ycal.mul_right(&crate::linalg::lift1(v, n_x))?.mul_left(&wt.r_half)?;
                let blk = sym_grid(vec![vec![Some(se.clone()), Some(yv.clone())], vec![Some(yv.transpose()), Some(core.p.clone())]])?;
                prob.add_psd(&format!("h2.gain{k}"), blk, s.margin)?;
            }
            prob.add_psd("P-I>0", core.p.sub(&konst(eye(n_x)))?, s.margin)?;
            let cost = core.p.mul_left(&wt.q)?.trace()?.add(&se.trace()?)?;
            match req.gamma_mode {
                GammaMode::Fixed(g) => {
                    gamma_fixed = Some(g);
                    let slack = cost.scale(-1.0).add_const(&Mat::from_element(1, 1, g * g))?;
                    prob.add_psd("h2.bound", slack, s.margin)?;
                }
                GammaMode::Minimize => {
                    let (gid, ge) = prob.scalar("g");
                    gamma_id = Some((gid, true));
                    prob.add_psd("h2.bound", ge.sub(&cost)?, s.margin)?;
                    prob.minimize(ge)?;
                }
            }
        }
        Mode::L2 => {
            let wt = weights.expect("validated");
            let qp = pad_cols(&core.p.mul_left(&wt.q_half)?, m)?;
            let ry = ycal.mul_left(&wt.r_half)?;
            let (gi, nz) = (n_x, n_x + n_u);
            let gamma_e = match req.gamma_mode {
                GammaMode::Fixed(g) => {
                    gamma_fixed = Some(g);
                    konst(Mat::from_element(1, 1, g))
                }
                GammaMode::Minimize => {
                    let (gid, ge) = prob.scalar("gamma");
                    gamma_id = Some((gid, false));
                    ge
                }
            };
            let gid_mat = |n: usize| scalar_times_matrix(&gamma_e, &eye(n));
            let iw = pad_cols(&konst(eye(n_x)), m)?;
            let w = sym_grid(vec![
                vec![Some(p0e.clone()), Some(xft), Some(qp.transpose()), Some(ry.transpose()), Some(zeros(m, gi))],
                vec![Some(xf), Some(p0e.clone()), Some(zeros(m, n_x)), Some(zeros(m, n_u)), Some(iw.transpose())],
                vec![Some(qp), Some(zeros(n_x, m)), Some(gid_mat(n_x)?), Some(zeros(n_x, n_u)), Some(zeros(n_x, gi))],
                vec![Some(ry), Some(zeros(n_u, m)), Some(zeros(n_u, n_x)), Some(gid_mat(n_u)?), Some(zeros(n_u, gi))],
                vec![Some(zeros(gi, m)), Some(iw), Some(zeros(gi, n_x)), Some(zeros(gi, n_u)), Some(gid_mat(gi)?)],
            ])?;
            debug_assert_eq!(w.nrows(), 2 * m + nz + gi);
            let lft = LftSpec::lifted_param_major(n_p, &[n_x, n_x], 2 * n_x + n_u);
            multipliers.push(sproc_expand(&mut prob, "l2", &w, &lft, pset, opts)?);
            if gamma_id.is_some() {
                let obj = gamma_e.add(&core.p.trace()?.scale(req.reg_lambda))?;
                prob.minimize(obj)?;
            }
        }
        Mode::Noisy => {
            let Plant::Data(dm) = plant else {
                return Err(Error::Invalid("noisy mode needs measured data".into()));
            };
            let n = dm.columns();
            let (aid, ae) = prob.scalar("alpha");
            alpha_id = Some(aid);
            prob.add_psd("alpha>=0", ae.clone(), 0.0)?;
            let zz = &dm.xplus * dm.xplus.transpose();
            let azz = scalar_times_matrix(&ae, &zz)?;
            let top = p0e.sub(&AffExpr::blocks(&[
                vec![Some(azz), Some(zeros(n_x, n_x * n_p))],
                vec![Some(zeros(n_x * n_p, n_x)), Some(zeros(n_x * n_p, n_x * n_p))],
            ])?)?;
            let wa = sym_grid(vec![vec![Some(top), Some(xf.clone())], vec![Some(xft), Some(p0e.clone())]])?;
            let fq = core.fq.clone().expect("data plant");
            match req.noisy_lft {
                NoisyLft::Compact => {
                    let lft_a = LftSpec::lifted_param_major(n_p, &[n_x, n_x], 0);
                    multipliers.push(sproc_expand(&mut prob, "noisy.a", &wa, &lft_a, pset, opts)?);
                    let calf = core.calf_gram.clone().expect("data plant").mul_right(&monomial_fold(n_p, n_x))?;
                    let (m, c) = calf.shape();
                    let pz = AffExpr::blocks(&[
                        vec![Some(core.p.clone()), Some(zeros(n_x, c - n_x))],
                        vec![Some(zeros(c - n_x, n_x)), Some(zeros(c - n_x, c - n_x))],
                    ])?;
                    let wb = sym_grid(vec![vec![Some(konst(eye(m))), Some(calf.clone())], vec![Some(calf.transpose()), Some(pz)]])?;
                    let lft_b = LftSpec::quadratic_lift(n_p, n_x, m);
                    multipliers.push(sproc_expand(&mut prob, "noisy.b", &wb, &lft_b, pset, opts)?);
                }
                NoisyLft::Full => {
                    let i0 = blkdiag(&[eye(n), Mat::zeros(n * n_p, n * n_p)]);
                    let wb = sym_grid(vec![vec![Some(konst(i0)), Some(fq.clone())], vec![Some(fq.transpose()), Some(p0e.clone())]])?;
                    let w = AffExpr::blkdiag(&[wa, wb])?;
                    let lft = LftSpec::lifted_block_major(n_p, &[n_x, n_x, n, n_x]);
                    multipliers.push(sproc_expand(&mut prob, "noisy", &w, &lft, pset, opts)?);
                }
            }
            prob.maximize(ae)?;
        }
    }
    Ok(Built { prob, core, multipliers, gamma_id, gamma_fixed, s_id, alpha_id })
}

/// `a · M` for a 1×1 expression `a`.
fn scalar_times_matrix(a: &AffExpr, m: &Mat) -> Result<AffExpr> {
    if a.shape() != (1, 1) {
        return Err(dim("scalar expression expected"));
    }
    let mut terms = Vec::new();
    for &(k, _, _, v) in a.terms() {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    terms.push((k, i as u32, j as u32, v * m[(i, j)]));
                }
            }
        }
    }
    let e = AffExpr::from_terms(m.nrows(), m.ncols(), terms);
    e.add_const(&(m * a.constant_part()[(0, 0)]))
}

/// Orthonormal basis of the row space of `m`.
fn row_space(m: &Mat) -> Mat {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > RANK_TOL * top.max(1.0)).collect();
    let mut out = Mat::zeros(m.ncols(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        out.set_column(c, &vt.row(k).transpose());
    }
    out
}

/// Orthonormal basis of `ker m` given a right inverse of `m`.
fn null_basis(m: &Mat, m_pinv: &Mat) -> Mat {
    let n = m.ncols();
    let proj = crate::linalg::symmetrize(&(eye(n) - m_pinv * m));
    let eig = proj.symmetric_eigen();
    let cols: Vec<Mat> = (0..n)
        .filter(|&k| eig.eigenvalues[k] > 0.5)
        .map(|k| Mat::from_column_slice(n, 1, eig.eigenvectors.column(k).as_slice()))
        .collect();
    if cols.is_empty() {
        Mat::zeros(n, 0)
    } else {
        crate::linalg::hcat(&cols)
    }
}

/// Solves and unpacks. Infeasibility and solver breakdown become errors.
fn run(plant: Plant, pset: &ParamBox, req: &SynthesisRequest, gains: Gains) -> Result<(SynthesisResult, LmiSolution)> {
    let built = build(plant, pset, req, gains)?;
    let sol = solve(&built.prob, &req.settings)?;
    match sol.status {
        SolveStatus::Infeasible => return Err(Error::Infeasible),
        SolveStatus::NumericalFailure => {
            return Err(Error::SolverFailure(format!(
                "{} after {} iterations",
                sol.diagnostics.raw_status, sol.diagnostics.iterations
            )))
        }
        _ => {}
    }
    let (n_x, _, n_p) = plant.dims();
    let x = &sol.x;
    let p_mat = crate::linalg::symmetrize(&built.prob.value(built.core.p_id, x));
    let y0 = built.core.y0.eval(x);
    let ybar = built.core.ybar.eval(x);
    let pc = cond(&p_mat);
    if !(min_eig_unchecked(&p_mat) > 0.0) {
        return Err(Error::IllConditionedP { cond: f64::INFINITY });
    }
    let controller = match gains {
        Gains::Fixed(k) => k.clone(),
        Gains::Free => {
            if pc > P_COND_CAP {
                return Err(Error::IllConditionedP { cond: pc });
            }
            let pinv = p_mat.clone().try_inverse().ok_or(Error::IllConditionedP { cond: pc })?;
            let k0 = &y0 * &pinv;
            let kbar = &ybar * kron_eye(n_p, &pinv);
            StateFeedbackController::from_parts(k0, &kbar, n_p)?
        }
    };
    let fq = match (&built.core.fq, plant) {
        (Some(e), Plant::Data(dm)) => Some(FqMatrix::from_assembled(&e.eval(x), dm.columns(), n_x, n_p)?),
        _ => None,
    };
    let gamma = match (built.gamma_id, built.gamma_fixed) {
        (Some((id, squared)), _) => {
            let g = built.prob.value(id, x)[(0, 0)];
            Some(if squared { g.max(0.0).sqrt() } else { g })
        }
        (None, Some(g)) => Some(g),
        _ => None,
    };
    let alpha = built.alpha_id.map(|id| built.prob.value(id, x)[(0, 0)]);
    let eps_opt = alpha.map(eps_from_alpha);
    let certificate = SynthesisCertificate {
        p_mat,
        fq,
        y0,
        ybar,
        s_mat: built.s_id.map(|id| built.prob.value(id, x)),
        gamma,
        alpha,
        eps_opt,
        multipliers: built.multipliers,
        residuals: sol.residuals.clone(),
    };
    let guaranteed = match (req.eps_claim, eps_opt) {
        (Some(c), Some(e)) => Some(e > c),
        _ => None,
    };
    Ok((
        SynthesisResult {
            mode: req.mode,
            status: sol.status,
            controller,
            certificate,
            self_check: true,
            guaranteed,
            diagnostics: sol.diagnostics.clone(),
            settings: req.settings.clone(),
        },
        sol,
    ))
}

fn require_pe(dm: &DataMatrices) -> Result<()> {
    let pe = check_pe(dm, RANK_TOL);
    if !pe.is_pe {
        return Err(Error::RankDeficient { rank: pe.rank, required: pe.required });
    }
    Ok(())
}

/// Quadratic-stability test of a given controller from data.
pub fn analyze_stability(
    dm: &DataMatrices,
    ctrl: &StateFeedbackController,
    pset: &ParamBox,
    settings: &SolverSettings,
) -> Result<SynthesisResult> {
    require_pe(dm)?;
    let mut req = SynthesisRequest::new(Mode::Analyze);
    req.settings = settings.clone();
    Ok(run(Plant::Data(dm), pset, &req, Gains::Fixed(ctrl))?.0)
}

/// Data-driven synthesis for every mode except `noisy`; runs the analysis
/// self-check on the returned controller.
pub fn synthesize(dm: &DataMatrices, pset: &ParamBox, req: &SynthesisRequest) -> Result<SynthesisResult> {
    require_pe(dm)?;
    match req.mode {
        Mode::Analyze => return Err(Error::Invalid("analysis needs a controller; use analyze_stability".into())),
        Mode::Noisy => return Err(Error::Invalid("noisy mode takes noisy data; use synth_noisy_stabilizing".into())),
        _ => {}
    }
    let (mut res, _) = run(Plant::Data(dm), pset, req, Gains::Free)?;
    res.self_check = match analyze_stability(dm, &res.controller, pset, &req.settings) {
        Ok(r) => r.status.is_success(),
        Err(Error::Infeasible) | Err(Error::SolverFailure(_)) => false,
        Err(e) => return Err(e),
    };
    if !res.self_check {
        log::warn!("self-check failed for {} synthesis", req.mode.as_str());
        res.status = SolveStatus::NumericalFailure;
    }
    Ok(res)
}

pub fn synth_stabilizing(dm: &DataMatrices, pset: &ParamBox, req: &SynthesisRequest) -> Result<SynthesisResult> {
    synthesize(dm, pset, &SynthesisRequest { mode: Mode::Stabilize, ..req.clone() })
}

pub fn synth_quadratic(dm: &DataMatrices, pset: &ParamBox, req: &SynthesisRequest) -> Result<SynthesisResult> {
    synthesize(dm, pset, &SynthesisRequest { mode: Mode::Quadratic, ..req.clone() })
}

pub fn synth_h2(dm: &DataMatrices, pset: &ParamBox, req: &SynthesisRequest) -> Result<SynthesisResult> {
    synthesize(dm, pset, &SynthesisRequest { mode: Mode::H2, ..req.clone() })
}

pub fn synth_l2(dm: &DataMatrices, pset: &ParamBox, req: &SynthesisRequest) -> Result<SynthesisResult> {
    synthesize(dm, pset, &SynthesisRequest { mode: Mode::L2, ..req.clone() })
}

/// Stabilizing synthesis from noise-corrupted state measurements. Maximizes
/// `α`; the self-check re-evaluates every constraint at the solution.
pub fn synth_noisy_stabilizing(nm: &NoisyMatrices, pset: &ParamBox, req: &SynthesisRequest) -> Result<SynthesisResult> {
    check_noisy_ranks(nm, RANK_TOL)?;
    let req = SynthesisRequest { mode: Mode::Noisy, ..req.clone() };
    let (mut res, sol) = run(Plant::Data(&nm.data), pset, &req, Gains::Free)?;
    let alpha_ok = res.certificate.alpha.is_some_and(|a| a > 0.0);
    res.self_check = sol.residuals.all_ok() && alpha_ok;
    if !res.self_check {
        res.status = SolveStatus::NumericalFailure;
    }
    Ok(res)
}

/// Model-based counterparts used as oracles.
pub(crate) fn model_run(
    sys: &LpvSs,
    pset: &ParamBox,
    req: &SynthesisRequest,
    ctrl: Option<&StateFeedbackController>,
) -> Result<SynthesisResult> {
    let gains = ctrl.map_or(Gains::Free, Gains::Fixed);
    Ok(run(Plant::Model(sys), pset, req, gains)?.0)
}

impl SynthesisResult {
    /// Report document consumed by the CLI and the benchmark runner.
    pub fn report(&self) -> serde_json::Value {
        let c = &self.certificate;
        serde_json::json!({
            "mode": self.mode.as_str(),
            "status": self.status,
            "gamma": c.gamma,
            "alpha": c.alpha,
            "eps_opt": c.eps_opt,
            "guaranteed": self.guaranteed,
            "K": self.controller.k.iter().map(mat_to_rows).collect::<Vec<_>>(),
            "P": mat_to_rows(&c.p_mat),
            "S": c.s_mat.as_ref().map(mat_to_rows),
            "residuals": {
                "all_ok": c.residuals.all_ok(),
                "worst_lmi_slack": finite_or_null(c.residuals.worst_lmi()),
                "worst_equality": c.residuals.worst_equality(),
                "n_lmis": c.residuals.lmis.len(),
                "n_equalities": c.residuals.equalities.len(),
            },
            "multipliers": c.multipliers,
            "self_check": self.self_check,
            "solver": {
                "settings": self.settings,
                "diagnostics": self.diagnostics,
            },
        })
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}
