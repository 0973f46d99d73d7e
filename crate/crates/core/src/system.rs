//! Affine LPV state-space plants and state-feedback controllers.

use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};
use crate::linalg::{hcat, mat_from_rows, mat_to_rows, sqrtm_psd, Mat, ParamBox, Vector};

/// States beyond this norm abort a simulation.
pub const OVERFLOW_GUARD: f64 = 1e12;
const BOX_TOL: f64 = 1e-9;

/// `x+ = A(p)x + B(p)u` with `A(p) = A_0 + Σ p_i A_i`, same for `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct LpvSs {
    pub a: Vec<Mat>,
    pub b: Vec<Mat>,
    pub p_set: ParamBox,
}

fn affine(ms: &[Mat], p: &[f64]) -> Mat {
    let mut out = ms[0].clone();
    for (m, &pi) in ms[1..].iter().zip(p) {
        if pi != 0.0 {
            out += m * pi;
        }
    }
    out
}

fn check_uniform(ms: &[Mat], what: &str) -> Result<(usize, usize)> {
    let s = ms.first().ok_or_else(|| dim(format!("{what}: empty list")))?.shape();
    if ms.iter().any(|m| m.shape() != s) {
        return Err(dim(format!("{what}: non-uniform shapes")));
    }
    Ok(s)
}

impl LpvSs {
    pub fn new(a: Vec<Mat>, b: Vec<Mat>, p_set: ParamBox) -> Result<Self> {
        let (r, c) = check_uniform(&a, "A")?;
        let (rb, _) = check_uniform(&b, "B")?;
        if r != c || rb != r {
            return Err(dim("A must be square and share rows with B"));
        }
        p_set.validate()?;
        if a.len() != b.len() || a.len() != p_set.dim() + 1 {
            return Err(dim("need n_p + 1 matrices in A and B"));
        }
        Ok(LpvSs { a, b, p_set })
    }

    pub fn n_x(&self) -> usize {
        self.a[0].nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b[0].ncols()
    }
    pub fn n_p(&self) -> usize {
        self.a.len() - 1
    }

    fn check_p(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_p() {
            return Err(dim(format!("p has length {}, expected {}", p.len(), self.n_p())));
        }
        if !self.p_set.contains(p, BOX_TOL) {
            log::warn!("scheduling point {p:?} lies outside the scheduling set");
        }
        Ok(())
    }

    /// Whether `p` lies in the scheduling set (tolerance 1e-9).
    pub fn in_set(&self, p: &[f64]) -> bool {
        self.p_set.contains(p, BOX_TOL)
    }

    pub fn eval_a(&self, p: &[f64]) -> Result<Mat> {
        self.check_p(p)?;
        Ok(affine(&self.a, p))
    }

    pub fn eval_b(&self, p: &[f64]) -> Result<Mat> {
        self.check_p(p)?;
        Ok(affine(&self.b, p))
    }

    /// `[A_0 … A_np  B_0 … B_np]`, the matrix that maps a data column
    /// `[x; p⊗x; u; p⊗u]` to the successor state.
    pub fn stacked(&self) -> Mat {
        let mut all = self.a.clone();
        all.extend(self.b.iter().cloned());
        hcat(&all)
    }

    pub fn step(&self, x: &Vector, u: &Vector, p: &[f64]) -> Result<Vector> {
        Ok(self.eval_a(p)? * x + self.eval_b(p)? * u)
    }

    /// Open-loop run; returns `x_0 … x_N`.
    pub fn simulate(&self, x0: &Vector, u_seq: &[Vector], p_seq: &[Vec<f64>]) -> Result<Vec<Vector>> {
        if u_seq.len() != p_seq.len() {
            return Err(dim("u and p sequences differ in length"));
        }
        if x0.len() != self.n_x() {
            return Err(dim("x0 length"));
        }
        let mut xs = Vec::with_capacity(u_seq.len() + 1);
        xs.push(x0.clone());
        for (k, (u, p)) in u_seq.iter().zip(p_seq).enumerate() {
            if u.len() != self.n_u() {
                return Err(dim(format!("u[{k}] length")));
            }
            let next = self.step(&xs[k], u, p)?;
            guard(&next, k + 1)?;
            xs.push(next);
        }
        Ok(xs)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(PlantDoc {
            n_x: self.n_x(),
            n_u: self.n_u(),
            n_p: self.n_p(),
            a: self.a.iter().map(mat_to_rows).collect(),
            b: self.b.iter().map(mat_to_rows).collect(),
            p_box: self.p_set.clone(),
        })
        .expect("plant serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let doc: PlantDoc = serde_json::from_value(v.clone())?;
        let a = doc.a.iter().map(|m| mat_from_rows(m)).collect::<Result<Vec<_>>>()?;
        let b = doc.b.iter().map(|m| mat_from_rows(m)).collect::<Result<Vec<_>>>()?;
        let sys = LpvSs::new(a, b, doc.p_box)?;
        if sys.n_x() != doc.n_x || sys.n_u() != doc.n_u || sys.n_p() != doc.n_p {
            return Err(dim("declared dimensions disagree with matrices"));
        }
        Ok(sys)
    }
}

pub(crate) fn guard(x: &Vector, step: usize) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) || x.norm() > OVERFLOW_GUARD {
        return Err(Error::NonFiniteState { step });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantDoc {
    n_x: usize,
    n_u: usize,
    n_p: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    b: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "P_box")]
    p_box: ParamBox,
}

/// `K(p) = K_0 + Σ p_i K_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateFeedbackController {
    pub k: Vec<Mat>,
}

impl StateFeedbackController {
    pub fn new(k: Vec<Mat>) -> Result<Self> {
        check_uniform(&k, "K")?;
        Ok(StateFeedbackController { k })
    }

    pub fn zero(n_u: usize, n_x: usize, n_p: usize) -> Self {
        StateFeedbackController { k: vec![Mat::zeros(n_u, n_x); n_p + 1] }
    }

    /// Splits `[K_1 … K_np]` into its blocks.
    pub fn from_parts(k0: Mat, kbar: &Mat, n_p: usize) -> Result<Self> {
        let n_x = k0.ncols();
        if kbar.nrows() != k0.nrows() || kbar.ncols() != n_x * n_p {
            return Err(dim("K̄ must be n_u × n_x·n_p"));
        }
        let mut k = vec![k0];
        for i in 0..n_p {
            k.push(kbar.columns(i * n_x, n_x).into_owned());
        }
        Ok(StateFeedbackController { k })
    }

    pub fn n_u(&self) -> usize {
        self.k[0].nrows()
    }
    pub fn n_x(&self) -> usize {
        self.k[0].ncols()
    }
    pub fn n_p(&self) -> usize {
        self.k.len() - 1
    }

    pub fn k0(&self) -> &Mat {
        &self.k[0]
    }

    /// `[K_1 … K_np]`.
    pub fn kbar(&self) -> Mat {
        if self.n_p() == 0 {
            return Mat::zeros(self.n_u(), 0);
        }
        hcat(&self.k[1..])
    }

    pub fn eval_k(&self, p: &[f64]) -> Result<Mat> {
        if p.len() != self.n_p() {
            return Err(dim("p length for controller"));
        }
        Ok(affine(&self.k, p))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n_x": self.n_x(),
            "n_u": self.n_u(),
            "n_p": self.n_p(),
            "K": self.k.iter().map(mat_to_rows).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let ks = v
            .get("K")
            .ok_or_else(|| Error::Invalid("controller document lacks \"K\"".into()))?;
        let ks: Vec<Vec<Vec<f64>>> = serde_json::from_value(ks.clone())?;
        let k = ks.iter().map(|m| mat_from_rows(m)).collect::<Result<Vec<_>>>()?;
        StateFeedbackController::new(k)
    }
}

fn check_pair(sys: &LpvSs, ctrl: &StateFeedbackController) -> Result<()> {
    if ctrl.n_x() != sys.n_x() || ctrl.n_u() != sys.n_u() || ctrl.n_p() != sys.n_p() {
        return Err(dim("controller and plant dimensions differ"));
    }
    Ok(())
}

/// `A(p) + B(p)K(p)`.
pub fn closed_loop_a(sys: &LpvSs, ctrl: &StateFeedbackController, p: &[f64]) -> Result<Mat> {
    check_pair(sys, ctrl)?;
    Ok(sys.eval_a(p)? + sys.eval_b(p)? * ctrl.eval_k(p)?)
}

/// Quadratic cost weights with cached square roots.
#[derive(Clone, Debug)]
pub struct PerfWeights {
    pub q: Mat,
    pub r: Mat,
    pub q_half: Mat,
    pub r_half: Mat,
}

impl PerfWeights {
    pub fn new(q: Mat, r: Mat) -> Result<Self> {
        let q_half = sqrtm_psd(&q)?;
        let r_half = sqrtm_psd(&r)?;
        let rmin = crate::linalg::min_eig_unchecked(&r);
        if rmin <= 0.0 {
            return Err(Error::WeightNotPsd { min_eig: rmin });
        }
        Ok(PerfWeights { q, r, q_half, r_half })
    }

    pub fn diag(q: &[f64], r: &[f64]) -> Result<Self> {
        Self::new(
            Mat::from_diagonal(&Vector::from_column_slice(q)),
            Mat::from_diagonal(&Vector::from_column_slice(r)),
        )
    }

    /// `C(p) = [Q^{1/2}; R^{1/2}K(p)]`.
    pub fn output_matrix(&self, ctrl: &StateFeedbackController, p: &[f64]) -> Result<Mat> {
        let k = ctrl.eval_k(p)?;
        if k.nrows() != self.r.nrows() || k.ncols() != self.q.nrows() {
            return Err(dim("weights and controller dimensions differ"));
        }
        Ok(crate::linalg::vcat(&[self.q_half.clone(), &self.r_half * k]))
    }
}

/// Performance output `z = [Q^{1/2}; R^{1/2}K(p)] x`.
pub fn perf_output(w: &PerfWeights, ctrl: &StateFeedbackController, p: &[f64], x: &Vector) -> Result<Vector> {
    Ok(w.output_matrix(ctrl, p)? * x)
}

#[derive(Clone, Debug, Default)]
pub struct ClosedLoopRun {
    /// `x_0 … x_N`
    pub x: Vec<Vector>,
    /// `u_0 … u_{N-1}`
    pub u: Vec<Vector>,
}

/// Forced equilibrium `(x_ss, u_ss)` for the feedback law
/// `u = K(p)(x − x_ss) − u_ss`.
#[derive(Clone, Debug)]
pub struct Setpoint {
    pub x_ss: Vector,
    pub u_ss: Vector,
}

pub fn simulate_closed_loop(
    sys: &LpvSs,
    ctrl: &StateFeedbackController,
    x0: &Vector,
    p_seq: &[Vec<f64>],
    w_seq: Option<&[Vector]>,
    setpoint: Option<&Setpoint>,
) -> Result<ClosedLoopRun> {
    check_pair(sys, ctrl)?;
    if x0.len() != sys.n_x() {
        return Err(dim("x0 length"));
    }
    if let Some(w) = w_seq {
        if w.len() != p_seq.len() {
            return Err(dim("disturbance length differs from scheduling length"));
        }
    }
    let zero_x = Vector::zeros(sys.n_x());
    let zero_u = Vector::zeros(sys.n_u());
    let (x_ss, u_ss) = match setpoint {
        Some(s) => (&s.x_ss, &s.u_ss),
        None => (&zero_x, &zero_u),
    };
    let mut run = ClosedLoopRun { x: vec![x0.clone()], u: Vec::with_capacity(p_seq.len()) };
    for (k, p) in p_seq.iter().enumerate() {
        let x = &run.x[k];
        let u = ctrl.eval_k(p)? * (x - x_ss) - u_ss;
        let mut next = sys.step(x, &u, p)?;
        if let Some(w) = w_seq {
            next += &w[k];
        }
        guard(&next, k + 1)?;
        run.u.push(u);
        run.x.push(next);
    }
    Ok(run)
}
