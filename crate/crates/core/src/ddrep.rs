//! Data-based open- and closed-loop representations and the `F_Q` block
//! structure used by the synthesis conditions.

use crate::data::DataMatrices;
use crate::error::{dim, Result};
use crate::linalg::{blocks, eye, kron_eye, lift1, lift2, pinv_right, Mat, Vector};
use crate::system::StateFeedbackController;

/// `x+ = X_+ D_p^† [x; p⊗x; u; p⊗u]`.
#[derive(Clone, Debug)]
pub struct OpenLoopRep {
    pub xplus: Mat,
    pub dp_pinv: Mat,
    pub n_x: usize,
    pub n_u: usize,
    pub n_p: usize,
    pub n_cols: usize,
}

pub fn open_loop_rep(dm: &DataMatrices, tol: f64) -> Result<OpenLoopRep> {
    let dp_pinv = pinv_right(&dm.dp, tol)?;
    Ok(OpenLoopRep {
        xplus: dm.xplus.clone(),
        dp_pinv,
        n_x: dm.n_x,
        n_u: dm.n_u,
        n_p: dm.n_p,
        n_cols: dm.columns(),
    })
}

impl OpenLoopRep {
    /// The identified `[A_0 … A_np B_0 … B_np]`.
    pub fn stacked(&self) -> Mat {
        &self.xplus * &self.dp_pinv
    }

    /// Splits the identified stack into `(A_i, B_i)` lists.
    pub fn matrices(&self) -> (Vec<Mat>, Vec<Mat>) {
        let s = self.stacked();
        let (n_x, n_u) = (self.n_x, self.n_u);
        let a = (0..=self.n_p).map(|i| s.columns(i * n_x, n_x).into_owned()).collect();
        let off = (1 + self.n_p) * n_x;
        let b = (0..=self.n_p).map(|i| s.columns(off + i * n_u, n_u).into_owned()).collect();
        (a, b)
    }

    pub fn predict(&self, x: &Vector, p: &[f64], u: &Vector) -> Result<Vector> {
        if x.len() != self.n_x || u.len() != self.n_u || p.len() != self.n_p {
            return Err(dim("predict argument sizes"));
        }
        let col = data_column(x, p, u);
        Ok(self.stacked() * col)
    }
}

/// `[x; p⊗x; u; p⊗u]`.
pub fn data_column(x: &Vector, p: &[f64], u: &Vector) -> Vector {
    let mut v: Vec<f64> = x.iter().copied().collect();
    for &pi in p {
        v.extend(x.iter().map(|xi| pi * xi));
    }
    v.extend(u.iter().copied());
    for &pi in p {
        v.extend(u.iter().map(|ui| pi * ui));
    }
    Vector::from_vec(v)
}

/// Closed-loop selector
/// `[[I,0,0],[0,I⊗I,0],[K_0,K̄,0],[0,I⊗K_0,I⊗K̄]]`.
pub fn mcl_matrix(ctrl: &StateFeedbackController, n_x: usize, n_u: usize, n_p: usize) -> Result<Mat> {
    if ctrl.n_x() != n_x || ctrl.n_u() != n_u || ctrl.n_p() != n_p {
        return Err(dim("controller dimensions"));
    }
    let k0 = ctrl.k0().clone();
    let kbar = ctrl.kbar();
    let c = [n_x, n_x * n_p, n_x * n_p * n_p];
    let r = [n_x, n_x * n_p, n_u, n_u * n_p];
    let mut m = Mat::zeros(r.iter().sum(), c.iter().sum());
    m.view_mut((0, 0), (n_x, n_x)).copy_from(&eye(n_x));
    m.view_mut((n_x, n_x), (c[1], c[1])).copy_from(&eye(c[1]));
    let r2 = r[0] + r[1];
    m.view_mut((r2, 0), (n_u, n_x)).copy_from(&k0);
    m.view_mut((r2, n_x), (n_u, c[1])).copy_from(&kbar);
    let r3 = r2 + n_u;
    m.view_mut((r3, n_x), (r[3], c[1])).copy_from(&kron_eye(n_p, &k0));
    m.view_mut((r3, n_x + c[1]), (r[3], c[2])).copy_from(&kron_eye(n_p, &kbar));
    Ok(m)
}

/// Minimum-norm `V` with `D_p V = M_CL`.
pub fn solve_v(dm: &DataMatrices, ctrl: &StateFeedbackController, tol: f64) -> Result<Mat> {
    let m = mcl_matrix(ctrl, dm.n_x, dm.n_u, dm.n_p)?;
    Ok(pinv_right(&dm.dp, tol)? * m)
}

/// `K_0 = U V_0`, `K̄ = U V̄`.
pub fn recover_controller(u_mat: &Mat, v: &Mat, n_x: usize, n_p: usize) -> Result<StateFeedbackController> {
    if v.ncols() != n_x * (1 + n_p + n_p * n_p) || u_mat.ncols() != v.nrows() {
        return Err(dim("V partition"));
    }
    let k0 = u_mat * v.columns(0, n_x);
    let kbar = u_mat * v.columns(n_x, n_x * n_p);
    StateFeedbackController::from_parts(k0, &kbar, n_p)
}

/// `X_+ V [I; p⊗I; p⊗p⊗I]`.
pub fn closed_loop_from_v(xplus: &Mat, v: &Mat, p: &[f64], n_x: usize) -> Mat {
    xplus * v * lift2(p, n_x)
}

/// Blocks of the quadratic-form matrix `F_Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct FqMatrix {
    pub f11: Mat,
    pub f12: Mat,
    pub f21: Mat,
    pub f22: Mat,
}

impl FqMatrix {
    pub fn zeros(n_cols: usize, n_x: usize, n_p: usize) -> Self {
        FqMatrix {
            f11: Mat::zeros(n_cols, n_x),
            f12: Mat::zeros(n_cols, n_x * n_p),
            f21: Mat::zeros(n_cols * n_p, n_x),
            f22: Mat::zeros(n_cols * n_p, n_x * n_p),
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let n = self.f11.nrows();
        let n_x = self.f11.ncols();
        let n_p = if n_x == 0 { 0 } else { self.f12.ncols() / n_x };
        (n, n_x, n_p)
    }

    pub fn assemble(&self) -> Mat {
        blocks(&[
            vec![Some(self.f11.clone()), Some(self.f12.clone())],
            vec![Some(self.f21.clone()), Some(self.f22.clone())],
        ])
        .expect("F_Q blocks are consistent")
    }

    pub fn from_assembled(f: &Mat, n_cols: usize, n_x: usize, n_p: usize) -> Result<Self> {
        if f.shape() != (n_cols * (1 + n_p), n_x * (1 + n_p)) {
            return Err(dim("F_Q shape"));
        }
        Ok(FqMatrix {
            f11: f.view((0, 0), (n_cols, n_x)).into_owned(),
            f12: f.view((0, n_x), (n_cols, n_x * n_p)).into_owned(),
            f21: f.view((n_cols, 0), (n_cols * n_p, n_x)).into_owned(),
            f22: f.view((n_cols, n_x), (n_cols * n_p, n_x * n_p)).into_owned(),
        })
    }

    /// `F(p) = [I; p⊗I]ᵀ F_Q [I; p⊗I]`.
    pub fn eval(&self, p: &[f64]) -> Result<Mat> {
        let (n, n_x, n_p) = self.dims();
        if p.len() != n_p {
            return Err(dim("p length for F_Q"));
        }
        let mut f = self.f11.clone();
        for i in 0..n_p {
            f += self.f12.columns(i * n_x, n_x) * p[i];
            f += self.f21.rows(i * n, n) * p[i];
            for j in 0..n_p {
                f += self.f22.view((i * n, j * n_x), (n, n_x)) * (p[i] * p[j]);
            }
        }
        Ok(f)
    }

    /// The reshuffled `[F_0, F̄, F̿]` with `F(p) = 𝓕 [I; p⊗I; p⊗p⊗I]`.
    pub fn to_calf(&self) -> Mat {
        let (n, n_x, n_p) = self.dims();
        let mut out = Mat::zeros(n, n_x * (1 + n_p + n_p * n_p));
        out.columns_mut(0, n_x).copy_from(&self.f11);
        for i in 0..n_p {
            let blk = self.f12.columns(i * n_x, n_x) + self.f21.rows(i * n, n);
            out.columns_mut(n_x + i * n_x, n_x).copy_from(&blk);
            for j in 0..n_p {
                let col = n_x * (1 + n_p) + (i * n_p + j) * n_x;
                out.columns_mut(col, n_x).copy_from(&self.f22.view((i * n, j * n_x), (n, n_x)));
            }
        }
        out
    }
}

/// `F(p)` by the explicit quadratic form, used as an independent check.
pub fn fq_eval_dense(fq: &FqMatrix, p: &[f64]) -> Mat {
    let (n, n_x, _) = fq.dims();
    lift1(p, n).transpose() * fq.assemble() * lift1(p, n_x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_mcl() {
        let ctrl = StateFeedbackController::new(vec![Mat::from_element(1, 1, 2.0), Mat::from_element(1, 1, 3.0)]).unwrap();
        let m = mcl_matrix(&ctrl, 1, 1, 1).unwrap();
        let want = Mat::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 2.0, 3.0, 0.0, 0.0, 2.0, 3.0]);
        assert_eq!(m, want);
    }

    #[test]
    fn zero_controller_pattern() {
        let m = mcl_matrix(&StateFeedbackController::zero(1, 4, 2), 4, 1, 2).unwrap();
        assert_eq!(m.shape(), (15, 28));
        assert!(m.rows(12, 3).iter().all(|v| *v == 0.0));
        assert_eq!(m.view((0, 0), (12, 12)), eye(12));
    }

    #[test]
    fn scalar_calf() {
        let fq = FqMatrix {
            f11: Mat::from_element(1, 1, 1.0),
            f12: Mat::from_element(1, 1, 2.0),
            f21: Mat::from_element(1, 1, 3.0),
            f22: Mat::from_element(1, 1, 4.0),
        };
        assert_eq!(fq.to_calf(), Mat::from_row_slice(1, 3, &[1.0, 5.0, 4.0]));
        let p = [0.7];
        assert!((fq.eval(&p).unwrap()[(0, 0)] - (1.0 + 5.0 * 0.7 + 4.0 * 0.49)).abs() < 1e-15);
    }

    #[test]
    fn recover_zero() {
        let v = Mat::zeros(6, 2 * 7);
        let c = recover_controller(&Mat::from_element(1, 6, 1.0), &v, 2, 2).unwrap();
        assert!(c.k.iter().all(|k| k.iter().all(|x| *x == 0.0)));
    }
}
