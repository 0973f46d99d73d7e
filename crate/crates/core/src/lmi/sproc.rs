//! Full-block S-procedure over LFT-structured scheduling dependence.
//!
//! For `L(p) = Δ(p) ⋆ [[L11, L12], [L21, L22]]` the inequality
//! `L(p)ᵀ W L(p) ≻ 0` on the box is implied by a multiplier `Ξ` with
//!
//! * `[L21 L22]ᵀ W [L21 L22] − [[L11, L12],[I, 0]]ᵀ Ξ [[L11, L12],[I, 0]] ≻ 0`,
//! * `[I; Δ(v)]ᵀ Ξ [I; Δ(v)] ⪰ 0` at every vertex `v`,
//! * `Ξ22 ≺ 0`, which makes the second condition multi-concave in `p`.

use serde::Serialize;

use super::expr::AffExpr;
use super::problem::{LmiProblem, VarId};
use crate::error::{dim, Error, Result};
use crate::linalg::{cond, eye, hcat, lft_star, vcat, Mat, ParamBox, LFT_COND_CAP, VERTEX_CAP};

/// One diagonal block `p_param · I_size` of `Δ(p)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DeltaBlock {
    pub param: usize,
    pub size: usize,
}

#[derive(Clone, Debug)]
pub struct LftSpec {
    pub l11: Mat,
    pub l12: Mat,
    pub l21: Mat,
    pub l22: Mat,
    pub delta_struct: Vec<DeltaBlock>,
}

impl LftSpec {
    pub fn new(l11: Mat, l12: Mat, l21: Mat, l22: Mat, delta_struct: Vec<DeltaBlock>) -> Result<Self> {
        let nd: usize = delta_struct.iter().map(|b| b.size).sum();
        let nxi = l12.ncols();
        let nout = l21.nrows();
        if l11.shape() != (nd, nd) || l12.shape() != (nd, nxi) || l21.shape() != (nout, nd) || l22.shape() != (nout, nxi)
        {
            return Err(dim(format!(
                "LFT blocks {:?} {:?} {:?} {:?} with |Δ| = {nd}",
                l11.shape(),
                l12.shape(),
                l21.shape(),
                l22.shape()
            )));
        }
        Ok(LftSpec { l11, l12, l21, l22, delta_struct })
    }

    /// Scheduling-independent `L = l22`.
    pub fn constant(l22: Mat) -> Self {
        let (r, c) = l22.shape();
        LftSpec { l11: Mat::zeros(0, 0), l12: Mat::zeros(0, c), l21: Mat::zeros(r, 0), l22, delta_struct: Vec::new() }
    }

    pub fn n_delta(&self) -> usize {
        self.delta_struct.iter().map(|b| b.size).sum()
    }
    pub fn n_xi(&self) -> usize {
        self.l12.ncols()
    }
    pub fn n_out(&self) -> usize {
        self.l21.nrows()
    }
    pub fn n_params(&self) -> usize {
        self.delta_struct.iter().map(|b| b.param + 1).max().unwrap_or(0)
    }

    pub fn delta(&self, p: &[f64]) -> Mat {
        let nd = self.n_delta();
        let mut d = Mat::zeros(nd, nd);
        let mut o = 0;
        for b in &self.delta_struct {
            for k in 0..b.size {
                d[(o + k, o + k)] = p[b.param];
            }
            o += b.size;
        }
        d
    }

    pub fn eval(&self, p: &[f64]) -> Result<Mat> {
        if p.len() < self.n_params() {
            return Err(dim("too few scheduling values for LFT"));
        }
        lft_star(&self.delta(p), &self.l11, &self.l12, &self.l21, &self.l22)
    }

    /// `I − L11 Δ(v)` must be invertible at every vertex.
    pub fn check_well_posed(&self, pset: &ParamBox) -> Result<()> {
        if self.n_params() > pset.dim() {
            return Err(dim("LFT uses more parameters than the box provides"));
        }
        if self.l11.iter().all(|v| *v == 0.0) {
            return Ok(());
        }
        for v in pset.vertices_capped(VERTEX_CAP)? {
            let m = eye(self.n_delta()) - &self.l11 * self.delta(&v);
            let c = cond(&m);
            if !(c <= LFT_COND_CAP) {
                return Err(Error::IllPosedLft(format!("cond(I − L11Δ) = {c:.3e} at vertex {v:?}")));
            }
        }
        Ok(())
    }

    /// `blkdiag([I; p⊗I_n1], …, [I; p⊗I_nk], I_tail)` with the scheduling
    /// channels grouped per parameter: `Δ = diag(p) ⊗ I_{n1+…+nk}`.
    pub fn lifted_param_major(n_p: usize, lifts: &[usize], tail: usize) -> Self {
        let s: usize = lifts.iter().sum();
        let nd = n_p * s;
        let nxi = s + tail;
        let nout: usize = lifts.iter().map(|n| n * (1 + n_p)).sum::<usize>() + tail;
        let l11 = Mat::zeros(nd, nd);
        let mut l12 = Mat::zeros(nd, nxi);
        for i in 0..n_p {
            l12.view_mut((i * s, 0), (s, s)).fill_with_identity();
        }
        let mut l21 = Mat::zeros(nout, nd);
        let mut l22 = Mat::zeros(nout, nxi);
        let (mut row, mut off) = (0, 0);
        for &n in lifts {
            l22.view_mut((row, off), (n, n)).fill_with_identity();
            row += n;
            for i in 0..n_p {
                l21.view_mut((row, i * s + off), (n, n)).fill_with_identity();
                row += n;
            }
            off += n;
        }
        l22.view_mut((row, s), (tail, tail)).fill_with_identity();
        let delta_struct = (0..n_p).map(|param| DeltaBlock { param, size: s }).collect();
        LftSpec { l11, l12, l21, l22, delta_struct }
    }

    /// `blkdiag([I; p⊗I_n1], …, [I; p⊗I_nk])` with the channels grouped per
    /// block: `Δ = blkdiag(diag(p)⊗I_n1, …, diag(p)⊗I_nk)`.
    pub fn lifted_block_major(n_p: usize, lifts: &[usize]) -> Self {
        let nd: usize = lifts.iter().map(|n| n * n_p).sum();
        let nxi: usize = lifts.iter().sum();
        let nout = nxi + nd;
        let l11 = Mat::zeros(nd, nd);
        let mut l12 = Mat::zeros(nd, nxi);
        let mut l21 = Mat::zeros(nout, nd);
        let mut l22 = Mat::zeros(nout, nxi);
        let mut delta_struct = Vec::new();
        let (mut row, mut ch, mut off) = (0, 0, 0);
        for &n in lifts {
            l22.view_mut((row, off), (n, n)).fill_with_identity();
            row += n;
            for param in 0..n_p {
                l12.view_mut((ch, off), (n, n)).fill_with_identity();
                l21.view_mut((row, ch), (n, n)).fill_with_identity();
                delta_struct.push(DeltaBlock { param, size: n });
                row += n;
                ch += n;
            }
            off += n;
        }
        LftSpec { l11, l12, l21, l22, delta_struct }
    }

    /// `blkdiag(I_fixed, [I; p⊗I_n; m(p)⊗I_n])` over the distinct
    /// monomials `p_i p_j`, `i ≤ j`. The first layer gives `p_j x`; the
    /// second multiplies `p_j x` for `j ≥ i` by `p_i`.
    pub fn quadratic_lift(n_p: usize, n: usize, fixed: usize) -> Self {
        let d1 = n_p * n;
        let d2 = n_p * (n_p + 1) / 2 * n;
        let nd = d1 + d2;
        let nxi = fixed + n;
        let nout = fixed + n + d1 + d2;
        let mut l11 = Mat::zeros(nd, nd);
        let mut row = d1;
        for i in 0..n_p {
            for j in i..n_p {
                l11.view_mut((row, j * n), (n, n)).fill_with_identity();
                row += n;
            }
        }
        let mut l12 = Mat::zeros(nd, nxi);
        l12.view_mut((0, fixed), (d1, n)).copy_from(&crate::linalg::kron(&crate::linalg::ones(n_p), &eye(n)));
        let mut l21 = Mat::zeros(nout, nd);
        l21.view_mut((fixed + n, 0), (nd, nd)).fill_with_identity();
        let mut l22 = Mat::zeros(nout, nxi);
        l22.view_mut((0, 0), (fixed + n, fixed + n)).fill_with_identity();
        let mut delta_struct: Vec<DeltaBlock> = (0..n_p).map(|param| DeltaBlock { param, size: n }).collect();
        delta_struct.extend((0..n_p).map(|param| DeltaBlock { param, size: (n_p - param) * n }));
        LftSpec { l11, l12, l21, l22, delta_struct }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Multiplier {
    pub name: String,
    #[serde(skip)]
    pub xi: Option<VarId>,
    pub n_delta: usize,
    pub n_vertices: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SprocOptions {
    pub margin: f64,
    pub delta: f64,
}

/// Adds the multiplier LMI, one vertex LMI per vertex and the `Ξ22` bound.
pub fn sproc_expand(
    problem: &mut LmiProblem,
    name: &str,
    w: &AffExpr,
    lft: &LftSpec,
    pset: &ParamBox,
    opts: SprocOptions,
) -> Result<Multiplier> {
    if w.shape() != (lft.n_out(), lft.n_out()) {
        return Err(dim(format!("W is {:?}, LFT output is {}", w.shape(), lft.n_out())));
    }
    lft.check_well_posed(pset)?;
    let nd = lft.n_delta();
    if nd == 0 {
        problem.add_psd(&format!("{name}.outer"), w.congruence(&lft.l22)?, opts.margin)?;
        return Ok(Multiplier { name: name.to_string(), xi: None, n_delta: 0, n_vertices: 1 });
    }
    let vertices = pset.vertices_capped(VERTEX_CAP)?;
    let nxi = lft.n_xi();
    let (xi_id, xi) = problem.sym(&format!("{name}.xi"), 2 * nd);

    let n_mat = hcat(&[lft.l21.clone(), lft.l22.clone()]);
    let m_mat = vcat(&[
        hcat(&[lft.l11.clone(), lft.l12.clone()]),
        hcat(&[eye(nd), Mat::zeros(nd, nxi)]),
    ]);
    let outer = w.congruence(&n_mat)?.sub(&xi.congruence(&m_mat)?)?;
    problem.add_psd(&format!("{name}.outer"), outer, opts.margin)?;

    let vertex_lmis: Vec<Result<AffExpr>> = crate::par::map(&vertices, |v| {
        let t = vcat(&[eye(nd), lft.delta(v)]);
        xi.congruence(&t)
    });
    for (k, e) in vertex_lmis.into_iter().enumerate() {
        problem.add_psd(&format!("{name}.vertex{k}"), e?, 0.0)?;
    }
    let xi22 = xi.sub_block(nd, nd, nd, nd);
    problem.add_nsd(&format!("{name}.xi22"), xi22, opts.delta)?;
    Ok(Multiplier { name: name.to_string(), xi: Some(xi_id), n_delta: nd, n_vertices: vertices.len() })
}

/// Evaluates `L(p)ᵀ W L(p)` on a tensor grid and returns the smallest
/// eigenvalue found; used for validation only.
pub fn grid_min_eig(w: &Mat, lft: &LftSpec, pset: &ParamBox, per_axis: usize) -> Result<f64> {
    let pts = pset.grid(per_axis);
    let vals: Vec<Result<f64>> = crate::par::map(&pts, |p| {
        let l = lft.eval(p)?;
        Ok(crate::linalg::min_eig_unchecked(&crate::linalg::symmetrize(&(l.transpose() * w * &l))))
    });
    vals.into_iter().try_fold(f64::INFINITY, |a, v| Ok(a.min(v?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{blkdiag, lift1, lift2, lift2_sym, monomial_fold};
    use crate::lmi::{solve, SolveStatus, SolverSettings};

    #[test]
    fn lift_builders_match_direct_forms() {
        let p = [0.3, -0.8];
        let l = LftSpec::lifted_param_major(2, &[2, 1], 3).eval(&p).unwrap();
        assert!((l - blkdiag(&[lift1(&p, 2), lift1(&p, 1), eye(3)])).amax() < 1e-14);
        let l = LftSpec::lifted_block_major(2, &[1, 2]).eval(&p).unwrap();
        assert!((l - blkdiag(&[lift1(&p, 1), lift1(&p, 2)])).amax() < 1e-14);
        let l = LftSpec::quadratic_lift(2, 2, 3).eval(&p).unwrap();
        assert!((&l - blkdiag(&[eye(3), lift2_sym(&p, 2)])).amax() < 1e-14);
        let l = LftSpec::quadratic_lift(3, 1, 0).eval(&[0.3, -0.8, 0.5]).unwrap();
        assert!((&l - lift2_sym(&[0.3, -0.8, 0.5], 1)).amax() < 1e-14);
        let t = monomial_fold(3, 2);
        let q = [0.3, -0.8, 0.5];
        assert!((t * lift2_sym(&q, 2) - lift2(&q, 2)).amax() < 1e-14);
    }

    #[test]
    fn constant_lft_feasible() {
        let mut prob = LmiProblem::new();
        let (_, pe) = prob.sym("P", 2);
        let lft = LftSpec::new(
            Mat::zeros(1, 1),
            Mat::zeros(1, 2),
            Mat::zeros(2, 1),
            eye(2),
            vec![DeltaBlock { param: 0, size: 1 }],
        )
        .unwrap();
        let pset = ParamBox::symmetric(1, 1.0);
        let mult = sproc_expand(&mut prob, "s", &pe, &lft, &pset, SprocOptions { margin: 1e-7, delta: 1e-7 }).unwrap();
        assert_eq!(mult.n_vertices, 2);
        let s = solve(&prob, &SolverSettings::default()).unwrap();
        assert!(s.status.is_success());
        let xi = s.get("s.xi").unwrap();
        assert!(xi[(1, 1)] <= -1e-7 * 0.99);
    }

    /// `[1 p; p 1] ≻ 0` written as `[1; p]ᵀ W [1; p]`-type forms: W(p) for
    /// `x ↦ xᵀ[[1,p],[p,1]]x` equals `Lᵀ W̄ L` with `L = [I; p I]`.
    #[test]
    fn scalar_toy_matches_grid() {
        for (r, expect) in [(0.5, true), (0.99, true), (1.2, false)] {
            let wbar = Mat::from_row_slice(4, 4, &[
                1.0, 0.0, 0.0, 0.5, //
                0.0, 1.0, 0.5, 0.0, //
                0.0, 0.5, 0.0, 0.0, //
                0.5, 0.0, 0.0, 0.0,
            ]);
            let lft = LftSpec::lifted_param_major(1, &[2], 0);
            let pset = ParamBox::symmetric(1, r);
            let grid_ok = grid_min_eig(&wbar, &lft, &pset, 101).unwrap() > 0.0;
            assert_eq!(grid_ok, expect);
            let mut prob = LmiProblem::new();
            let w = AffExpr::constant(wbar);
            sproc_expand(&mut prob, "s", &w, &lft, &pset, SprocOptions { margin: 1e-7, delta: 1e-7 }).unwrap();
            let s = solve(&prob, &SolverSettings::default()).unwrap();
            assert_eq!(s.status == SolveStatus::Feasible, expect, "r = {r}");
        }
    }

    #[test]
    fn vertex_cap() {
        let mut prob = LmiProblem::new();
        let lft = LftSpec::lifted_param_major(13, &[1], 0);
        let w = AffExpr::constant(eye(lft.n_out()));
        let pset = ParamBox::symmetric(13, 1.0);
        let e = sproc_expand(&mut prob, "s", &w, &lft, &pset, SprocOptions { margin: 0.0, delta: 0.0 });
        assert!(matches!(e, Err(Error::TooManyVertices { .. })));
    }
}
