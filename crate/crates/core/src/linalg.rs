//! Dense structured linear algebra on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative singular value threshold for numerical rank.
pub const RANK_TOL: f64 = 1e-8;
/// Relative asymmetry accepted by the definiteness tests.
pub const SYM_TOL: f64 = 1e-10;
/// Default cap on the number of scheduling dimensions for vertex enumeration.
pub const VERTEX_CAP: usize = 12;
/// Condition number above which `I - l11*delta` counts as singular.
pub const LFT_COND_CAP: f64 = 1e12;

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> Mat {
    Mat::zeros(r, c)
}

/// Column of ones.
pub fn ones(n: usize) -> Mat {
    Mat::from_element(n, 1, 1.0)
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// `I_n ⊗ m`.
pub fn kron_eye(n: usize, m: &Mat) -> Mat {
    let (r, c) = m.shape();
    let mut out = Mat::zeros(n * r, n * c);
    for i in 0..n {
        out.view_mut((i * r, i * c), (r, c)).copy_from(m);
    }
    out
}

/// `p ⊗ I_n` as an `(len(p)·n) × n` matrix.
pub fn p_kron_eye(p: &[f64], n: usize) -> Mat {
    let mut out = Mat::zeros(p.len() * n, n);
    for (i, &pi) in p.iter().enumerate() {
        for j in 0..n {
            out[(i * n + j, j)] = pi;
        }
    }
    out
}

/// `[I_n; p ⊗ I_n]`.
pub fn lift1(p: &[f64], n: usize) -> Mat {
    vcat(&[eye(n), p_kron_eye(p, n)])
}

/// `[I_n; p ⊗ I_n; p ⊗ p ⊗ I_n]`.
pub fn lift2(p: &[f64], n: usize) -> Mat {
    let pp: Vec<f64> = p.iter().flat_map(|a| p.iter().map(move |b| a * b)).collect();
    vcat(&[eye(n), p_kron_eye(p, n), p_kron_eye(&pp, n)])
}

/// `[I_n; p ⊗ I_n; m(p) ⊗ I_n]` where `m(p)` lists `p_i p_j` for `i ≤ j`.
pub fn lift2_sym(p: &[f64], n: usize) -> Mat {
    let mono: Vec<f64> = (0..p.len()).flat_map(|i| (i..p.len()).map(move |j| p[i] * p[j])).collect();
    vcat(&[eye(n), p_kron_eye(p, n), p_kron_eye(&mono, n)])
}

/// `T` with `lift2(p, n) = T · lift2_sym(p, n)`.
pub fn monomial_fold(n_p: usize, n: usize) -> Mat {
    let n_sym = n_p * (n_p + 1) / 2;
    let mut t = Mat::zeros(n * (1 + n_p + n_p * n_p), n * (1 + n_p + n_sym));
    t.view_mut((0, 0), (n * (1 + n_p), n * (1 + n_p))).fill_with_identity();
    let mono = |i: usize, j: usize| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        a * n_p - a * (a + 1) / 2 + b
    };
    for i in 0..n_p {
        for j in 0..n_p {
            let r = n * (1 + n_p + i * n_p + j);
            let c = n * (1 + n_p + mono(i, j));
            t.view_mut((r, c), (n, n)).fill_with_identity();
        }
    }
    t
}

pub fn vcat(ms: &[Mat]) -> Mat {
    let cols = ms.first().map_or(0, |m| m.ncols());
    let rows: usize = ms.iter().map(|m| m.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for m in ms {
        assert_eq!(m.ncols(), cols, "vcat: column mismatch");
        out.view_mut((r, 0), m.shape()).copy_from(m);
        r += m.nrows();
    }
    out
}

pub fn hcat(ms: &[Mat]) -> Mat {
    let rows = ms.first().map_or(0, |m| m.nrows());
    let cols: usize = ms.iter().map(|m| m.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for m in ms {
        assert_eq!(m.nrows(), rows, "hcat: row mismatch");
        out.view_mut((0, c), m.shape()).copy_from(m);
        c += m.ncols();
    }
    out
}

pub fn blkdiag(ms: &[Mat]) -> Mat {
    let rows: usize = ms.iter().map(|m| m.nrows()).sum();
    let cols: usize = ms.iter().map(|m| m.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for m in ms {
        out.view_mut((r, c), m.shape()).copy_from(m);
        r += m.nrows();
        c += m.ncols();
    }
    out
}

/// Block matrix from a grid; `None` entries are zero blocks sized by their
/// row and column neighbours.
pub fn blocks(grid: &[Vec<Option<Mat>>]) -> Result<Mat> {
    let nr = grid.len();
    let nc = grid.first().map_or(0, |r| r.len());
    let mut heights = vec![None; nr];
    let mut widths = vec![None; nc];
    for (i, row) in grid.iter().enumerate() {
        if row.len() != nc {
            return Err(dim("ragged block grid"));
        }
        for (j, b) in row.iter().enumerate() {
            if let Some(m) = b {
                for (slot, v) in [(&mut heights[i], m.nrows()), (&mut widths[j], m.ncols())] {
                    match slot {
                        Some(h) if *h != v => return Err(dim(format!("block ({i},{j}) size"))),
                        _ => *slot = Some(v),
                    }
                }
            }
        }
    }
    let h: Vec<usize> = heights.into_iter().map(|x| x.unwrap_or(0)).collect();
    let w: Vec<usize> = widths.into_iter().map(|x| x.unwrap_or(0)).collect();
    let mut out = Mat::zeros(h.iter().sum(), w.iter().sum());
    let mut r = 0;
    for (i, row) in grid.iter().enumerate() {
        let mut c = 0;
        for (j, b) in row.iter().enumerate() {
            if let Some(m) = b {
                out.view_mut((r, c), m.shape()).copy_from(m);
            }
            c += w[j];
        }
        r += h[i];
    }
    Ok(out)
}

/// Upper LFT `l22 + l21·Δ·(I − l11·Δ)^{-1}·l12`.
pub fn lft_star(delta: &Mat, l11: &Mat, l12: &Mat, l21: &Mat, l22: &Mat) -> Result<Mat> {
    let n = delta.nrows();
    if delta.ncols() != l11.nrows()
        || l11.ncols() != n
        || l12.nrows() != delta.ncols()
        || l21.ncols() != n
        || l21.nrows() != l22.nrows()
        || l12.ncols() != l22.ncols()
    {
        return Err(dim("lft_star block sizes"));
    }
    if n == 0 {
        return Ok(l22.clone());
    }
    if delta.iter().all(|v| *v == 0.0) {
        return Ok(l22.clone());
    }
    let m = eye(l11.nrows()) - l11 * delta;
    let c = cond(&m);
    if !c.is_finite() || c > LFT_COND_CAP {
        return Err(Error::SingularLft { cond: c });
    }
    let inv = m.try_inverse().ok_or(Error::SingularLft { cond: f64::INFINITY })?;
    Ok(l22 + l21 * delta * inv * l12)
}

/// 2-norm condition number.
pub fn cond(m: &Mat) -> f64 {
    let s = m.clone().singular_values();
    let max = s.max();
    let min = s.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Numerical rank with singular values `≥ tol·σ_max`.
pub fn rank(m: &Mat, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = m.clone().singular_values();
    let max = s.max();
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v >= tol * max).count()
}

/// Minimum-norm right inverse of a full-row-rank matrix.
pub fn pinv_right(m: &Mat, tol: f64) -> Result<Mat> {
    let (r, c) = m.shape();
    if r == 0 {
        return Ok(Mat::zeros(c, 0));
    }
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.max();
    let rk = svd
        .singular_values
        .iter()
        .filter(|&&v| max > 0.0 && v >= tol * max)
        .count();
    if rk < r {
        return Err(Error::RankDeficient { rank: rk, required: r });
    }
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let mut out = Mat::zeros(c, r);
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s < tol * max {
            continue;
        }
        out += vt.row(k).transpose() * u.column(k).transpose() / s;
    }
    Ok(out)
}

fn asymmetry(m: &Mat) -> f64 {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() / scale
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetrized matrix.
pub fn min_eig_sym(m: &Mat) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(dim("min_eig_sym needs a square matrix"));
    }
    if m.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    let a = asymmetry(m);
    if a > SYM_TOL {
        return Err(Error::NotSymmetric { asym: a });
    }
    Ok(min_eig_unchecked(m))
}

/// Smallest eigenvalue of `(m + mᵀ)/2` without the symmetry guard.
pub fn min_eig_unchecked(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub fn is_pd(m: &Mat, margin: f64) -> Result<bool> {
    Ok(min_eig_sym(m)? >= margin)
}

/// Principal square root of a PSD matrix; eigenvalues above `-1e-10` are
/// clamped to zero, anything lower is rejected.
pub fn sqrtm_psd(m: &Mat) -> Result<Mat> {
    if m.nrows() != m.ncols() {
        return Err(dim("sqrtm_psd needs a square matrix"));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.min();
    if min < -1e-10 {
        return Err(Error::WeightNotPsd { min_eig: min });
    }
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * Mat::from_diagonal(&d) * q.transpose())
}

pub fn spectral_radius(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(dim("ragged matrix rows"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite matrix entry".into()));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

/// Serializes `Vec<Vector>` as nested arrays.
pub mod vec_serde {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vector], s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vector>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        Ok(rows.into_iter().map(Vector::from_vec).collect())
    }
}

/// Optional variant of [`vec_serde`].
pub mod opt_vec_serde {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<Vector>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Option<Vec<&[f64]>> = v.as_ref().map(|v| v.iter().map(|x| x.as_slice()).collect());
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<Vector>>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        Ok(rows.map(|r| r.into_iter().map(Vector::from_vec).collect()))
    }
}

/// Axis-aligned scheduling box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = ParamBox { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// `[-r, r]^n`.
    pub fn symmetric(n: usize, r: f64) -> Self {
        ParamBox { lower: vec![-r; n], upper: vec![r; n] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::InvalidBox("bound lengths differ".into()));
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(Error::InvalidBox(format!("component {i}: [{l}, {u}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    /// Corners in lexicographic order, lower before upper in each slot.
    /// Degenerate components contribute a single value.
    pub fn vertices(&self) -> Result<Vec<Vec<f64>>> {
        self.vertices_capped(VERTEX_CAP)
    }

    pub fn vertices_capped(&self, cap: usize) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let n = self.dim();
        if n > cap {
            return Err(Error::TooManyVertices { n_p: n, cap });
        }
        let mut out = vec![Vec::with_capacity(n)];
        for i in 0..n {
            let choices: Vec<f64> = if self.lower[i] == self.upper[i] {
                vec![self.lower[i]]
            } else {
                vec![self.lower[i], self.upper[i]]
            };
            out = out
                .into_iter()
                .flat_map(|v| {
                    choices.iter().map(move |&c| {
                        let mut w = v.clone();
                        w.push(c);
                        w
                    })
                })
                .collect();
        }
        Ok(out)
    }

    /// Tensor grid with `k` equidistant points per axis, lexicographic.
    pub fn grid(&self, k: usize) -> Vec<Vec<f64>> {
        let k = k.max(2);
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|i| {
                (0..k)
                    .map(|j| self.lower[i] + (self.upper[i] - self.lower[i]) * j as f64 / (k - 1) as f64)
                    .collect()
            })
            .collect();
        let mut out = vec![Vec::new()];
        for ax in &axes {
            out = out
                .into_iter()
                .flat_map(|v| {
                    ax.iter().map(move |&c| {
                        let mut w = v.clone();
                        w.push(c);
                        w
                    })
                })
                .collect();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron(&eye(2), &m(1, 1, &[5.0])), m(2, 2, &[5.0, 0.0, 0.0, 5.0]));
        assert_eq!(kron(&m(1, 2, &[1.0, 2.0]), &m(2, 1, &[3.0, 4.0])), m(2, 2, &[3.0, 6.0, 4.0, 8.0]));
    }

    #[test]
    fn kron_eye_matches_kron() {
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(kron_eye(3, &a), kron(&eye(3), &a));
        let p = [0.3, -0.7];
        assert_eq!(p_kron_eye(&p, 2), kron(&m(2, 1, &p), &eye(2)));
    }

    #[test]
    fn lft_examples() {
        let l22 = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let z = Mat::zeros(2, 2);
        let l12 = m(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let l21 = m(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        assert_eq!(lft_star(&z, &l21, &l12, &l21, &l22).unwrap(), l22);
        let d = m(2, 2, &[0.3, 0.0, 0.0, -0.2]);
        let got = lft_star(&d, &z, &l12, &l21, &l22).unwrap();
        assert!((got - (&l22 + &l21 * &d * &l12)).amax() < 1e-15);
        let s = lft_star(&m(1, 1, &[0.7]), &m(1, 1, &[0.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[0.0]));
        assert!((s.unwrap()[(0, 0)] - 0.7).abs() < 1e-15);
        let bad = lft_star(&m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[0.0]));
        assert!(matches!(bad, Err(Error::SingularLft { .. })));
    }

    #[test]
    fn pinv_examples() {
        let p = pinv_right(&m(2, 2, &[2.0, 0.0, 0.0, 4.0]), RANK_TOL).unwrap();
        assert!((p - m(2, 2, &[0.5, 0.0, 0.0, 0.25])).amax() < 1e-15);
        let p = pinv_right(&m(1, 2, &[3.0, 4.0]), RANK_TOL).unwrap();
        assert!((p - m(2, 1, &[0.12, 0.16])).amax() < 1e-15);
        let r = pinv_right(&m(2, 2, &[1.0, 2.0, 2.0, 4.0]), RANK_TOL);
        assert!(matches!(r, Err(Error::RankDeficient { rank: 1, required: 2 })));
    }

    #[test]
    fn eig_examples() {
        assert!((min_eig_sym(&eye(3)).unwrap() - 1.0).abs() < 1e-15);
        assert!(is_pd(&eye(3), 1e-8).unwrap());
        assert!((min_eig_sym(&m(2, 2, &[1.0, 0.0, 0.0, -2.0])).unwrap() + 2.0).abs() < 1e-15);
        assert!(matches!(
            min_eig_sym(&m(2, 2, &[1.0, 1.0, 0.0, 1.0])),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sqrtm_roundtrip() {
        let q = m(2, 2, &[8.0, 0.0, 0.0, 0.1]);
        let s = sqrtm_psd(&q).unwrap();
        assert!((&s * &s - &q).amax() < 1e-14);
        assert!(sqrtm_psd(&m(1, 1, &[-1.0])).is_err());
        assert_eq!(sqrtm_psd(&m(1, 1, &[-1e-12])).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn box_vertex_examples() {
        let b = ParamBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(
            b.vertices().unwrap(),
            vec![vec![-1.0, -1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![1.0, 1.0]]
        );
        assert_eq!(ParamBox::new(vec![0.0], vec![0.0]).unwrap().vertices().unwrap(), vec![vec![0.0]]);
        assert_eq!(
            ParamBox::new(vec![-0.22], vec![1.0]).unwrap().vertices().unwrap(),
            vec![vec![-0.22], vec![1.0]]
        );
        let big = ParamBox::symmetric(13, 1.0);
        assert!(matches!(big.vertices(), Err(Error::TooManyVertices { .. })));
        assert!(ParamBox::new(vec![1.0], vec![0.0]).is_err());
        assert_eq!(ParamBox::symmetric(0, 1.0).vertices().unwrap(), vec![Vec::<f64>::new()]);
    }

    #[test]
    fn grid_counts() {
        let b = ParamBox::symmetric(2, 1.0);
        let g = b.grid(10);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], vec![-1.0, -1.0]);
        assert_eq!(g[99], vec![1.0, 1.0]);
    }

    #[test]
    fn blocks_fill_zeros() {
        let a = eye(2);
        let b = m(2, 1, &[1.0, 2.0]);
        let c = m(1, 1, &[3.0]);
        let g = blocks(&[vec![Some(a), Some(b)], vec![None, Some(c)]]).unwrap();
        assert_eq!(g, m(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 3.0]));
    }
}
