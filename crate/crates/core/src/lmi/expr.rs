//! Matrix expressions affine in scalar decision variables.

use crate::error::{dim, Result};
use crate::linalg::Mat;

/// `C + Σ_k x_k·G_k` with sparse coefficient matrices `G_k`.
///
/// Terms are stored as `(variable, row, col, value)` sorted and merged.
#[derive(Clone, Debug, PartialEq)]
pub struct AffExpr {
    rows: usize,
    cols: usize,
    constant: Mat,
    terms: Vec<(usize, u32, u32, f64)>,
}

impl AffExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AffExpr { rows, cols, constant: Mat::zeros(rows, cols), terms: Vec::new() }
    }

    pub fn constant(m: Mat) -> Self {
        AffExpr { rows: m.nrows(), cols: m.ncols(), constant: m, terms: Vec::new() }
    }

    pub(crate) fn from_terms(rows: usize, cols: usize, terms: Vec<(usize, u32, u32, f64)>) -> Self {
        let mut e = AffExpr { rows, cols, constant: Mat::zeros(rows, cols), terms };
        e.normalize();
        e
    }

    /// `x_k · m`.
    pub fn scalar_times(var: usize, m: &Mat) -> Self {
        let mut terms = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != 0.0 {
                    terms.push((var, i as u32, j as u32, v));
                }
            }
        }
        AffExpr::from_terms(m.nrows(), m.ncols(), terms)
    }

    fn normalize(&mut self) {
        self.terms.sort_unstable_by_key(|t| (t.0, t.1, t.2));
        let mut out: Vec<(usize, u32, u32, f64)> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            match out.last_mut() {
                Some(l) if l.0 == t.0 && l.1 == t.1 && l.2 == t.2 => l.3 += t.3,
                _ => out.push(t),
            }
        }
        out.retain(|t| t.3 != 0.0);
        self.terms = out;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    pub fn nrows(&self) -> usize {
        self.rows
    }
    pub fn ncols(&self) -> usize {
        self.cols
    }
    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }
    pub fn terms(&self) -> &[(usize, u32, u32, f64)] {
        &self.terms
    }
    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, o: &AffExpr) -> Result<AffExpr> {
        if self.shape() != o.shape() {
            return Err(dim(format!("add {:?} + {:?}", self.shape(), o.shape())));
        }
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&o.terms);
        let mut e = AffExpr::from_terms(self.rows, self.cols, terms);
        e.constant = &self.constant + &o.constant;
        Ok(e)
    }

    pub fn sub(&self, o: &AffExpr) -> Result<AffExpr> {
        self.add(&o.scale(-1.0))
    }

    pub fn add_const(&self, m: &Mat) -> Result<AffExpr> {
        if m.shape() != self.shape() {
            return Err(dim("add_const shape"));
        }
        let mut e = self.clone();
        e.constant += m;
        Ok(e)
    }

    pub fn scale(&self, s: f64) -> AffExpr {
        let mut e = self.clone();
        e.constant *= s;
        for t in &mut e.terms {
            t.3 *= s;
        }
        e.terms.retain(|t| t.3 != 0.0);
        e
    }

    pub fn transpose(&self) -> AffExpr {
        let terms = self.terms.iter().map(|&(k, i, j, v)| (k, j, i, v)).collect();
        let mut e = AffExpr::from_terms(self.cols, self.rows, terms);
        e.constant = self.constant.transpose();
        e
    }

    /// `c · self`.
    pub fn mul_left(&self, c: &Mat) -> Result<AffExpr> {
        if c.ncols() != self.rows {
            return Err(dim(format!("mul_left {:?} * {:?}", c.shape(), self.shape())));
        }
        // nonzeros of each column of c
        let nz: Vec<Vec<(u32, f64)>> = (0..c.ncols())
            .map(|i| {
                (0..c.nrows())
                    .filter_map(|r| {
                        let v = c[(r, i)];
                        (v != 0.0).then_some((r as u32, v))
                    })
                    .collect()
            })
            .collect();
        let mut terms = Vec::with_capacity(self.terms.len() * 2);
        for &(k, i, j, v) in &self.terms {
            for &(r, cv) in &nz[i as usize] {
                terms.push((k, r, j, cv * v));
            }
        }
        let mut e = AffExpr::from_terms(c.nrows(), self.cols, terms);
        e.constant = c * &self.constant;
        Ok(e)
    }

    /// `self · c`.
    pub fn mul_right(&self, c: &Mat) -> Result<AffExpr> {
        if c.nrows() != self.cols {
            return Err(dim(format!("mul_right {:?} * {:?}", self.shape(), c.shape())));
        }
        let nz: Vec<Vec<(u32, f64)>> = (0..c.nrows())
            .map(|j| {
                (0..c.ncols())
                    .filter_map(|s| {
                        let v = c[(j, s)];
                        (v != 0.0).then_some((s as u32, v))
                    })
                    .collect()
            })
            .collect();
        let mut terms = Vec::with_capacity(self.terms.len() * 2);
        for &(k, i, j, v) in &self.terms {
            for &(s, cv) in &nz[j as usize] {
                terms.push((k, i, s, cv * v));
            }
        }
        let mut e = AffExpr::from_terms(self.rows, c.ncols(), terms);
        e.constant = &self.constant * c;
        Ok(e)
    }

    /// `aᵀ · self · a`.
    pub fn congruence(&self, a: &Mat) -> Result<AffExpr> {
        self.mul_right(a)?.mul_left(&a.transpose())
    }

    /// `I_n ⊗ self`.
    pub fn kron_eye(&self, n: usize) -> AffExpr {
        let (r, c) = self.shape();
        let mut terms = Vec::with_capacity(self.terms.len() * n);
        for b in 0..n {
            for &(k, i, j, v) in &self.terms {
                terms.push((k, i + (b * r) as u32, j + (b * c) as u32, v));
            }
        }
        let mut e = AffExpr::from_terms(r * n, c * n, terms);
        e.constant = crate::linalg::kron_eye(n, &self.constant);
        e
    }

    pub fn sub_block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> AffExpr {
        let terms = self
            .terms
            .iter()
            .filter(|t| {
                let (i, j) = (t.1 as usize, t.2 as usize);
                i >= r0 && i < r0 + nr && j >= c0 && j < c0 + nc
            })
            .map(|&(k, i, j, v)| (k, i - r0 as u32, j - c0 as u32, v))
            .collect();
        let mut e = AffExpr::from_terms(nr, nc, terms);
        e.constant = self.constant.view((r0, c0), (nr, nc)).into_owned();
        e
    }

    /// Block matrix; `None` entries become zero blocks sized from neighbours.
    pub fn blocks(grid: &[Vec<Option<AffExpr>>]) -> Result<AffExpr> {
        let nr = grid.len();
        let nc = grid.first().map_or(0, |r| r.len());
        let mut h = vec![None; nr];
        let mut w = vec![None; nc];
        for (i, row) in grid.iter().enumerate() {
            if row.len() != nc {
                return Err(dim("ragged expression grid"));
            }
            for (j, b) in row.iter().enumerate() {
                if let Some(e) = b {
                    for (slot, v) in [(&mut h[i], e.rows), (&mut w[j], e.cols)] {
                        match slot {
                            Some(x) if *x != v => return Err(dim(format!("expression block ({i},{j})"))),
                            _ => *slot = Some(v),
                        }
                    }
                }
            }
        }
        let h: Vec<usize> = h.into_iter().map(|x| x.unwrap_or(0)).collect();
        let w: Vec<usize> = w.into_iter().map(|x| x.unwrap_or(0)).collect();
        let (rows, cols) = (h.iter().sum(), w.iter().sum());
        let mut constant = Mat::zeros(rows, cols);
        let mut terms = Vec::new();
        let mut r0 = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (j, b) in row.iter().enumerate() {
                if let Some(e) = b {
                    constant.view_mut((r0, c0), e.shape()).copy_from(&e.constant);
                    terms.extend(e.terms.iter().map(|&(k, a, b, v)| (k, a + r0 as u32, b + c0 as u32, v)));
                }
                c0 += w[j];
            }
            r0 += h[i];
        }
        let mut e = AffExpr::from_terms(rows, cols, terms);
        e.constant = constant;
        Ok(e)
    }

    pub fn hcat(parts: &[AffExpr]) -> Result<AffExpr> {
        AffExpr::blocks(&[parts.iter().cloned().map(Some).collect()])
    }

    pub fn vcat(parts: &[AffExpr]) -> Result<AffExpr> {
        let grid: Vec<Vec<Option<AffExpr>>> = parts.iter().cloned().map(|e| vec![Some(e)]).collect();
        AffExpr::blocks(&grid)
    }

    pub fn blkdiag(parts: &[AffExpr]) -> Result<AffExpr> {
        let n = parts.len();
        let mut grid: Vec<Vec<Option<AffExpr>>> = vec![vec![None; n]; n];
        for (i, p) in parts.iter().enumerate() {
            grid[i][i] = Some(p.clone());
        }
        // zero-sized off-diagonal blocks are implied by the diagonal
        let total: (usize, usize) = parts.iter().fold((0, 0), |a, p| (a.0 + p.rows, a.1 + p.cols));
        let e = AffExpr::blocks(&grid)?;
        debug_assert_eq!(e.shape(), total);
        Ok(e)
    }

    pub fn trace(&self) -> Result<AffExpr> {
        if self.rows != self.cols {
            return Err(dim("trace of a non-square expression"));
        }
        let terms = self
            .terms
            .iter()
            .filter(|t| t.1 == t.2)
            .map(|&(k, _, _, v)| (k, 0, 0, v))
            .collect();
        let mut e = AffExpr::from_terms(1, 1, terms);
        e.constant[(0, 0)] = self.constant.trace();
        Ok(e)
    }

    /// `(self + selfᵀ)/2`.
    pub fn sym(&self) -> Result<AffExpr> {
        Ok(self.add(&self.transpose())?.scale(0.5))
    }

    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut m = self.constant.clone();
        for &(k, i, j, v) in &self.terms {
            m[(i as usize, j as usize)] += v * x[k];
        }
        m
    }

    /// Largest absolute coefficient, constant included.
    pub fn scale_hint(&self) -> f64 {
        let c = self.constant.amax();
        self.terms.iter().fold(c, |a, t| a.max(t.3.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(e: &AffExpr, x: &[f64]) -> Mat {
        e.eval(x)
    }

    #[test]
    fn ops_agree_with_dense() {
        let a = AffExpr::scalar_times(0, &Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]))
            .add(&AffExpr::scalar_times(1, &Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.5])))
            .unwrap()
            .add_const(&Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]))
            .unwrap();
        let x = [0.3, -1.2];
        let c = Mat::from_row_slice(3, 2, &[1.0, 0.0, 2.0, -1.0, 0.0, 3.0]);
        let d = dense(&a, &x);
        assert!((a.mul_left(&c).unwrap().eval(&x) - &c * &d).amax() < 1e-14);
        assert!((a.mul_right(&c.transpose()).unwrap().eval(&x) - &d * c.transpose()).amax() < 1e-14);
        assert!((a.transpose().eval(&x) - d.transpose()).amax() < 1e-14);
        assert!((a.kron_eye(2).eval(&x) - crate::linalg::kron_eye(2, &d)).amax() < 1e-14);
        assert!((a.trace().unwrap().eval(&x)[(0, 0)] - d.trace()).abs() < 1e-14);
        let b = AffExpr::blocks(&[vec![Some(a.clone()), None], vec![None, Some(a.scale(2.0))]]).unwrap();
        let bd = b.eval(&x);
        assert_eq!(bd.view((2, 2), (2, 2)), d.clone() * 2.0);
        assert!(bd.view((0, 2), (2, 2)).iter().all(|v| *v == 0.0));
        assert_eq!(b.sub_block(2, 2, 2, 2).eval(&x), d * 2.0);
        assert!(a.sub(&a).unwrap().terms().is_empty());
    }
}
