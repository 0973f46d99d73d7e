//! Measured trajectories, their stacked data matrices and excitation checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};
use crate::linalg::{kron, rank, Mat, Vector, RANK_TOL};
use crate::system::LpvSs;

/// One measured input-scheduling-state trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataDictionary {
    #[serde(with = "crate::linalg::vec_serde")]
    pub u: Vec<Vector>,
    pub p: Vec<Vec<f64>>,
    #[serde(with = "crate::linalg::vec_serde")]
    pub x: Vec<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Data matrices built from the first `N_d − 1` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrices {
    pub u_mat: Mat,
    pub up_mat: Mat,
    pub x_mat: Mat,
    pub xp_mat: Mat,
    pub xplus: Mat,
    /// `[X; X^p; U; U^p]`
    pub dp: Mat,
    pub n_x: usize,
    pub n_u: usize,
    pub n_p: usize,
}

impl DataMatrices {
    pub fn columns(&self) -> usize {
        self.dp.ncols()
    }
    pub fn required_rank(&self) -> usize {
        (1 + self.n_p) * (self.n_x + self.n_u)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeReport {
    pub rank: usize,
    pub required: usize,
    pub is_pe: bool,
}

fn uniform_dims(u: &[Vector], p: &[Vec<f64>], x: &[Vector]) -> Result<(usize, usize, usize)> {
    let n = x.len();
    if u.len() != n || p.len() != n {
        return Err(dim("u, p and state sequences differ in length"));
    }
    if n < 2 {
        return Err(dim("need at least two samples"));
    }
    let (n_u, n_p, n_x) = (u[0].len(), p[0].len(), x[0].len());
    if u.iter().any(|v| v.len() != n_u) || p.iter().any(|v| v.len() != n_p) || x.iter().any(|v| v.len() != n_x) {
        return Err(dim("non-uniform sample dimensions"));
    }
    Ok((n_x, n_u, n_p))
}

fn stack(u: &[Vector], p: &[Vec<f64>], x: &[Vector]) -> Result<DataMatrices> {
    let (n_x, n_u, n_p) = uniform_dims(u, p, x)?;
    let cols = x.len() - 1;
    let mut u_mat = Mat::zeros(n_u, cols);
    let mut up_mat = Mat::zeros(n_p * n_u, cols);
    let mut x_mat = Mat::zeros(n_x, cols);
    let mut xp_mat = Mat::zeros(n_p * n_x, cols);
    let mut xplus = Mat::zeros(n_x, cols);
    for k in 0..cols {
        let pk = Mat::from_column_slice(n_p, 1, &p[k]);
        u_mat.set_column(k, &u[k]);
        x_mat.set_column(k, &x[k]);
        xplus.set_column(k, &x[k + 1]);
        up_mat.set_column(k, &kron(&pk, &Mat::from_column_slice(n_u, 1, u[k].as_slice())).column(0));
        xp_mat.set_column(k, &kron(&pk, &Mat::from_column_slice(n_x, 1, x[k].as_slice())).column(0));
    }
    let dp = crate::linalg::vcat(&[x_mat.clone(), xp_mat.clone(), u_mat.clone(), up_mat.clone()]);
    Ok(DataMatrices { u_mat, up_mat, x_mat, xp_mat, xplus, dp, n_x, n_u, n_p })
}

pub fn build_matrices(d: &DataDictionary) -> Result<DataMatrices> {
    stack(&d.u, &d.p, &d.x)
}

pub fn check_pe(dm: &DataMatrices, tol: f64) -> PeReport {
    let required = dm.required_rank();
    let r = rank(&dm.dp, tol);
    PeReport { rank: r, required, is_pe: r == required }
}

/// Uniform interval `[lo, hi]`.
pub type Interval = (f64, f64);

fn draw(rng: &mut ChaCha8Rng, r: Interval) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..=r.1)
    }
}

/// Excites `sys` with i.i.d. uniform inputs and scheduling for `n_d` data
/// columns. The dictionary holds `n_d + 1` samples so that `X_+` is
/// available; the last input and scheduling sample are recorded but unused.
/// Without `x0` the initial state is drawn from U(-1, 1).
pub fn excite(
    sys: &LpvSs,
    n_d: usize,
    seed: u64,
    u_range: Interval,
    p_range: Interval,
    x0: Option<Vector>,
) -> Result<DataDictionary> {
    let need = (1 + sys.n_p()) * (sys.n_x() + sys.n_u());
    if n_d < need {
        log::warn!("{n_d} data columns are fewer than the {need} needed for excitation");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = match x0 {
        Some(x) => x,
        None => Vector::from_fn(sys.n_x(), |_, _| draw(&mut rng, (-1.0, 1.0))),
    };
    let mut u = Vec::with_capacity(n_d + 1);
    let mut p = Vec::with_capacity(n_d + 1);
    for _ in 0..=n_d {
        u.push(Vector::from_fn(sys.n_u(), |_, _| draw(&mut rng, u_range)));
        p.push((0..sys.n_p()).map(|_| draw(&mut rng, p_range)).collect::<Vec<_>>());
    }
    let x = sys.simulate(&x0, &u[..n_d], &p[..n_d])?;
    Ok(DataDictionary { u, p, x, seed: Some(seed) })
}

/// Noisy measurements `z = x + ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyDictionary {
    #[serde(with = "crate::linalg::vec_serde")]
    pub u: Vec<Vector>,
    pub p: Vec<Vec<f64>>,
    #[serde(with = "crate::linalg::vec_serde")]
    pub z: Vec<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::linalg::opt_vec_serde")]
    pub true_x: Option<Vec<Vector>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::linalg::opt_vec_serde")]
    pub eps_seq: Option<Vec<Vector>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl NoisyDictionary {
    /// Wraps clean data with zero noise.
    pub fn from_clean(d: &DataDictionary) -> Self {
        NoisyDictionary {
            u: d.u.clone(),
            p: d.p.clone(),
            z: d.x.clone(),
            true_x: Some(d.x.clone()),
            eps_seq: Some(vec![Vector::zeros(d.x[0].len()); d.x.len()]),
            seed: d.seed,
        }
    }

    /// Adds zero-mean Gaussian noise with per-component standard deviation
    /// `std` to a clean dictionary. The noise stream is seeded separately.
    pub fn with_noise(d: &DataDictionary, std: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<Vector> = d
            .x
            .iter()
            .map(|x| Vector::from_fn(x.len(), |_, _| normal.sample(&mut rng)))
            .collect();
        let z = d.x.iter().zip(&eps).map(|(x, e)| x + e).collect();
        Ok(NoisyDictionary {
            u: d.u.clone(),
            p: d.p.clone(),
            z,
            true_x: Some(d.x.clone()),
            eps_seq: Some(eps),
            seed: Some(seed),
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// `E`, `E^p`, `E_+`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMatrices {
    pub e: Mat,
    pub ep: Mat,
    pub eplus: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyMatrices {
    /// Stack over the measured `z`; `x_mat`, `xp_mat`, `xplus` hold `Z`, `Z^p`, `Z_+`.
    pub data: DataMatrices,
    pub noise: Option<NoiseMatrices>,
}

pub fn build_noisy_matrices(nd: &NoisyDictionary) -> Result<NoisyMatrices> {
    let data = stack(&nd.u, &nd.p, &nd.z)?;
    let noise = match &nd.eps_seq {
        Some(eps) => {
            if eps.len() != nd.z.len() {
                return Err(dim("noise sequence length"));
            }
            let em = stack(&nd.u, &nd.p, eps)?;
            Some(NoiseMatrices { e: em.x_mat, ep: em.xp_mat, eplus: em.xplus })
        }
        None => None,
    };
    Ok(NoisyMatrices { data, noise })
}

/// Checks that `[Z; Z^p; U; U^p]` and `Z_+` both have full row rank.
pub fn check_noisy_ranks(nm: &NoisyMatrices, tol: f64) -> Result<()> {
    let pe = check_pe(&nm.data, tol);
    if !pe.is_pe {
        return Err(Error::AssumptionViolated(format!(
            "noisy data stack has rank {} < {}",
            pe.rank, pe.required
        )));
    }
    let rz = rank(&nm.data.xplus, tol);
    if rz < nm.data.n_x {
        return Err(Error::AssumptionViolated(format!("Z_+ has rank {rz} < {}", nm.data.n_x)));
    }
    Ok(())
}

/// Smallest `ε` with `R R^T ⪯ ε Z_+ Z_+^T`, `R = [A_0 … A_np][E; E^p] − E_+`.
/// Needs the true noise samples, so it is usable only in simulation.
pub fn epsilon_bound(sys: &LpvSs, nd: &NoisyDictionary) -> Result<f64> {
    let nm = build_noisy_matrices(nd)?;
    let noise = nm
        .noise
        .ok_or_else(|| Error::Invalid("noise samples are required for the noise-level oracle".into()))?;
    if sys.n_x() != nm.data.n_x || sys.n_p() != nm.data.n_p {
        return Err(dim("plant and data dimensions differ"));
    }
    let a_stack = crate::linalg::hcat(&sys.a);
    let r = a_stack * crate::linalg::vcat(&[noise.e, noise.ep]) - noise.eplus;
    let g = &nm.data.xplus * nm.data.xplus.transpose();
    generalized_max_eig(&(&r * r.transpose()), &g)
}

/// Largest `λ` with `a v = λ g v` for symmetric `a` and `g ≻ 0`.
pub fn generalized_max_eig(a: &Mat, g: &Mat) -> Result<f64> {
    if rank(g, RANK_TOL) < g.nrows() {
        return Err(Error::SingularGram);
    }
    let chol = g.clone().cholesky().ok_or(Error::SingularGram)?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or(Error::SingularGram)?;
    let m = &linv * a * linv.transpose();
    let eig = nalgebra::SymmetricEigen::new(crate::linalg::symmetrize(&m));
    Ok(eig.eigenvalues.max().max(0.0))
}

// ---- file formats -------------------------------------------------------

/// Raw table read from a dictionary file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub u: Vec<Vector>,
    pub p: Vec<Vec<f64>>,
    pub states: Vec<Vector>,
    /// `'x'` for clean states, `'z'` for noisy observations.
    pub state_prefix: char,
}

fn header(n_u: usize, n_p: usize, n_x: usize, s: char) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((1..=n_u).map(|i| format!("u_{i}")));
    h.extend((1..=n_p).map(|i| format!("p_{i}")));
    h.extend((1..=n_x).map(|i| format!("{s}_{i}")));
    h
}

fn write_table(u: &[Vector], p: &[Vec<f64>], s: &[Vector], prefix: char) -> Result<String> {
    let (n_x, n_u, n_p) = uniform_dims(u, p, s)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(n_u, n_p, n_x, prefix)).map_err(csv_io)?;
    for k in 0..s.len() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(u[k].iter().map(|v| format!("{v:e}")));
        rec.extend(p[k].iter().map(|v| format!("{v:e}")));
        rec.extend(s[k].iter().map(|v| format!("{v:e}")));
        w.write_record(&rec).map_err(csv_io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Invalid(e.to_string())
}

/// Parses the `k,u_*,p_*,x_*` (or `z_*`) layout.
pub fn parse_table(text: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut records = rdr.records();
    let head = match records.next() {
        Some(r) => r.map_err(|e| parse_err(&e, 1))?,
        None => return Err(Error::Parse { line: 1, column: 1, msg: "empty file".into() }),
    };
    let names: Vec<&str> = head.iter().collect();
    if names.first() != Some(&"k") {
        return Err(Error::Parse { line: 1, column: 1, msg: "first column must be \"k\"".into() });
    }
    let count = |pre: &str| names.iter().filter(|n| n.starts_with(pre)).count();
    let (n_u, n_p) = (count("u_"), count("p_"));
    let (n_x, n_z) = (count("x_"), count("z_"));
    let (n_s, prefix) = match (n_x, n_z) {
        (n, 0) if n > 0 => (n, 'x'),
        (0, n) if n > 0 => (n, 'z'),
        _ => return Err(Error::Parse { line: 1, column: 1, msg: "need either x_ or z_ state columns".into() }),
    };
    let expected = header(n_u, n_p, n_s, prefix);
    if names.len() != expected.len() {
        return Err(Error::Parse { line: 1, column: names.len(), msg: "unexpected column count".into() });
    }
    for (c, (got, want)) in names.iter().zip(&expected).enumerate() {
        if got != want {
            return Err(Error::Parse { line: 1, column: c + 1, msg: format!("expected \"{want}\", found \"{got}\"") });
        }
    }
    let mut t = Table { u: vec![], p: vec![], states: vec![], state_prefix: prefix };
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(&e, line))?;
        if rec.len() != expected.len() {
            return Err(Error::Parse {
                line,
                column: rec.len().min(expected.len()) + 1,
                msg: format!("expected {} fields, found {}", expected.len(), rec.len()),
            });
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (c, f) in rec.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::Parse { line, column: c + 1, msg: format!("not a number: \"{f}\"") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, column: c + 1, msg: "non-finite value".into() });
            }
            vals.push(v);
        }
        t.u.push(Vector::from_column_slice(&vals[1..1 + n_u]));
        t.p.push(vals[1 + n_u..1 + n_u + n_p].to_vec());
        t.states.push(Vector::from_column_slice(&vals[1 + n_u + n_p..]));
    }
    if t.states.len() < 2 {
        return Err(Error::Parse { line: t.states.len() + 2, column: 1, msg: "need at least two samples".into() });
    }
    Ok(t)
}

fn parse_err(e: &csv::Error, line: usize) -> Error {
    Error::Parse { line, column: 1, msg: e.to_string() }
}

impl DataDictionary {
    pub fn to_csv(&self) -> Result<String> {
        write_table(&self.u, &self.p, &self.x, 'x')
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let t = parse_table(text)?;
        if t.state_prefix != 'x' {
            return Err(Error::Invalid("file holds noisy z_ columns; load it as a noisy dictionary".into()));
        }
        Ok(DataDictionary { u: t.u, p: t.p, x: t.states, seed: None })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let d: DataDictionary = serde_json::from_str(text)?;
        uniform_dims(&d.u, &d.p, &d.x)?;
        Ok(d)
    }

    /// Loads CSV or JSON, chosen by the first non-blank character.
    pub fn load(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::from_json_str(text)
        } else {
            Self::from_csv(text)
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        DataDictionary {
            u: self.u[..n].to_vec(),
            p: self.p[..n].to_vec(),
            x: self.x[..n].to_vec(),
            seed: self.seed,
        }
    }
}

impl NoisyDictionary {
    pub fn to_csv(&self) -> Result<String> {
        write_table(&self.u, &self.p, &self.z, 'z')
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let t = parse_table(text)?;
        Ok(NoisyDictionary { u: t.u, p: t.p, z: t.states, true_x: None, eps_seq: None, seed: None })
    }

    pub fn load(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(text)?;
            if v.get("z").is_some() {
                let d: NoisyDictionary = serde_json::from_value(v)?;
                uniform_dims(&d.u, &d.p, &d.z)?;
                Ok(d)
            } else {
                Ok(NoisyDictionary::from_clean(&DataDictionary::from_json_str(text)?))
            }
        } else {
            Self::from_csv(text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ParamBox;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn hand_built_column() {
        let d = DataDictionary {
            u: vec![v(&[1.0]), v(&[0.0])],
            p: vec![vec![2.0], vec![0.0]],
            x: vec![v(&[3.0]), v(&[4.0])],
            seed: None,
        };
        let m = build_matrices(&d).unwrap();
        assert_eq!(m.dp.column(0).as_slice(), &[3.0, 6.0, 1.0, 2.0]);
        assert_eq!(m.xplus[(0, 0)], 4.0);
    }

    #[test]
    fn zero_input_not_pe() {
        let sys = LpvSs::new(
            vec![Mat::from_element(1, 1, 0.5), Mat::from_element(1, 1, 0.1)],
            vec![Mat::from_element(1, 1, 1.0), Mat::zeros(1, 1)],
            ParamBox::symmetric(1, 1.0),
        )
        .unwrap();
        let d = excite(&sys, 10, 3, (0.0, 0.0), (-1.0, 1.0), None).unwrap();
        let m = build_matrices(&d).unwrap();
        assert!(m.u_mat.iter().all(|v| *v == 0.0) && m.up_mat.iter().all(|v| *v == 0.0));
        let r = check_pe(&m, RANK_TOL);
        assert!(!r.is_pe && r.rank <= 2 && r.required == 4);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let d = DataDictionary {
            u: vec![v(&[1.0]), v(&[-0.5])],
            p: vec![vec![0.25], vec![0.125]],
            x: vec![v(&[3.0, 1.0]), v(&[4.0, 2.0])],
            seed: None,
        };
        let s = d.to_csv().unwrap();
        assert!(s.starts_with("k,u_1,p_1,x_1,x_2\n"));
        assert_eq!(DataDictionary::from_csv(&s).unwrap(), d);
        let bad = s.replace("-5e-1", "abc");
        match DataDictionary::from_csv(&bad) {
            Err(Error::Parse { line: 3, column: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(DataDictionary::from_csv("k,u_1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn generalized_eig_diag() {
        let a = Mat::from_diagonal(&v(&[2.0, 9.0]));
        let g = Mat::from_diagonal(&v(&[1.0, 3.0]));
        assert!((generalized_max_eig(&a, &g).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(generalized_max_eig(&a, &Mat::zeros(2, 2)), Err(Error::SingularGram)));
    }
}
