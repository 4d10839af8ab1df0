//! Dense linear-algebra primitives: the matrix exponential of a linear
//! generator, the center/stable spectral splitting of that generator, and
//! bounded rational-independence tests for frequency vectors.

use nalgebra::{Complex, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("generator must be square with dimension >= 1 (got {rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("generator has non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("time must be finite (got {0})")]
    NonFiniteTime(f64),
    #[error("matrix exponential out of representable range (||Bt||_1 = {norm:e})")]
    Range { norm: f64 },
    #[error("eigenvalue {re:+e}{im:+e}i has positive real part beyond tolerance {tol:e}")]
    PositiveSpectrum { re: f64, im: f64, tol: f64 },
    #[error("center block is not semisimple: kernel dimension {kernel_dim} < center multiplicity {multiplicity}")]
    NonSemisimpleCenter { kernel_dim: usize, multiplicity: usize },
    #[error("exhaustive rational-independence search supports at most 4 frequencies (got {0})")]
    DimensionTooLarge(usize),
    #[error("coefficient bound must be >= 1")]
    InvalidBound,
    #[error("frequency vector has a non-finite component")]
    NonFiniteFrequency,
}

/// Real square matrix `B` generating the linear flow `t -> e^{Bt}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct LinearGenerator {
    matrix: DMatrix<f64>,
}

impl LinearGenerator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, LinalgError> {
        let (rows, cols) = matrix.shape();
        if rows != cols || rows == 0 {
            return Err(LinalgError::NotSquare { rows, cols });
        }
        for c in 0..cols {
            for r in 0..rows {
                if !matrix[(r, c)].is_finite() {
                    return Err(LinalgError::NonFinite { row: r, col: c });
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(LinalgError::NotSquare { rows: n, cols: m });
        }
        Self::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn zeros(dim: usize) -> Result<Self, LinalgError> {
        Self::new(DMatrix::zeros(dim, dim))
    }

    /// `[[0, -w], [w, 0]]`: counter-clockwise rotation at angular rate `w`.
    pub fn rotation(angular_rate: f64) -> Self {
        Self {
            matrix: DMatrix::from_row_slice(2, 2, &[0.0, -angular_rate, angular_rate, 0.0]),
        }
    }

    pub fn scalar(value: f64, dim: usize) -> Self {
        Self {
            matrix: DMatrix::from_diagonal_element(dim, dim, value),
        }
    }

    pub fn block_diag(blocks: &[LinearGenerator]) -> Result<Self, LinalgError> {
        let n: usize = blocks.iter().map(LinearGenerator::dim).sum();
        let mut m = DMatrix::zeros(n, n);
        let mut off = 0;
        for b in blocks {
            let d = b.dim();
            m.view_mut((off, off), (d, d)).copy_from(&b.matrix);
            off += d;
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn exp(&self, t: f64) -> Result<DMatrix<f64>, LinalgError> {
        matrix_exp(self, t)
    }

    /// Apply `e^{Bt}` to a vector.
    pub fn propagate(&self, t: f64, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let e = self.exp(t)?;
        Ok((e * DVector::from_column_slice(v)).as_slice().to_vec())
    }

    /// Eigenvalues from the real Schur form, sorted by real part then
    /// imaginary part.
    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        sorted_eigenvalues(&self.matrix)
    }

    pub fn shifted(&self, shift: f64) -> Self {
        let n = self.dim();
        Self {
            matrix: &self.matrix + DMatrix::from_diagonal_element(n, n, shift),
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for LinearGenerator {
    type Error = LinalgError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(&rows)
    }
}

impl From<LinearGenerator> for Vec<Vec<f64>> {
    fn from(g: LinearGenerator) -> Self {
        g.matrix.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

pub(crate) fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = m.clone().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    ev
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
// Backward-error bounds for each diagonal Padé degree (double precision).
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

/// `e^{Bt}` by scaling and squaring with diagonal Padé approximants of
/// degree 3 through 13.
pub fn matrix_exp(b: &LinearGenerator, t: f64) -> Result<DMatrix<f64>, LinalgError> {
    if !t.is_finite() {
        return Err(LinalgError::NonFiniteTime(t));
    }
    let n = b.dim();
    if t == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let a = b.matrix() * t;
    let norm = one_norm(&a);
    if !norm.is_finite() {
        return Err(LinalgError::Range { norm });
    }
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;

    for &(deg, theta) in &THETA {
        if norm <= theta {
            let coeffs: &[f64] = match deg {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            // Even/odd split: U = A * sum b_{2k+1} A^{2k}, V = sum b_{2k} A^{2k}.
            let mut u = DMatrix::zeros(n, n);
            let mut v = DMatrix::zeros(n, n);
            let mut pow = id.clone();
            for k in 0..=deg / 2 {
                v += &pow * coeffs[2 * k];
                u += &pow * coeffs[2 * k + 1];
                pow = &pow * &a2;
            }
            let u = &a * u;
            return finish(solve_pade(&u, &v)?, norm);
        }
    }

    let s = ((norm / THETA13).log2().ceil()).max(0.0);
    if s > 1000.0 {
        return Err(LinalgError::Range { norm });
    }
    let s = s as i32;
    let scale = 2f64.powi(-s);
    let a = a * scale;
    let a2 = a2 * (scale * scale);
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let c = &PADE13;
    let u_inner = &a6 * (&a6 * c[13] + &a4 * c[11] + &a2 * c[9]) + &a6 * c[7] + &a4 * c[5] + &a2 * c[3] + &id * c[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * c[12] + &a4 * c[10] + &a2 * c[8]) + &a6 * c[6] + &a4 * c[4] + &a2 * c[2] + &id * c[0];
    let mut r = solve_pade(&u, &v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    finish(r, norm)
}

fn solve_pade(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let p = v + u;
    let q = v - u;
    let norm = one_norm(u);
    q.lu().solve(&p).ok_or(LinalgError::Range { norm })
}

fn finish(r: DMatrix<f64>, norm: f64) -> Result<DMatrix<f64>, LinalgError> {
    if r.iter().all(|x| x.is_finite()) {
        Ok(r)
    } else {
        Err(LinalgError::Range { norm })
    }
}

/// Complementary spectral projections `P0` (center) and `P-` (stable).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSplit {
    pub center_projection: DMatrix<f64>,
    pub stable_projection: DMatrix<f64>,
    pub center_dim: usize,
    pub stable_dim: usize,
    pub eigen_tolerance: f64,
}

pub const DEFAULT_EIGEN_TOLERANCE: f64 = 1e-9;
const SEMISIMPLE_RANK_TOL: f64 = 1e-8;
const CLUSTER_TOL: f64 = 1e-7;

/// SVD whose factors reproduce `m` to near machine precision.
///
/// Candidates are tried in turn (default threshold, tighter threshold, the
/// transpose) and the first that reconstructs `m` is returned; otherwise the
/// one with the smallest reconstruction error.
pub fn accurate_svd(m: DMatrix<f64>, compute_u: bool, compute_v: bool) -> nalgebra::SVD<f64, Dyn, Dyn> {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let accept = 1e3 * f64::EPSILON * scale * (m.nrows().max(m.ncols()) as f64);
    let error = |svd: &nalgebra::SVD<f64, Dyn, Dyn>| match (&svd.u, &svd.v_t) {
        (Some(u), Some(v_t)) => {
            let r = u * DMatrix::from_diagonal(&svd.singular_values) * v_t - &m;
            if r.iter().all(|x| x.is_finite()) {
                r.norm()
            } else {
                f64::INFINITY
            }
        }
        _ => f64::INFINITY,
    };
    let transposed = |svd: nalgebra::SVD<f64, Dyn, Dyn>| nalgebra::SVD {
        u: svd.v_t.map(|v| v.transpose()),
        v_t: svd.u.map(|u| u.transpose()),
        singular_values: svd.singular_values,
    };
    let candidate = |k: usize| match k {
        0 => Some(m.clone().svd(true, true)),
        1 => m.clone().try_svd(true, true, 1e-20, 100_000),
        2 => Some(transposed(m.transpose().svd(true, true))),
        _ => m.transpose().try_svd(true, true, 1e-20, 100_000).map(transposed),
    };
    let mut best: Option<(f64, nalgebra::SVD<f64, Dyn, Dyn>)> = None;
    for svd in (0..4).filter_map(candidate) {
        let e = error(&svd);
        if e <= accept {
            best = Some((e, svd));
            break;
        }
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, svd));
        }
    }
    let (_, mut svd) = best.expect("at least one candidate");
    if !compute_u {
        svd.u = None;
    }
    if !compute_v {
        svd.v_t = None;
    }
    svd
}

/// Split `R^n = E0 + E-` where `E0` is spanned by eigenvectors whose
/// eigenvalues have `|Re| <= tol` and `E-` is the stable generalized
/// eigenspace.
///
/// With `p(B)` the product of the real factors belonging to the distinct
/// center eigenvalues, `ker p(B) = E0` and `range p(B) = E-` exactly when the
/// center block is semisimple; a kernel smaller than the center multiplicity
/// means a nilpotent part.
pub fn spectral_split(b: &LinearGenerator, eigen_tolerance: f64) -> Result<SpectralSplit, LinalgError> {
    let n = b.dim();
    let eig = b.eigenvalues();
    if let Some(bad) = eig.iter().find(|l| l.re > eigen_tolerance) {
        return Err(LinalgError::PositiveSpectrum {
            re: bad.re,
            im: bad.im,
            tol: eigen_tolerance,
        });
    }
    let center: Vec<Complex<f64>> = eig.iter().copied().filter(|l| l.re.abs() <= eigen_tolerance).collect();
    let n0 = center.len();
    let id = DMatrix::<f64>::identity(n, n);
    if n0 == 0 {
        return Ok(SpectralSplit {
            center_projection: DMatrix::zeros(n, n),
            stable_projection: id,
            center_dim: 0,
            stable_dim: n,
            eigen_tolerance,
        });
    }
    if n0 == n {
        // Every eigenvalue is central; semisimplicity still has to hold.
        let p = center_polynomial(b.matrix(), &center);
        let kernel_dim = numerical_kernel_dim(&p);
        if kernel_dim < n0 {
            return Err(LinalgError::NonSemisimpleCenter {
                kernel_dim,
                multiplicity: n0,
            });
        }
        return Ok(SpectralSplit {
            center_projection: id,
            stable_projection: DMatrix::zeros(n, n),
            center_dim: n,
            stable_dim: 0,
            eigen_tolerance,
        });
    }

    let p = center_polynomial(b.matrix(), &center);
    let svd = accurate_svd(p.clone(), true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sv = &svd.singular_values;
    let smax = sv.max().max(f64::MIN_POSITIVE);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let kernel_dim = order.iter().filter(|&&i| sv[i] <= SEMISIMPLE_RANK_TOL * smax).count();
    if kernel_dim < n0 {
        return Err(LinalgError::NonSemisimpleCenter {
            kernel_dim,
            multiplicity: n0,
        });
    }
    // The n0 smallest singular directions span the kernel (E0); the
    // n - n0 largest left singular vectors span the range (E-).
    let mut basis = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().rev().take(n0).enumerate() {
        basis.set_column(k, &v_t.row(i).transpose());
    }
    for (k, &i) in order.iter().take(n - n0).enumerate() {
        basis.set_column(n0 + k, &u.column(i));
    }
    let inv = basis.clone().try_inverse().ok_or(LinalgError::NonSemisimpleCenter {
        kernel_dim,
        multiplicity: n0,
    })?;
    let mut sel = DMatrix::zeros(n, n);
    for k in 0..n0 {
        sel[(k, k)] = 1.0;
    }
    let p0 = &basis * sel * &inv;
    let pm = &id - &p0;
    Ok(SpectralSplit {
        center_projection: p0,
        stable_projection: pm,
        center_dim: n0,
        stable_dim: n - n0,
        eigen_tolerance,
    })
}

/// Product of `(B - mu)` for real and `(B^2 - 2 Re(mu) B + |mu|^2)` for
/// conjugate pairs over the distinct center eigenvalues.
fn center_polynomial(b: &DMatrix<f64>, center: &[Complex<f64>]) -> DMatrix<f64> {
    let n = b.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut distinct: Vec<Complex<f64>> = Vec::new();
    for &l in center.iter().filter(|l| l.im >= -CLUSTER_TOL) {
        let l = Complex::new(l.re, l.im.abs());
        if !distinct
            .iter()
            .any(|d| (d - l).norm() <= CLUSTER_TOL * (1.0 + l.norm()))
        {
            distinct.push(l);
        }
    }
    let mut p = id.clone();
    for mu in distinct {
        let factor = if mu.im.abs() <= CLUSTER_TOL * (1.0 + mu.norm()) {
            b - &id * mu.re
        } else {
            b * b - b * (2.0 * mu.re) + &id * mu.norm_sqr()
        };
        p *= factor;
    }
    p
}

fn numerical_kernel_dim(m: &DMatrix<f64>) -> usize {
    let sv = accurate_svd(m.clone(), false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return m.nrows();
    }
    sv.iter().filter(|&&s| s <= SEMISIMPLE_RANK_TOL * smax).count()
}

/// Frequency vector `omega`; angles advance as `omega * t mod 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrequencyVector(pub Vec<f64>);

impl FrequencyVector {
    pub fn new(components: Vec<f64>) -> Result<Self, LinalgError> {
        if components.iter().any(|w| !w.is_finite()) {
            return Err(LinalgError::NonFiniteFrequency);
        }
        Ok(Self(components))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Independence {
    /// No integer relation with `max |k_i| <= bound` was found.
    Independent { bound: u32 },
    /// A nonzero relation `k . omega ~ 0`, first nonzero entry positive,
    /// of minimal max-norm.
    Dependent { relation: Vec<i64> },
}

pub const MAX_EXHAUSTIVE_DIM: usize = 4;

/// Exhaustive search for an integer relation `|k . omega| < tol` with
/// `max |k_i| <= bound`.
///
/// The first `n - 1` coefficients are enumerated; the last one is solved for
/// directly, so the cost is `(2Q + 1)^{n-1}`.
pub fn rational_independence(omega: &FrequencyVector, bound: u32, tol: f64) -> Result<Independence, LinalgError> {
    let n = omega.len();
    if n > MAX_EXHAUSTIVE_DIM {
        return Err(LinalgError::DimensionTooLarge(n));
    }
    if bound == 0 {
        return Err(LinalgError::InvalidBound);
    }
    let w = omega.as_slice();
    if n == 0 {
        return Ok(Independence::Independent { bound });
    }
    let q = bound as i64;
    let last = w[n - 1];
    let mut best: Option<Vec<i64>> = None;
    let mut prefix = vec![-q; n - 1];
    loop {
        let partial: f64 = prefix.iter().zip(w).map(|(&k, &x)| k as f64 * x).sum();
        let candidates: Vec<i64> = if last == 0.0 {
            if partial.abs() < tol {
                (-q..=q).collect()
            } else {
                Vec::new()
            }
        } else {
            let a = (-partial - tol) / last;
            let b = (-partial + tol) / last;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let lo = (lo.ceil() as i64).max(-q);
            let hi = (hi.floor() as i64).min(q);
            (lo..=hi).collect()
        };
        for kn in candidates {
            let mut k = prefix.clone();
            k.push(kn);
            if k.iter().all(|&c| c == 0) || !first_nonzero_positive(&k) {
                continue;
            }
            let dot: f64 = k.iter().zip(w).map(|(&c, &x)| c as f64 * x).sum();
            if dot.abs() >= tol {
                continue;
            }
            if best.as_ref().is_none_or(|b| relation_key(&k) < relation_key(b)) {
                best = Some(k);
            }
        }
        if !advance(&mut prefix, q) {
            break;
        }
    }
    Ok(match best {
        Some(relation) => Independence::Dependent { relation },
        None => Independence::Independent { bound },
    })
}

fn first_nonzero_positive(k: &[i64]) -> bool {
    k.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0)
}

fn relation_key(k: &[i64]) -> (i64, i64, Vec<i64>) {
    let max = k.iter().map(|c| c.abs()).max().unwrap_or(0);
    let l1 = k.iter().map(|c| c.abs()).sum();
    (max, l1, k.iter().map(|c| -c).collect())
}

fn advance(prefix: &mut [i64], q: i64) -> bool {
    for c in prefix.iter_mut().rev() {
        if *c < q {
            *c += 1;
            return true;
        }
        *c = -q;
    }
    false
}
