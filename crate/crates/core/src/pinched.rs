//! Quasiperiodic pinched torus families.
//!
//! A family is given by an integer matrix `M` (the torus homomorphism
//! `theta -> M theta mod 1`), a closed set `S` of the base torus `T^m`, pinch
//! loci `C_j` inside `S`, and a frequency vector with `M omega = 0`. Points are
//! `theta` in `T^n` with `M theta` in `S`; coordinate `j` is collapsed over
//! `C_j`. The embedding `z_j = dist(M theta, C_j) e^{2 pi i theta_j}`,
//! `w = e^{2 pi i M theta}` conjugates the translation flow to a linear one.

use crate::flows::{write_series_csv, Chart};
use crate::linalg::{LinalgError, LinearGenerator};
use crate::report::CheckResult;
use crate::Rng;
use nalgebra::{DMatrix, DVector};
use num::integer::{gcd, lcm};
use num::rational::Ratio;
use num::{One, ToPrimitive, Zero};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use thiserror::Error;

pub type Rational = Ratio<i64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PinchedError {
    #[error("homomorphism matrix has trivial kernel; the only compatible flow is stationary")]
    ZeroKernel,
    #[error("base point {base:?} is not in S")]
    NotInFamily { base: Vec<f64> },
    #[error("M omega != 0 for the {prime_scale}-component: row sums {residual:?}")]
    OmegaNotInKernel { prime_scale: u64, residual: Vec<String> },
    #[error("coordinate {0} is pinched but column {0} of M is nonzero")]
    PinchOffKernel(usize),
    #[error("pinch locus C_{0} is not contained in S")]
    LocusOutsideS(usize),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Rational number written as `"p/q"`, an integer, or a decimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "String")]
pub struct Rat(pub Rational);

impl From<Rat> for String {
    fn from(r: Rat) -> Self {
        r.0.to_string()
    }
}

impl TryFrom<serde_json::Value> for Rat {
    type Error = String;
    fn try_from(v: serde_json::Value) -> Result<Self, Self::Error> {
        match v {
            serde_json::Value::String(s) => parse_rational(&s).map(Rat),
            serde_json::Value::Number(n) => parse_rational(&n.to_string()).map(Rat),
            other => Err(format!("expected a rational number, got {other}")),
        }
    }
}

/// Parses `p/q`, integers and plain or scientific decimals exactly.
pub fn parse_rational(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    if s.contains('/') {
        return s.parse::<Rational>().map_err(|e| format!("{s:?}: {e}"));
    }
    let bad = || format!("cannot parse {s:?} as a rational");
    let (mantissa, exp) = match s.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let digits = format!("{int}{frac}");
    let num: i64 = digits.parse().map_err(|_| bad())?;
    let scale = exp - frac.len() as i32;
    let ten = |k: i32| 10i64.checked_pow(k as u32).ok_or_else(bad);
    if scale >= 0 {
        Ok(Rational::from_integer(num.checked_mul(ten(scale)?).ok_or_else(bad)?))
    } else {
        Ok(Rational::new(num, ten(-scale)?))
    }
}

/// Closed arc of `R/Z` from `lo` forward to `hi`; `[0, 1]` is the full circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[Rat; 2]", into = "[Rat; 2]")]
pub struct CircleArc {
    pub lo: Rational,
    pub hi: Rational,
}

impl From<[Rat; 2]> for CircleArc {
    fn from(v: [Rat; 2]) -> Self {
        Self { lo: v[0].0, hi: v[1].0 }
    }
}

impl From<CircleArc> for [Rat; 2] {
    fn from(a: CircleArc) -> Self {
        [Rat(a.lo), Rat(a.hi)]
    }
}

fn frac(r: Rational) -> Rational {
    r - r.floor()
}

impl CircleArc {
    pub fn full() -> Self {
        Self {
            lo: Rational::zero(),
            hi: Rational::one(),
        }
    }

    pub fn point(p: Rational) -> Self {
        Self { lo: p, hi: p }
    }

    /// Forward length in `[0, 1]`.
    pub fn length(&self) -> Rational {
        if self.hi - self.lo >= Rational::one() {
            return Rational::one();
        }
        frac(self.hi - self.lo)
    }

    fn start(&self) -> f64 {
        frac(self.lo).to_f64().unwrap_or(0.0)
    }

    /// Circle distance from `x` to the arc.
    pub fn distance(&self, x: f64) -> f64 {
        let len = self.length().to_f64().unwrap_or(1.0);
        if len >= 1.0 {
            return 0.0;
        }
        let off = (x - self.start()).rem_euclid(1.0);
        if off <= len {
            return 0.0;
        }
        (off - len).min(1.0 - off)
    }

    /// Exact containment of another arc.
    pub fn contains_arc(&self, other: &CircleArc) -> bool {
        if self.length() == Rational::one() {
            return true;
        }
        if other.length() == Rational::one() {
            return false;
        }
        let off = frac(other.lo - self.lo);
        off + other.length() <= self.length()
    }
}

/// Finite union of products of closed arcs in `T^m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArcSet {
    pub boxes: Vec<Vec<CircleArc>>,
}

impl ArcSet {
    pub fn empty() -> Self {
        Self { boxes: Vec::new() }
    }

    pub fn full(m: usize) -> Self {
        Self {
            boxes: vec![vec![CircleArc::full(); m]],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Product-metric distance (root-sum-square of circle distances) to the
    /// nearest box; infinite for the empty set.
    pub fn distance(&self, p: &[f64]) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.iter().zip(p).map(|(a, &x)| a.distance(x).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    /// Box-wise containment: every box of `other` lies in a single box here.
    pub fn contains_set(&self, other: &ArcSet) -> bool {
        other.boxes.iter().all(|ob| {
            self.boxes
                .iter()
                .any(|b| b.iter().zip(ob).all(|(a, o)| a.contains_arc(o)))
        })
    }
}

/// `sum rational * sqrt(prime_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OmegaTerm {
    pub rational: Rat,
    pub prime_scale: u64,
}

pub type OmegaComponent = Vec<OmegaTerm>;

fn omega_value(c: &[OmegaTerm]) -> f64 {
    c.iter()
        .map(|t| t.rational.0.to_f64().unwrap_or(f64::NAN) * (t.prime_scale as f64).sqrt())
        .sum()
}

fn is_squarefree(k: u64) -> bool {
    if k == 0 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= k {
        if k.is_multiple_of(d * d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Spec file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinchedSpecFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "M")]
    pub matrix: Vec<i64>,
    #[serde(rename = "S")]
    pub s: ArcSet,
    #[serde(rename = "C")]
    pub c: Vec<ArcSet>,
    #[serde(default)]
    pub omega: Option<Vec<OmegaComponent>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinchedTorusSpec {
    n: usize,
    m: usize,
    matrix: Vec<Vec<i64>>,
    s: ArcSet,
    loci: Vec<ArcSet>,
    omega_exact: Vec<OmegaComponent>,
    omega: Vec<f64>,
    stationary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDirection {
    /// Primitive integer basis of `ker M`.
    pub basis: Vec<Vec<i64>>,
    pub omega: Vec<OmegaComponent>,
    pub omega_values: Vec<f64>,
}

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// Integer kernel basis by exact elimination and the default frequency
/// vector `sum_i sqrt(p_i) b_i`.
pub fn kernel_direction(matrix: &[Vec<i64>], n: usize) -> Result<KernelDirection, PinchedError> {
    let basis = integer_kernel(matrix, n);
    if basis.is_empty() {
        return Err(PinchedError::ZeroKernel);
    }
    if basis.len() > PRIMES.len() {
        return Err(PinchedError::InvalidSpec(format!(
            "kernel dimension {} exceeds {}",
            basis.len(),
            PRIMES.len()
        )));
    }
    let mut omega: Vec<OmegaComponent> = vec![Vec::new(); n];
    for (b, &p) in basis.iter().zip(&PRIMES) {
        for (j, &c) in b.iter().enumerate() {
            if c != 0 {
                omega[j].push(OmegaTerm {
                    rational: Rat(Rational::from_integer(c)),
                    prime_scale: p,
                });
            }
        }
    }
    let omega_values = omega.iter().map(|c| omega_value(c)).collect();
    Ok(KernelDirection {
        basis,
        omega,
        omega_values,
    })
}

fn integer_kernel(matrix: &[Vec<i64>], n: usize) -> Vec<Vec<i64>> {
    let mut a: Vec<Vec<Rational>> = matrix
        .iter()
        .map(|r| r.iter().map(|&v| Rational::from_integer(v)).collect())
        .collect();
    let rows = a.len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..n {
        let Some(p) = (r..rows).find(|&i| !a[i][col].is_zero()) else {
            continue;
        };
        a.swap(r, p);
        let lead = a[r][col];
        for v in a[r].iter_mut() {
            *v /= lead;
        }
        for i in 0..rows {
            if i != r && !a[i][col].is_zero() {
                let f = a[i][col];
                let pivot_row = a[r].clone();
                for (v, pv) in a[i].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        pivots.push(col);
        r += 1;
        if r == rows {
            break;
        }
    }
    (0..n)
        .filter(|c| !pivots.contains(c))
        .map(|free| {
            let mut v = vec![Rational::zero(); n];
            v[free] = Rational::one();
            for (row, &pc) in pivots.iter().enumerate() {
                v[pc] = -a[row][free];
            }
            let den = v.iter().fold(1i64, |acc, x| lcm(acc, *x.denom()));
            let ints: Vec<i64> = v.iter().map(|x| (x * den).to_integer()).collect();
            let g = ints.iter().fold(0i64, |acc, &x| gcd(acc, x)).max(1);
            ints.iter().map(|x| x / g).collect()
        })
        .collect()
}

impl PinchedTorusSpec {
    pub fn new(
        n: usize,
        m: usize,
        matrix: Vec<Vec<i64>>,
        s: ArcSet,
        loci: Vec<ArcSet>,
        omega: Option<Vec<OmegaComponent>>,
    ) -> Result<Self, PinchedError> {
        if n == 0 || m == 0 {
            return Err(PinchedError::InvalidSpec("n and m must be positive".into()));
        }
        if matrix.len() != m || matrix.iter().any(|r| r.len() != n) {
            return Err(PinchedError::InvalidSpec(format!("M must be {m}x{n}")));
        }
        if loci.len() != n {
            return Err(PinchedError::InvalidSpec(format!(
                "expected {n} pinch loci, got {}",
                loci.len()
            )));
        }
        for set in std::iter::once(&s).chain(&loci) {
            if set.boxes.iter().any(|b| b.len() != m) {
                return Err(PinchedError::InvalidSpec(format!("every box must have {m} arcs")));
            }
        }
        for (j, c) in loci.iter().enumerate() {
            if !c.is_empty() && matrix.iter().any(|r| r[j] != 0) {
                return Err(PinchedError::PinchOffKernel(j));
            }
            if !s.contains_set(c) {
                return Err(PinchedError::LocusOutsideS(j));
            }
        }
        let (omega_exact, stationary) = match omega {
            Some(w) => {
                if w.len() != n {
                    return Err(PinchedError::InvalidSpec(format!("omega must have {n} components")));
                }
                (w, false)
            }
            None => match kernel_direction(&matrix, n) {
                Ok(k) => (k.omega, false),
                Err(PinchedError::ZeroKernel) => (vec![Vec::new(); n], true),
                Err(e) => return Err(e),
            },
        };
        check_kernel(&matrix, &omega_exact)?;
        let omega_values = omega_exact.iter().map(|c| omega_value(c)).collect();
        Ok(Self {
            n,
            m,
            matrix,
            s,
            loci,
            omega_exact,
            omega: omega_values,
            stationary,
        })
    }

    pub fn from_file(file: PinchedSpecFile) -> Result<Self, PinchedError> {
        if file.matrix.len() != file.n * file.m {
            return Err(PinchedError::InvalidSpec(format!(
                "M has {} entries, expected {}",
                file.matrix.len(),
                file.n * file.m
            )));
        }
        let rows = file.matrix.chunks(file.n).map(<[i64]>::to_vec).collect();
        Self::new(file.n, file.m, rows, file.s, file.c, file.omega)
    }

    pub fn from_json(text: &str) -> Result<Self, PinchedError> {
        let file: PinchedSpecFile = serde_json::from_str(text).map_err(|e| PinchedError::InvalidSpec(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn omega_exact(&self) -> &[OmegaComponent] {
        &self.omega_exact
    }

    /// True when `ker M` is trivial and no omega was supplied.
    pub fn is_stationary(&self) -> bool {
        self.stationary
    }

    pub fn embedding_dim(&self) -> usize {
        2 * (self.n + self.m)
    }

    /// `blockdiag(rot(2 pi omega_1), ..., rot(2 pi omega_n), 0_{2m})`.
    pub fn generator(&self) -> LinearGenerator {
        let mut blocks: Vec<LinearGenerator> = self.omega.iter().map(|&w| LinearGenerator::rotation(TAU * w)).collect();
        blocks.push(LinearGenerator::scalar(0.0, 2 * self.m));
        LinearGenerator::block_diag(&blocks).expect("non-empty")
    }

    /// `M theta mod 1`.
    pub fn base(&self, theta: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .map(|row| {
                row.iter()
                    .zip(theta)
                    .map(|(&k, &t)| k as f64 * t)
                    .sum::<f64>()
                    .rem_euclid(1.0)
            })
            .map(|v| if v >= 1.0 { 0.0 } else { v })
            .collect()
    }

    pub fn point(&self, theta: &[f64]) -> Result<PinchedPoint, PinchedError> {
        if theta.len() != self.n || theta.iter().any(|v| !v.is_finite()) {
            return Err(PinchedError::InvalidSpec(format!(
                "theta must be {} finite angles",
                self.n
            )));
        }
        let base = self.base(theta);
        if self.s.distance(&base) > MEMBERSHIP_TOL {
            return Err(PinchedError::NotInFamily { base });
        }
        let collapsed: Vec<bool> = self.loci.iter().map(|c| c.distance(&base) <= MEMBERSHIP_TOL).collect();
        let theta = Chart::unit_torus(self.n)
            .canonicalize(theta)
            .into_iter()
            .zip(&collapsed)
            .map(|(t, &c)| if c { 0.0 } else { t })
            .collect();
        Ok(PinchedPoint {
            theta,
            collapsed_mask: collapsed,
        })
    }

    /// Pinch profile `rho_j`: distance from the base to `C_j`, or 1 when
    /// `C_j` is empty.
    pub fn profile(&self, j: usize, base: &[f64]) -> f64 {
        if self.loci[j].is_empty() {
            1.0
        } else {
            self.loci[j].distance(base)
        }
    }

    /// `(z_1, ..., z_n, w_1, ..., w_m)` as `2(n+m)` reals.
    pub fn canonical_embedding(&self, p: &PinchedPoint) -> Vec<f64> {
        let base = self.base(&p.theta);
        let mut out = Vec::with_capacity(self.embedding_dim());
        for (j, &t) in p.theta.iter().enumerate() {
            if p.collapsed_mask[j] {
                out.extend([0.0, 0.0]);
            } else {
                let rho = self.profile(j, &base);
                out.extend([rho * (TAU * t).cos(), rho * (TAU * t).sin()]);
            }
        }
        for b in base {
            out.extend([(TAU * b).cos(), (TAU * b).sin()]);
        }
        out
    }

    /// `theta + omega t mod 1`; collapsed coordinates stay at 0.
    pub fn flow(&self, p: &PinchedPoint, t: f64) -> PinchedPoint {
        let theta = p
            .theta
            .iter()
            .zip(&self.omega)
            .zip(&p.collapsed_mask)
            .map(|((&th, &w), &c)| {
                if c {
                    0.0
                } else {
                    Chart::unit_torus(1).canonicalize(&[th + w * t])[0]
                }
            })
            .collect();
        PinchedPoint {
            theta,
            collapsed_mask: p.collapsed_mask.clone(),
        }
    }

    /// Random member of the family: uniform `theta` when `S` is the full
    /// torus, otherwise rejection sampling followed by, as a fallback, a
    /// preimage of a point of `S` shifted along `ker M`.
    pub fn sample_point(&self, rng: &mut Rng) -> Option<PinchedPoint> {
        for _ in 0..64 {
            let theta: Vec<f64> = (0..self.n).map(|_| rng.gen::<f64>()).collect();
            if let Ok(p) = self.point(&theta) {
                return Some(p);
            }
        }
        let b = self.s.boxes.get(rng.gen_range(0..self.s.boxes.len().max(1)))?;
        let target: Vec<f64> = b
            .iter()
            .map(|a| a.start() + rng.gen::<f64>() * a.length().to_f64().unwrap_or(0.0))
            .collect();
        self.point(&self.preimage(&target, rng)?).ok()
    }

    /// Random point over a point of `C_j`.
    pub fn sample_collapsed(&self, j: usize, rng: &mut Rng) -> Option<PinchedPoint> {
        let b = self.loci[j]
            .boxes
            .get(rng.gen_range(0..self.loci[j].boxes.len().max(1)))?;
        let target: Vec<f64> = b
            .iter()
            .map(|a| a.start() + rng.gen::<f64>() * a.length().to_f64().unwrap_or(0.0))
            .collect();
        let p = self.point(&self.preimage(&target, rng)?).ok()?;
        p.collapsed_mask[j].then_some(p)
    }

    /// Some `theta` with `M theta = target mod 1`, plus a random kernel shift.
    fn preimage(&self, target: &[f64], rng: &mut Rng) -> Option<Vec<f64>> {
        let m = DMatrix::from_fn(self.m, self.n, |i, j| self.matrix[i][j] as f64);
        let pinv = m.clone().pseudo_inverse(1e-12).ok()?;
        let mut theta = pinv * DVector::from_column_slice(target);
        for b in integer_kernel(&self.matrix, self.n) {
            let s: f64 = rng.gen();
            for (t, &k) in theta.iter_mut().zip(&b) {
                *t += s * k as f64;
            }
        }
        let theta: Vec<f64> = theta.iter().map(|t| t.rem_euclid(1.0)).collect();
        let base = self.base(&theta);
        let close = Chart::unit_torus(self.m).distance(&base, target) <= MEMBERSHIP_TOL;
        close.then_some(theta)
    }
}

/// Tolerance for floating-point membership of `M theta` in `S` and `C_j`.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

fn check_kernel(matrix: &[Vec<i64>], omega: &[OmegaComponent]) -> Result<(), PinchedError> {
    // sqrt of distinct squarefree integers are linearly independent over Q,
    // so M omega = 0 splits into one rational system per scale.
    let mut by_scale: BTreeMap<u64, Vec<Rational>> = BTreeMap::new();
    for (j, comp) in omega.iter().enumerate() {
        for t in comp {
            if !is_squarefree(t.prime_scale) {
                return Err(PinchedError::InvalidSpec(format!(
                    "prime_scale {} is not squarefree",
                    t.prime_scale
                )));
            }
            let v = by_scale
                .entry(t.prime_scale)
                .or_insert_with(|| vec![Rational::zero(); omega.len()]);
            v[j] += t.rational.0;
        }
    }
    for (scale, v) in by_scale {
        let residual: Vec<Rational> = matrix
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&v)
                    .map(|(&k, x)| x * k)
                    .fold(Rational::zero(), |a, b| a + b)
            })
            .collect();
        if residual.iter().any(|r| !r.is_zero()) {
            return Err(PinchedError::OmegaNotInKernel {
                prime_scale: scale,
                residual: residual.iter().map(|r| r.to_string()).collect(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinchedPoint {
    pub theta: Vec<f64>,
    pub collapsed_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub n_samples: usize,
    pub linearity_max: f64,
    /// Largest difference between embeddings of identified points (exact
    /// consistency means 0).
    pub quotient_max: f64,
    pub quotient_pairs: usize,
    /// Smallest image distance over state distance among non-identified pairs.
    pub separation_margin: f64,
    pub separation_pairs: usize,
    /// Largest `|z_j|` and `|w_k|` over samples.
    pub max_pinched_modulus: f64,
    pub max_base_modulus: f64,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

pub const LINEARITY_TOL: f64 = 1e-10;

/// Linearity, quotient consistency and separation on sampled points.
pub fn verify_family(spec: &PinchedTorusSpec, n_samples: usize, rng: &mut Rng) -> Result<FamilyReport, PinchedError> {
    if n_samples < 2 {
        return Err(PinchedError::InvalidSpec("at least two samples are required".into()));
    }
    let b = spec.generator();
    let mut points = Vec::with_capacity(n_samples);
    let pinched: Vec<usize> = (0..spec.n).filter(|&j| !spec.loci[j].is_empty()).collect();
    while points.len() < n_samples {
        // Every fourth sample sits on a pinch locus when there is one.
        let p = if !pinched.is_empty() && points.len() % 4 == 3 {
            let j = pinched[points.len() / 4 % pinched.len()];
            spec.sample_collapsed(j, rng)
        } else {
            spec.sample_point(rng)
        };
        match p {
            Some(p) => points.push(p),
            None => {
                return Err(PinchedError::InvalidSpec(
                    "could not sample points of the family".into(),
                ));
            }
        }
    }
    let images: Vec<Vec<f64>> = points.iter().map(|p| spec.canonical_embedding(p)).collect();

    let mut linearity_max: f64 = 0.0;
    for (p, y) in points.iter().zip(&images) {
        let t: f64 = rng.gen_range(-10.0..=10.0);
        let lhs = spec.canonical_embedding(&spec.flow(p, t));
        let rhs = b.propagate(t, y)?;
        linearity_max = linearity_max.max(crate::euclid_dist(&lhs, &rhs));
    }

    let mut quotient_max: f64 = 0.0;
    let mut quotient_pairs = 0;
    for (p, y) in points.iter().zip(&images) {
        if !p.collapsed_mask.iter().any(|&c| c) {
            continue;
        }
        let mut raw = p.theta.clone();
        for (t, &c) in raw.iter_mut().zip(&p.collapsed_mask) {
            if c {
                *t = rng.gen();
            }
        }
        let q = spec.point(&raw)?;
        let yq = spec.canonical_embedding(&q);
        let d = if &yq == y {
            0.0
        } else {
            crate::euclid_dist(&yq, y).max(f64::MIN_POSITIVE)
        };
        quotient_max = quotient_max.max(d);
        quotient_pairs += 1;
    }

    let torus = Chart::unit_torus(spec.n);
    let mut separation_margin = f64::INFINITY;
    let mut separation_pairs = 0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = torus.distance(&points[i].theta, &points[j].theta);
            if d == 0.0 {
                continue;
            }
            separation_pairs += 1;
            separation_margin = separation_margin.min(crate::euclid_dist(&images[i], &images[j]) / d);
        }
    }

    let mut max_pinched_modulus: f64 = 0.0;
    let mut max_base_modulus: f64 = 0.0;
    for y in &images {
        for (k, pair) in y.chunks(2).enumerate() {
            let r = pair[0].hypot(pair[1]);
            if k < spec.n {
                max_pinched_modulus = max_pinched_modulus.max(r);
            } else {
                max_base_modulus = max_base_modulus.max(r);
            }
        }
    }
    let pinched_bound = if spec.loci.iter().any(ArcSet::is_empty) {
        1.0
    } else {
        0.5 * (spec.m as f64).sqrt()
    };

    let checks = vec![
        CheckResult::at_most("linearity_residual", linearity_max, LINEARITY_TOL),
        CheckResult::new(
            "quotient_consistency",
            quotient_max,
            crate::report::Comparison::Equals,
            0.0,
        ),
        CheckResult::above("separation_margin", separation_margin, 0.0),
        CheckResult::at_most("pinched_modulus", max_pinched_modulus, pinched_bound + 1e-12),
        CheckResult::at_most("base_modulus", max_base_modulus, 1.0 + 1e-12),
    ];
    let pass = crate::report::all_pass(&checks);
    Ok(FamilyReport {
        n_samples: points.len(),
        linearity_max,
        quotient_max,
        quotient_pairs,
        separation_margin,
        separation_pairs,
        max_pinched_modulus,
        max_base_modulus,
        checks,
        pass,
    })
}

/// Embedded orbit of `p` at `count` equally spaced times in `[0, t_max]`,
/// written as CSV with header `t,y1,...,y_{2(n+m)}`.
pub fn write_embedded_orbit<W: std::io::Write>(
    spec: &PinchedTorusSpec,
    p: &PinchedPoint,
    t_max: f64,
    count: usize,
    out: W,
) -> std::io::Result<()> {
    let rows: Vec<(f64, Vec<f64>)> = (0..count)
        .map(|k| {
            let t = if count > 1 {
                t_max * k as f64 / (count - 1) as f64
            } else {
                0.0
            };
            (t, spec.canonical_embedding(&spec.flow(p, t)))
        })
        .collect();
    write_series_csv(
        out,
        "t",
        "y",
        spec.embedding_dim(),
        rows.iter().map(|(t, y)| (*t, y.as_slice())),
    )
}

/// Figure-style single pinch: `n = 2`, `m = 1`, `M = [0 1]`, `S = T^1`,
/// `C_1 = {0}`, `C_2` empty.
pub fn single_pinch_spec() -> PinchedTorusSpec {
    PinchedTorusSpec::new(
        2,
        1,
        vec![vec![0, 1]],
        ArcSet::full(1),
        vec![
            ArcSet {
                boxes: vec![vec![CircleArc::point(Rational::zero())]],
            },
            ArcSet::empty(),
        ],
        None,
    )
    .expect("valid spec")
}

/// Two pinched coordinates over `{0}` and `[1/4, 1/2]` of one base circle.
pub fn two_pinch_spec() -> PinchedTorusSpec {
    PinchedTorusSpec::new(
        3,
        1,
        vec![vec![0, 0, 1]],
        ArcSet::full(1),
        vec![
            ArcSet {
                boxes: vec![vec![CircleArc::point(Rational::zero())]],
            },
            ArcSet {
                boxes: vec![vec![CircleArc {
                    lo: Rational::new(1, 4),
                    hi: Rational::new(1, 2),
                }]],
            },
            ArcSet::empty(),
        ],
        None,
    )
    .expect("valid spec")
}
