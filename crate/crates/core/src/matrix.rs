//! Dense complex matrices sized for desk-scale geometry (d ≤ 16).
//!
//! Storage is row-major. Everything here is a pure function of its inputs
//! except Gaussian sampling, which advances the caller's [`RngState`].

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Relative pivot cutoff for numerical rank decisions.
pub const RANK_CUTOFF: f64 = 1e-10;

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Matrix unit `E_{ij}` (zero-based indices).
    pub fn unit(n: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(n, n);
        m[(i, j)] = ONE;
        m
    }

    pub fn diag(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &z) in entries.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting NaN/Inf.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("from_row_major", rows * cols, data.len()));
        }
        if let Some(k) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite {
                row: k / cols.max(1),
                col: k % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[C64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::from_row_major(r, c, rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let owned: Vec<Vec<C64>> = rows
            .iter()
            .map(|row| row.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        let refs: Vec<&[C64]> = owned.iter().map(|r| r.as_slice()).collect();
        Self::from_rows(&refs)
    }

    pub fn column_vector(entries: &[C64]) -> Self {
        Self {
            rows: entries.len(),
            cols: 1,
            data: entries.to_vec(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, v: &[C64]) {
        for (r, &z) in v.iter().enumerate() {
            self[(r, c)] = z;
        }
    }

    pub fn columns(&self, range: std::ops::Range<usize>) -> Self {
        Self::from_fn(self.rows, range.len(), |r, c| self[(r, range.start + c)])
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Induced 1-norm (max column sum).
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self[(r, c)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn try_mul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::dim(
                "matmul",
                format!("inner {}", self.cols),
                format!("inner {}", rhs.rows),
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let row_out = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
                let row_rhs = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in row_out.iter_mut().zip(row_rhs) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn try_add(&self, rhs: &Self) -> Result<Self> {
        self.check_same_shape("add", rhs)?;
        Ok(self.zip_with(rhs, |a, b| a + b))
    }

    pub fn try_sub(&self, rhs: &Self) -> Result<Self> {
        self.check_same_shape("sub", rhs)?;
        Ok(self.zip_with(rhs, |a, b| a - b))
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(C64, C64) -> C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, rhs: &Self) -> Result<()> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::dim(
                op,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", rhs.rows, rhs.cols),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_square(&self, op: &'static str) -> Result<()> {
        if !self.is_square() {
            return Err(Error::dim(op, "square", format!("{}x{}", self.rows, self.cols)));
        }
        Ok(())
    }

    /// Commutator `[self, rhs] = self·rhs − rhs·self`.
    pub fn commutator(&self, rhs: &Self) -> Self {
        &(self * rhs) - &(rhs * self)
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape");
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && (self - &self.adjoint()).norm_fro() <= tol
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self[(r, c)])
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.to_nalgebra().singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Solves `self · X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        self.check_square("solve")?;
        if rhs.rows != self.rows {
            return Err(Error::dim("solve", self.rows, rhs.rows));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut b = rhs.clone();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].norm().total_cmp(&a[(j, k)].norm()))
                .unwrap_or(k);
            if a[(p, k)].norm() <= 1e-14 * scale {
                return Err(Error::RankDeficient {
                    requested: n,
                    ratio: a[(p, k)].norm() / scale,
                });
            }
            if p != k {
                a.swap_rows(p, k);
                b.swap_rows(p, k);
            }
            let pivot = a[(k, k)];
            for i in k + 1..n {
                let factor = a[(i, k)] / pivot;
                if factor == ZERO {
                    continue;
                }
                for j in k..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= factor * v;
                }
                for j in 0..b.cols {
                    let v = b[(k, j)];
                    b[(i, j)] -= factor * v;
                }
            }
        }
        for k in (0..n).rev() {
            for j in 0..b.cols {
                let mut acc = b[(k, j)];
                for i in k + 1..n {
                    acc -= a[(k, i)] * b[(i, j)];
                }
                b[(k, j)] = acc / a[(k, k)];
            }
        }
        Ok(b)
    }

    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.rows))
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

// Operator impls panic on shape mismatch; the `try_*` forms return errors.
impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.try_mul(rhs).expect("matrix product shape mismatch")
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.try_add(rhs).expect("matrix sum shape mismatch")
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.try_sub(rhs).expect("matrix difference shape mismatch")
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.map(|z| -z)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        assert!(self.rows == rhs.rows && self.cols == rhs.cols, "add_assign shape");
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            rows: usize,
            cols: usize,
            re: Vec<f64>,
            im: Vec<f64>,
            #[serde(skip)]
            _p: std::marker::PhantomData<&'a ()>,
        }
        Repr {
            rows: self.rows,
            cols: self.cols,
            re: self.data.iter().map(|z| z.re).collect(),
            im: self.data.iter().map(|z| z.im).collect(),
            _p: std::marker::PhantomData,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            rows: usize,
            cols: usize,
            re: Vec<f64>,
            im: Vec<f64>,
        }
        let r = Repr::deserialize(d)?;
        if r.re.len() != r.im.len() {
            return Err(serde::de::Error::custom("re/im length mismatch"));
        }
        let data = r.re.iter().zip(&r.im).map(|(&a, &b)| C64::new(a, b)).collect();
        ComplexMatrix::from_row_major(r.rows, r.cols, data).map_err(serde::de::Error::custom)
    }
}

/// Hilbert–Schmidt inner product `Tr(A†B)`.
pub fn hs_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<C64> {
    a.check_same_shape("hs_inner", b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).sum())
}

// Padé coefficients and thresholds for scaling-and-squaring (degrees 3..13).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
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
const THETA: [(f64, usize); 4] = [
    (1.495585217958292e-2, 3),
    (2.539_398_330_063_23e-1, 5),
    (9.504178996162932e-1, 7),
    (2.097847961257068e0, 9),
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by diagonal Padé approximation with scaling and
/// squaring (degree chosen from the 1-norm, up to [13/13]).
pub fn expm(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    a.check_square("expm")?;
    let n = a.rows();
    let id = ComplexMatrix::identity(n);
    let norm = a.norm_one();
    if norm == 0.0 {
        return Ok(id);
    }
    for &(theta, m) in &THETA {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            return pade_low(a, coeffs);
        }
    }
    let s = (norm / THETA13).log2().ceil().max(0.0) as i32;
    let scaled = a.scale_re(0.5f64.powi(s));
    let mut x = pade13(&scaled)?;
    for _ in 0..s {
        x = &x * &x;
    }
    Ok(x)
}

fn pade_low(a: &ComplexMatrix, b: &[f64]) -> Result<ComplexMatrix> {
    let n = a.rows();
    let a2 = a * a;
    let mut power = ComplexMatrix::identity(n);
    let mut u_inner = ComplexMatrix::zeros(n, n);
    let mut v = ComplexMatrix::zeros(n, n);
    for k in (0..b.len()).step_by(2) {
        v += &power.scale_re(b[k]);
        if k + 1 < b.len() {
            u_inner += &power.scale_re(b[k + 1]);
        }
        power = &power * &a2;
    }
    let u = a * &u_inner;
    (&v - &u).solve(&(&v + &u))
}

fn pade13(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let b = &PADE13;
    let n = a.rows();
    let id = ComplexMatrix::identity(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let lin = |c6: f64, c4: f64, c2: f64| -> ComplexMatrix {
        &(&a6.scale_re(c6) + &a4.scale_re(c4)) + &a2.scale_re(c2)
    };
    let u_hi = &a6 * &lin(b[13], b[11], b[9]);
    let u_lo = &lin(b[7], b[5], b[3]) + &id.scale_re(b[1]);
    let u = a * &(&u_hi + &u_lo);
    let v_hi = &a6 * &lin(b[12], b[10], b[8]);
    let v_lo = &lin(b[6], b[4], b[2]) + &id.scale_re(b[0]);
    let v = &v_hi + &v_lo;
    (&v - &u).solve(&(&v + &u))
}

/// Orthonormal basis of the leading `rank`-dimensional column span of `a`.
///
/// Modified Gram–Schmidt with greedy column pivoting and one
/// reorthogonalization pass. Pivot ties break toward the lower column index,
/// so the output is bit-reproducible for identical input.
pub fn orthonormal_frame(a: &ComplexMatrix, rank: usize) -> Result<ComplexMatrix> {
    if rank == 0 || rank > a.cols() || rank > a.rows() {
        return Err(Error::RankDeficient {
            requested: rank,
            ratio: 0.0,
        });
    }
    let d = a.rows();
    let mut work: Vec<Vec<C64>> = (0..a.cols()).map(|c| a.column(c)).collect();
    let mut used = vec![false; work.len()];
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(rank);
    let mut first_pivot = 0.0;
    for k in 0..rank {
        let mut best = None;
        let mut best_norm = -1.0;
        for (c, col) in work.iter().enumerate() {
            if used[c] {
                continue;
            }
            let nrm = vec_norm(col);
            if nrm > best_norm {
                best_norm = nrm;
                best = Some(c);
            }
        }
        let p = best.expect("rank <= cols");
        if k == 0 {
            first_pivot = best_norm;
        }
        let ratio = if first_pivot > 0.0 { best_norm / first_pivot } else { 0.0 };
        if ratio < RANK_CUTOFF || best_norm == 0.0 {
            return Err(Error::RankDeficient {
                requested: rank,
                ratio,
            });
        }
        used[p] = true;
        let mut v = work[p].clone();
        for _ in 0..2 {
            for b in &basis {
                let proj: C64 = b.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= proj * bi;
                }
            }
        }
        let nrm = vec_norm(&v);
        for z in v.iter_mut() {
            *z /= nrm;
        }
        for (c, col) in work.iter_mut().enumerate() {
            if used[c] {
                continue;
            }
            let proj: C64 = v.iter().zip(col.iter()).map(|(x, y)| x.conj() * y).sum();
            for (ci, vi) in col.iter_mut().zip(&v) {
                *ci -= proj * vi;
            }
        }
        basis.push(v);
    }
    let mut out = ComplexMatrix::zeros(d, rank);
    for (c, b) in basis.iter().enumerate() {
        out.set_column(c, b);
    }
    Ok(out)
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `⟨a, b⟩` conjugate-linear in the first slot.
pub fn vec_inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Deterministic counter-style random state: a ChaCha8 stream selected by
/// `(seed, stream)`.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// Independent state for a worker or sub-task.
    pub fn derive(&self, index: u64) -> Self {
        Self::with_stream(
            self.seed,
            self.stream
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(index + 1),
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn uniform(&mut self) -> f64 {
        use rand::Rng;
        self.rng.random::<f64>()
    }

    /// Standard complex normal: independent real and imaginary parts of
    /// variance 1/2.
    pub fn complex_normal(&mut self) -> C64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        C64::new(self.normal() * s, self.normal() * s)
    }
}

/// Ginibre matrix with i.i.d. standard complex normal entries.
pub fn gaussian_matrix(rng: &mut RngState, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| rng.complex_normal())
}

/// Random unitary from orthonormalizing a square Ginibre matrix.
pub fn random_unitary(rng: &mut RngState, d: usize) -> ComplexMatrix {
    loop {
        if let Ok(u) = orthonormal_frame(&gaussian_matrix(rng, d, d), d) {
            return u;
        }
    }
}

/// `U·diag(s)·W` with singular values drawn uniformly from `[1, max_condition]`,
/// so the 2-norm condition number is at most `max_condition`.
pub fn random_invertible(rng: &mut RngState, d: usize, max_condition: f64) -> ComplexMatrix {
    let u = random_unitary(rng, d);
    let w = random_unitary(rng, d);
    let s: Vec<C64> = (0..d)
        .map(|_| C64::new(1.0 + (max_condition - 1.0) * rng.uniform(), 0.0))
        .collect();
    &(&u * &ComplexMatrix::diag(&s)) * &w
}
