//! Closed-form example geometries: the flat model on C², the complexified
//! two-sphere with its disk companion, tessarine frames on R⁴ and the
//! anticommuting structure on T*P¹.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{ProjectionPoint, TangentVector};
use crate::propagator::PathSpec;
use crate::matrix::{ComplexMatrix, C64, I, ONE, ZERO};
use crate::quantization::pauli;
use crate::tolerances::{CONSTRUCTION_TOL, IDENTITY_TOL};

/// Gauss rule from a symmetric Jacobi matrix (Golub–Welsch).
fn golub_welsch(diag: &[f64], off: &[f64], mass: f64) -> (Vec<f64>, Vec<f64>) {
    let k = diag.len();
    let jac = DMatrix::from_fn(k, k, |r, c| {
        if r == c {
            diag[r]
        } else if r + 1 == c {
            off[r]
        } else if c + 1 == r {
            off[c]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..k)
        .map(|j| (eig.eigenvalues[j], mass * eig.eigenvectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Nodes and weights for `∫ e^{−x²} f(x) dx`.
pub fn gauss_hermite(k: usize) -> (Vec<f64>, Vec<f64>) {
    let off: Vec<f64> = (1..k).map(|j| (j as f64 / 2.0).sqrt()).collect();
    golub_welsch(&vec![0.0; k], &off, std::f64::consts::PI.sqrt())
}

/// Nodes and weights for `∫_{−1}^{1} f(x) dx`.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let off: Vec<f64> = (1..k)
        .map(|j| {
            let j = j as f64;
            j / (4.0 * j * j - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&vec![0.0; k], &off, 2.0)
}

/// Point of C² ≅ R⁴ in holomorphic coordinates `z = a + ib`, `z̄ = a − ib`
/// with `a = x₁ + ix₂`, `b = y₁ + iy₂`. On the real locus `x₂ = y₂ = 0`,
/// `z̄` is the complex conjugate of `z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatPoint {
    pub z: C64,
    pub zbar: C64,
    pub hbar: f64,
}

impl FlatPoint {
    pub fn from_coordinates(x1: f64, x2: f64, y1: f64, y2: f64, hbar: f64) -> Self {
        let a = C64::new(x1, x2);
        let b = C64::new(y1, y2);
        Self {
            z: a + I * b,
            zbar: a - I * b,
            hbar,
        }
    }

    /// Point of the real locus with `z = x₁ + iy₁`.
    pub fn on_real_locus(z: C64, hbar: f64) -> Self {
        Self::from_coordinates(z.re, 0.0, z.im, 0.0, hbar)
    }

    /// `(x₁, x₂, y₁, y₂)`.
    pub fn coordinates(&self) -> [f64; 4] {
        let a = (self.z + self.zbar) * 0.5;
        let b = (self.z - self.zbar) * (-0.5 * I);
        [a.re, a.im, b.re, b.im]
    }

    pub fn on_real_locus_within(&self, tol: f64) -> bool {
        (self.zbar - self.z.conj()).norm() <= tol
    }

    /// Distance `sqrt(x₂² + y₂²)` from the real locus.
    pub fn continuation_deviation(&self) -> f64 {
        let [_, x2, _, y2] = self.coordinates();
        x2.hypot(y2)
    }

    fn a(&self) -> C64 {
        (self.z + self.zbar) * 0.5
    }

    fn b(&self) -> C64 {
        (self.z - self.zbar) * (-0.5 * I)
    }
}

/// `P(p, w) = exp(−(z_p z̄_p + z_w z̄_w − 2 z̄_p z_w)/(4ħ))`.
pub fn flat_kernel(p: &FlatPoint, w: &FlatPoint) -> Result<C64> {
    if (p.hbar - w.hbar).abs() > 0.0 || p.hbar <= 0.0 {
        return Err(Error::Domain(format!("kernel needs a common positive ħ ({} vs {})", p.hbar, w.hbar)));
    }
    Ok((-(p.z * p.zbar + w.z * w.zbar - 2.0 * p.zbar * w.z) / (4.0 * p.hbar)).exp())
}

/// Largest continuation deviation for which the reproducing integral is
/// evaluated.
pub const FLAT_CONTINUATION_LIMIT: f64 = 2.0;

/// `∫_M P(p, u)P(u, w) du₁du₂/(2πħ)` over `M = {x₂ = y₂ = 0}` by a `k×k`
/// Gauss–Hermite product rule after `u = √(2ħ)(s + it)`.
pub fn flat_reproducing_integral(p: &FlatPoint, w: &FlatPoint, k: usize) -> Result<C64> {
    for pt in [p, w] {
        let dev = pt.continuation_deviation();
        if dev > FLAT_CONTINUATION_LIMIT {
            return Err(Error::Domain(format!(
                "continuation deviation {dev:.3} exceeds {FLAT_CONTINUATION_LIMIT} (Gaussian decay lost)"
            )));
        }
    }
    let hbar = p.hbar;
    let (nodes, weights) = gauss_hermite(k);
    let scale = (2.0 * hbar).sqrt();
    let mut acc = ZERO;
    for (s, ws) in nodes.iter().zip(&weights) {
        for (t, wt) in nodes.iter().zip(&weights) {
            let u = C64::new(s * scale, t * scale);
            // integrand with the Gaussian factor exp(−|u|²/2ħ) removed
            let g = (-(p.z * p.zbar + w.z * w.zbar - 2.0 * p.zbar * u - 2.0 * u.conj() * w.z) / (4.0 * hbar)).exp();
            acc += g * (ws * wt);
        }
    }
    let val = acc / std::f64::consts::PI;
    if !val.re.is_finite() || !val.im.is_finite() {
        return Err(Error::Domain("quadrature overflow".into()));
    }
    Ok(val)
}

pub fn flat_idempotency_residual(p: &FlatPoint, w: &FlatPoint, k: usize) -> Result<f64> {
    Ok((flat_reproducing_integral(p, w, k)? - flat_kernel(p, w)?).norm())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlatSlice {
    /// `x₂ = y₂ = 0`, direction `∂x₁ + i∂y₁`.
    Kahler,
    /// `x₂ = y₁ = 0`, direction `∂x₁ + ∂y₂`.
    RealPolarized,
}

/// Complex coefficients of a direction in the basis `(∂x₁, ∂x₂, ∂y₁, ∂y₂)`.
pub type FlatDirection = [C64; 4];

impl FlatSlice {
    pub fn direction(self) -> FlatDirection {
        match self {
            FlatSlice::Kahler => [ONE, ZERO, I, ZERO],
            FlatSlice::RealPolarized => [ONE, ZERO, ZERO, ONE],
        }
    }

    pub fn contains(self, w: &FlatPoint, tol: f64) -> bool {
        let [_, x2, y1, y2] = w.coordinates();
        match self {
            FlatSlice::Kahler => x2.abs() <= tol && y2.abs() <= tol,
            FlatSlice::RealPolarized => x2.abs() <= tol && y1.abs() <= tol,
        }
    }
}

/// Connection form `A = (i/2ħ)(a db − b da)` evaluated on a direction.
pub fn flat_connection(w: &FlatPoint, dir: &FlatDirection) -> C64 {
    // da and db on the real basis vectors
    let da = [ONE, I, ZERO, ZERO];
    let db = [ZERO, ZERO, ONE, I];
    let (a, b) = (w.a(), w.b());
    let mut out = ZERO;
    for k in 0..4 {
        out += dir[k] * (a * db[k] - b * da[k]);
    }
    out * I / (2.0 * w.hbar)
}

/// `|∇_X P(p₀, ·)|` at `w` for `∇ = d − A`, by central differences.
pub fn flat_covariant_derivative(p0: &FlatPoint, w: &FlatPoint, dir: &FlatDirection, h: f64) -> Result<C64> {
    let c = w.coordinates();
    let mut deriv = ZERO;
    for k in 0..4 {
        if dir[k] == ZERO {
            continue;
        }
        let mut plus = c;
        let mut minus = c;
        plus[k] += h;
        minus[k] -= h;
        let fp = flat_kernel(p0, &FlatPoint::from_coordinates(plus[0], plus[1], plus[2], plus[3], w.hbar))?;
        let fm = flat_kernel(p0, &FlatPoint::from_coordinates(minus[0], minus[1], minus[2], minus[3], w.hbar))?;
        deriv += dir[k] * (fp - fm) / (2.0 * h);
    }
    Ok(deriv - flat_connection(w, dir) * flat_kernel(p0, w)?)
}

pub fn flat_polarization_residual(p0: &FlatPoint, w: &FlatPoint, slice: FlatSlice, h: f64) -> Result<f64> {
    if !slice.contains(w, IDENTITY_TOL) {
        return Err(Error::Domain(format!("point is not on the {slice:?} slice")));
    }
    Ok(flat_covariant_derivative(p0, w, &slice.direction(), h)?.norm())
}

/// Real 4×4 matrix acting on `(∂x₁, ∂x₂, ∂y₁, ∂y₂)`; column `j` is the image
/// of basis vector `j`.
pub type Frame4 = [[i32; 4]; 4];

fn frame_from_images(images: [(usize, i32); 4]) -> Frame4 {
    let mut m = [[0; 4]; 4];
    for (col, (row, sign)) in images.iter().enumerate() {
        m[*row][col] = *sign;
    }
    m
}

pub fn frame_mul(a: &Frame4, b: &Frame4) -> Frame4 {
    let mut m = [[0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            m[r][c] = (0..4).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    m
}

pub fn frame_identity() -> Frame4 {
    frame_from_images([(0, 1), (1, 1), (2, 1), (3, 1)])
}

pub fn frame_neg(a: &Frame4) -> Frame4 {
    a.map(|row| row.map(|x| -x))
}

/// Largest absolute entry of `a − b`; integer-exact.
pub fn frame_distance(a: &Frame4, b: &Frame4) -> i32 {
    (0..4)
        .flat_map(|r| (0..4).map(move |c| (r, c)))
        .map(|(r, c)| (a[r][c] - b[r][c]).abs())
        .max()
        .unwrap_or(0)
}

/// The commuting structures on R⁴ and the anticommuting `J′`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TessarineFrame {
    pub i: Frame4,
    pub j: Frame4,
    pub k: Frame4,
    pub j_prime: Frame4,
}

impl TessarineFrame {
    pub fn standard() -> Self {
        // basis order x1, x2, y1, y2
        let i = frame_from_images([(1, 1), (0, -1), (3, 1), (2, -1)]);
        let j = frame_from_images([(2, 1), (3, 1), (0, -1), (1, -1)]);
        let k = frame_from_images([(3, 1), (2, -1), (1, -1), (0, 1)]);
        let j_prime = frame_from_images([(2, 1), (3, -1), (0, -1), (1, 1)]);
        Self { i, j, k, j_prime }
    }
}

/// `Ω = d(x₁ + ix₂) ∧ d(y₁ + iy₂)` as an antisymmetric 4×4 matrix.
pub fn flat_omega_matrix() -> [[C64; 4]; 4] {
    let alpha = [ONE, I, ZERO, ZERO];
    let beta = [ZERO, ZERO, ONE, I];
    let mut w = [[ZERO; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            w[r][c] = alpha[r] * beta[c] - alpha[c] * beta[r];
        }
    }
    w
}

pub fn flat_omega(x: &[f64; 4], y: &[f64; 4]) -> C64 {
    let w = flat_omega_matrix();
    let mut out = ZERO;
    for r in 0..4 {
        for c in 0..4 {
            out += w[r][c] * x[r] * y[c];
        }
    }
    out
}

fn frame_apply(m: &Frame4, v: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (r, o) in out.iter_mut().enumerate() {
        *o = (0..4).map(|c| m[r][c] as f64 * v[c]).sum();
    }
    out
}

fn basis4(k: usize) -> [f64; 4] {
    let mut e = [0.0; 4];
    e[k] = 1.0;
    e
}

/// `max |Ω(Mx, My) − sign·Ω(x, y)|` over basis pairs.
pub fn omega_transform_defect(m: &Frame4, sign: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..4 {
        for c in 0..4 {
            let (x, y) = (basis4(r), basis4(c));
            let lhs = flat_omega(&frame_apply(m, &x), &frame_apply(m, &y));
            worst = worst.max((lhs - flat_omega(&x, &y) * sign).norm());
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedResidual {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
}

impl NamedResidual {
    fn new(name: &str, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            residual,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }
}

/// Restriction of `Ω` to the span of two basis vectors: `(Re, Im)` of the
/// single independent entry.
fn slice_form(a: usize, b: usize) -> (f64, f64) {
    let v = flat_omega(&basis4(a), &basis4(b));
    (v.re, v.im)
}

/// Identities of the explicit tessarine frames and of `Ω` on the two slices.
pub fn tessarine_flat_check() -> Vec<NamedResidual> {
    let t = TessarineFrame::standard();
    let id = frame_identity();
    let minus_id = frame_neg(&id);
    let exact = |name: &str, a: &Frame4, b: &Frame4| NamedResidual::new(name, frame_distance(a, b) as f64, 0.0);
    let ij = frame_mul(&t.i, &t.j);
    let ji = frame_mul(&t.j, &t.i);
    let ijp = frame_mul(&t.i, &t.j_prime);
    let jpi = frame_mul(&t.j_prime, &t.i);
    let (kahler_re, kahler_im) = slice_form(0, 2);
    let (real_re, real_im) = slice_form(0, 3);
    let kx1 = frame_apply(&t.k, &basis4(0));
    let kx2 = frame_apply(&t.k, &basis4(1));
    vec![
        exact("I^2 = -1", &frame_mul(&t.i, &t.i), &minus_id),
        exact("J^2 = -1", &frame_mul(&t.j, &t.j), &minus_id),
        exact("K^2 = +1", &frame_mul(&t.k, &t.k), &id),
        exact("IJ = K", &ij, &t.k),
        exact("JI = K", &ji, &t.k),
        exact("J'^2 = -1", &frame_mul(&t.j_prime, &t.j_prime), &minus_id),
        exact("IJ' = -J'I", &ijp, &frame_neg(&jpi)),
        NamedResidual::new("Omega(dx1, dy1) = 1", (flat_omega(&basis4(0), &basis4(2)) - ONE).norm(), 0.0),
        NamedResidual::new(
            "Omega(K dx1, K dx2) = -Omega(dx1, dx2)",
            (flat_omega(&kx1, &kx2) + flat_omega(&basis4(0), &basis4(1))).norm(),
            0.0,
        ),
        NamedResidual::new("Omega(J., J.) = Omega", omega_transform_defect(&t.j, 1.0), 0.0),
        NamedResidual::new("Omega(K., K.) = -Omega", omega_transform_defect(&t.k, -1.0), 0.0),
        NamedResidual::new("Kahler slice: Im Omega vanishes", kahler_im.abs(), 0.0),
        NamedResidual::new("Kahler slice: Re Omega nondegenerate", if kahler_re.abs() > 0.0 { 0.0 } else { 1.0 }, 0.0),
        NamedResidual::new("real slice: Re Omega vanishes", real_re.abs(), 0.0),
        NamedResidual::new("real slice: Im Omega nondegenerate", if real_im.abs() > 0.0 { 0.0 } else { 1.0 }, 0.0),
    ]
}

/// Point of the complexified sphere `x² + y² + z² = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpherePoint {
    pub x: C64,
    pub y: C64,
    pub z: C64,
}

impl SpherePoint {
    pub fn new(x: C64, y: C64, z: C64) -> Result<Self> {
        let p = Self { x, y, z };
        let r = p.constraint_residual();
        if r > CONSTRUCTION_TOL {
            return Err(Error::Domain(format!("x² + y² + z² − 1 = {r:.3e}")));
        }
        Ok(p)
    }

    pub fn real(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::new(C64::new(x, 0.0), C64::new(y, 0.0), C64::new(z, 0.0))
    }

    /// Unit vector at polar angle `theta`, azimuth `phi`.
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        Self {
            x: C64::new(theta.sin() * phi.cos(), 0.0),
            y: C64::new(theta.sin() * phi.sin(), 0.0),
            z: C64::new(theta.cos(), 0.0),
        }
    }

    /// Point `(iX, iY, z)` of the hyperboloid sheet `z² − X² − Y² = 1`, `z ≥ 1`.
    pub fn disk(big_x: f64, big_y: f64) -> Self {
        let z = (1.0 + big_x * big_x + big_y * big_y).sqrt();
        Self {
            x: C64::new(0.0, big_x),
            y: C64::new(0.0, big_y),
            z: C64::new(z, 0.0),
        }
    }

    pub fn constraint_residual(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z - ONE).norm()
    }

    pub fn conj(&self) -> Self {
        Self {
            x: self.x.conj(),
            y: self.y.conj(),
            z: self.z.conj(),
        }
    }

    pub fn on_real_locus(&self, tol: f64) -> bool {
        self.x.im.abs() <= tol && self.y.im.abs() <= tol && self.z.im.abs() <= tol
    }

    pub fn on_disk_locus(&self, tol: f64) -> bool {
        self.x.re.abs() <= tol && self.y.re.abs() <= tol && self.z.im.abs() <= tol && self.z.re >= 1.0 - tol
    }

    /// Stereographic pair `(u, ũ) = ((x + iy)/(1 + z), (x − iy)/(1 + z))`.
    pub fn stereographic(&self) -> Result<StereoPair> {
        let denom = ONE + self.z;
        if denom.norm() < 1e-12 {
            return Err(Error::Chart("stereographic chart pole at z = −1".into()));
        }
        Ok(StereoPair {
            u: (self.x + I * self.y) / denom,
            ut: (self.x - I * self.y) / denom,
        })
    }
}

/// Continued stereographic coordinate: `ut` replaces the conjugate of `u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoPair {
    pub u: C64,
    pub ut: C64,
}

impl StereoPair {
    pub fn real(u: C64) -> Self {
        Self { u, ut: u.conj() }
    }

    pub fn point(&self) -> Result<SpherePoint> {
        let s = ONE + self.ut * self.u;
        if s.norm() < 1e-12 {
            return Err(Error::Chart("1 + ũu vanishes".into()));
        }
        let plus = self.u * 2.0 / s;
        let minus = self.ut * 2.0 / s;
        Ok(SpherePoint {
            x: (plus + minus) * 0.5,
            y: (plus - minus) * (-0.5 * I),
            z: (ONE - self.ut * self.u) / s,
        })
    }

    /// `[[1, ũ], [u, ũu]]/(1 + ũu)`.
    pub fn projection(&self) -> Result<ProjectionPoint> {
        let s = ONE + self.ut * self.u;
        if s.norm() < 1e-12 {
            return Err(Error::Chart("1 + ũu vanishes".into()));
        }
        let q = ComplexMatrix::from_rows(&[&[ONE, self.ut], &[self.u, self.ut * self.u]])?.scale(ONE / s);
        Ok(ProjectionPoint::from_trusted(q, 1))
    }
}

/// `q = (I + xσ₁ + yσ₂ + zσ₃)/2`, a trace-one idempotent.
pub fn sphere_projection(p: &SpherePoint) -> Result<ProjectionPoint> {
    let r = p.constraint_residual();
    if r > CONSTRUCTION_TOL {
        return Err(Error::Domain(format!("x² + y² + z² − 1 = {r:.3e}")));
    }
    let [sx, sy, sz] = pauli();
    let q = &(&ComplexMatrix::identity(2) + &sx.scale(p.x)) + &(&sy.scale(p.y) + &sz.scale(p.z));
    Ok(ProjectionPoint::from_trusted(q.scale_re(0.5), 1))
}

/// Complexified cross product `p × t` on the tangent plane `p·t = 0`.
pub fn sphere_j(p: &SpherePoint, t: [C64; 3]) -> Result<[C64; 3]> {
    let dot = p.x * t[0] + p.y * t[1] + p.z * t[2];
    if dot.norm() > CONSTRUCTION_TOL {
        return Err(Error::Domain(format!("vector not tangent (p·t = {dot})")));
    }
    Ok([p.y * t[2] - p.z * t[1], p.z * t[0] - p.x * t[2], p.x * t[1] - p.y * t[0]])
}

/// `(1 + ũ₁u₂)/(1 + ũ₁u₁)`.
pub fn sphere_kernel(z1: &StereoPair, z2: &StereoPair) -> Result<C64> {
    let denom = ONE + z1.ut * z1.u;
    if denom.norm() < 1e-12 {
        return Err(Error::Chart("kernel pole 1 + ũ₁u₁ = 0".into()));
    }
    Ok((ONE + z1.ut * z2.u) / denom)
}

/// Product grid on S²: Gauss–Legendre in `cos θ` times the trapezoid rule in
/// `φ`, weighted to total mass 2.
pub fn sphere_quadrature(n_theta: usize, n_phi: usize) -> Vec<(SpherePoint, f64)> {
    let (nodes, weights) = gauss_legendre(n_theta);
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for (c, w) in nodes.iter().zip(&weights) {
        let theta = c.clamp(-1.0, 1.0).acos();
        for j in 0..n_phi {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64;
            // 2 · (w/2) · (1/n_phi): FS probability measure times 2
            out.push((SpherePoint::from_angles(theta, phi), w / n_phi as f64));
        }
    }
    out
}

/// `|∫_{S²} P(z₁, u)P(u, z₂) dμ(u) − P(z₁, z₂)|` with `dμ` of mass 2.
pub fn sphere_idempotency_residual(z1: &StereoPair, z2: &StereoPair, nodes: &[(SpherePoint, f64)]) -> Result<f64> {
    let mut acc = ZERO;
    for (p, w) in nodes {
        let u = p.stereographic()?;
        acc += sphere_kernel(z1, &u)? * sphere_kernel(&u, z2)? * *w;
    }
    Ok((acc - sphere_kernel(z1, z2)?).norm())
}

/// `P(z₁,z₂)P(z₂,z₃)P(z₃,z₁)`.
pub fn sphere_delta(z1: &StereoPair, z2: &StereoPair, z3: &StereoPair) -> Result<C64> {
    Ok(sphere_kernel(z1, z2)? * sphere_kernel(z2, z3)? * sphere_kernel(z3, z1)?)
}

/// Disk kernel `(1 − ṽ₁v₂)/(1 − ṽ₁v₁)`.
pub fn disk_kernel(v1: &StereoPair, v2: &StereoPair) -> Result<C64> {
    let denom = ONE - v1.ut * v1.u;
    if denom.norm() < 1e-12 {
        return Err(Error::Chart("disk kernel pole 1 − ṽ₁v₁ = 0".into()));
    }
    Ok((ONE - v1.ut * v2.u) / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConjugationSlot {
    /// Conjugate the computed disk three-point value.
    Value,
    /// Conjugate the disk coordinates before evaluating.
    Coordinates,
}

/// How sphere points are read as disk points: `v = factor·u` and
/// `ṽ = −conj(factor)·ũ`, which makes `ṽ = v̄` on the disk locus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub factor_im: f64,
    pub reverse_cycle: bool,
    pub slot: ConjugationSlot,
}

impl Default for Identification {
    fn default() -> Self {
        Self {
            factor_im: -1.0,
            reverse_cycle: false,
            slot: ConjugationSlot::Value,
        }
    }
}

impl Identification {
    fn disk_pair(&self, s: &StereoPair) -> StereoPair {
        let c = C64::new(0.0, self.factor_im);
        let v = StereoPair {
            u: c * s.u,
            ut: -c.conj() * s.ut,
        };
        match self.slot {
            ConjugationSlot::Value => v,
            ConjugationSlot::Coordinates => StereoPair {
                u: v.ut.conj(),
                ut: v.u.conj(),
            },
        }
    }

    /// Every combination of `v = ±iu`, cycle orientation and conjugation slot.
    pub fn sweep() -> Vec<Identification> {
        let mut out = Vec::new();
        for factor_im in [-1.0, 1.0] {
            for reverse_cycle in [false, true] {
                for slot in [ConjugationSlot::Value, ConjugationSlot::Coordinates] {
                    out.push(Identification {
                        factor_im,
                        reverse_cycle,
                        slot,
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub identification: Identification,
    pub delta_sphere: [f64; 2],
    pub delta_disk_conj: [f64; 2],
    pub product: [f64; 2],
}

fn pair(c: C64) -> [f64; 2] {
    [c.re, c.im]
}

/// Reports `Δ_S²`, the conjugated disk three-point value and their product
/// under one identification. No relation between them is asserted.
pub fn delta_product_explorer(points: [&SpherePoint; 3], ident: Identification) -> Result<DeltaRecord> {
    let s: Vec<StereoPair> = points.iter().map(|p| p.stereographic()).collect::<Result<_>>()?;
    let delta_sphere = sphere_delta(&s[0], &s[1], &s[2])?;
    let v: Vec<StereoPair> = s.iter().map(|x| ident.disk_pair(x)).collect();
    let (a, b, c) = if ident.reverse_cycle {
        (&v[0], &v[2], &v[1])
    } else {
        (&v[0], &v[1], &v[2])
    };
    let delta_disk = disk_kernel(a, b)? * disk_kernel(b, c)? * disk_kernel(c, a)?;
    let delta_disk_conj = match ident.slot {
        ConjugationSlot::Value => delta_disk.conj(),
        ConjugationSlot::Coordinates => delta_disk,
    };
    Ok(DeltaRecord {
        identification: ident,
        delta_sphere: pair(delta_sphere),
        delta_disk_conj: pair(delta_disk_conj),
        product: pair(delta_sphere * delta_disk_conj),
    })
}

/// `J′(q, A) = i[q, A†]/√(2Tr(q†q) − 1)` on `T*P¹` (`d = 2`, `n = 1`).
pub fn hyperkahler_jprime(v: &TangentVector) -> Result<TangentVector> {
    let q = v.base();
    if q.dim() != 2 || q.rank() != 1 {
        return Err(Error::dim("hyperkahler_jprime", "d=2, n=1", format!("d={}, n={}", q.dim(), q.rank())));
    }
    let denom = jprime_denominator(q);
    if denom <= IDENTITY_TOL {
        return Err(Error::Domain(format!("2Tr(q†q) − 1 = {denom:e} is not positive")));
    }
    let comm = q.matrix().commutator(&v.matrix().adjoint());
    Ok(TangentVector::from_trusted(q, comm.scale(I / denom.sqrt())))
}

/// `2Tr(q†q) − 1`; at least one, with equality exactly on the zero section.
pub fn jprime_denominator(q: &ProjectionPoint) -> f64 {
    let g = &q.matrix().adjoint() * q.matrix();
    2.0 * g.trace().re - 1.0
}

/// Closed geodesic triangle north pole → (1,0,0) → (0,1,0) → north pole,
/// enclosing one octant of the Bloch sphere.
pub fn sphere_octant_path(steps: usize) -> Result<PathSpec> {
    let vertices = [(0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]
        .iter()
        .map(|&(x, y, z)| sphere_projection(&SpherePoint::real(x, y, z)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(PathSpec::geodesic_polygon(vertices, steps))
}

/// Polar angle of the latitude circle traced by [`latitude_loop_path`].
pub const LATITUDE_POLAR_ANGLE: f64 = std::f64::consts::FRAC_PI_3;

/// One turn around the z axis at polar angle π/3, as the flow of `iπσ₃`.
/// Encloses a cap of solid angle π.
pub fn latitude_loop_path(steps: usize) -> Result<PathSpec> {
    let a = LATITUDE_POLAR_ANGLE;
    let start = sphere_projection(&SpherePoint::real(a.sin(), 0.0, a.cos())?)?;
    let [_, _, sz] = pauli();
    Ok(PathSpec::unitary_flow(start, sz.scale(C64::new(0.0, std::f64::consts::PI)), steps))
}
