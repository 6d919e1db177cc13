//! Projection-matrix model of the cotangent bundle of a Grassmannian.
//!
//! A point is a rank-`n` idempotent `q` on `C^d`; Hermitian idempotents
//! form the zero section. Tangent vectors at `q` are matrices `A` with
//! `qA + Aq = A`. The commuting complex structures act on tangents as
//! `I: A ↦ iA`, `J: A ↦ i[A, q]` and `K = IJ`.

use crate::error::{Error, Result};
use crate::matrix::{expm, gaussian_matrix, orthonormal_frame, ComplexMatrix, RngState, C64, I};
use crate::tolerances::{CONSTRUCTION_TOL, IDENTITY_TOL};

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionPoint {
    q: ComplexMatrix,
    rank: usize,
}

impl ProjectionPoint {
    /// Validates idempotency, trace and numerical rank.
    pub fn new(q: ComplexMatrix, rank: usize) -> Result<Self> {
        let p = Self::check_shape(q, rank)?;
        let idem = (&(&p.q * &p.q) - &p.q).norm_fro();
        if idem > CONSTRUCTION_TOL {
            return Err(Error::Contract(format!("q is not idempotent (‖q²−q‖ = {idem:.3e})")));
        }
        let tr = p.q.trace();
        if (tr - C64::new(rank as f64, 0.0)).norm() > CONSTRUCTION_TOL {
            return Err(Error::Contract(format!("Tr(q) = {tr} but rank is {rank}")));
        }
        let sv = p.q.singular_values();
        let numerical_rank = sv.iter().filter(|&&s| s > crate::matrix::RANK_CUTOFF * sv[0]).count();
        if numerical_rank != rank {
            return Err(Error::Contract(format!(
                "numerical rank {numerical_rank} differs from declared rank {rank}"
            )));
        }
        Ok(p)
    }

    fn check_shape(q: ComplexMatrix, rank: usize) -> Result<Self> {
        q.check_square("ProjectionPoint")?;
        let d = q.rows();
        if rank == 0 || rank >= d {
            return Err(Error::Contract(format!("rank must satisfy 1 ≤ n < d, got n={rank}, d={d}")));
        }
        if !q.is_finite() {
            return Err(Error::Contract("non-finite projection entries".into()));
        }
        Ok(Self { q, rank })
    }

    /// For matrices that are idempotent by construction (similarity flows,
    /// outer products of orthonormal frames).
    pub(crate) fn from_trusted(q: ComplexMatrix, rank: usize) -> Self {
        debug_assert!(q.is_square() && rank >= 1 && rank < q.rows());
        Self { q, rank }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.rows()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Raw trace `Tr(q)`; equals the rank.
    pub fn raw_trace(&self) -> C64 {
        self.q.trace()
    }

    /// Normalized trace `τ(q) = Tr(q)/n`, equal to one on every point.
    pub fn normalized_trace(&self) -> C64 {
        self.q.trace() / self.rank as f64
    }

    /// `τ(qM) = Tr(qM)/n`.
    pub fn tau_of(&self, m: &ComplexMatrix) -> C64 {
        tau_product(&self.q, m, self.rank)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.q.is_hermitian(tol)
    }

    /// Residuals `(‖q²−q‖, |Tr q − n|)` for invariant checks.
    pub fn invariant_residuals(&self) -> (f64, f64) {
        let idem = (&(&self.q * &self.q) - &self.q).norm_fro();
        let tr = (self.q.trace() - C64::new(self.rank as f64, 0.0)).norm();
        (idem, tr)
    }

    pub fn same_base(&self, other: &ProjectionPoint) -> bool {
        self.rank == other.rank
            && self.q.rows() == other.q.rows()
            && (&self.q - &other.q).norm_fro() <= IDENTITY_TOL
    }

    pub fn complement(&self) -> ComplexMatrix {
        &ComplexMatrix::identity(self.dim()) - &self.q
    }
}

/// `Tr(AB)/n` without forming the product.
pub fn tau_product(a: &ComplexMatrix, b: &ComplexMatrix, n: usize) -> C64 {
    let d = a.rows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..d {
        for k in 0..a.cols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc / n as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    base: ProjectionPoint,
    a: ComplexMatrix,
}

impl TangentVector {
    pub fn new(base: &ProjectionPoint, a: ComplexMatrix) -> Result<Self> {
        base.q.check_same_shape("TangentVector", &a)?;
        let defect = tangent_defect(base.matrix(), &a);
        if defect > CONSTRUCTION_TOL * a.norm_fro().max(1.0) {
            return Err(Error::Contract(format!("not tangent: ‖qA+Aq−A‖ = {defect:.3e}")));
        }
        Ok(Self {
            base: base.clone(),
            a,
        })
    }

    pub(crate) fn from_trusted(base: &ProjectionPoint, a: ComplexMatrix) -> Self {
        Self {
            base: base.clone(),
            a,
        }
    }

    pub fn base(&self) -> &ProjectionPoint {
        &self.base
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.a
    }

    pub fn zero(base: &ProjectionPoint) -> Self {
        Self::from_trusted(base, ComplexMatrix::zeros(base.dim(), base.dim()))
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_trusted(&self.base, self.a.scale(s))
    }

    pub fn add(&self, other: &TangentVector) -> Result<Self> {
        if !self.base.same_base(&other.base) {
            return Err(Error::Contract("tangent vectors at different base points".into()));
        }
        Ok(Self::from_trusted(&self.base, &self.a + &other.a))
    }

    /// `‖qA + Aq − A‖_F`.
    pub fn defect(&self) -> f64 {
        tangent_defect(self.base.matrix(), &self.a)
    }

    /// Tangent to the fiber of `T*G → G`: `Aq = 0`.
    pub fn is_vertical(&self, tol: f64) -> bool {
        (&self.a * self.base.matrix()).norm_fro() <= tol
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.a.is_hermitian(tol)
    }
}

fn tangent_defect(q: &ComplexMatrix, a: &ComplexMatrix) -> f64 {
    (&(&(q * a) + &(a * q)) - a).norm_fro()
}

/// Decomposition `q = q_V + f` into the Hermitian projection onto `im q`
/// and a fiber part `f: V⊥ → V`.
#[derive(Clone, Debug)]
pub struct CotangentDecomposition {
    pub base_orthogonal: ProjectionPoint,
    pub fiber_part: ComplexMatrix,
}

/// Hermitian point `VV†` from an orthonormal frame.
pub fn from_frame(v: &ComplexMatrix) -> Result<ProjectionPoint> {
    let n = v.cols();
    let gram = &v.adjoint() * v;
    let err = (&gram - &ComplexMatrix::identity(n)).norm_fro();
    if err > CONSTRUCTION_TOL {
        return Err(Error::Contract(format!("frame not orthonormal (‖V†V − I‖ = {err:.3e})")));
    }
    if n == 0 || n >= v.rows() {
        return Err(Error::Contract(format!("frame has {n} columns in dimension {}", v.rows())));
    }
    Ok(ProjectionPoint::from_trusted(v * &v.adjoint(), n))
}

/// Haar-distributed Hermitian rank-`n` projection on `C^d`.
pub fn haar_sample(d: usize, n: usize, rng: &mut RngState) -> Result<ProjectionPoint> {
    if n == 0 || n >= d {
        return Err(Error::Contract(format!("haar_sample needs 1 ≤ n < d, got n={n}, d={d}")));
    }
    loop {
        let g = gaussian_matrix(rng, d, n);
        // Rank deficiency of a Ginibre matrix has probability zero; redraw.
        if let Ok(v) = orthonormal_frame(&g, n) {
            return Ok(ProjectionPoint::from_trusted(&v * &v.adjoint(), n));
        }
    }
}

pub fn compose_cotangent(base: &ProjectionPoint, f: &ComplexMatrix) -> Result<ProjectionPoint> {
    if !base.is_hermitian(CONSTRUCTION_TOL) {
        return Err(Error::Contract("compose_cotangent needs a Hermitian base".into()));
    }
    base.q.check_same_shape("compose_cotangent", f)?;
    let qv = base.matrix();
    let left = (&(qv * f) - f).norm_fro();
    let right = (f * qv).norm_fro();
    if left > CONSTRUCTION_TOL * f.norm_fro().max(1.0) || right > CONSTRUCTION_TOL * f.norm_fro().max(1.0) {
        return Err(Error::Contract(format!(
            "fiber part must map V⊥ into V (‖q_V f − f‖ = {left:.3e}, ‖f q_V‖ = {right:.3e})"
        )));
    }
    Ok(ProjectionPoint::from_trusted(qv + f, base.rank()))
}

pub fn decompose_cotangent(q: &ProjectionPoint) -> Result<CotangentDecomposition> {
    let v = orthonormal_frame(q.matrix(), q.rank())?;
    let qv = ProjectionPoint::from_trusted(&v * &v.adjoint(), q.rank());
    let f = q.matrix() - qv.matrix();
    Ok(CotangentDecomposition {
        base_orthogonal: qv,
        fiber_part: f,
    })
}

/// Projects an arbitrary matrix onto the tangent space:
/// `A = qX(1−q) + (1−q)Xq`.
pub fn tangent_component(q: &ProjectionPoint, x: &ComplexMatrix) -> Result<TangentVector> {
    q.q.check_same_shape("tangent_component", x)?;
    let qm = q.matrix();
    let c = q.complement();
    let a = &(&(qm * x) * &c) + &(&(&c * x) * qm);
    Ok(TangentVector::from_trusted(q, a))
}

pub fn apply_i(v: &TangentVector) -> TangentVector {
    v.scale(I)
}

pub fn apply_j(v: &TangentVector) -> TangentVector {
    let c = v.a.commutator(v.base.matrix());
    TangentVector::from_trusted(&v.base, c.scale(I))
}

pub fn apply_k(v: &TangentVector) -> TangentVector {
    // IJ(A) = i·i[A, q] = qA − Aq
    let q = v.base.matrix();
    TangentVector::from_trusted(&v.base, &(q * &v.a) - &(&v.a * q))
}

/// Similarity flow `q_t = e^{tΛ} q e^{−tΛ}` with `Λ = [A, q]`, whose
/// velocity at `t = 0` is `A`.
pub fn retract(q: &ProjectionPoint, v: &TangentVector, t: f64) -> Result<ProjectionPoint> {
    if !q.same_base(v.base()) {
        return Err(Error::Contract("retract: tangent vector based elsewhere".into()));
    }
    if t == 0.0 {
        return Ok(q.clone());
    }
    let lambda = v.matrix().commutator(q.matrix()).scale_re(t);
    let fwd = expm(&lambda)?;
    let bwd = expm(&lambda.scale_re(-1.0))?;
    Ok(ProjectionPoint::from_trusted(&(&fwd * q.matrix()) * &bwd, q.rank()))
}

/// `q ↦ q†`; its fixed points are the zero section.
pub fn adjoint_involution(q: &ProjectionPoint) -> ProjectionPoint {
    ProjectionPoint::from_trusted(q.matrix().adjoint(), q.rank())
}

/// Random point of `T*G_n(C^d)`: a Haar base point plus a fiber part of
/// Frobenius norm `fiber_norm` (zero gives the zero section).
pub fn random_point(d: usize, n: usize, fiber_norm: f64, rng: &mut RngState) -> Result<ProjectionPoint> {
    let base = haar_sample(d, n, rng)?;
    if fiber_norm == 0.0 {
        return Ok(base);
    }
    let x = gaussian_matrix(rng, d, d);
    let f = &(base.matrix() * &x) * &base.complement();
    let nrm = f.norm_fro();
    compose_cotangent(&base, &f.scale_re(fiber_norm / nrm))
}

/// Random tangent vector at `q` with unit Frobenius norm.
pub fn random_tangent(q: &ProjectionPoint, rng: &mut RngState) -> TangentVector {
    let x = gaussian_matrix(rng, q.dim(), q.dim());
    let a = tangent_component(q, &x).expect("square shapes agree").a;
    let nrm = a.norm_fro();
    TangentVector::from_trusted(q, a.scale_re(1.0 / nrm))
}

/// Random Hermitian tangent at a Hermitian point (tangent to the zero section).
pub fn random_hermitian_tangent(q: &ProjectionPoint, rng: &mut RngState) -> TangentVector {
    let x = gaussian_matrix(rng, q.dim(), q.dim());
    let h = (&x + &x.adjoint()).scale_re(0.5);
    let a = tangent_component(q, &h).expect("square shapes agree").a;
    let nrm = a.norm_fro();
    TangentVector::from_trusted(q, a.scale_re(1.0 / nrm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{ONE, ZERO};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn diag10() -> ProjectionPoint {
        ProjectionPoint::new(ComplexMatrix::diag(&[ONE, ZERO]), 1).unwrap()
    }

    #[test]
    fn construction_rejects_bad_points() {
        let not_idem = ComplexMatrix::diag(&[ONE, c(0.5, 0.0)]);
        assert!(ProjectionPoint::new(not_idem, 1).is_err());
        assert!(ProjectionPoint::new(ComplexMatrix::identity(2), 2).is_err());
        assert!(ProjectionPoint::new(ComplexMatrix::zeros(2, 2), 0).is_err());
        assert!(ProjectionPoint::new(ComplexMatrix::diag(&[ONE, ZERO]), 2).is_err());
    }

    #[test]
    fn from_frame_examples() {
        let e1 = ComplexMatrix::column_vector(&[ONE, ZERO]);
        assert_eq!(from_frame(&e1).unwrap().matrix(), &ComplexMatrix::diag(&[ONE, ZERO]));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = ComplexMatrix::column_vector(&[c(s, 0.0), c(s, 0.0)]);
        let q = from_frame(&v).unwrap();
        let expected = ComplexMatrix::from_real_rows(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap();
        assert!((q.matrix() - &expected).norm_fro() < 1e-15);
        let bad = ComplexMatrix::column_vector(&[ONE, ONE]);
        assert!(from_frame(&bad).is_err());
    }

    #[test]
    fn from_frame_outputs_are_hermitian_idempotents() {
        let mut rng = RngState::new(1);
        for _ in 0..50 {
            let v = orthonormal_frame(&gaussian_matrix(&mut rng, 5, 2), 2).unwrap();
            let q = from_frame(&v).unwrap();
            assert!(q.is_hermitian(1e-12));
            assert!(q.invariant_residuals().0 < 1e-12);
        }
    }

    #[test]
    fn haar_samples_satisfy_invariants() {
        let mut rng = RngState::new(4);
        for (d, n) in [(2, 1), (3, 2), (6, 3)] {
            for _ in 0..100 {
                let q = haar_sample(d, n, &mut rng).unwrap();
                assert!(ProjectionPoint::new(q.matrix().clone(), n).is_ok());
            }
        }
        assert!(haar_sample(3, 3, &mut rng).is_err());
    }

    #[test]
    fn compose_examples() {
        let base = diag10();
        assert_eq!(compose_cotangent(&base, &ComplexMatrix::zeros(2, 2)).unwrap(), base);
        for cval in [c(1.0, 0.0), c(-2.5, 0.7), c(0.0, 3.0)] {
            let f = ComplexMatrix::unit(2, 0, 1).scale(cval);
            let q = compose_cotangent(&base, &f).unwrap();
            let expected = ComplexMatrix::from_rows(&[&[ONE, cval], &[ZERO, ZERO]]).unwrap();
            assert_eq!(q.matrix(), &expected);
            assert!(q.invariant_residuals().0 < 1e-14);
        }
        let wrong = ComplexMatrix::unit(2, 1, 0);
        assert!(compose_cotangent(&base, &wrong).is_err());
    }

    #[test]
    fn decompose_examples() {
        let h = diag10();
        let dec = decompose_cotangent(&h).unwrap();
        assert!(dec.fiber_part.norm_fro() < 1e-15);
        let q = ProjectionPoint::new(ComplexMatrix::from_real_rows(&[&[1.0, 1.0], &[0.0, 0.0]]).unwrap(), 1)
            .unwrap();
        let dec = decompose_cotangent(&q).unwrap();
        assert!((dec.base_orthogonal.matrix() - h.matrix()).norm_fro() < 1e-15);
        assert!((&dec.fiber_part - &ComplexMatrix::unit(2, 0, 1)).norm_fro() < 1e-15);
    }

    #[test]
    fn cotangent_round_trip() {
        let mut rng = RngState::new(12);
        for (d, n) in [(2, 1), (4, 2), (5, 1)] {
            for _ in 0..20 {
                let base = haar_sample(d, n, &mut rng).unwrap();
                let x = gaussian_matrix(&mut rng, d, d);
                let f = &(base.matrix() * &x) * &base.complement();
                let q = compose_cotangent(&base, &f).unwrap();
                let dec = decompose_cotangent(&q).unwrap();
                let qv = dec.base_orthogonal.matrix();
                assert!((qv - base.matrix()).norm_fro() < 1e-12);
                assert!((&dec.fiber_part - &f).norm_fro() < 1e-12);
                assert!((&(qv * qv) - qv).norm_fro() < 1e-12);
                assert!(qv.is_hermitian(1e-12));
            }
        }
    }

    #[test]
    fn tangent_component_examples() {
        let q = diag10();
        let a = tangent_component(&q, &ComplexMatrix::identity(2)).unwrap();
        assert_eq!(a.matrix().norm_fro(), 0.0);
        let x = &(&ComplexMatrix::unit(2, 0, 1) + &ComplexMatrix::unit(2, 1, 0)) + &ComplexMatrix::unit(2, 0, 0);
        let a = tangent_component(&q, &x).unwrap();
        let expected = &ComplexMatrix::unit(2, 0, 1) + &ComplexMatrix::unit(2, 1, 0);
        assert_eq!(a.matrix(), &expected);
    }

    #[test]
    fn tangent_component_is_a_projector() {
        let mut rng = RngState::new(13);
        let q = random_point(4, 2, 0.8, &mut rng).unwrap();
        for _ in 0..20 {
            let a = tangent_component(&q, &gaussian_matrix(&mut rng, 4, 4)).unwrap();
            assert!(a.defect() < 1e-12);
            let qaq = &(q.matrix() * a.matrix()) * q.matrix();
            assert!(qaq.norm_fro() < 1e-9);
            let again = tangent_component(&q, a.matrix()).unwrap();
            assert!((again.matrix() - a.matrix()).norm_fro() < 1e-14 * a.matrix().norm_fro().max(1.0) * 10.0);
        }
    }

    #[test]
    fn j_on_upper_corner() {
        let q = diag10();
        let a = TangentVector::new(&q, ComplexMatrix::unit(2, 0, 1)).unwrap();
        let ja = apply_j(&a);
        assert!((ja.matrix() - &ComplexMatrix::unit(2, 0, 1).scale(c(0.0, -1.0))).norm_fro() < 1e-15);
    }

    #[test]
    fn structures_preserve_tangency() {
        let mut rng = RngState::new(14);
        for (d, n) in [(2, 1), (3, 1), (5, 2)] {
            let q = random_point(d, n, 0.7, &mut rng).unwrap();
            let a = random_tangent(&q, &mut rng);
            for out in [apply_i(&a), apply_j(&a), apply_k(&a)] {
                assert!(out.defect() < 1e-12);
            }
        }
    }

    #[test]
    fn vertical_iff_k_fixed() {
        let mut rng = RngState::new(15);
        for (d, n) in [(3, 1), (4, 2)] {
            let q = random_point(d, n, 0.5, &mut rng).unwrap();
            // Vertical tangents: A = qX(1−q) satisfy Aq = 0.
            let x = gaussian_matrix(&mut rng, d, d);
            let vert = TangentVector::new(&q, &(q.matrix() * &x) * &q.complement()).unwrap();
            assert!(vert.is_vertical(1e-12));
            assert!((apply_k(&vert).matrix() - vert.matrix()).norm_fro() < 1e-12);
            let generic = random_tangent(&q, &mut rng);
            assert!(!generic.is_vertical(1e-6));
            assert!((apply_k(&generic).matrix() - generic.matrix()).norm_fro() > 1e-6);
        }
    }

    #[test]
    fn retract_examples() {
        let mut rng = RngState::new(16);
        let q = random_point(4, 2, 0.5, &mut rng).unwrap();
        let v = random_tangent(&q, &mut rng);
        assert_eq!(retract(&q, &v, 0.0).unwrap(), q);
        for t in [-1.0, -0.3, 0.5, 1.0] {
            let qt = retract(&q, &v, t).unwrap();
            assert!(ProjectionPoint::new(qt.matrix().clone(), 2).is_ok());
        }
        let h = 1e-4;
        let fd = (retract(&q, &v, h).unwrap().matrix() - retract(&q, &v, -h).unwrap().matrix())
            .scale_re(1.0 / (2.0 * h));
        assert!((&fd - v.matrix()).norm_fro() < 1e-6);
    }

    #[test]
    fn adjoint_involution_examples() {
        let mut rng = RngState::new(18);
        let h = haar_sample(3, 1, &mut rng).unwrap();
        assert!((adjoint_involution(&h).matrix() - h.matrix()).norm_fro() < 1e-15);
        let q = random_point(3, 1, 0.9, &mut rng).unwrap();
        let qa = adjoint_involution(&q);
        assert!(qa.invariant_residuals().0 < 1e-12);
        assert_eq!(adjoint_involution(&qa), q);
        assert!(!q.is_hermitian(1e-6));
    }
}
