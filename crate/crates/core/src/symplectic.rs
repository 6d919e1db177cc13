//! The holomorphic symplectic form, Hamiltonian fields and Poisson brackets
//! of expectation symbols.

use crate::error::{Error, Result};
use crate::grassmann::{apply_j, tau_product, ProjectionPoint, TangentVector};
use crate::matrix::{orthonormal_frame, ComplexMatrix, C64, I};
use crate::quantization::Observable;
use crate::tolerances::CONSTRUCTION_TOL;

#[derive(Clone, Debug)]
pub struct SymplecticValue<'a> {
    pub value: C64,
    pub base: &'a ProjectionPoint,
}

/// `Ω_q(A, B) = i·τ(q[A, B])`.
pub fn omega(q: &ProjectionPoint, u: &TangentVector, v: &TangentVector) -> Result<C64> {
    if !q.same_base(u.base()) || !q.same_base(v.base()) {
        return Err(Error::Contract("omega: tangent vectors based at a different point".into()));
    }
    Ok(omega_raw(q, u.matrix(), v.matrix()))
}

pub(crate) fn omega_raw(q: &ProjectionPoint, a: &ComplexMatrix, b: &ComplexMatrix) -> C64 {
    let comm = a.commutator(b);
    I * tau_product(q.matrix(), &comm, q.rank())
}

pub fn omega_value<'a>(q: &'a ProjectionPoint, u: &TangentVector, v: &TangentVector) -> Result<SymplecticValue<'a>> {
    Ok(SymplecticValue {
        value: omega(q, u, v)?,
        base: q,
    })
}

/// Hamiltonian field of the symbol `⟨M⟩`: `X = i[M, q]`, so that
/// `Ω(X, B) = τ(MB)` for every tangent `B`.
pub fn hamiltonian_field(q: &ProjectionPoint, m: &Observable) -> Result<TangentVector> {
    q.matrix().check_same_shape("hamiltonian_field", m.matrix())?;
    let x = m.matrix().commutator(q.matrix()).scale(I);
    Ok(TangentVector::from_trusted(q, x))
}

/// `{⟨M⟩, ⟨N⟩}(q)`, the derivative of `⟨N⟩` along `X_M`. With this
/// orientation `⟨[M, N]⟩ = i{⟨M⟩, ⟨N⟩}`.
pub fn poisson_bracket(m: &Observable, n: &Observable, q: &ProjectionPoint) -> Result<C64> {
    let xm = hamiltonian_field(q, m)?;
    let xn = hamiltonian_field(q, n)?;
    omega(q, &xn, &xm)
}

/// Real basis of the tangent space at `q`: `T E_ij T⁻¹` for the off-diagonal
/// block units in the adapted basis `T = [im q | ker q]`, then `i` times each.
pub fn tangent_real_basis(q: &ProjectionPoint) -> Result<Vec<ComplexMatrix>> {
    let d = q.dim();
    let n = q.rank();
    let v = orthonormal_frame(q.matrix(), n)?;
    let w = orthonormal_frame(&q.complement(), d - n)?;
    let mut t = ComplexMatrix::zeros(d, d);
    for c in 0..n {
        t.set_column(c, &v.column(c));
    }
    for c in 0..d - n {
        t.set_column(n + c, &w.column(c));
    }
    let t_inv = t.inverse()?;
    let mut complex_basis = Vec::with_capacity(2 * n * (d - n));
    for i in 0..n {
        for j in n..d {
            complex_basis.push(&(&t * &ComplexMatrix::unit(d, i, j)) * &t_inv);
            complex_basis.push(&(&t * &ComplexMatrix::unit(d, j, i)) * &t_inv);
        }
    }
    let imag: Vec<ComplexMatrix> = complex_basis.iter().map(|b| b.scale(I)).collect();
    complex_basis.extend(imag);
    Ok(complex_basis)
}

/// Smallest singular value of the real Gram matrix of `Re Ω` on a real
/// tangent basis of dimension `4n(d−n)`. Positive iff `Ω` is nondegenerate.
pub fn nondegeneracy_certificate(q: &ProjectionPoint) -> Result<f64> {
    let basis = tangent_real_basis(q)?;
    let m = basis.len();
    let gram = nalgebra::DMatrix::<f64>::from_fn(m, m, |i, j| omega_raw(q, &basis[i], &basis[j]).re);
    let sv = gram.singular_values();
    Ok(sv.iter().cloned().fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KahlerCheck {
    pub omega: C64,
    /// `τ(A·JB)`, equal to `Ω(A, B)` at Hermitian points.
    pub metric_form: C64,
    /// `τ(AB)`, the Riemannian metric on Hermitian tangents.
    pub metric: C64,
}

pub fn kahler_zero_section_check(q: &ProjectionPoint, u: &TangentVector, v: &TangentVector) -> Result<KahlerCheck> {
    if !q.is_hermitian(CONSTRUCTION_TOL) {
        return Err(Error::Contract("Kähler check needs a Hermitian base point".into()));
    }
    if !u.is_hermitian(CONSTRUCTION_TOL) || !v.is_hermitian(CONSTRUCTION_TOL) {
        return Err(Error::Contract("Kähler check needs Hermitian tangent vectors".into()));
    }
    let omega = omega(q, u, v)?;
    let jv = apply_j(v);
    let metric_form = tau_product(u.matrix(), jv.matrix(), q.rank());
    let metric = tau_product(u.matrix(), v.matrix(), q.rank());
    Ok(KahlerCheck {
        omega,
        metric_form,
        metric,
    })
}
