//! Expectation symbols, Berezin quantization over an integration cycle, the
//! two noncommutative products and Schur-type overcompleteness checks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grassmann::{haar_sample, tau_product, ProjectionPoint};
use crate::matrix::{expm, orthonormal_frame, ComplexMatrix, RngState, C64, I, ONE, ZERO};
use crate::monte_carlo::{estimate_mean, write_matrix, BoundedResidual, McConfig, MeanEstimate};
use crate::tolerances::CONSTRUCTION_TOL;

/// Operator `M` together with its expectation symbol `q ↦ τ(qM)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    m: ComplexMatrix,
}

impl Observable {
    pub fn new(m: ComplexMatrix) -> Self {
        debug_assert!(m.is_square());
        Self { m }
    }

    pub fn try_new(m: ComplexMatrix) -> Result<Self> {
        m.check_square("Observable")?;
        if !m.is_finite() {
            return Err(Error::Contract("observable has non-finite entries".into()));
        }
        Ok(Self { m })
    }

    pub fn identity(d: usize) -> Self {
        Self::new(ComplexMatrix::identity(d))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    pub fn symbol(&self) -> SymbolFunction {
        SymbolFunction::new(self.m.clone())
    }
}

/// `⟨M⟩(q) = τ(qM)`.
pub fn expectation(m: &Observable, q: &ProjectionPoint) -> Result<C64> {
    q.matrix().check_same_shape("expectation", m.matrix())?;
    Ok(q.tau_of(m.matrix()))
}

/// A function on the space of projections.
pub trait Symbol: Sync {
    fn eval(&self, q: &ProjectionPoint) -> C64;
}

/// Expectation symbol stored through an operator representative.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolFunction {
    representative: ComplexMatrix,
}

impl SymbolFunction {
    pub fn new(representative: ComplexMatrix) -> Self {
        Self { representative }
    }

    pub fn constant(d: usize, c: C64) -> Self {
        Self::new(ComplexMatrix::identity(d).scale(c))
    }

    pub fn representative(&self) -> &ComplexMatrix {
        &self.representative
    }

    pub fn add(&self, other: &SymbolFunction) -> SymbolFunction {
        Self::new(&self.representative + &other.representative)
    }

    pub fn sub(&self, other: &SymbolFunction) -> SymbolFunction {
        Self::new(&self.representative - &other.representative)
    }

    pub fn scale(&self, s: C64) -> SymbolFunction {
        Self::new(self.representative.scale(s))
    }
}

impl Symbol for SymbolFunction {
    fn eval(&self, q: &ProjectionPoint) -> C64 {
        q.tau_of(&self.representative)
    }
}

/// Wraps an arbitrary closure as a symbol.
pub struct FnSymbol<F>(pub F);

impl<F: Fn(&ProjectionPoint) -> C64 + Sync> Symbol for FnSymbol<F> {
    fn eval(&self, q: &ProjectionPoint) -> C64 {
        (self.0)(q)
    }
}

/// `f ⋆ g = ⟨FG⟩` on representatives.
pub fn star_expectation(m: &Observable, n: &Observable) -> SymbolFunction {
    SymbolFunction::new(m.matrix() * n.matrix())
}

pub const ORBIT_WORD_LENGTH: usize = 50;

/// Random words `Π exp(t_k G_{j_k})` in skew-Hermitian generators, applied
/// to a fixed subspace frame.
#[derive(Clone, Debug)]
pub struct OrbitSampler {
    generators: Vec<ComplexMatrix>,
    spectra: Vec<(Vec<f64>, ComplexMatrix)>,
    frame: ComplexMatrix,
    word_length: usize,
}

impl OrbitSampler {
    pub fn new(generators: Vec<ComplexMatrix>, frame: ComplexMatrix) -> Result<Self> {
        Self::with_word_length(generators, frame, ORBIT_WORD_LENGTH)
    }

    pub fn with_word_length(generators: Vec<ComplexMatrix>, frame: ComplexMatrix, word_length: usize) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::Contract("orbit sampler needs at least one generator".into()));
        }
        let d = frame.rows();
        let gram = &frame.adjoint() * &frame;
        if (&gram - &ComplexMatrix::identity(frame.cols())).norm_fro() > CONSTRUCTION_TOL {
            return Err(Error::Contract("orbit frame is not orthonormal".into()));
        }
        if frame.cols() == 0 || frame.cols() >= d {
            return Err(Error::Contract(format!("orbit frame rank {} in dimension {d}", frame.cols())));
        }
        let mut spectra = Vec::with_capacity(generators.len());
        for g in &generators {
            if g.rows() != d || !g.is_square() {
                return Err(Error::dim("OrbitSampler", format!("{d}x{d}"), format!("{}x{}", g.rows(), g.cols())));
            }
            if (g + &g.adjoint()).norm_fro() > CONSTRUCTION_TOL * g.norm_fro().max(1.0) {
                return Err(Error::Contract("orbit generators must be skew-Hermitian".into()));
            }
            // G = iH with H Hermitian
            let h = g.scale(-I).to_nalgebra();
            let h = (&h + &h.adjoint()) * C64::new(0.5, 0.0);
            let eig = nalgebra::SymmetricEigen::new(h);
            spectra.push((
                eig.eigenvalues.iter().copied().collect(),
                ComplexMatrix::from_nalgebra(&eig.eigenvectors),
            ));
        }
        Ok(Self {
            generators,
            spectra,
            frame,
            word_length,
        })
    }

    pub fn dim(&self) -> usize {
        self.frame.rows()
    }

    pub fn rank(&self) -> usize {
        self.frame.cols()
    }

    pub fn generators(&self) -> &[ComplexMatrix] {
        &self.generators
    }

    pub fn draw_unitary(&self, rng: &mut RngState) -> ComplexMatrix {
        let d = self.dim();
        let mut u = ComplexMatrix::identity(d);
        for _ in 0..self.word_length {
            let j = ((rng.uniform() * self.spectra.len() as f64) as usize).min(self.spectra.len() - 1);
            let t = std::f64::consts::PI * rng.normal();
            let (vals, vecs) = &self.spectra[j];
            let phases: Vec<C64> = vals.iter().map(|l| C64::from_polar(1.0, t * l)).collect();
            let mut right = &vecs.adjoint() * &u;
            for (r, p) in phases.iter().enumerate() {
                for c in 0..d {
                    right[(r, c)] *= p;
                }
            }
            u = vecs * &right;
        }
        u
    }

    pub fn draw(&self, rng: &mut RngState) -> ProjectionPoint {
        let v = &self.draw_unitary(rng) * &self.frame;
        ProjectionPoint::from_trusted(&v * &v.adjoint(), self.rank())
    }
}

/// Integration cycle together with its measure.
#[derive(Clone, Debug)]
pub enum CycleSampler {
    /// Unitarily invariant measure on the zero section with total mass `d/n`.
    HaarZeroSection { d: usize, n: usize },
    FixedQuadrature { points: Vec<ProjectionPoint>, weights: Vec<f64> },
    /// Orbit of a subspace under random words; total mass `d/n`.
    GroupOrbit(OrbitSampler),
}

impl CycleSampler {
    pub fn haar(d: usize, n: usize) -> Result<Self> {
        if n == 0 || n >= d {
            return Err(Error::Contract(format!("Haar cycle needs 1 ≤ n < d, got n={n}, d={d}")));
        }
        Ok(CycleSampler::HaarZeroSection { d, n })
    }

    pub fn quadrature(points: Vec<ProjectionPoint>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::Contract(format!(
                "quadrature needs matching non-empty points/weights ({} vs {})",
                points.len(),
                weights.len()
            )));
        }
        let (d, n) = (points[0].dim(), points[0].rank());
        if points.iter().any(|p| p.dim() != d || p.rank() != n) {
            return Err(Error::Contract("quadrature points must share dimension and rank".into()));
        }
        Ok(CycleSampler::FixedQuadrature { points, weights })
    }

    pub fn dim(&self) -> usize {
        match self {
            CycleSampler::HaarZeroSection { d, .. } => *d,
            CycleSampler::FixedQuadrature { points, .. } => points[0].dim(),
            CycleSampler::GroupOrbit(o) => o.dim(),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            CycleSampler::HaarZeroSection { n, .. } => *n,
            CycleSampler::FixedQuadrature { points, .. } => points[0].rank(),
            CycleSampler::GroupOrbit(o) => o.rank(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            CycleSampler::FixedQuadrature { weights, .. } => weights.iter().sum(),
            _ => self.dim() as f64 / self.rank() as f64,
        }
    }

    pub fn is_zero_section(&self) -> bool {
        match self {
            CycleSampler::FixedQuadrature { points, .. } => points.iter().all(|p| p.is_hermitian(CONSTRUCTION_TOL)),
            _ => true,
        }
    }

    /// One random point of the cycle (quadrature cycles draw a node
    /// uniformly at random).
    pub fn draw(&self, rng: &mut RngState) -> ProjectionPoint {
        match self {
            CycleSampler::HaarZeroSection { d, n } => haar_sample(*d, *n, rng).expect("validated dimensions"),
            CycleSampler::FixedQuadrature { points, .. } => {
                let k = ((rng.uniform() * points.len() as f64) as usize).min(points.len() - 1);
                points[k].clone()
            }
            CycleSampler::GroupOrbit(o) => o.draw(rng),
        }
    }

    /// `∫_M stat(q) dμ(q)` for a `len`-component statistic. Random cycles
    /// return a Monte Carlo estimate with variances; quadratures are exact
    /// weighted sums with zero variance.
    pub fn integrate<F>(&self, mc: &McConfig, rng: &RngState, len: usize, stat: F) -> Result<MeanEstimate>
    where
        F: Fn(&ProjectionPoint, usize, &mut [C64]) -> Result<()> + Sync,
    {
        match self {
            CycleSampler::FixedQuadrature { points, weights } => {
                let mut acc = vec![ZERO; len];
                let mut buf = vec![ZERO; len];
                for (k, (p, w)) in points.iter().zip(weights).enumerate() {
                    buf.fill(ZERO);
                    stat(p, k, &mut buf)?;
                    for (a, b) in acc.iter_mut().zip(&buf) {
                        *a += b * *w;
                    }
                }
                Ok(MeanEstimate {
                    mean: acc,
                    variance: vec![0.0; len],
                    samples: points.len(),
                })
            }
            _ => {
                let est = estimate_mean(mc, rng, len, |r, k, out| {
                    let q = self.draw(r);
                    stat(&q, k, out)
                })?;
                Ok(est.scaled(self.total_mass()))
            }
        }
    }
}

fn checked_eval(f: &(impl Symbol + ?Sized), q: &ProjectionPoint, sample: usize) -> Result<C64> {
    let v = f.eval(q);
    if !v.re.is_finite() || !v.im.is_finite() {
        return Err(Error::Evaluation { sample, value: v });
    }
    Ok(v)
}

/// Berezin quantization with its Monte Carlo error bar.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorEstimate {
    pub operator: ComplexMatrix,
    /// 3σ CLT bound on the Frobenius error; zero for quadratures.
    pub three_sigma: f64,
    pub samples: usize,
}

/// `Q_f = ∫_M f(q)·q dμ(q)`.
pub fn berezin_estimate(
    f: &(impl Symbol + ?Sized),
    sampler: &CycleSampler,
    mc: &McConfig,
    rng: &RngState,
) -> Result<OperatorEstimate> {
    let d = sampler.dim();
    let est = sampler.integrate(mc, rng, d * d, |q, k, out| {
        let v = checked_eval(f, q, k)?;
        write_matrix(out, q.matrix(), v);
        Ok(())
    })?;
    Ok(OperatorEstimate {
        operator: est.mean_matrix(d, d),
        three_sigma: est.three_sigma(),
        samples: est.samples,
    })
}

pub fn berezin_quantize(
    f: &(impl Symbol + ?Sized),
    sampler: &CycleSampler,
    mc: &McConfig,
    rng: &RngState,
) -> Result<Observable> {
    Ok(Observable::new(berezin_estimate(f, sampler, mc, rng)?.operator))
}

/// `‖Q_1 − I‖_F` with its 3σ bound. A single sample has no variance
/// estimate, so its bound is zero.
pub fn overcompleteness_residual(sampler: &CycleSampler, mc: &McConfig, rng: &RngState) -> Result<BoundedResidual> {
    let d = sampler.dim();
    let est = berezin_estimate(&SymbolFunction::constant(d, ONE), sampler, mc, rng)?;
    Ok(BoundedResidual {
        residual: (&est.operator - &ComplexMatrix::identity(d)).norm_fro(),
        bound: est.three_sigma,
        samples: est.samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityResidual {
    /// `τ(A·Q_f)` from the first sample set.
    pub operator_side: C64,
    /// `∫ ⟨A⟩ f dμ` from the first sample set.
    pub symbol_side: C64,
    /// Difference of the two sides on the same samples.
    pub same_sample: f64,
    /// Difference when the symbol side uses an independent sample set.
    pub cross_sample: BoundedResidual,
}

/// Duality `τ(A·Q_f) = ∫_M ⟨A⟩ f dμ` between quantization and expectation.
pub fn duality_residual(
    a: &Observable,
    f: &(impl Symbol + ?Sized),
    sampler: &CycleSampler,
    mc: &McConfig,
    rng: &RngState,
) -> Result<DualityResidual> {
    let d = sampler.dim();
    let n = sampler.rank();
    a.matrix().check_same_shape("duality_residual", &ComplexMatrix::zeros(d, d))?;
    let joint = sampler.integrate(mc, rng, d * d + 1, |q, k, out| {
        let v = checked_eval(f, q, k)?;
        write_matrix(&mut out[..d * d], q.matrix(), v);
        out[d * d] = v * q.tau_of(a.matrix());
        Ok(())
    })?;
    let qf = ComplexMatrix::from_fn(d, d, |r, c| joint.mean[r * d + c]);
    let operator_side = tau_product(a.matrix(), &qf, n);
    let symbol_side = joint.mean[d * d];
    let independent = sampler.integrate(mc, &rng.derive(1 << 32), 1, |q, k, out| {
        out[0] = checked_eval(f, q, k)? * q.tau_of(a.matrix());
        Ok(())
    })?;
    let var = joint.variance[d * d] + independent.variance[0];
    let bound = if joint.samples < 2 {
        0.0
    } else {
        3.0 * (var / joint.samples as f64).sqrt()
    };
    Ok(DualityResidual {
        operator_side,
        symbol_side,
        same_sample: (operator_side - symbol_side).norm(),
        cross_sample: BoundedResidual {
            residual: (operator_side - independent.mean[0]).norm(),
            bound,
            samples: joint.samples,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdjointnessResidual {
    /// `τ(T†·Q_f)`.
    pub operator_side: C64,
    /// `⟨⟨T⟩, f⟩_{L²} = ∫ conj(⟨T⟩) f dμ`.
    pub symbol_side: C64,
    pub difference: f64,
}

/// Adjointness of `⟨·⟩` and `Q` on the zero section, evaluated on one
/// sample set.
pub fn adjointness_residual(
    t: &Observable,
    f: &(impl Symbol + ?Sized),
    sampler: &CycleSampler,
    mc: &McConfig,
    rng: &RngState,
) -> Result<AdjointnessResidual> {
    if !sampler.is_zero_section() {
        return Err(Error::Contract("adjointness needs a Hermitian (zero-section) cycle".into()));
    }
    let d = sampler.dim();
    let n = sampler.rank();
    let est = sampler.integrate(mc, rng, d * d + 1, |q, k, out| {
        let v = checked_eval(f, q, k)?;
        write_matrix(&mut out[..d * d], q.matrix(), v);
        out[d * d] = q.tau_of(t.matrix()).conj() * v;
        Ok(())
    })?;
    let qf = ComplexMatrix::from_fn(d, d, |r, c| est.mean[r * d + c]);
    let operator_side = tau_product(&t.matrix().adjoint(), &qf, n);
    let symbol_side = est.mean[d * d];
    Ok(AdjointnessResidual {
        operator_side,
        symbol_side,
        difference: (operator_side - symbol_side).norm(),
    })
}

/// Ridge damping, relative to the largest singular value squared.
pub const PULLBACK_RIDGE: f64 = 1e-10;
pub const PULLBACK_CONDITION_LIMIT: f64 = 1e6;

/// The quantization map restricted to the span of matrix-unit symbols
/// `⟨E_ij⟩`, estimated once on a fixed sample set.
#[derive(Clone, Debug)]
pub struct SymbolSpanQuantizer {
    d: usize,
    map: DMatrix<C64>,
    condition: f64,
    samples: usize,
}

impl SymbolSpanQuantizer {
    pub fn estimate(sampler: &CycleSampler, mc: &McConfig, rng: &RngState) -> Result<Self> {
        let d = sampler.dim();
        let n = sampler.rank() as f64;
        let dd = d * d;
        // column (i,j) holds Q_{⟨E_ij⟩} = ∫ τ(q E_ij) q = ∫ (q_ji / n) q
        let est = sampler.integrate(mc, rng, dd * dd, |q, _, out| {
            let qs = q.matrix().as_slice();
            for kl in 0..dd {
                for i in 0..d {
                    for j in 0..d {
                        out[kl * dd + i * d + j] = qs[kl] * qs[j * d + i] / n;
                    }
                }
            }
            Ok(())
        })?;
        let map = DMatrix::from_fn(dd, dd, |r, c| est.mean[r * dd + c]);
        let sv = map.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        Ok(Self {
            d,
            map,
            condition,
            samples: est.samples,
        })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn quantize(&self, f: &SymbolFunction) -> ComplexMatrix {
        let v = DMatrix::from_row_slice(self.d * self.d, 1, f.representative().as_slice());
        let out = &self.map * v;
        ComplexMatrix::from_fn(self.d, self.d, |r, c| out[(r * self.d + c, 0)])
    }

    /// Least-squares preimage of an operator in the symbol span.
    pub fn pull_back(&self, op: &ComplexMatrix) -> Result<SymbolFunction> {
        if self.condition > PULLBACK_CONDITION_LIMIT {
            return Err(Error::Conditioning {
                condition: self.condition,
                limit: PULLBACK_CONDITION_LIMIT,
            });
        }
        let dd = self.d * self.d;
        let b = DMatrix::from_row_slice(dd, 1, op.as_slice());
        let svd = self.map.clone().svd(true, true);
        let u = svd.u.as_ref().expect("requested U");
        let vt = svd.v_t.as_ref().expect("requested V^T");
        let smax = svd.singular_values.max();
        let lambda = PULLBACK_RIDGE * smax * smax;
        let ub = u.adjoint() * b;
        let mut coeffs = ub.clone();
        for (k, s) in svd.singular_values.iter().enumerate() {
            coeffs[(k, 0)] = ub[(k, 0)] * (*s / (s * s + lambda));
        }
        let x = vt.adjoint() * coeffs;
        Ok(SymbolFunction::new(ComplexMatrix::from_fn(self.d, self.d, |r, c| {
            x[(r * self.d + c, 0)]
        })))
    }

    /// `f ⋆_Q g = Q⁻¹(Q_f Q_g)`.
    pub fn star(&self, f: &SymbolFunction, g: &SymbolFunction) -> Result<SymbolFunction> {
        let prod = &self.quantize(f) * &self.quantize(g);
        self.pull_back(&prod)
    }
}

pub fn star_q(
    f: &SymbolFunction,
    g: &SymbolFunction,
    sampler: &CycleSampler,
    mc: &McConfig,
    rng: &RngState,
) -> Result<SymbolFunction> {
    SymbolSpanQuantizer::estimate(sampler, mc, rng)?.star(f, g)
}

/// Rank of the complex span of `count` sampled points, viewed as vectors in
/// `C^{d²}`. Equal to `d²` when expectation symbols separate operators.
pub fn symbol_span_rank(sampler: &CycleSampler, count: usize, rng: &mut RngState) -> usize {
    let d = sampler.dim();
    let rows: Vec<ComplexMatrix> = (0..count).map(|_| sampler.draw(rng)).map(|q| q.matrix().clone()).collect();
    let stacked = DMatrix::from_fn(count, d * d, |r, c| rows[r].as_slice()[c]);
    let sv = stacked.singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > crate::matrix::RANK_CUTOFF * smax).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OrbitVerdict {
    Overcomplete,
    Inconclusive,
    Reducible,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrbitReport {
    pub residual: f64,
    pub std_error: f64,
    pub bound: f64,
    pub verdict: OrbitVerdict,
    pub samples: usize,
}

/// Schur test for an orbit: `‖(d/n)·mean(q) − I‖` against `3σ`. Deviations
/// beyond `10σ` are reported as a reducible action.
pub fn orbit_overcompleteness(
    generators: Vec<ComplexMatrix>,
    frame: &ComplexMatrix,
    mc: &McConfig,
    rng: &RngState,
) -> Result<OrbitReport> {
    let v = orthonormal_frame(frame, frame.cols())?;
    let sampler = CycleSampler::GroupOrbit(OrbitSampler::new(generators, v)?);
    let d = sampler.dim();
    let est = berezin_estimate(&SymbolFunction::constant(d, ONE), &sampler, mc, rng)?;
    let residual = (&est.operator - &ComplexMatrix::identity(d)).norm_fro();
    let std_error = est.three_sigma / 3.0;
    let verdict = if residual <= 3.0 * std_error {
        OrbitVerdict::Overcomplete
    } else if residual > 10.0 * std_error {
        OrbitVerdict::Reducible
    } else {
        OrbitVerdict::Inconclusive
    };
    Ok(OrbitReport {
        residual,
        std_error,
        bound: 3.0 * std_error,
        verdict,
        samples: est.samples,
    })
}

/// Skew-Hermitian basis of `u(d)`: `iE_kk`, `E_kl − E_lk`, `i(E_kl + E_lk)`.
pub fn unitary_algebra_basis(d: usize) -> Vec<ComplexMatrix> {
    let mut out = Vec::with_capacity(d * d);
    for k in 0..d {
        out.push(ComplexMatrix::unit(d, k, k).scale(I));
        for l in k + 1..d {
            out.push(&ComplexMatrix::unit(d, k, l) - &ComplexMatrix::unit(d, l, k));
            out.push((&ComplexMatrix::unit(d, k, l) + &ComplexMatrix::unit(d, l, k)).scale(I));
        }
    }
    out
}

/// Pauli matrices `σ_x, σ_y, σ_z`.
pub fn pauli() -> [ComplexMatrix; 3] {
    [
        ComplexMatrix::from_rows(&[&[ZERO, ONE], &[ONE, ZERO]]).expect("2x2"),
        ComplexMatrix::from_rows(&[&[ZERO, -I], &[I, ZERO]]).expect("2x2"),
        ComplexMatrix::from_rows(&[&[ONE, ZERO], &[ZERO, -ONE]]).expect("2x2"),
    ]
}

/// `exp(tG)` through the Padé exponential.
pub fn generator_exponential(g: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    expm(&g.scale_re(t))
}
