//! The idempotent propagator on the tautological bundle `E = {(q, v): qv = v}`,
//! its three-point function, discrete and continuous transport, coherent
//! sections and the reconstruction of points from a propagator kernel.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grassmann::{apply_i, apply_j, apply_k, retract, tau_product, ProjectionPoint, TangentVector};
use crate::matrix::{expm, orthonormal_frame, vec_inner, vec_norm, ComplexMatrix, RngState, C64, I, ONE, ZERO};
use crate::monte_carlo::{write_matrix, BoundedResidual, McConfig};
use crate::quantization::{CycleSampler, Observable};
use crate::tolerances::{CONSTRUCTION_TOL, STEP_JUMP_LIMIT};

/// Smallest singular value below which a map is flagged as frame-degenerate.
pub const DEGENERACY_FLAG: f64 = 1e-8;

/// Basis of the fiber `im q`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberFrame {
    base: ProjectionPoint,
    columns: ComplexMatrix,
}

impl FiberFrame {
    pub fn new(base: &ProjectionPoint, columns: ComplexMatrix) -> Result<Self> {
        if columns.rows() != base.dim() || columns.cols() != base.rank() {
            return Err(Error::dim(
                "FiberFrame",
                format!("{}x{}", base.dim(), base.rank()),
                format!("{}x{}", columns.rows(), columns.cols()),
            ));
        }
        let defect = (&(base.matrix() * &columns) - &columns).norm_fro();
        if defect > CONSTRUCTION_TOL * columns.norm_fro().max(1.0) {
            return Err(Error::Contract(format!("frame columns leave the fiber (‖qV − V‖ = {defect:.3e})")));
        }
        let sv = columns.singular_values();
        if sv.last().copied().unwrap_or(0.0) <= crate::matrix::RANK_CUTOFF * sv[0] {
            return Err(Error::RankDeficient {
                requested: base.rank(),
                ratio: sv.last().copied().unwrap_or(0.0) / sv[0],
            });
        }
        Ok(Self {
            base: base.clone(),
            columns,
        })
    }

    /// Orthonormal frame from pivoted Gram–Schmidt on the columns of `q`,
    /// with positive pivots.
    pub fn canonical(q: &ProjectionPoint) -> Result<Self> {
        let v = orthonormal_frame(q.matrix(), q.rank())?;
        Ok(Self {
            base: q.clone(),
            columns: v,
        })
    }

    pub fn base(&self) -> &ProjectionPoint {
        &self.base
    }

    pub fn columns(&self) -> &ComplexMatrix {
        &self.columns
    }

    /// Coordinates of fiber vectors (columns of `w`) in this frame.
    pub fn coordinates(&self, w: &ComplexMatrix) -> Result<ComplexMatrix> {
        let vh = self.columns.adjoint();
        (&vh * &self.columns).solve(&(&vh * w))
    }
}

/// Matrix of `v ↦ q₂v` from the fiber over `q₁` to the fiber over `q₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagatorMap {
    pub source: FiberFrame,
    pub target: FiberFrame,
    pub matrix: ComplexMatrix,
}

impl PropagatorMap {
    pub fn smallest_singular_value(&self) -> f64 {
        self.matrix.singular_values().last().copied().unwrap_or(0.0)
    }

    /// True when the map is numerically singular (near-orthogonal fibers).
    pub fn degenerate(&self) -> bool {
        self.smallest_singular_value() < DEGENERACY_FLAG
    }

    /// `next ∘ self`; `next` must start on the fiber this map ends on.
    pub fn then(&self, next: &PropagatorMap) -> Result<PropagatorMap> {
        if !self.target.base.same_base(&next.source.base) {
            return Err(Error::Contract("composed maps do not share a fiber".into()));
        }
        let change = next.source.coordinates(self.target.columns())?;
        Ok(PropagatorMap {
            source: self.source.clone(),
            target: next.target.clone(),
            matrix: &(&next.matrix * &change) * &self.matrix,
        })
    }

    /// Normalized trace, for maps from a fiber to itself.
    pub fn tau(&self) -> Result<C64> {
        if !self.source.base.same_base(&self.target.base) {
            return Err(Error::Contract("trace of a map between different fibers".into()));
        }
        let change = self.source.coordinates(self.target.columns())?;
        Ok((&change * &self.matrix).trace() / self.source.base.rank() as f64)
    }

    /// `arg det`, the holonomy phase of a loop.
    pub fn phase(&self) -> f64 {
        self.matrix.to_nalgebra().determinant().arg()
    }

    /// Same map expressed in other frames over the same points.
    pub fn reframe(&self, source: &FiberFrame, target: &FiberFrame) -> Result<PropagatorMap> {
        if !source.base.same_base(&self.source.base) || !target.base.same_base(&self.target.base) {
            return Err(Error::Contract("reframe needs frames over the same points".into()));
        }
        let into_old = self.source.coordinates(source.columns())?;
        let ambient = self.target.columns() * &(&self.matrix * &into_old);
        Ok(PropagatorMap {
            source: source.clone(),
            target: target.clone(),
            matrix: target.coordinates(&ambient)?,
        })
    }
}

fn check_pair(q1: &ProjectionPoint, q2: &ProjectionPoint, op: &'static str) -> Result<()> {
    if q1.dim() != q2.dim() || q1.rank() != q2.rank() {
        return Err(Error::dim(
            op,
            format!("d={}, n={}", q1.dim(), q1.rank()),
            format!("d={}, n={}", q2.dim(), q2.rank()),
        ));
    }
    Ok(())
}

pub fn propagate_frames(source: &FiberFrame, target: &FiberFrame) -> Result<PropagatorMap> {
    check_pair(&source.base, &target.base, "propagate")?;
    let image = target.base.matrix() * source.columns();
    Ok(PropagatorMap {
        source: source.clone(),
        target: target.clone(),
        matrix: target.coordinates(&image)?,
    })
}

/// `v ↦ q₂v` in canonical frames.
pub fn propagate(q1: &ProjectionPoint, q2: &ProjectionPoint) -> Result<PropagatorMap> {
    propagate_frames(&FiberFrame::canonical(q1)?, &FiberFrame::canonical(q2)?)
}

/// `Δ(q₁, q₂, q₃) = τ(q₃q₂q₁)`.
pub fn three_point(q1: &ProjectionPoint, q2: &ProjectionPoint, q3: &ProjectionPoint) -> Result<C64> {
    check_pair(q1, q2, "three_point")?;
    check_pair(q1, q3, "three_point")?;
    Ok(tau_product(&(q3.matrix() * q2.matrix()), q1.matrix(), q1.rank()))
}

/// The same value through propagator maps around the cycle
/// `q₁ → q₂ → q₃ → q₁`.
pub fn three_point_via_maps(q1: &ProjectionPoint, q2: &ProjectionPoint, q3: &ProjectionPoint) -> Result<C64> {
    propagate(q1, q2)?.then(&propagate(q2, q3)?)?.then(&propagate(q3, q1)?)?.tau()
}

pub const CURVATURE_EPS_RANGE: (f64, f64) = (1e-6, 1e-2);

/// Antisymmetrized second-order coefficient of `Δ` at points displaced
/// along `u` and `v`; tends to `Ω_q(u, v)` as `eps → 0`.
pub fn curvature_from_three_point(q: &ProjectionPoint, u: &TangentVector, v: &TangentVector, eps: f64) -> Result<C64> {
    if !(CURVATURE_EPS_RANGE.0..=CURVATURE_EPS_RANGE.1).contains(&eps) {
        return Err(Error::Contract(format!("eps {eps:e} outside [1e-6, 1e-2]")));
    }
    let qa = retract(q, u, eps)?;
    let qb = retract(q, v, eps)?;
    let forward = three_point(q, &qb, &qa)?;
    let backward = three_point(q, &qa, &qb)?;
    Ok(I * (forward - backward) / (eps * eps))
}

/// `‖(d/n)·E_Haar[P(q, q₂)∘P(q₁, q)] − P(q₁, q₂)‖_F` in canonical frames.
pub fn convolution_idempotency_residual(
    q1: &ProjectionPoint,
    q2: &ProjectionPoint,
    mc: &McConfig,
    rng: &RngState,
) -> Result<BoundedResidual> {
    check_pair(q1, q2, "convolution_idempotency_residual")?;
    let direct = propagate(q1, q2)?;
    let v1 = direct.source.columns().clone();
    let v2h = direct.target.columns().adjoint();
    let left = &v2h * q2.matrix();
    let n = q1.rank();
    let sampler = CycleSampler::haar(q1.dim(), n)?;
    let est = sampler.integrate(mc, rng, n * n, |q, _, out| {
        let m = &(&left * q.matrix()) * &v1;
        write_matrix(out, &m, ONE);
        Ok(())
    })?;
    let mean = est.mean_matrix(n, n);
    Ok(BoundedResidual {
        residual: (&mean - &direct.matrix).norm_fro(),
        bound: est.three_sigma(),
        samples: est.samples,
    })
}

/// Skew-Hermitian `Λ` with `e^Λ q_a e^{−Λ} = q_b` along the shortest
/// geodesic between Hermitian projections (principal-angle construction).
pub fn geodesic_generator(qa: &ProjectionPoint, qb: &ProjectionPoint) -> Result<ComplexMatrix> {
    check_pair(qa, qb, "geodesic_generator")?;
    if !qa.is_hermitian(CONSTRUCTION_TOL) || !qb.is_hermitian(CONSTRUCTION_TOL) {
        return Err(Error::Contract("geodesics are defined between Hermitian points only".into()));
    }
    let va = orthonormal_frame(qa.matrix(), qa.rank())?;
    let vb = orthonormal_frame(qb.matrix(), qb.rank())?;
    let overlap = (&va.adjoint() * &vb).to_nalgebra();
    let svd = overlap.svd(true, true);
    let u = ComplexMatrix::from_nalgebra(svd.u.as_ref().expect("U"));
    let w = ComplexMatrix::from_nalgebra(&svd.v_t.as_ref().expect("V^T").adjoint());
    let psi = &va * &u;
    let phi = &vb * &w;
    let d = qa.dim();
    let mut lambda = ComplexMatrix::zeros(d, d);
    for k in 0..qa.rank() {
        let cos = svd.singular_values[k].min(1.0);
        let p = psi.column(k);
        let f = phi.column(k);
        let mut chi: Vec<C64> = f.iter().zip(&p).map(|(fi, pi)| fi - pi * cos).collect();
        let sin = vec_norm(&chi);
        if sin < 1e-14 {
            continue;
        }
        if cos < 1e-12 {
            return Err(Error::Contract("geodesic undefined between orthogonal fibers".into()));
        }
        let theta = sin.atan2(cos);
        for x in &mut chi {
            *x /= sin;
        }
        for r in 0..d {
            for c in 0..d {
                lambda[(r, c)] += (chi[r] * p[c].conj() - p[r] * chi[c].conj()) * theta;
            }
        }
    }
    Ok(lambda)
}

#[derive(Clone, Debug)]
pub enum PathKind {
    /// `q(t) = e^{tX} q₀ e^{−tX}`, `t ∈ [0, 1]`.
    UnitaryFlow { start: ProjectionPoint, generator: ComplexMatrix },
    /// Shortest geodesics between consecutive Hermitian vertices.
    PiecewiseGeodesic { vertices: Vec<ProjectionPoint> },
    /// Explicit samples; the continuous path interpolates them by geodesics.
    Samples(Vec<ProjectionPoint>),
}

#[derive(Clone, Debug)]
pub struct PathSpec {
    pub kind: PathKind,
    /// Total number of steps, split evenly across segments.
    pub steps: usize,
}

struct Segment {
    start: ProjectionPoint,
    generator: ComplexMatrix,
    steps: usize,
}

fn split_steps(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|k| total / parts + usize::from(k < total % parts)).collect()
}

fn flow_point(seg: &Segment, t: f64) -> Result<ProjectionPoint> {
    if t == 0.0 {
        return Ok(seg.start.clone());
    }
    let fwd = expm(&seg.generator.scale_re(t))?;
    let bwd = expm(&seg.generator.scale_re(-t))?;
    Ok(ProjectionPoint::from_trusted(&(&fwd * seg.start.matrix()) * &bwd, seg.start.rank()))
}

impl PathSpec {
    pub fn unitary_flow(start: ProjectionPoint, generator: ComplexMatrix, steps: usize) -> Self {
        Self {
            kind: PathKind::UnitaryFlow { start, generator },
            steps,
        }
    }

    pub fn geodesic_polygon(vertices: Vec<ProjectionPoint>, steps: usize) -> Self {
        Self {
            kind: PathKind::PiecewiseGeodesic { vertices },
            steps,
        }
    }

    pub fn samples(points: Vec<ProjectionPoint>) -> Self {
        let steps = points.len().saturating_sub(1);
        Self {
            kind: PathKind::Samples(points),
            steps,
        }
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        Self {
            kind: self.kind.clone(),
            steps,
        }
    }

    fn segments(&self, total: usize) -> Result<Vec<Segment>> {
        match &self.kind {
            PathKind::UnitaryFlow { start, generator } => {
                start.matrix().check_same_shape("unitary flow", generator)?;
                Ok(vec![Segment {
                    start: start.clone(),
                    generator: generator.clone(),
                    steps: total,
                }])
            }
            PathKind::PiecewiseGeodesic { vertices } | PathKind::Samples(vertices) => {
                if vertices.len() < 2 {
                    return Ok(Vec::new());
                }
                let counts = split_steps(total, vertices.len() - 1);
                vertices
                    .windows(2)
                    .zip(counts)
                    .map(|(w, steps)| {
                        Ok(Segment {
                            start: w[0].clone(),
                            generator: geodesic_generator(&w[0], &w[1])?,
                            steps,
                        })
                    })
                    .collect()
            }
        }
    }

    pub fn start(&self) -> &ProjectionPoint {
        match &self.kind {
            PathKind::UnitaryFlow { start, .. } => start,
            PathKind::PiecewiseGeodesic { vertices } | PathKind::Samples(vertices) => &vertices[0],
        }
    }

    /// The discretization `q₀, …, q_m`.
    pub fn points(&self) -> Result<Vec<ProjectionPoint>> {
        if let PathKind::Samples(points) = &self.kind {
            return Ok(points.clone());
        }
        let segments = self.segments(self.steps)?;
        let mut out = vec![self.start().clone()];
        for seg in &segments {
            if seg.steps == 0 {
                out.push(flow_point(seg, 1.0)?);
                continue;
            }
            for k in 1..=seg.steps {
                out.push(flow_point(seg, k as f64 / seg.steps as f64)?);
            }
        }
        Ok(out)
    }

    pub fn reversed(&self) -> Result<PathSpec> {
        let kind = match &self.kind {
            PathKind::UnitaryFlow { start, generator } => {
                let end = flow_point(
                    &Segment {
                        start: start.clone(),
                        generator: generator.clone(),
                        steps: 1,
                    },
                    1.0,
                )?;
                PathKind::UnitaryFlow {
                    start: end,
                    generator: generator.scale_re(-1.0),
                }
            }
            PathKind::PiecewiseGeodesic { vertices } => PathKind::PiecewiseGeodesic {
                vertices: vertices.iter().rev().cloned().collect(),
            },
            PathKind::Samples(points) => PathKind::Samples(points.iter().rev().cloned().collect()),
        };
        Ok(PathSpec {
            kind,
            steps: self.steps,
        })
    }
}

/// Ordered product of propagators over consecutive samples.
pub fn discrete_transport(path: &PathSpec) -> Result<PropagatorMap> {
    let points = path.points()?;
    transport_points(&points)
}

pub fn transport_points(points: &[ProjectionPoint]) -> Result<PropagatorMap> {
    let first = points
        .first()
        .ok_or_else(|| Error::Contract("empty path".into()))?;
    for (k, w) in points.windows(2).enumerate() {
        check_pair(&w[0], &w[1], "discrete_transport")?;
        let jump = (w[1].matrix() - w[0].matrix()).norm_fro();
        if jump > STEP_JUMP_LIMIT {
            return Err(Error::StepSize {
                step: k,
                jump,
                limit: STEP_JUMP_LIMIT,
            });
        }
    }
    let source = FiberFrame::canonical(first)?;
    let mut w = source.columns().clone();
    for q in &points[1..] {
        w = q.matrix() * &w;
    }
    let target = FiberFrame::canonical(points.last().expect("non-empty"))?;
    Ok(PropagatorMap {
        matrix: target.coordinates(&w)?,
        source,
        target,
    })
}

/// Horizontal lift `v̇ = q̇(t)·v` integrated by classical RK4, with the
/// state re-projected onto the fiber after every step.
pub fn ode_transport(path: &PathSpec, steps: usize) -> Result<PropagatorMap> {
    if let PathKind::Samples(points) = &path.kind {
        if points.iter().any(|p| !p.is_hermitian(CONSTRUCTION_TOL)) {
            return Err(Error::Contract(
                "continuous transport of explicit samples needs Hermitian samples (geodesic interpolation)".into(),
            ));
        }
    }
    let segments = path.segments(steps)?;
    let source = FiberFrame::canonical(path.start())?;
    let mut v = source.columns().clone();
    let mut end = path.start().clone();
    for seg in &segments {
        let m = seg.steps.max(1);
        let h = 1.0 / m as f64;
        let x = &seg.generator;
        let velocity = |t: f64, v: &ComplexMatrix| -> Result<ComplexMatrix> {
            let q = flow_point(seg, t)?;
            let qdot = x.commutator(q.matrix());
            Ok(&qdot * v)
        };
        let mut prev = seg.start.clone();
        for k in 0..m {
            let t = k as f64 * h;
            let k1 = velocity(t, &v)?;
            let k2 = velocity(t + 0.5 * h, &(&v + &k1.scale_re(0.5 * h)))?;
            let k3 = velocity(t + 0.5 * h, &(&v + &k2.scale_re(0.5 * h)))?;
            let k4 = velocity(t + h, &(&v + &k3.scale_re(h)))?;
            let incr = &(&k1 + &k2.scale_re(2.0)) + &(&k3.scale_re(2.0) + &k4);
            let next = flow_point(seg, t + h)?;
            let jump = (next.matrix() - prev.matrix()).norm_fro();
            if jump > STEP_JUMP_LIMIT {
                return Err(Error::StepSize {
                    step: k,
                    jump,
                    limit: STEP_JUMP_LIMIT,
                });
            }
            v = next.matrix() * &(&v + &incr.scale_re(h / 6.0));
            if !v.is_finite() {
                return Err(Error::Contract(format!("transport diverged at step {k}")));
            }
            prev = next;
        }
        end = prev;
    }
    let target = FiberFrame::canonical(&end)?;
    Ok(PropagatorMap {
        matrix: target.coordinates(&v)?,
        source,
        target,
    })
}

type SectionFn = dyn Fn(&ProjectionPoint) -> Vec<C64> + Send + Sync;

/// A section `q ↦ ψ(q) ∈ im q`, evaluated on demand.
#[derive(Clone)]
pub enum SectionSample {
    /// `ψ_Ψ(q) = qΨ`.
    Coherent(Vec<C64>),
    /// `q ↦ q·g(q)` for an arbitrary ambient-valued `g`.
    General(Arc<SectionFn>),
}

impl std::fmt::Debug for SectionSample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SectionSample::Coherent(psi) => f.debug_tuple("Coherent").field(psi).finish(),
            SectionSample::General(_) => f.write_str("General(..)"),
        }
    }
}

impl SectionSample {
    pub fn from_fn(g: impl Fn(&ProjectionPoint) -> Vec<C64> + Send + Sync + 'static) -> Self {
        SectionSample::General(Arc::new(g))
    }

    pub fn eval(&self, q: &ProjectionPoint) -> Result<Vec<C64>> {
        let raw = match self {
            SectionSample::Coherent(psi) => psi.clone(),
            SectionSample::General(g) => g(q),
        };
        if raw.len() != q.dim() {
            return Err(Error::dim("section", q.dim(), raw.len()));
        }
        let v = q.matrix().mul_vec(&raw);
        let back = q.matrix().mul_vec(&v);
        let defect = vec_norm(&back.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        if defect > CONSTRUCTION_TOL * vec_norm(&v).max(1.0) {
            return Err(Error::Contract(format!("section leaves the fiber (defect {defect:.3e})")));
        }
        Ok(v)
    }

    pub fn coherent_vector(&self) -> Option<&[C64]> {
        match self {
            SectionSample::Coherent(psi) => Some(psi),
            SectionSample::General(_) => None,
        }
    }
}

pub fn coherent_section(psi: &[C64]) -> Result<SectionSample> {
    if vec_norm(psi) == 0.0 {
        return Err(Error::Contract("coherent section of the zero vector".into()));
    }
    Ok(SectionSample::Coherent(psi.to_vec()))
}

/// Reproducing projection `(P̂ψ)(q) = ∫ P(q′, q)ψ(q′) dμ(q′) = q·∫ψ dμ`; the
/// image is the coherent section of the integrated vector.
#[derive(Clone, Debug)]
pub struct ProjectedSection {
    pub section: SectionSample,
    pub vector: Vec<C64>,
    pub three_sigma: f64,
}

pub fn reproducing_projection(
    section: &SectionSample,
    sampler: &CycleSampler,
    mc: &McConfig,
    rng: &RngState,
) -> Result<ProjectedSection> {
    let d = sampler.dim();
    let est = sampler.integrate(mc, rng, d, |q, _, out| {
        out.copy_from_slice(&section.eval(q)?);
        Ok(())
    })?;
    Ok(ProjectedSection {
        section: SectionSample::Coherent(est.mean.clone()),
        vector: est.mean.clone(),
        three_sigma: est.three_sigma(),
    })
}

/// `(d/n)·E[qΨ]` against `Ψ`.
pub fn coherent_reconstruction(psi: &[C64], sampler: &CycleSampler, mc: &McConfig, rng: &RngState) -> Result<BoundedResidual> {
    let projected = reproducing_projection(&coherent_section(psi)?, sampler, mc, rng)?;
    let diff: Vec<C64> = projected.vector.iter().zip(psi).map(|(a, b)| a - b).collect();
    Ok(BoundedResidual {
        residual: vec_norm(&diff),
        bound: projected.three_sigma,
        samples: mc.samples,
    })
}

/// `(d/n)·E⟨qΨ₁, qΨ₂⟩` against `⟨Ψ₁, Ψ₂⟩`.
pub fn coherent_inner_product(
    psi1: &[C64],
    psi2: &[C64],
    sampler: &CycleSampler,
    mc: &McConfig,
    rng: &RngState,
) -> Result<BoundedResidual> {
    let est = sampler.integrate(mc, rng, 1, |q, _, out| {
        let a = q.matrix().mul_vec(psi1);
        let b = q.matrix().mul_vec(psi2);
        out[0] = vec_inner(&a, &b);
        Ok(())
    })?;
    Ok(BoundedResidual {
        residual: (est.mean[0] - vec_inner(psi1, psi2)).norm(),
        bound: est.three_sigma(),
        samples: est.samples,
    })
}

/// Covariant derivative of `ψ` along `a` at `q` by central differences on
/// the retraction, minus the horizontal part `A·ψ(q)`.
pub fn covariant_derivative(section: &SectionSample, a: &TangentVector, h: f64) -> Result<Vec<C64>> {
    let q = a.base();
    let plus = section.eval(&retract(q, a, h)?)?;
    let minus = section.eval(&retract(q, a, -h)?)?;
    let here = section.eval(q)?;
    let horiz = a.matrix().mul_vec(&here);
    Ok(plus
        .iter()
        .zip(&minus)
        .zip(&horiz)
        .map(|((p, m), hz)| (p - m) / (2.0 * h) - hz)
        .collect())
}

/// `‖ψ_{MΨ} − (i∇_{X_⟨M⟩}ψ_Ψ + ⟨M⟩ψ_Ψ)‖` at a Hermitian point.
pub fn kostant_souriau_residual(m: &Observable, psi: &[C64], q: &ProjectionPoint, fd_step: f64) -> Result<f64> {
    if !q.is_hermitian(CONSTRUCTION_TOL) {
        return Err(Error::Contract("Kostant–Souriau check needs a Hermitian point".into()));
    }
    let section = coherent_section(psi)?;
    let x = crate::symplectic::hamiltonian_field(q, m)?;
    let nabla = covariant_derivative(&section, &x, fd_step)?;
    let f = q.tau_of(m.matrix());
    let here = section.eval(q)?;
    let lhs = q.matrix().mul_vec(&m.matrix().mul_vec(psi));
    let diff: Vec<C64> = lhs
        .iter()
        .zip(&nabla)
        .zip(&here)
        .map(|((l, nb), h)| l - (I * nb + f * h))
        .collect();
    Ok(vec_norm(&diff))
}

/// Failure threshold for the rank-two probe, frozen after calibration
/// (see [`calibrate_ks_threshold`]).
pub const KS_FAILURE_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KsCalibration {
    pub draws: usize,
    pub min: f64,
    pub q01: f64,
    pub q05: f64,
    pub median: f64,
    pub threshold: f64,
}

/// Residual of one random probe: Gaussian `M`, unit `Ψ`, Haar `q`.
pub fn ks_probe(d: usize, n: usize, h: f64, rng: &mut RngState) -> Result<f64> {
    let q = crate::grassmann::haar_sample(d, n, rng)?;
    let m = Observable::new(crate::matrix::gaussian_matrix(rng, d, d));
    let mut psi: Vec<C64> = (0..d).map(|_| rng.complex_normal()).collect();
    let nrm = vec_norm(&psi);
    for x in &mut psi {
        *x /= nrm;
    }
    kostant_souriau_residual(&m, &psi, &q, h)
}

/// Empirical distribution of probe residuals, recorded before the threshold
/// is asserted.
pub fn calibrate_ks_threshold(d: usize, n: usize, draws: usize, rng: &mut RngState) -> Result<KsCalibration> {
    let mut r: Vec<f64> = (0..draws).map(|_| ks_probe(d, n, 1e-4, rng)).collect::<Result<_>>()?;
    r.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| r[((p * (draws - 1) as f64).round() as usize).min(draws - 1)];
    Ok(KsCalibration {
        draws,
        min: r[0],
        q01: q(0.01),
        q05: q(0.05),
        median: q(0.5),
        threshold: KS_FAILURE_THRESHOLD,
    })
}

/// Maps between fibers, `v ∈ E_from ↦ K(from, to)v ∈ E_to`, as ambient
/// `d×d` operators.
pub trait PropagatorKernel: Sync {
    fn map(&self, from: &ProjectionPoint, to: &ProjectionPoint) -> ComplexMatrix;
}

/// The model propagator `v ↦ q₂v`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModelKernel;

impl PropagatorKernel for ModelKernel {
    fn map(&self, _from: &ProjectionPoint, to: &ProjectionPoint) -> ComplexMatrix {
        to.matrix().clone()
    }
}

/// A kernel multiplied by a constant.
#[derive(Clone, Copy, Debug)]
pub struct ScaledKernel<K> {
    pub inner: K,
    pub factor: f64,
}

impl<K: PropagatorKernel> PropagatorKernel for ScaledKernel<K> {
    fn map(&self, from: &ProjectionPoint, to: &ProjectionPoint) -> ComplexMatrix {
        self.inner.map(from, to).scale_re(self.factor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum KernelAxiom {
    Normalization,
    SquareIntegrable,
    Idempotent,
    Separating,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxiomReport {
    pub normalization: f64,
    pub square_norm: f64,
    pub idempotency: BoundedResidual,
    pub separation: f64,
    pub failed: Vec<KernelAxiom>,
}

pub const SEPARATION_FLOOR: f64 = 1e-6;

/// Checks the four propagator axioms on sampled points.
pub fn check_kernel_axioms(
    kernel: &impl PropagatorKernel,
    x: &ProjectionPoint,
    sampler: &CycleSampler,
    mc: &McConfig,
    rng: &RngState,
) -> Result<AxiomReport> {
    let mut probe = rng.derive(7);
    let mut points = vec![x.clone()];
    for _ in 0..8 {
        points.push(sampler.draw(&mut probe));
    }
    let mut normalization: f64 = 0.0;
    for p in &points {
        let v = FiberFrame::canonical(p)?;
        let image = &kernel.map(p, p) * v.columns();
        normalization = normalization.max((&image - v.columns()).norm_fro());
    }

    let vx = FiberFrame::canonical(x)?;
    let sq = sampler.integrate(mc, rng, 1, |y, _, out| {
        out[0] = C64::new((&kernel.map(x, y) * vx.columns()).norm_fro().powi(2) / x.rank() as f64, 0.0);
        Ok(())
    })?;
    let square_norm = sq.mean[0].re;

    let z = &points[1];
    let direct = &kernel.map(x, z) * vx.columns();
    let d = x.dim();
    let n = x.rank();
    let conv = sampler.integrate(mc, &rng.derive(11), d * n, |y, _, out| {
        let m = &(&kernel.map(y, z) * &kernel.map(x, y)) * vx.columns();
        write_matrix(out, &m, ONE);
        Ok(())
    })?;
    let idempotency = BoundedResidual {
        residual: (&conv.mean_matrix(d, n) - &direct).norm_fro(),
        bound: conv.three_sigma(),
        samples: conv.samples,
    };

    // Injectivity of (v_x, v_y) ↦ (K(x,z)v_x − K(y,z)v_y)_z over sampled z.
    let y = &points[2];
    let vy = FiberFrame::canonical(y)?;
    let zs: Vec<ProjectionPoint> = (0..4 * d).map(|_| sampler.draw(&mut probe)).collect();
    let mut stacked = ComplexMatrix::zeros(zs.len() * d, 2 * n);
    for (k, zk) in zs.iter().enumerate() {
        let a = &kernel.map(x, zk) * vx.columns();
        let b = &kernel.map(y, zk) * vy.columns();
        for r in 0..d {
            for c in 0..n {
                stacked[(k * d + r, c)] = a[(r, c)];
                stacked[(k * d + r, n + c)] = -b[(r, c)];
            }
        }
    }
    let separation = stacked.singular_values().last().copied().unwrap_or(0.0) / (zs.len() as f64).sqrt();

    let mut failed = Vec::new();
    if normalization > CONSTRUCTION_TOL {
        failed.push(KernelAxiom::Normalization);
    }
    if !square_norm.is_finite() || sq.mean[0].im.abs() > 0.0 {
        failed.push(KernelAxiom::SquareIntegrable);
    }
    if !idempotency.passed() {
        failed.push(KernelAxiom::Idempotent);
    }
    if separation <= SEPARATION_FLOOR {
        failed.push(KernelAxiom::Separating);
    }
    Ok(AxiomReport {
        normalization,
        square_norm,
        idempotency,
        separation,
        failed,
    })
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Matrix of `ψ ↦ ψ(x)P(x, ·)` on the coherent basis `ψ_{e_k}`.
    pub operator: ComplexMatrix,
    /// Linearized 3σ bound on the Frobenius error of `operator`.
    pub three_sigma: f64,
    pub axioms: AxiomReport,
}

/// Rebuilds the action of `x` from a kernel: applies `ψ ↦ ψ(x)K(x, ·)` to the
/// coherent basis and solves the sampled Gram system for its coordinates.
pub fn reconstruct_point_from_propagator(
    kernel: &impl PropagatorKernel,
    x: &ProjectionPoint,
    sampler: &CycleSampler,
    mc: &McConfig,
    rng: &RngState,
) -> Result<Reconstruction> {
    let axioms = check_kernel_axioms(kernel, x, sampler, mc, rng)?;
    let d = x.dim();
    // per sample y: Gram entries ⟨y e_j, y e_l⟩ and b_jk = ⟨y e_j, K(x,y) x e_k⟩
    let stat = |y: &ProjectionPoint, out: &mut [C64]| {
        let ym = y.matrix();
        let g = &ym.adjoint() * ym;
        let b = &(&ym.adjoint() * &kernel.map(x, y)) * x.matrix();
        out[..d * d].copy_from_slice(g.as_slice());
        out[d * d..].copy_from_slice(b.as_slice());
    };
    let est = sampler.integrate(mc, rng, 2 * d * d, |y, _, out| {
        stat(y, out);
        Ok(())
    })?;
    let gram = ComplexMatrix::from_fn(d, d, |r, c| est.mean[r * d + c]);
    let rhs = ComplexMatrix::from_fn(d, d, |r, c| est.mean[d * d + r * d + c]);
    let operator = gram.solve(&rhs)?;
    // same samples again: Z = b_y − G_y·R has mean zero; its spread is the
    // linearized error of R before applying G⁻¹.
    let resid = sampler.integrate(mc, rng, d * d, |y, _, out| {
        let mut buf = vec![ZERO; 2 * d * d];
        stat(y, &mut buf);
        let gy = ComplexMatrix::from_fn(d, d, |r, c| buf[r * d + c]);
        let by = ComplexMatrix::from_fn(d, d, |r, c| buf[d * d + r * d + c]);
        write_matrix(out, &(&by - &(&gy * &operator)), ONE);
        Ok(())
    })?;
    let ginv_norm = 1.0 / gram.singular_values().last().copied().unwrap_or(0.0);
    Ok(Reconstruction {
        operator,
        three_sigma: resid.three_sigma() * ginv_norm,
        axioms,
    })
}

/// Which structure the polarization direction is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Polarization {
    I,
    J,
    K,
}

/// Covariant derivative of `s(·) = P(q₀, ·)v₀` along the complex direction
/// `w + iIw` (I), `w − iJw` (J) or `(1 − K)w` (K).
pub fn polarization_residual(
    q0: &ProjectionPoint,
    v0: &[C64],
    w: &TangentVector,
    which: Polarization,
    h: f64,
) -> Result<f64> {
    let fiber = q0.matrix().mul_vec(v0);
    let defect = vec_norm(&fiber.iter().zip(v0).map(|(a, b)| a - b).collect::<Vec<_>>());
    if defect > CONSTRUCTION_TOL * vec_norm(v0).max(1.0) {
        return Err(Error::Contract("v₀ is not in the fiber over q₀".into()));
    }
    check_pair(q0, w.base(), "polarization_residual")?;
    let section = SectionSample::Coherent(v0.to_vec());
    let (partner, coeff) = match which {
        Polarization::I => (apply_i(w), I),
        Polarization::J => (apply_j(w), -I),
        Polarization::K => (apply_k(w), -ONE),
    };
    let a = covariant_derivative(&section, w, h)?;
    let b = covariant_derivative(&section, &partner, h)?;
    let combo: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x + coeff * y).collect();
    Ok(vec_norm(&combo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::{compose_cotangent, haar_sample, random_point, random_tangent};
    use crate::matrix::gaussian_matrix;
    use crate::quantization::pauli;
    use crate::symplectic::omega;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn bloch(x: f64, y: f64, z: f64) -> ProjectionPoint {
        let [sx, sy, sz] = pauli();
        let q = &(&ComplexMatrix::identity(2) + &sx.scale_re(x)) + &(&sy.scale_re(y) + &sz.scale_re(z));
        ProjectionPoint::new(q.scale_re(0.5), 1).unwrap()
    }

    #[test]
    fn propagate_examples() {
        let q1 = bloch(0.0, 0.0, 1.0);
        let q2 = bloch(1.0, 0.0, 0.0);
        let id = propagate(&q1, &q1).unwrap();
        assert!((&id.matrix - &ComplexMatrix::identity(1)).norm_fro() < 1e-15);
        let p = propagate(&q1, &q2).unwrap();
        assert!((p.matrix[(0, 0)] - c(std::f64::consts::FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        let e1 = q1.matrix().column(0);
        let overlap = vec_inner(&e1, &q2.matrix().mul_vec(&e1));
        assert!((overlap - c(0.5, 0.0)).norm() < 1e-15);
        let orth = propagate(&q1, &bloch(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(orth.matrix.norm_fro(), 0.0);
        assert!(orth.degenerate());
    }

    #[test]
    fn frame_change_conjugates_the_matrix() {
        let mut rng = RngState::new(3);
        let q1 = random_point(4, 2, 0.5, &mut rng).unwrap();
        let q2 = random_point(4, 2, 0.5, &mut rng).unwrap();
        let p = propagate(&q1, &q2).unwrap();
        let b1 = gaussian_matrix(&mut rng, 2, 2);
        let b2 = gaussian_matrix(&mut rng, 2, 2);
        let f1 = FiberFrame::new(&q1, p.source.columns() * &b1).unwrap();
        let f2 = FiberFrame::new(&q2, p.target.columns() * &b2).unwrap();
        let direct = propagate_frames(&f1, &f2).unwrap();
        let expected = &(&b2.inverse().unwrap() * &p.matrix) * &b1;
        assert!((&direct.matrix - &expected).norm_fro() < 1e-10);
        let re = p.reframe(&f1, &f2).unwrap();
        assert!((&re.matrix - &direct.matrix).norm_fro() < 1e-10);
    }

    #[test]
    fn three_point_examples() {
        let mut rng = RngState::new(5);
        let q = random_point(3, 1, 0.4, &mut rng).unwrap();
        assert!((three_point(&q, &q, &q).unwrap() - ONE).norm() < 1e-12);
        for (d, n) in [(2, 1), (4, 2)] {
            let a = random_point(d, n, 0.5, &mut rng).unwrap();
            let b = random_point(d, n, 0.5, &mut rng).unwrap();
            let cc = random_point(d, n, 0.5, &mut rng).unwrap();
            let x = three_point(&a, &b, &cc).unwrap();
            assert!((x - three_point(&b, &cc, &a).unwrap()).norm() < 1e-14);
            assert!((x - three_point_via_maps(&a, &b, &cc).unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn curvature_examples() {
        let q = ProjectionPoint::new(ComplexMatrix::diag(&[ONE, ZERO]), 1).unwrap();
        let a = TangentVector::new(&q, ComplexMatrix::unit(2, 0, 1)).unwrap();
        let b = TangentVector::new(&q, ComplexMatrix::unit(2, 1, 0)).unwrap();
        let k = curvature_from_three_point(&q, &a, &b, 1e-4).unwrap();
        assert!((k - I).norm() < 1e-6);
        assert!(curvature_from_three_point(&q, &a, &a, 1e-4).unwrap().norm() < 1e-12);
        assert!(curvature_from_three_point(&q, &a, &b, 0.1).is_err());
        let mut rng = RngState::new(6);
        let q = random_point(3, 1, 0.5, &mut rng).unwrap();
        let u = random_tangent(&q, &mut rng);
        let v = random_tangent(&q, &mut rng);
        let w = omega(&q, &u, &v).unwrap();
        let e1 = (curvature_from_three_point(&q, &u, &v, 1e-2).unwrap() - w).norm();
        let e2 = (curvature_from_three_point(&q, &u, &v, 5e-3).unwrap() - w).norm();
        assert!(e1 / e2 >= 1.8, "{e1} {e2}");
    }

    #[test]
    fn geodesic_generator_reaches_the_endpoint() {
        let mut rng = RngState::new(8);
        for (d, n) in [(2, 1), (4, 2), (5, 2)] {
            let a = haar_sample(d, n, &mut rng).unwrap();
            let b = haar_sample(d, n, &mut rng).unwrap();
            let l = geodesic_generator(&a, &b).unwrap();
            assert!((&l + &l.adjoint()).norm_fro() < 1e-12);
            let u = expm(&l).unwrap();
            let moved = &(&u * a.matrix()) * &u.adjoint();
            assert!((&moved - b.matrix()).norm_fro() < 1e-10);
        }
    }

    #[test]
    fn constant_and_concatenated_paths() {
        let q = bloch(0.3, 0.4, (1.0f64 - 0.25).sqrt());
        let constant = PathSpec::samples(vec![q.clone(); 5]);
        let m = discrete_transport(&constant).unwrap();
        assert!((&m.matrix - &ComplexMatrix::identity(1)).norm_fro() < 1e-14);
        let ode = ode_transport(&PathSpec::geodesic_polygon(vec![q.clone(), q.clone()], 10), 10).unwrap();
        let dev = (&ode.matrix - &ComplexMatrix::identity(1)).norm_fro();
        assert!(dev < 1e-14, "{dev:e}");

        let mut rng = RngState::new(9);
        let pts: Vec<ProjectionPoint> = {
            let base = haar_sample(3, 1, &mut rng).unwrap();
            let gen = {
                let g = gaussian_matrix(&mut rng, 3, 3);
                (&g - &g.adjoint()).scale_re(0.5)
            };
            PathSpec::unitary_flow(base, gen, 40).points().unwrap()
        };
        let whole = transport_points(&pts).unwrap();
        let first = transport_points(&pts[..21]).unwrap();
        let second = transport_points(&pts[20..]).unwrap();
        let glued = first.then(&second).unwrap();
        assert!((&glued.matrix - &whole.matrix).norm_fro() < 1e-13);
    }

    #[test]
    fn step_size_is_enforced() {
        let a = bloch(0.0, 0.0, 1.0);
        let b = bloch(1.0, 0.0, 0.0);
        match discrete_transport(&PathSpec::samples(vec![a, b])) {
            Err(Error::StepSize { step: 0, .. }) => {}
            other => panic!("expected step-size error, got {other:?}"),
        }
    }

    #[test]
    fn ode_matches_rotating_frame_solution() {
        // In the rotating frame the lift solves w' = −q₀Xw, so
        // v(1) = e^X e^{−q₀X} v(0).
        let mut rng = RngState::new(10);
        let q0 = random_point(3, 1, 0.3, &mut rng).unwrap();
        let x = gaussian_matrix(&mut rng, 3, 3).scale_re(0.4);
        let path = PathSpec::unitary_flow(q0.clone(), x.clone(), 200);
        let ode = ode_transport(&path, 200).unwrap();
        let v0 = ode.source.columns().clone();
        let exact = &(&expm(&x).unwrap() * &expm(&(q0.matrix() * &x).scale_re(-1.0)).unwrap()) * &v0;
        let exact = ode.target.coordinates(&exact).unwrap();
        assert!((&ode.matrix - &exact).norm_fro() < 1e-9);
    }

    #[test]
    fn ode_rejects_continued_samples() {
        let mut rng = RngState::new(12);
        let a = random_point(2, 1, 0.5, &mut rng).unwrap();
        let path = PathSpec::samples(vec![a.clone(), a]);
        assert!(ode_transport(&path, 10).is_err());
    }

    #[test]
    fn coherent_section_examples() {
        let psi = vec![c(0.3, 0.1), c(-1.0, 0.4), c(0.2, 0.0)];
        let s = coherent_section(&psi).unwrap();
        let e = ProjectionPoint::new(ComplexMatrix::diag(&[ONE, ZERO, ZERO]), 1).unwrap();
        assert_eq!(s.eval(&e).unwrap(), vec![psi[0], ZERO, ZERO]);
        assert!(coherent_section(&[ZERO, ZERO]).is_err());
    }

    #[test]
    fn reproducing_projection_of_zero_is_zero() {
        let s = SectionSample::from_fn(|q: &ProjectionPoint| vec![ZERO; q.dim()]);
        let out = reproducing_projection(&s, &CycleSampler::haar(2, 1).unwrap(), &McConfig::new(100), &RngState::new(1))
            .unwrap();
        assert!(vec_norm(&out.vector) == 0.0);
    }

    #[test]
    fn kostant_souriau_identity_and_failure() {
        let mut rng = RngState::new(13);
        for _ in 0..10 {
            let q = haar_sample(2, 1, &mut rng).unwrap();
            let m = Observable::new(gaussian_matrix(&mut rng, 2, 2));
            let psi: Vec<C64> = (0..2).map(|_| rng.complex_normal()).collect();
            assert!(kostant_souriau_residual(&m, &psi, &q, 1e-4).unwrap() < 1e-5);
            assert!(kostant_souriau_residual(&Observable::identity(2), &psi, &q, 1e-4).unwrap() < 1e-12);
        }
        assert!(ks_probe(4, 2, 1e-4, &mut rng).unwrap() > KS_FAILURE_THRESHOLD);
    }

    #[test]
    fn polarization_examples() {
        let mut rng = RngState::new(14);
        let q0 = random_point(3, 1, 0.4, &mut rng).unwrap();
        let v0 = FiberFrame::canonical(&q0).unwrap().columns().column(0);
        let q = random_point(3, 1, 0.4, &mut rng).unwrap();
        let w = random_tangent(&q, &mut rng);
        for which in [Polarization::I, Polarization::J, Polarization::K] {
            assert!(polarization_residual(&q0, &v0, &w, which, 1e-4).unwrap() < 1e-5);
        }
        let zero = TangentVector::zero(&q);
        assert_eq!(polarization_residual(&q0, &v0, &zero, Polarization::J, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn scaled_kernel_fails_normalization() {
        let x = bloch(0.0, 0.6, 0.8);
        let sampler = CycleSampler::haar(2, 1).unwrap();
        let mc = McConfig::new(2000);
        let good = check_kernel_axioms(&ModelKernel, &x, &sampler, &mc, &RngState::new(1)).unwrap();
        assert!(!good.failed.contains(&KernelAxiom::Normalization));
        assert!(!good.failed.contains(&KernelAxiom::Separating));
        let bad = ScaledKernel {
            inner: ModelKernel,
            factor: 1.1,
        };
        let r = check_kernel_axioms(&bad, &x, &sampler, &mc, &RngState::new(1)).unwrap();
        assert!(r.failed.contains(&KernelAxiom::Normalization));
    }

    #[test]
    fn continued_endpoints_compose_through_frames() {
        let mut rng = RngState::new(15);
        let base = haar_sample(3, 1, &mut rng).unwrap();
        let x = gaussian_matrix(&mut rng, 3, 3);
        let f = &(base.matrix() * &x) * &base.complement();
        let q = compose_cotangent(&base, &f.scale_re(0.5 / f.norm_fro())).unwrap();
        let p = propagate(&q, &q).unwrap();
        assert!((&p.matrix - &ComplexMatrix::identity(1)).norm_fro() < 1e-13);
    }
}
