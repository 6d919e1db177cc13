//! Suite runner, versioned JSON/CSV reports and path convergence studies.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometries::{
    delta_product_explorer, flat_covariant_derivative, flat_idempotency_residual, flat_polarization_residual,
    hyperkahler_jprime, jprime_denominator, latitude_loop_path, sphere_idempotency_residual, sphere_j, sphere_kernel,
    sphere_octant_path, sphere_projection, sphere_quadrature, tessarine_flat_check, DeltaRecord, FlatPoint, FlatSlice,
    Identification, SpherePoint,
};
use crate::grassmann::{
    apply_i, apply_j, apply_k, haar_sample, random_hermitian_tangent, random_point, random_tangent, tangent_component, tau_product,
    ProjectionPoint, TangentVector,
};
use crate::matrix::{gaussian_matrix, random_invertible, ComplexMatrix, RngState, C64, I, ONE, ZERO};
use crate::monte_carlo::{BoundedResidual, McConfig};
use crate::propagator::{
    calibrate_ks_threshold, check_kernel_axioms, coherent_inner_product, coherent_reconstruction,
    convolution_idempotency_residual, curvature_from_three_point, discrete_transport, kostant_souriau_residual,
    ks_probe, ode_transport, polarization_residual, reconstruct_point_from_propagator, three_point,
    three_point_via_maps, FiberFrame, KernelAxiom, ModelKernel, PathSpec, Polarization, ScaledKernel,
    KS_FAILURE_THRESHOLD,
};
use crate::quantization::{
    adjointness_residual, berezin_estimate, duality_residual, expectation, overcompleteness_residual, pauli,
    CycleSampler, Observable, SymbolFunction,
};
use crate::symplectic::{hamiltonian_field, kahler_zero_section_check, nondegeneracy_certificate, omega, poisson_bracket};
use crate::tolerances::CONDITION_LIMIT;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MAX_DIM: usize = 16;

/// Claims a case can be attached to.
pub const ANCHORS: &[&str] = &[
    "q^2=q, Tr(q)=n",
    "tangent to the space of projections",
    "commuting almost complex structures",
    "fixed point set of the adjoint map",
    "An example satisfying",
    "I–holomorphic symplectic form Ω",
    "invariant under the action of",
    "Lagrangian polarizations",
    "determines a Lagrangian polarization",
    "Kähler for the real part",
    "Ω is non–degenerate",
    "The Hamiltonian vector of",
    "is a morphism of algebras",
    "anticommutes with I, given by",
    "positive multiple of the identity",
    "We have unit-preserving maps",
    "dual in the sense that",
    "have dense images",
    "We have an I–holomorphic function",
    "for any v_{q₁} ∈ q₁(H)",
    "trace of the curvature of",
    "idempotent of the convolution algebra",
    "analytically continues the path integral",
    "denotes parallel transport over",
    "P is polarized along",
    "the Kostant–Souriau operator of",
    "completely fails for n>1",
    "is a unitary equivalence",
    "Δ–preserving equivalence of categories",
    "the connection 1–form is given by",
    "polarized along the real polarization ∂x₁+∂y₂",
    "the complexified cross product",
    "the idempotent corresponding to M = S²",
    "dim H = n Vol M",
    "hyperboloid model of the unit disk",
    "A simple computation gives",
];

fn anchor(text: &'static str) -> &'static str {
    debug_assert!(ANCHORS.contains(&text), "unregistered anchor {text}");
    text
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Tessarine,
    Symplectic,
    Quantization,
    Propagator,
    Path,
    Flat,
    Sphere,
    Hyperkahler,
    All,
}

impl Suite {
    pub const CONCRETE: [Suite; 8] = [
        Suite::Tessarine,
        Suite::Symplectic,
        Suite::Quantization,
        Suite::Propagator,
        Suite::Path,
        Suite::Flat,
        Suite::Sphere,
        Suite::Hyperkahler,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Tessarine => "tessarine",
            Suite::Symplectic => "symplectic",
            Suite::Quantization => "quantization",
            Suite::Propagator => "propagator",
            Suite::Path => "path",
            Suite::Flat => "flat",
            Suite::Sphere => "sphere",
            Suite::Hyperkahler => "hyperkahler",
            Suite::All => "all",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::CONCRETE
            .iter()
            .chain(std::iter::once(&Suite::All))
            .find(|x| x.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown suite `{s}`; expected one of tessarine, symplectic, quantization, propagator, path, flat, sphere, hyperkahler, all"
                ))
            })
    }
}

/// Default tolerances by key; `--tol key=value` overrides them.
pub const DEFAULT_TOLERANCES: &[(&str, f64)] = &[
    ("structure", 1e-12),
    ("omega", 1e-12),
    ("omega_gl", 1e-10),
    ("bracket", 1e-12),
    ("berezin_target", 1e-2),
    ("duality", 1e-12),
    ("three_point", 1e-12),
    ("curvature", 1e-6),
    ("curvature_ratio", 1.8),
    ("polarization", 1e-5),
    ("ks", 1e-5),
    ("ks_failure_fraction", 0.95),
    ("holonomy", 1e-3),
    ("path_ratio", 0.2),
    ("phase_cancel", 1e-12),
    ("flat_real", 1e-8),
    ("flat_continued", 1e-6),
    ("flat_polarization", 1e-6),
    ("sphere_trace", 1e-12),
    ("sphere_reproducing", 1e-8),
    ("sphere_conjugation", 1e-14),
    ("sphere_disk", 1e-12),
    ("jprime", 1e-12),
    ("explorer", 1e-12),
    ("rounding_floor", 1e-12),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub suite: Suite,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub workers: usize,
    pub out: Option<PathBuf>,
}

impl SuiteConfig {
    pub fn new(suite: Suite) -> Self {
        Self {
            suite,
            dims: vec![2, 3],
            ranks: vec![1],
            samples: 100_000,
            seed: 1,
            tolerances: BTreeMap::new(),
            workers: 1,
            out: None,
        }
    }

    /// All `(d, n)` with `n < d` from the dimension and rank lists.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &d in &self.dims {
            for &n in &self.ranks {
                if n < d {
                    out.push((d, n));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.ranks.is_empty() {
            return Err(Error::Usage("dimension and rank lists must be non-empty".into()));
        }
        if let Some(d) = self.dims.iter().find(|&&d| !(2..=MAX_DIM).contains(&d)) {
            return Err(Error::Usage(format!("dimension {d} outside 2..={MAX_DIM}")));
        }
        if self.ranks.contains(&0) {
            return Err(Error::Usage("rank must be at least 1".into()));
        }
        if self.pairs().is_empty() {
            return Err(Error::Usage("no (d, n) pair with 1 ≤ n < d".into()));
        }
        if self.samples < 2 {
            return Err(Error::Usage("at least two Monte Carlo samples are needed".into()));
        }
        for (key, value) in &self.tolerances {
            if !DEFAULT_TOLERANCES.iter().any(|(k, _)| k == key) {
                return Err(Error::Usage(format!("unknown tolerance key `{key}`")));
            }
            if !(value.is_finite() && *value >= 0.0) {
                return Err(Error::Usage(format!("tolerance `{key}` must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn tol(&self, key: &str) -> f64 {
        self.tolerances.get(key).copied().unwrap_or_else(|| {
            DEFAULT_TOLERANCES
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .unwrap_or_else(|| panic!("no default tolerance for `{key}`"))
        })
    }

    fn mc(&self) -> McConfig {
        McConfig::new(self.samples).with_workers(self.workers)
    }
}

/// Parses `key=value,key=value`.
pub fn parse_tolerances(spec: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("tolerance override `{item}` is not key=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("tolerance `{k}` has non-numeric value `{v}`")))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Passes when `residual ≤ bound`.
    AtMost,
    /// Passes when `residual ≥ bound`.
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    #[serde(rename = "paper_anchor")]
    pub anchor: String,
    pub residual: f64,
    pub bound: f64,
    pub relation: Relation,
    pub pass: bool,
    pub runtime_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub suite: Suite,
    pub config: SuiteConfig,
    pub cases: Vec<CaseResult>,
    pub pass: bool,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explorer: Vec<DeltaRecord>,
}

impl VerificationReport {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }

    pub fn case(&self, name: &str) -> Option<&CaseResult> {
        self.cases.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.pass)
    }

    /// JSON with runtimes zeroed, for byte comparisons between runs.
    pub fn canonical_json(&self) -> Result<String> {
        let mut copy = self.clone();
        for c in &mut copy.cases {
            c.runtime_ms = 0.0;
        }
        to_json(&copy)
    }
}

/// A measured quantity and the bound it is compared against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measured {
    pub residual: f64,
    pub bound: f64,
    pub relation: Relation,
}

impl Measured {
    pub fn at_most(residual: f64, bound: f64) -> Self {
        Self {
            residual,
            bound,
            relation: Relation::AtMost,
        }
    }

    pub fn at_least(residual: f64, bound: f64) -> Self {
        Self {
            residual,
            bound,
            relation: Relation::AtLeast,
        }
    }

    fn passed(&self) -> bool {
        self.residual.is_finite()
            && self.bound.is_finite()
            && match self.relation {
                Relation::AtMost => self.residual <= self.bound,
                Relation::AtLeast => self.residual >= self.bound,
            }
    }
}

impl From<BoundedResidual> for Measured {
    fn from(b: BoundedResidual) -> Self {
        Measured::at_most(b.residual, b.bound)
    }
}

/// Placeholder residual for cases that errored or panicked; JSON has no
/// encoding for non-finite numbers.
pub const FAILED_RESIDUAL: f64 = f64::MAX;

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

struct Runner<'a> {
    cfg: &'a SuiteConfig,
    cases: Vec<CaseResult>,
    explorer: Vec<DeltaRecord>,
    stream: u64,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a SuiteConfig) -> Self {
        Self {
            cfg,
            cases: Vec::new(),
            explorer: Vec::new(),
            stream: 0,
        }
    }

    /// Fresh generator for the next case, independent of other cases.
    fn rng(&mut self) -> RngState {
        self.stream += 1;
        RngState::with_stream(self.cfg.seed, self.stream)
    }

    fn run(&mut self, name: impl Into<String>, anchor: &'static str, f: impl FnOnce() -> Result<Measured>) {
        self.run_with(name, anchor, || f().map(|m| (m, None)));
    }

    fn run_with(
        &mut self,
        name: impl Into<String>,
        anchor: &'static str,
        f: impl FnOnce() -> Result<(Measured, Option<String>)>,
    ) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f));
        let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        let case = match outcome {
            Ok(Ok((m, diagnostic))) => {
                let finite = m.residual.is_finite();
                CaseResult {
                    name: name.into(),
                    anchor: anchor.to_string(),
                    residual: if finite { m.residual } else { FAILED_RESIDUAL },
                    bound: m.bound,
                    relation: m.relation,
                    pass: m.passed(),
                    runtime_ms,
                    diagnostic: if finite {
                        diagnostic
                    } else {
                        Some(format!("non-finite residual {}", m.residual))
                    },
                }
            }
            Ok(Err(e)) => failed_case(name.into(), anchor, runtime_ms, format!("error: {e}")),
            Err(p) => failed_case(name.into(), anchor, runtime_ms, format!("panic: {}", panic_message(p.as_ref()))),
        };
        self.cases.push(case);
    }
}

fn failed_case(name: String, anchor: &str, runtime_ms: f64, diagnostic: String) -> CaseResult {
    CaseResult {
        name,
        anchor: anchor.to_string(),
        residual: FAILED_RESIDUAL,
        bound: 0.0,
        relation: Relation::AtMost,
        pass: false,
        runtime_ms,
        diagnostic: Some(diagnostic),
    }
}

/// Runs every check mapped to the configured suite.
pub fn run_suite(cfg: &SuiteConfig) -> Result<VerificationReport> {
    cfg.validate()?;
    let mut runner = Runner::new(cfg);
    let suites: Vec<Suite> = match cfg.suite {
        Suite::All => Suite::CONCRETE.to_vec(),
        s => vec![s],
    };
    for s in suites {
        match s {
            Suite::Tessarine => tessarine_suite(&mut runner),
            Suite::Symplectic => symplectic_suite(&mut runner),
            Suite::Quantization => quantization_suite(&mut runner),
            Suite::Propagator => propagator_suite(&mut runner),
            Suite::Path => path_suite(&mut runner),
            Suite::Flat => flat_suite(&mut runner),
            Suite::Sphere => sphere_suite(&mut runner),
            Suite::Hyperkahler => hyperkahler_suite(&mut runner),
            Suite::All => unreachable!(),
        }
    }
    let pass = runner.cases.iter().all(|c| c.pass);
    Ok(VerificationReport {
        schema_version: SCHEMA_VERSION,
        suite: cfg.suite,
        config: cfg.clone(),
        cases: runner.cases,
        pass,
        tool_version: TOOL_VERSION.to_string(),
        explorer: runner.explorer,
    })
}

fn rel(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    (a - b).norm_fro()
}

const TESSARINE_TANGENTS: usize = 1000;
const INSTANCES: usize = 100;

fn tessarine_suite(r: &mut Runner) {
    let tol = r.cfg.tol("structure");
    for (d, n) in r.cfg.pairs() {
        let mut rng = r.rng();
        let samples: Vec<TangentVector> = (0..TESSARINE_TANGENTS)
            .map(|k| {
                // a fresh base point every 10 tangents
                let q = random_point(d, n, 0.5, &mut rng.derive(k as u64 / 10)).expect("valid dimensions");
                random_tangent(&q, &mut rng)
            })
            .collect();
        let max_over = |f: &dyn Fn(&TangentVector) -> f64| samples.iter().map(f).fold(0.0, f64::max);
        type Check = (&'static str, fn(&TangentVector) -> f64);
        let checks: [Check; 5] = [
            ("I^2 = -1", |a| rel(apply_i(&apply_i(a)).matrix(), &a.matrix().scale_re(-1.0))),
            ("J^2 = -1", |a| rel(apply_j(&apply_j(a)).matrix(), &a.matrix().scale_re(-1.0))),
            ("K^2 = +1", |a| rel(apply_k(&apply_k(a)).matrix(), a.matrix())),
            ("IJ = JI", |a| rel(apply_i(&apply_j(a)).matrix(), apply_j(&apply_i(a)).matrix())),
            ("IJ = K", |a| rel(apply_i(&apply_j(a)).matrix(), apply_k(a).matrix())),
        ];
        for (label, f) in checks {
            let v = max_over(&f);
            r.run(format!("tessarine {label} (d={d}, n={n})"), anchor("commuting almost complex structures"), || {
                Ok(Measured::at_most(v, tol))
            });
        }
    }
    for check in tessarine_flat_check() {
        r.run(format!("frames {}", check.name), anchor("An example satisfying"), || {
            Ok(Measured::at_most(check.residual, check.tolerance))
        });
    }
}

fn symplectic_suite(r: &mut Runner) {
    let tol = r.cfg.tol("omega");
    let tol_gl = r.cfg.tol("omega_gl");
    let tol_bracket = r.cfg.tol("bracket");
    for (d, n) in r.cfg.pairs() {
        let tag = format!("(d={d}, n={n})");
        let mut rng = r.rng();
        let mut worst = [0.0f64; 7];
        let mut min_cert = f64::INFINITY;
        let mut bracket = 0.0f64;
        let mut field = 0.0f64;
        let mut failure: Option<String> = None;
        for _ in 0..INSTANCES {
            let step = (|| -> Result<()> {
                let q = random_point(d, n, 0.5, &mut rng)?;
                let u = random_tangent(&q, &mut rng);
                let v = random_tangent(&q, &mut rng);
                let w = omega(&q, &u, &v)?;
                worst[0] = worst[0].max((omega(&q, &v, &u)? + w).norm());
                worst[1] = worst[1].max((omega(&q, &apply_j(&u), &apply_j(&v))? - w).norm());
                worst[2] = worst[2].max((omega(&q, &apply_k(&u), &apply_k(&v))? + w).norm());
                let z = random_invertible(&mut rng, d, 10.0);
                let zi = z.inverse()?;
                let conj = |m: &ComplexMatrix| &(&z * m) * &zi;
                let qz = ProjectionPoint::new(conj(q.matrix()), n)?;
                let uz = tangent_component(&qz, &conj(u.matrix()))?;
                let vz = tangent_component(&qz, &conj(v.matrix()))?;
                worst[3] = worst[3].max((omega(&qz, &uz, &vz)? - w).norm());
                // vertical: A q = 0
                let vert = |rng: &mut RngState| -> Result<TangentVector> {
                    let x = gaussian_matrix(rng, d, d);
                    let a = &(q.matrix() * &x) * &q.complement();
                    TangentVector::new(&q, a.scale_re(1.0 / a.norm_fro()))
                };
                let (a, b) = (vert(&mut rng)?, vert(&mut rng)?);
                worst[4] = worst[4].max(omega(&q, &a, &b)?.norm());
                for sign in [1.0, -1.0] {
                    let eig = |t: &TangentVector| -> Result<TangentVector> {
                        t.add(&apply_k(t).scale(C64::new(sign, 0.0))).map(|s| s.scale(C64::new(0.5, 0.0)))
                    };
                    let idx = if sign > 0.0 { 5 } else { 6 };
                    worst[idx] = worst[idx].max(omega(&q, &eig(&u)?, &eig(&v)?)?.norm());
                }
                min_cert = min_cert.min(nondegeneracy_certificate(&q)?);
                let m = Observable::new(gaussian_matrix(&mut rng, d, d));
                let nn = Observable::new(gaussian_matrix(&mut rng, d, d));
                let lhs = expectation(&Observable::new(m.matrix().commutator(nn.matrix())), &q)?;
                bracket = bracket.max((lhs - I * poisson_bracket(&m, &nn, &q)?).norm());
                let xm = hamiltonian_field(&q, &m)?;
                field = field.max((omega(&q, &xm, &u)? - tau_product(m.matrix(), u.matrix(), n)).norm());
                Ok(())
            })();
            if let Err(e) = step {
                failure = Some(e.to_string());
                break;
            }
        }
        let labels: [(&str, f64, &'static str); 7] = [
            ("Omega antisymmetry", tol, "I–holomorphic symplectic form Ω"),
            ("Omega J-invariance", tol, "invariant under the action of"),
            ("Omega K-anti-invariance", tol, "invariant under the action of"),
            ("Omega GL-invariance (cond <= 10)", tol_gl, "invariant under the action of"),
            ("vertical subspace Lagrangian", tol, "determines a Lagrangian polarization"),
            ("K = +1 eigenbundle Lagrangian", tol, "Lagrangian polarizations"),
            ("K = -1 eigenbundle Lagrangian", tol, "Lagrangian polarizations"),
        ];
        for (k, (label, t, a)) in labels.iter().enumerate() {
            let err = failure.clone();
            let val = worst[k];
            r.run(format!("{label} {tag}"), anchor(a), move || match err {
                Some(e) => Err(Error::Contract(e)),
                None => Ok(Measured::at_most(val, *t)),
            });
        }
        let err = failure.clone();
        r.run(format!("Omega nondegeneracy inverse certificate {tag}"), anchor("Ω is non–degenerate"), move || {
            match err {
                Some(e) => Err(Error::Contract(e)),
                None => Ok(Measured::at_most(1.0 / min_cert, CONDITION_LIMIT)),
            }
        });
        let err = failure.clone();
        r.run(format!("<[M,N]> = i{{<M>,<N>}} {tag}"), anchor("is a morphism of algebras"), move || match err {
            Some(e) => Err(Error::Contract(e)),
            None => Ok(Measured::at_most(bracket, tol_bracket)),
        });
        let err = failure;
        r.run(format!("Omega(X_M, B) = tau(MB) {tag}"), anchor("The Hamiltonian vector of"), move || match err {
            Some(e) => Err(Error::Contract(e)),
            None => Ok(Measured::at_most(field, tol_bracket)),
        });
    }
    r.run("Pauli bracket i{<sx>,<sy>} = 2i at diag(1,0)", anchor("is a morphism of algebras"), || {
        let q = ProjectionPoint::new(ComplexMatrix::diag(&[ONE, ZERO]), 1)?;
        let [sx, sy, _] = pauli();
        let v = I * poisson_bracket(&Observable::new(sx), &Observable::new(sy), &q)?;
        Ok(Measured::at_most((v - C64::new(0.0, 2.0)).norm(), tol_bracket))
    });
    let mut rng = r.rng();
    let pairs = r.cfg.pairs();
    r.run("Kahler: Omega(A,B) = tau(A JB) on the zero section", anchor("Kähler for the real part"), || {
        let mut worst = 0.0f64;
        for (d, n) in pairs {
            for _ in 0..INSTANCES {
                let q = haar_sample(d, n, &mut rng)?;
                let u = random_hermitian_tangent(&q, &mut rng);
                let v = random_hermitian_tangent(&q, &mut rng);
                let k = kahler_zero_section_check(&q, &u, &v)?;
                worst = worst.max((k.omega - k.metric_form).norm());
            }
        }
        Ok(Measured::at_most(worst, tol))
    });
}

/// `(A + Tr(A)·I)/(d + 1)`, the exact Haar quantization of `⟨A⟩` for `n = 1`.
pub fn berezin_moment_target(a: &ComplexMatrix) -> ComplexMatrix {
    let d = a.rows();
    (a + &ComplexMatrix::identity(d).scale(a.trace())).scale_re(1.0 / (d as f64 + 1.0))
}

fn quantization_suite(r: &mut Runner) {
    let mc = r.cfg.mc();
    for (d, n) in r.cfg.pairs() {
        let tag = format!("(d={d}, n={n})");
        let rng = r.rng();
        r.run(format!("overcompleteness (d/n) mean q = I {tag}"), anchor("positive multiple of the identity"), || {
            Ok(overcompleteness_residual(&CycleSampler::haar(d, n)?, &mc, &rng)?.into())
        });
        let mut rng = r.rng();
        let a = Observable::new(gaussian_matrix(&mut rng, d, d));
        let f = Observable::new(gaussian_matrix(&mut rng, d, d)).symbol();
        r.run(format!("duality tau(A Q_f) = int <A> f {tag}"), anchor("dual in the sense that"), || {
            Ok(duality_residual(&a, &f, &CycleSampler::haar(d, n)?, &mc, &rng)?.cross_sample.into())
        });
        let tol = r.cfg.tol("duality");
        r.run(format!("adjointness tau(T* Q_f) = <<T>, f> {tag}"), anchor("have dense images"), || {
            let res = adjointness_residual(&a, &f, &CycleSampler::haar(d, n)?, &mc, &rng)?;
            let scale = res.operator_side.norm().max(1.0);
            Ok(Measured::at_most(res.difference / scale, tol))
        });
    }
    let rng = r.rng();
    let tol = r.cfg.tol("berezin_target");
    r.run_with("Berezin moment Q_<A> = (A + Tr A)/3, d=2, A=diag(1,0)", anchor("We have unit-preserving maps"), || {
        let (q, diag) = berezin_moment(&mc, &rng)?;
        Ok((Measured::at_most(q, tol), Some(diag)))
    });
}

/// Frobenius distance of the sampled `Q_{⟨diag(1,0)⟩}` from its closed form,
/// with the estimate's 3σ bound in the diagnostic.
fn berezin_moment(mc: &McConfig, rng: &RngState) -> Result<(f64, String)> {
    let a = ComplexMatrix::diag(&[ONE, ZERO]);
    let est = berezin_estimate(&SymbolFunction::new(a.clone()), &CycleSampler::haar(2, 1)?, mc, rng)?;
    let err = rel(&est.operator, &berezin_moment_target(&a));
    Ok((err, format!("3 sigma = {:.3e}", est.three_sigma)))
}

fn propagator_suite(r: &mut Runner) {
    let mc = r.cfg.mc();
    let tol3 = r.cfg.tol("three_point");
    let tol_curv = r.cfg.tol("curvature");
    let ratio_floor = r.cfg.tol("curvature_ratio");
    let tol_pol = r.cfg.tol("polarization");
    for (d, n) in r.cfg.pairs() {
        let tag = format!("(d={d}, n={n})");
        let mut rng = r.rng();
        r.run(format!("three-point cyclic and frame-invariant {tag}"), anchor("We have an I–holomorphic function"), || {
            let mut worst = 0.0f64;
            for _ in 0..INSTANCES {
                let a = random_point(d, n, 0.5, &mut rng)?;
                let b = random_point(d, n, 0.5, &mut rng)?;
                let c = random_point(d, n, 0.5, &mut rng)?;
                let x = three_point(&a, &b, &c)?;
                worst = worst.max((x - three_point(&b, &c, &a)?).norm());
                worst = worst.max((x - three_point_via_maps(&a, &b, &c)?).norm());
            }
            Ok(Measured::at_most(worst, tol3))
        });
        let mut rng = r.rng();
        let mut curv = Vec::with_capacity(INSTANCES);
        let mut setup_err = None;
        for _ in 0..INSTANCES {
            match (|| -> Result<(f64, f64)> {
                let q = random_point(d, n, 0.5, &mut rng)?;
                let u = random_tangent(&q, &mut rng);
                let v = random_tangent(&q, &mut rng);
                let w = omega(&q, &u, &v)?;
                let e0 = (curvature_from_three_point(&q, &u, &v, 1e-4)? - w).norm();
                let e1 = (curvature_from_three_point(&q, &u, &v, 1e-2)? - w).norm();
                let e2 = (curvature_from_three_point(&q, &u, &v, 5e-3)? - w).norm();
                Ok((e0, e1 / e2))
            })() {
                Ok(x) => curv.push(x),
                Err(e) => {
                    setup_err = Some(e.to_string());
                    break;
                }
            }
        }
        let err = setup_err.clone();
        let worst = curv.iter().map(|x| x.0).fold(0.0, f64::max);
        r.run(format!("curvature from three-point at eps=1e-4 {tag}"), anchor("trace of the curvature of"), move || {
            match err {
                Some(e) => Err(Error::Contract(e)),
                None => Ok(Measured::at_most(worst, tol_curv)),
            }
        });
        let min_ratio = curv.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        r.run(format!("curvature error ratio eps 1e-2 : 5e-3 {tag}"), anchor("trace of the curvature of"), move || {
            match setup_err {
                Some(e) => Err(Error::Contract(e)),
                None => Ok(Measured::at_least(min_ratio, ratio_floor)),
            }
        });
        for (label, fiber) in [("Hermitian", 0.0), ("continued", 0.5)] {
            let mut rng = r.rng();
            r.run(
                format!("convolution idempotency, {label} endpoints {tag}"),
                anchor("idempotent of the convolution algebra"),
                || {
                    let q1 = random_point(d, n, fiber, &mut rng)?;
                    let q2 = random_point(d, n, fiber, &mut rng)?;
                    Ok(convolution_idempotency_residual(&q1, &q2, &mc, &rng)?.into())
                },
            );
        }
        let mut rng = r.rng();
        r.run(format!("reproducing projection of a coherent section {tag}"), anchor("is a unitary equivalence"), || {
            let psi: Vec<C64> = (0..d).map(|_| rng.complex_normal()).collect();
            Ok(coherent_reconstruction(&psi, &CycleSampler::haar(d, n)?, &mc, &rng)?.into())
        });
        let mut rng = r.rng();
        r.run(format!("coherent inner products preserved {tag}"), anchor("is a unitary equivalence"), || {
            let p1: Vec<C64> = (0..d).map(|_| rng.complex_normal()).collect();
            let p2: Vec<C64> = (0..d).map(|_| rng.complex_normal()).collect();
            Ok(coherent_inner_product(&p1, &p2, &CycleSampler::haar(d, n)?, &mc, &rng)?.into())
        });
        for which in [Polarization::I, Polarization::J, Polarization::K] {
            let mut rng = r.rng();
            r.run(format!("propagator polarized along {which:?} {tag}"), anchor("P is polarized along"), || {
                let mut worst = 0.0f64;
                for _ in 0..20 {
                    let q0 = random_point(d, n, 0.4, &mut rng)?;
                    let v0 = FiberFrame::canonical(&q0)?.columns().column(0);
                    let q = random_point(d, n, 0.4, &mut rng)?;
                    let w = random_tangent(&q, &mut rng);
                    worst = worst.max(polarization_residual(&q0, &v0, &w, which, 1e-4)?);
                }
                Ok(Measured::at_most(worst, tol_pol))
            });
        }
        if n == 1 {
            let tol = r.cfg.tol("ks");
            let mut rng = r.rng();
            r.run(format!("Kostant-Souriau identity, n=1 {tag}"), anchor("the Kostant–Souriau operator of"), || {
                let mut worst = 0.0f64;
                for _ in 0..INSTANCES {
                    let q = haar_sample(d, 1, &mut rng)?;
                    let m = Observable::new(gaussian_matrix(&mut rng, d, d));
                    let psi: Vec<C64> = (0..d).map(|_| rng.complex_normal()).collect();
                    worst = worst.max(kostant_souriau_residual(&m, &psi, &q, 1e-4)?);
                }
                Ok(Measured::at_most(worst, tol))
            });
        }
    }
    let fraction = r.cfg.tol("ks_failure_fraction");
    let rng = r.rng();
    r.run_with("Kostant-Souriau failure probe, d=4 n=2", anchor("completely fails for n>1"), || {
        let cal = calibrate_ks_threshold(4, 2, INSTANCES, &mut rng.derive(0))?;
        let mut probe = rng.derive(1);
        let mut exceed = 0usize;
        for _ in 0..INSTANCES {
            if ks_probe(4, 2, 1e-4, &mut probe)? > KS_FAILURE_THRESHOLD {
                exceed += 1;
            }
        }
        let diag = format!(
            "calibration: min {:.3e}, q01 {:.3e}, q05 {:.3e}, median {:.3e}; threshold {:.3e}; {exceed}/{INSTANCES} exceed",
            cal.min, cal.q01, cal.q05, cal.median, cal.threshold
        );
        Ok((Measured::at_least(exceed as f64 / INSTANCES as f64, fraction), Some(diag)))
    });
    equivalence_cases(r, &mc);
}

fn equivalence_cases(r: &mut Runner, mc: &McConfig) {
    let floor = r.cfg.tol("rounding_floor");
    let (d, n) = (2, 1);
    let mut rng = r.rng();
    let sampler = match CycleSampler::haar(d, n) {
        Ok(s) => s,
        Err(e) => {
            r.run("equivalence round trip setup", anchor("Δ–preserving equivalence of categories"), || Err(e));
            return;
        }
    };
    let points: Vec<ProjectionPoint> = (0..3).filter_map(|_| random_point(d, n, 0.3, &mut rng).ok()).collect();
    let recon: Vec<Result<crate::propagator::Reconstruction>> = points
        .iter()
        .enumerate()
        .map(|(k, x)| reconstruct_point_from_propagator(&ModelKernel, x, &sampler, mc, &rng.derive(k as u64)))
        .collect();
    for (k, (x, rec)) in points.iter().zip(&recon).enumerate() {
        r.run(
            format!("reconstructed point action {k} (d={d}, n={n})"),
            anchor("Δ–preserving equivalence of categories"),
            || {
                let rec = rec.as_ref().map_err(|e| Error::Contract(e.to_string()))?;
                Ok(Measured::at_most(rel(&rec.operator, x.matrix()), rec.three_sigma + floor))
            },
        );
        r.run_with(
            format!("model kernel satisfies the axioms {k} (d={d}, n={n})"),
            anchor("Δ–preserving equivalence of categories"),
            || {
                let rec = rec.as_ref().map_err(|e| Error::Contract(e.to_string()))?;
                Ok((
                    Measured::at_most(rec.axioms.failed.len() as f64, 0.0),
                    Some(format!("failed axioms: {:?}", rec.axioms.failed)),
                ))
            },
        );
    }
    r.run(
        "reconstructed three-point function (d=2, n=1)",
        anchor("Δ–preserving equivalence of categories"),
        || {
            let recs: Vec<&crate::propagator::Reconstruction> = recon
                .iter()
                .map(|x| x.as_ref().map_err(|e| Error::Contract(e.to_string())))
                .collect::<Result<_>>()?;
            let [r1, r2, r3] = [&recs[0].operator, &recs[1].operator, &recs[2].operator];
            let delta_rec = (&(r3 * r2) * r1).trace() / n as f64;
            let delta = three_point(&points[0], &points[1], &points[2])?;
            // |Tr(ABC) − Tr(A'B'C')| ≤ Σ ‖δ_i‖ ∏_{j≠i} (‖q_j‖ + ‖δ_j‖)
            let norms: Vec<f64> = points.iter().map(|p| p.matrix().norm_fro()).collect();
            let sig: Vec<f64> = recs.iter().map(|x| x.three_sigma).collect();
            let mut bound = 0.0;
            for i in 0..3 {
                let mut term = sig[i];
                for j in 0..3 {
                    if j != i {
                        term *= norms[j] + sig[j];
                    }
                }
                bound += term;
            }
            Ok(Measured::at_most((delta_rec - delta).norm(), bound / n as f64 + floor))
        },
    );
    let x = points.first().cloned();
    let rng2 = r.rng();
    r.run(
        "scaled-kernel mutant fails normalization (d=2, n=1)",
        anchor("Δ–preserving equivalence of categories"),
        || {
            let x = x.ok_or_else(|| Error::Contract("no base point".into()))?;
            let mutant = ScaledKernel {
                inner: ModelKernel,
                factor: 1.1,
            };
            let rep = check_kernel_axioms(&mutant, &x, &sampler, mc, &rng2)?;
            let caught = rep.failed.contains(&KernelAxiom::Normalization);
            Ok(Measured::at_least(f64::from(u8::from(caught)), 1.0))
        },
    );
}

/// Step counts of the refinement used for the O(1/m) ratio check.
pub const PATH_RATIO_STEPS: (usize, usize) = (1000, 2000);
/// Step count for the octant holonomy phase.
pub const HOLONOMY_STEPS: usize = 10_000;
/// RK4 steps for the reference transport.
pub const ODE_STEPS: usize = 1200;

fn path_suite(r: &mut Runner) {
    let tol = r.cfg.tol("holonomy");
    r.run("octant loop holonomy |phase| = pi/4 at m=1e4", anchor("analytically continues the path integral"), || {
        let map = discrete_transport(&sphere_octant_path(HOLONOMY_STEPS)?)?;
        Ok(Measured::at_most((map.phase().abs() - std::f64::consts::FRAC_PI_4).abs(), tol))
    });
    r.run("latitude loop holonomy |phase| = pi/2 at m=1e4", anchor("denotes parallel transport over"), || {
        let map = discrete_transport(&latitude_loop_path(HOLONOMY_STEPS)?)?;
        Ok(Measured::at_most((map.phase().abs() - std::f64::consts::FRAC_PI_2).abs(), tol))
    });
    let tol_ratio = r.cfg.tol("path_ratio");
    for (label, build) in [
        ("octant", sphere_octant_path as fn(usize) -> Result<PathSpec>),
        ("latitude", latitude_loop_path as fn(usize) -> Result<PathSpec>),
    ] {
        r.run_with(
            format!("{label} discrete-vs-ODE error ratio under step doubling"),
            anchor("analytically continues the path integral"),
            || {
                let (m1, m2) = PATH_RATIO_STEPS;
                let e1 = path_row(build, m1)?.0;
                let e2 = path_row(build, m2)?.0;
                let ratio = e1 / e2;
                Ok((
                    Measured::at_most((ratio - 2.0).abs() / 2.0, tol_ratio),
                    Some(format!("errors {e1:.4e} / {e2:.4e}, ratio {ratio:.4}")),
                ))
            },
        );
    }
    let tol_cancel = r.cfg.tol("phase_cancel");
    r.run("octant loop reversed cancels the holonomy phase", anchor("denotes parallel transport over"), || {
        let path = sphere_octant_path(HOLONOMY_STEPS)?;
        let fwd = discrete_transport(&path)?;
        let back = discrete_transport(&path.reversed()?)?;
        Ok(Measured::at_most(fwd.then(&back)?.phase().abs(), tol_cancel))
    });
}

/// `(‖discrete − ODE‖_F, discrete holonomy phase)` at `steps`.
fn path_row(build: fn(usize) -> Result<PathSpec>, steps: usize) -> Result<(f64, f64)> {
    let path = build(steps)?;
    let discrete = discrete_transport(&path)?;
    let ode = ode_transport(&path, ODE_STEPS)?;
    Ok((rel(&discrete.matrix, &ode.matrix), discrete.phase()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PathGeometry {
    SphereOctant,
    UnitaryFlow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub m: usize,
    pub error: Option<f64>,
    pub phase: Option<f64>,
    pub note: String,
}

/// Convergence series of discrete transport against the connection ODE.
/// A step-size failure is recorded in its row and the series continues.
pub fn path_study(geometry: PathGeometry, steps: &[usize]) -> Vec<PathRow> {
    let build = match geometry {
        PathGeometry::SphereOctant => sphere_octant_path as fn(usize) -> Result<PathSpec>,
        PathGeometry::UnitaryFlow => latitude_loop_path,
    };
    steps
        .iter()
        .map(|&m| match path_row(build, m) {
            Ok((error, phase)) => PathRow {
                m,
                error: Some(error),
                phase: Some(phase),
                note: String::new(),
            },
            Err(e) => PathRow {
                m,
                error: None,
                phase: None,
                note: e.to_string(),
            },
        })
        .collect()
}

pub fn write_path_csv(rows: &[PathRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let io = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["m", "error", "phase", "note"]).map_err(io)?;
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.12e}")).unwrap_or_default();
    for row in rows {
        w.write_record([row.m.to_string(), fmt(row.error), fmt(row.phase), row.note.clone()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

fn flat_suite(r: &mut Runner) {
    const HBAR: f64 = 0.5;
    const NODES: usize = 64;
    let tol_real = r.cfg.tol("flat_real");
    let tol_cont = r.cfg.tol("flat_continued");
    let tol_pol = r.cfg.tol("flat_polarization");
    let mut rng = r.rng();
    let mut coord = move |scale: f64| (rng.uniform() * 2.0 - 1.0) * scale;
    let real: Vec<(FlatPoint, FlatPoint)> = (0..10)
        .map(|_| {
            (
                FlatPoint::from_coordinates(coord(1.0), 0.0, coord(1.0), 0.0, HBAR),
                FlatPoint::from_coordinates(coord(1.0), 0.0, coord(1.0), 0.0, HBAR),
            )
        })
        .collect();
    let continued: Vec<(FlatPoint, FlatPoint)> = (0..10)
        .map(|_| {
            (
                FlatPoint::from_coordinates(coord(1.0), coord(0.3), coord(1.0), coord(0.3), HBAR),
                FlatPoint::from_coordinates(coord(1.0), coord(0.3), coord(1.0), coord(0.3), HBAR),
            )
        })
        .collect();
    let p0s: Vec<FlatPoint> = (0..10)
        .map(|_| FlatPoint::from_coordinates(coord(1.0), coord(0.3), coord(1.0), coord(0.3), HBAR))
        .collect();
    let kahler: Vec<FlatPoint> = (0..10)
        .map(|_| FlatPoint::from_coordinates(coord(1.0), 0.0, coord(1.0), 0.0, HBAR))
        .collect();
    let real_pol: Vec<FlatPoint> = (0..10)
        .map(|_| FlatPoint::from_coordinates(coord(1.0), 0.0, 0.0, coord(1.0), HBAR))
        .collect();
    let max_of = |pairs: &[(FlatPoint, FlatPoint)]| -> Result<f64> {
        pairs
            .iter()
            .map(|(p, w)| flat_idempotency_residual(p, w, NODES))
            .try_fold(0.0f64, |acc, x| x.map(|v| acc.max(v)))
    };
    r.run("flat kernel idempotency, real locus (hbar=1/2, k=64)", anchor("the connection 1–form is given by"), || {
        Ok(Measured::at_most(max_of(&real)?, tol_real))
    });
    r.run("flat kernel idempotency, continued |Im| <= 0.3", anchor("the connection 1–form is given by"), || {
        Ok(Measured::at_most(max_of(&continued)?, tol_cont))
    });
    for (slice, points, a) in [
        (FlatSlice::Kahler, &kahler, "the connection 1–form is given by"),
        (FlatSlice::RealPolarized, &real_pol, "polarized along the real polarization ∂x₁+∂y₂"),
    ] {
        r.run(format!("flat polarization on the {slice:?} slice"), anchor(a), || {
            let mut worst = 0.0f64;
            for (p0, w) in p0s.iter().zip(points.iter()) {
                worst = worst.max(flat_polarization_residual(p0, w, slice, 1e-4)?);
            }
            Ok(Measured::at_most(worst, tol_pol))
        });
    }
    r.run("flat d/dx1 alone is not a polarization direction", anchor("the connection 1–form is given by"), || {
        let dir = [ONE, ZERO, ZERO, ZERO];
        let mut least = f64::INFINITY;
        for (p0, w) in p0s.iter().zip(kahler.iter()) {
            least = least.min(flat_covariant_derivative(p0, w, &dir, 1e-4)?.norm());
        }
        Ok(Measured::at_least(least, 1e3 * tol_pol))
    });
    for check in tessarine_flat_check() {
        r.run(format!("flat frames {}", check.name), anchor("An example satisfying"), || {
            Ok(Measured::at_most(check.residual, check.tolerance))
        });
    }
}

fn random_sphere_point(rng: &mut RngState) -> SpherePoint {
    let theta = (rng.uniform() * 2.0 - 1.0).acos();
    SpherePoint::from_angles(theta, rng.uniform() * std::f64::consts::TAU)
}

/// Complex point with `x, y` drawn near the real unit disk and `z` solving
/// the constraint on the principal branch.
fn random_complex_sphere_point(rng: &mut RngState) -> Result<SpherePoint> {
    let x = C64::new(rng.uniform() - 0.5, 0.6 * (rng.uniform() - 0.5));
    let y = C64::new(rng.uniform() - 0.5, 0.6 * (rng.uniform() - 0.5));
    let z = (ONE - x * x - y * y).sqrt();
    SpherePoint::new(x, y, z)
}

fn sphere_suite(r: &mut Runner) {
    let tol_trace = r.cfg.tol("sphere_trace");
    let tol_rep = r.cfg.tol("sphere_reproducing");
    let tol_conj = r.cfg.tol("sphere_conjugation");
    let tol_disk = r.cfg.tol("sphere_disk");
    let tol_j = r.cfg.tol("structure");
    let mut rng = r.rng();
    r.run("sphere kernel P12 P21 = Tr(q1 q2)", anchor("the idempotent corresponding to M = S²"), || {
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let p1 = random_complex_sphere_point(&mut rng)?.stereographic()?;
            let p2 = random_complex_sphere_point(&mut rng)?.stereographic()?;
            let tr = (p1.projection()?.matrix() * p2.projection()?.matrix()).trace();
            let prod = sphere_kernel(&p1, &p2)? * sphere_kernel(&p2, &p1)?;
            worst = worst.max((tr - prod).norm());
        }
        Ok(Measured::at_most(worst, tol_trace))
    });
    let mut rng = r.rng();
    r.run("sphere reproducing identity with total mass 2", anchor("dim H = n Vol M"), || {
        let nodes = sphere_quadrature(8, 8);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let z1 = random_sphere_point(&mut rng).stereographic()?;
            let z2 = random_complex_sphere_point(&mut rng)?.stereographic()?;
            worst = worst.max(sphere_idempotency_residual(&z1, &z2, &nodes)?);
            worst = worst.max(sphere_idempotency_residual(&z2, &z1, &nodes)?);
        }
        Ok(Measured::at_most(worst, tol_rep))
    });
    let mut rng = r.rng();
    r.run("sphere q(conj p) = q(p)^dagger", anchor("fixed point set of the adjoint map"), || {
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let p = random_complex_sphere_point(&mut rng)?;
            let a = sphere_projection(&p.conj())?;
            let b = sphere_projection(&p)?;
            worst = worst.max(rel(a.matrix(), &b.matrix().adjoint()));
        }
        Ok(Measured::at_most(worst, tol_conj))
    });
    let mut rng = r.rng();
    r.run("disk locus eta-pseudo-Hermitian, eta = sigma_z", anchor("hyperboloid model of the unit disk"), || {
        let [_, _, sz] = pauli();
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let p = SpherePoint::disk(3.0 * (rng.uniform() - 0.5), 3.0 * (rng.uniform() - 0.5));
            let q = sphere_projection(&p)?;
            worst = worst.max(rel(&(&(&sz * q.matrix()) * &sz), &q.matrix().adjoint()));
        }
        Ok(Measured::at_most(worst, tol_disk))
    });
    let mut rng = r.rng();
    r.run("sphere cross product J^2 = -1 on tangents", anchor("the complexified cross product"), || {
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let p = random_complex_sphere_point(&mut rng)?;
            let raw = [rng.complex_normal(), rng.complex_normal(), rng.complex_normal()];
            let dot = p.x * raw[0] + p.y * raw[1] + p.z * raw[2];
            let t = [raw[0] - dot * p.x, raw[1] - dot * p.y, raw[2] - dot * p.z];
            let jj = sphere_j(&p, sphere_j(&p, t)?)?;
            for k in 0..3 {
                worst = worst.max((jj[k] + t[k]).norm());
            }
        }
        Ok(Measured::at_most(worst, tol_j))
    });
    let tol_exp = r.cfg.tol("explorer");
    let mut rng = r.rng();
    let mut records = Vec::new();
    r.run("Delta product explorer: |Delta_S2| <= 1 on real triples", anchor("A simple computation gives"), || {
        let mut excess = 0.0f64;
        for k in 0..10 {
            let pts = [
                random_sphere_point(&mut rng),
                random_sphere_point(&mut rng),
                random_sphere_point(&mut rng),
            ];
            for ident in Identification::sweep() {
                let rec = delta_product_explorer([&pts[0], &pts[1], &pts[2]], ident)?;
                excess = excess.max(C64::new(rec.delta_sphere[0], rec.delta_sphere[1]).norm() - 1.0);
                if k == 0 {
                    records.push(rec);
                }
            }
        }
        Ok(Measured::at_most(excess.max(0.0), tol_exp))
    });
    r.explorer.extend(records);
}

/// Draws `(q, A)` on `T*P¹` with a fiber part of norm up to one.
fn jprime_samples(rng: &mut RngState, count: usize) -> Result<Vec<TangentVector>> {
    (0..count)
        .map(|_| {
            let fiber = rng.uniform();
            let q = random_point(2, 1, fiber, rng)?;
            Ok(random_tangent(&q, rng))
        })
        .collect()
}

fn hyperkahler_suite(r: &mut Runner) {
    const DRAWS: usize = 1000;
    let tol = r.cfg.tol("jprime");
    let mut rng = r.rng();
    let samples = jprime_samples(&mut rng, DRAWS);
    let hermitian: Result<Vec<(TangentVector, TangentVector)>> = (0..DRAWS)
        .map(|_| {
            let q = haar_sample(2, 1, &mut rng)?;
            let h = random_hermitian_tangent(&q, &mut rng);
            let g = random_tangent(&q, &mut rng);
            Ok((h, g))
        })
        .collect();
    let over = |f: &dyn Fn(&TangentVector) -> Result<f64>| -> Result<f64> {
        let samples = samples.as_ref().map_err(|e| Error::Contract(e.to_string()))?;
        samples.iter().map(f).try_fold(0.0f64, |acc, x| x.map(|v| acc.max(v)))
    };
    let anchor_jp = anchor("anticommutes with I, given by");
    r.run("J'^2 = -1 on T*P1", anchor_jp, || {
        Ok(Measured::at_most(
            over(&|a| Ok(rel(hyperkahler_jprime(&hyperkahler_jprime(a)?)?.matrix(), &a.matrix().scale_re(-1.0))))?,
            tol,
        ))
    });
    r.run("IJ' = -J'I on T*P1", anchor_jp, || {
        Ok(Measured::at_most(
            over(&|a| {
                let ij = apply_i(&hyperkahler_jprime(a)?);
                let ji = hyperkahler_jprime(&apply_i(a))?;
                Ok(rel(ij.matrix(), &ji.matrix().scale_re(-1.0)))
            })?,
            tol,
        ))
    });
    r.run("J' output is tangent", anchor_jp, || {
        Ok(Measured::at_most(over(&|a| Ok(hyperkahler_jprime(a)?.defect()))?, tol))
    });
    r.run("J' normalization 2Tr(q*q) - 1 >= 1", anchor_jp, || {
        let least = samples
            .as_ref()
            .map_err(|e| Error::Contract(e.to_string()))?
            .iter()
            .map(|a| jprime_denominator(a.base()))
            .fold(f64::INFINITY, f64::min);
        Ok(Measured::at_least(least, 1.0 - tol))
    });
    let herm = |f: &dyn Fn(&TangentVector, &TangentVector) -> Result<f64>| -> Result<f64> {
        let pairs = hermitian.as_ref().map_err(|e| Error::Contract(e.to_string()))?;
        pairs.iter().map(|(h, g)| f(h, g)).try_fold(0.0f64, |acc, x| x.map(|v| acc.max(v)))
    };
    r.run("J' = J at Hermitian q", anchor_jp, || {
        Ok(Measured::at_most(
            herm(&|_, g| Ok(rel(hyperkahler_jprime(g)?.matrix(), apply_j(g).matrix())))?,
            tol,
        ))
    });
    r.run("J' = -J on Hermitian tangents at Hermitian q", anchor_jp, || {
        Ok(Measured::at_most(
            herm(&|h, _| Ok(rel(hyperkahler_jprime(h)?.matrix(), &apply_j(h).matrix().scale_re(-1.0))))?,
            tol,
        ))
    });
    r.run("J' = J on skew-Hermitian tangents at Hermitian q", anchor_jp, || {
        Ok(Measured::at_most(
            herm(&|h, _| {
                let s = apply_i(h);
                Ok(rel(hyperkahler_jprime(&s)?.matrix(), apply_j(&s).matrix()))
            })?,
            tol,
        ))
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum ReportFormat {
    Json,
    CsvSummary,
}

pub fn to_json(report: &VerificationReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map(|s| s + "\n")
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn from_json(text: &str) -> Result<VerificationReport> {
    let report: VerificationReport = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "schema version {} is not supported (expected {SCHEMA_VERSION})",
            report.schema_version
        )));
    }
    Ok(report)
}

/// One row per case: `name, residual, bound, pass`.
pub fn to_csv_summary(report: &VerificationReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let fe = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["name", "residual", "bound", "pass"]).map_err(fe)?;
    for c in &report.cases {
        w.write_record([
            c.name.clone(),
            format!("{:.6e}", c.residual),
            format!("{:.6e}", c.bound),
            c.pass.to_string(),
        ])
        .map_err(fe)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn emit_report(report: &VerificationReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Json => to_json(report)?,
        ReportFormat::CsvSummary => to_csv_summary(report)?,
    };
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(suite: Suite) -> SuiteConfig {
        SuiteConfig {
            samples: 2000,
            ..SuiteConfig::new(suite)
        }
    }

    #[test]
    fn suite_names_parse() {
        for s in Suite::CONCRETE {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!(matches!("nope".parse::<Suite>(), Err(Error::Usage(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = quick(Suite::Tessarine);
        assert!(cfg.validate().is_ok());
        cfg.dims = vec![17];
        assert!(cfg.validate().is_err());
        cfg.dims = vec![2];
        cfg.ranks = vec![2];
        assert!(cfg.validate().is_err());
        cfg.ranks = vec![1];
        cfg.tolerances.insert("bogus".into(), 1.0);
        assert!(cfg.validate().is_err());
        let t = parse_tolerances("structure=1e-9, omega=2e-12").unwrap();
        assert_eq!(t["structure"], 1e-9);
        assert!(parse_tolerances("structure").is_err());
    }

    #[test]
    fn tessarine_suite_passes_and_is_deterministic() {
        let cfg = quick(Suite::Tessarine);
        let a = run_suite(&cfg).unwrap();
        assert!(a.pass, "{:?}", a.failed().collect::<Vec<_>>());
        let b = run_suite(&cfg).unwrap();
        assert_eq!(a.canonical_json().unwrap(), b.canonical_json().unwrap());
    }

    #[test]
    fn panics_become_failed_cases() {
        let cfg = quick(Suite::Tessarine);
        let mut r = Runner::new(&cfg);
        r.run("boom", anchor("An example satisfying"), || panic!("exploded"));
        r.run("fine", anchor("An example satisfying"), || Ok(Measured::at_most(0.0, 1.0)));
        assert!(!r.cases[0].pass);
        assert!(r.cases[0].diagnostic.as_deref().unwrap().contains("exploded"));
        assert!(r.cases[1].pass);
    }

    #[test]
    fn report_round_trips() {
        let report = run_suite(&quick(Suite::Flat)).unwrap();
        let text = to_json(&report).unwrap();
        assert_eq!(from_json(&text).unwrap(), report);
        let csv = to_csv_summary(&report).unwrap();
        assert_eq!(csv.lines().count(), report.cases.len() + 1);
        assert!(csv.starts_with("name,residual,bound,pass\n"));
    }

    #[test]
    fn every_anchor_is_registered() {
        let mut cfg = quick(Suite::All);
        cfg.samples = 500;
        let report = run_suite(&cfg).unwrap();
        for c in &report.cases {
            assert!(ANCHORS.contains(&c.anchor.as_str()), "{}", c.anchor);
        }
        assert!(!report.explorer.is_empty());
    }

    #[test]
    fn empty_path_study_has_header_only() {
        let mut buf = Vec::new();
        write_path_csv(&path_study(PathGeometry::SphereOctant, &[]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "m,error,phase,note\n");
    }

    #[test]
    fn coarse_path_rows_report_step_size() {
        let rows = path_study(PathGeometry::SphereOctant, &[3, 30]);
        assert!(rows[0].error.is_none() && rows[0].note.contains("step"));
        assert!(rows[1].error.is_some());
    }
}
