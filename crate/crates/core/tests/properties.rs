//! Randomized invariants over dimensions, ranks, fiber sizes and seeds.

use holoquant::geometries::{
    flat_kernel, hyperkahler_jprime, sphere_kernel, sphere_projection, FlatPoint, SpherePoint, StereoPair,
};
use holoquant::grassmann::{
    apply_i, apply_j, apply_k, compose_cotangent, decompose_cotangent, random_point, random_tangent, retract,
    tangent_component,
};
use holoquant::matrix::{expm, gaussian_matrix};
use holoquant::monte_carlo::{estimate_mean, McConfig};
use holoquant::propagator::{propagate, three_point, FiberFrame};
use holoquant::symplectic::omega;
use holoquant::verification::{from_json, to_json, CaseResult, Relation, Suite, SuiteConfig, VerificationReport};
use holoquant::{ComplexMatrix, RngState, C64};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (2usize..=6).prop_flat_map(|d| (Just(d), 1..d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_points_are_rank_n_idempotents((d, n) in dims(), fiber in 0.0f64..2.0, seed in any::<u64>()) {
        let q = random_point(d, n, fiber, &mut RngState::new(seed)).unwrap();
        let (idem, trace) = q.invariant_residuals();
        prop_assert!(idem < 1e-10 && trace < 1e-10);
    }

    #[test]
    fn tangent_projection_is_idempotent((d, n) in dims(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let q = random_point(d, n, 0.5, &mut rng).unwrap();
        let x = gaussian_matrix(&mut rng, d, d);
        let a = tangent_component(&q, &x).unwrap();
        prop_assert!(a.defect() < 1e-12 * x.norm_fro().max(1.0));
        let again = tangent_component(&q, a.matrix()).unwrap();
        prop_assert!((again.matrix() - a.matrix()).norm_fro() < 1e-12 * x.norm_fro().max(1.0));
    }

    #[test]
    fn structures_satisfy_tessarine_relations((d, n) in dims(), fiber in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let q = random_point(d, n, fiber, &mut rng).unwrap();
        let a = random_tangent(&q, &mut rng);
        let minus = a.matrix().scale_re(-1.0);
        prop_assert!((apply_i(&apply_i(&a)).matrix() - &minus).norm_fro() < 1e-12);
        prop_assert!((apply_j(&apply_j(&a)).matrix() - &minus).norm_fro() < 1e-12);
        prop_assert!((apply_k(&apply_k(&a)).matrix() - a.matrix()).norm_fro() < 1e-12);
        prop_assert!((apply_i(&apply_j(&a)).matrix() - apply_j(&apply_i(&a)).matrix()).norm_fro() < 1e-12);
    }

    #[test]
    fn omega_is_antisymmetric_and_j_invariant((d, n) in dims(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let q = random_point(d, n, 0.5, &mut rng).unwrap();
        let u = random_tangent(&q, &mut rng);
        let v = random_tangent(&q, &mut rng);
        let w = omega(&q, &u, &v).unwrap();
        prop_assert!((omega(&q, &v, &u).unwrap() + w).norm() < 1e-14);
        prop_assert!((omega(&q, &apply_j(&u), &apply_j(&v)).unwrap() - w).norm() < 1e-12);
        prop_assert!((omega(&q, &apply_k(&u), &apply_k(&v)).unwrap() + w).norm() < 1e-12);
    }

    #[test]
    fn retraction_stays_on_the_space((d, n) in dims(), t in -1.0f64..1.0, seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let q = random_point(d, n, 0.3, &mut rng).unwrap();
        let a = random_tangent(&q, &mut rng);
        let p = retract(&q, &a, t).unwrap();
        let (idem, trace) = p.invariant_residuals();
        prop_assert!(idem < 1e-10 && trace < 1e-10);
    }

    #[test]
    fn cotangent_decomposition_round_trips((d, n) in dims(), fiber in 0.0f64..2.0, seed in any::<u64>()) {
        let q = random_point(d, n, fiber, &mut RngState::new(seed)).unwrap();
        let parts = decompose_cotangent(&q).unwrap();
        let back = compose_cotangent(&parts.base_orthogonal, &parts.fiber_part).unwrap();
        prop_assert!((back.matrix() - q.matrix()).norm_fro() < 1e-10);
    }

    #[test]
    fn three_point_is_cyclic_and_normalized((d, n) in dims(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let a = random_point(d, n, 0.5, &mut rng).unwrap();
        let b = random_point(d, n, 0.5, &mut rng).unwrap();
        let c = random_point(d, n, 0.5, &mut rng).unwrap();
        let x = three_point(&a, &b, &c).unwrap();
        prop_assert!((x - three_point(&c, &a, &b).unwrap()).norm() < 1e-12);
        prop_assert!((three_point(&a, &a, &a).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn propagator_respects_frame_changes((d, n) in dims(), seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let q1 = random_point(d, n, 0.4, &mut rng).unwrap();
        let q2 = random_point(d, n, 0.4, &mut rng).unwrap();
        let p = propagate(&q1, &q2).unwrap();
        let twist = |q: &holoquant::ProjectionPoint, rng: &mut RngState| {
            let base = FiberFrame::canonical(q).unwrap();
            let g = &gaussian_matrix(rng, n, n) + &ComplexMatrix::identity(n).scale_re(3.0);
            FiberFrame::new(q, base.columns() * &g).unwrap()
        };
        let (s, t) = (twist(&q1, &mut rng), twist(&q2, &mut rng));
        let moved = p.reframe(&s, &t).unwrap();
        let ambient_old = p.target.columns() * &p.matrix;
        let ambient_new = &(t.columns() * &moved.matrix) * &p.source.coordinates(s.columns()).unwrap().inverse().unwrap();
        prop_assert!((&ambient_old - &ambient_new).norm_fro() < 1e-9 * ambient_old.norm_fro().max(1.0));
    }

    #[test]
    fn expm_inverts_under_negation(d in 1usize..6, scale in 0.0f64..4.0, seed in any::<u64>()) {
        let a = gaussian_matrix(&mut RngState::new(seed), d, d).scale_re(scale);
        let prod = &expm(&a).unwrap() * &expm(&a.scale_re(-1.0)).unwrap();
        let scale_bound = (2.0 * a.norm_fro()).exp();
        prop_assert!((&prod - &ComplexMatrix::identity(d)).norm_fro() < 1e-12 * scale_bound.max(1.0));
    }

    #[test]
    fn monte_carlo_is_deterministic_per_worker_count(samples in 2usize..5000, workers in 1usize..6, seed in any::<u64>()) {
        let mc = McConfig::new(samples).with_workers(workers);
        let run = || estimate_mean(&mc, &RngState::new(seed), 1, |rng, _, out| {
            out[0] = C64::new(rng.normal(), 0.0);
            Ok(())
        }).unwrap();
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn jprime_anticommutes_with_i(fiber in 0.0f64..2.0, seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let q = random_point(2, 1, fiber, &mut rng).unwrap();
        let a = random_tangent(&q, &mut rng);
        let ij = apply_i(&hyperkahler_jprime(&a).unwrap());
        let ji = hyperkahler_jprime(&apply_i(&a)).unwrap();
        prop_assert!((ij.matrix() + ji.matrix()).norm_fro() < 1e-12);
        let jj = hyperkahler_jprime(&hyperkahler_jprime(&a).unwrap()).unwrap();
        prop_assert!((jj.matrix() + a.matrix()).norm_fro() < 1e-12);
    }

    #[test]
    fn flat_kernel_modulus_is_gaussian(x in -2.0f64..2.0, y in -2.0f64..2.0, u in -2.0f64..2.0, v in -2.0f64..2.0, hbar in 0.1f64..2.0) {
        let p = FlatPoint::on_real_locus(C64::new(x, y), hbar);
        let w = FlatPoint::on_real_locus(C64::new(u, v), hbar);
        let lhs = flat_kernel(&p, &w).unwrap().norm_sqr();
        let rhs = (-(p.z - w.z).norm_sqr() / (2.0 * hbar)).exp();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn sphere_kernel_products_give_traces(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, e in -3.0f64..3.0, s in -0.5f64..0.5, t in -0.5f64..0.5) {
        let z1 = StereoPair { u: C64::new(a, b), ut: C64::new(a + s, -b + t) };
        let z2 = StereoPair::real(C64::new(c, e));
        prop_assume!((C64::new(1.0, 0.0) + z1.ut * z1.u).norm() > 1e-3);
        let tr = (z1.projection().unwrap().matrix() * z2.projection().unwrap().matrix()).trace();
        let prod = sphere_kernel(&z1, &z2).unwrap() * sphere_kernel(&z2, &z1).unwrap();
        prop_assert!((tr - prod).norm() < 1e-12 * (1.0 + tr.norm()));
    }

    #[test]
    fn sphere_projection_conjugation(xr in -1.0f64..1.0, xi in -0.5f64..0.5, yr in -1.0f64..1.0, yi in -0.5f64..0.5) {
        let x = C64::new(xr, xi);
        let y = C64::new(yr, yi);
        let z = (C64::new(1.0, 0.0) - x * x - y * y).sqrt();
        let p = SpherePoint::new(x, y, z).unwrap();
        let a = sphere_projection(&p.conj()).unwrap();
        let b = sphere_projection(&p).unwrap();
        prop_assert!((a.matrix() - &b.matrix().adjoint()).norm_fro() <= 1e-14);
    }

    #[test]
    fn report_json_round_trips(
        residual in 0.0f64..1e6,
        bound in 0.0f64..1e6,
        runtime in 0.0f64..1e5,
        seed in any::<u64>(),
        name in "[a-zA-Z0-9 ,=()^*<>{}-]{0,40}",
    ) {
        let pass = residual <= bound;
        let report = VerificationReport {
            schema_version: 1,
            suite: Suite::Flat,
            config: SuiteConfig { seed, ..SuiteConfig::new(Suite::Flat) },
            cases: vec![CaseResult {
                name,
                anchor: "dim H = n Vol M".into(),
                residual,
                bound,
                relation: Relation::AtMost,
                pass,
                runtime_ms: runtime,
                diagnostic: None,
            }],
            pass,
            tool_version: "0.1.0".into(),
            explorer: Vec::new(),
        };
        prop_assert_eq!(from_json(&to_json(&report).unwrap()).unwrap(), report);
    }
}
