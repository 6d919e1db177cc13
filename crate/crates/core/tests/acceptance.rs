//! One PASS/FAIL line per acceptance criterion. Exits nonzero when the set of
//! failing criteria differs from `EXPECTED_FAILURES`.

use std::time::{Duration, Instant};

use holoquant::matrix::ComplexMatrix;
use holoquant::monte_carlo::McConfig;
use holoquant::quantization::{berezin_estimate, CycleSampler, SymbolFunction};
use holoquant::verification::{berezin_moment_target, run_suite, CaseResult, Suite, SuiteConfig, VerificationReport};
use holoquant::{RngState, C64};
use serde::Deserialize;

/// `J' = J at Hermitian q` is false as stated: J' is -J on Hermitian tangents.
const EXPECTED_FAILURES: &[&str] = &["13"];

const MC_SAMPLES: usize = 1_000_000;
const WORKERS: usize = 4;
const SEED: u64 = 20_241_016;

const ORACLE_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/berezin_oracle.json");
const ORACLE_SEED: u64 = 77;
const BEREZIN_TARGET: f64 = 1e-2;
const EXPLORER_SANITY: f64 = 1e-12;

#[derive(Deserialize)]
struct BerezinOracle {
    samples: usize,
    operator_re: Vec<f64>,
    operator_im: Vec<f64>,
    three_sigma: f64,
}

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn config(suite: Suite, dims: &[usize], ranks: &[usize], samples: usize) -> SuiteConfig {
    SuiteConfig {
        dims: dims.to_vec(),
        ranks: ranks.to_vec(),
        samples,
        seed: SEED,
        workers: WORKERS,
        ..SuiteConfig::new(suite)
    }
}

fn timed(cfg: &SuiteConfig) -> (VerificationReport, Duration) {
    let start = Instant::now();
    let report = run_suite(cfg).expect("suite configuration is valid");
    (report, start.elapsed())
}

fn select<'a>(report: &'a VerificationReport, prefixes: &[&str]) -> Vec<&'a CaseResult> {
    report.cases.iter().filter(|c| prefixes.iter().any(|p| c.name.starts_with(p))).collect()
}

/// Passes when every selected case passes, at least `min_cases` were selected
/// and the wall time fits.
fn judge(cases: &[&CaseResult], min_cases: usize, elapsed: Duration, limit: Option<Duration>) -> (bool, String) {
    let failed: Vec<&str> = cases.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let mut detail = format!("{} cases, {:.2}s", cases.len(), elapsed.as_secs_f64());
    if let Some(l) = limit {
        detail.push_str(&format!(" (limit {}s)", l.as_secs()));
    }
    if cases.len() < min_cases {
        detail.push_str(&format!("; expected at least {min_cases} cases"));
    }
    if !failed.is_empty() {
        detail.push_str(&format!("; failing: {}", failed.join(" | ")));
    }
    (failed.is_empty() && in_time && cases.len() >= min_cases, detail)
}

fn criterion(
    id: &'static str,
    title: &'static str,
    cfg: SuiteConfig,
    prefixes: &[&str],
    min_cases: usize,
    limit: Option<Duration>,
) -> Outcome {
    let (report, elapsed) = timed(&cfg);
    let (pass, detail) = judge(&select(&report, prefixes), min_cases, elapsed, limit);
    Outcome { id, title, pass, detail }
}

fn berezin_with_oracle() -> Outcome {
    let cfg = config(Suite::Quantization, &[2], &[1], MC_SAMPLES);
    let (report, elapsed) = timed(&cfg);
    let cases = select(&report, &["Berezin moment"]);
    let (suite_pass, mut detail) = judge(&cases, 1, elapsed, None);

    let oracle: BerezinOracle = serde_json::from_str(&std::fs::read_to_string(ORACLE_PATH).unwrap()).unwrap();
    let data = oracle.operator_re.iter().zip(&oracle.operator_im).map(|(&re, &im)| C64::new(re, im)).collect();
    let recorded = ComplexMatrix::from_row_major(2, 2, data).unwrap();
    let a = ComplexMatrix::diag(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
    let fresh = berezin_estimate(
        &SymbolFunction::new(a.clone()),
        &CycleSampler::haar(2, 1).unwrap(),
        &McConfig::new(MC_SAMPLES).with_workers(WORKERS),
        &RngState::new(ORACLE_SEED),
    )
    .unwrap();
    let gap = (&fresh.operator - &recorded).norm_fro();
    let combined = (fresh.three_sigma.powi(2) + oracle.three_sigma.powi(2)).sqrt();
    let oracle_err = (&recorded - &berezin_moment_target(&a)).norm_fro();
    let oracle_pass = gap <= combined && gap <= BEREZIN_TARGET && oracle_err <= BEREZIN_TARGET;
    detail.push_str(&format!(
        "; N={} vs recorded N={}: gap {gap:.2e} <= 3 sigma {combined:.2e}; recorded vs closed form {oracle_err:.2e}",
        MC_SAMPLES, oracle.samples
    ));
    Outcome {
        id: "5",
        title: "Berezin moment target with recorded oracle",
        pass: suite_pass && oracle_pass,
        detail,
    }
}

fn explorer() -> Outcome {
    let (report, elapsed) = timed(&config(Suite::Sphere, &[2], &[1], 2));
    let cases = select(&report, &["Delta product explorer"]);
    let (pass, mut detail) = judge(&cases, 1, elapsed, None);
    let worst = report
        .explorer
        .iter()
        .map(|r| r.delta_sphere[0].hypot(r.delta_sphere[1]) - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let sane = !report.explorer.is_empty() && worst <= EXPLORER_SANITY;
    detail.push_str(&format!("; {} sweep records, max |Delta_S2| - 1 = {worst:.2e}", report.explorer.len()));
    Outcome {
        id: "explorer",
        title: "Delta product explorer runs, |Delta_S2| <= 1 on real triples",
        pass: pass && sane,
        detail,
    }
}

fn main() {
    let secs = Duration::from_secs;
    let criteria: Vec<Box<dyn Fn() -> Outcome>> = vec![
        Box::new(|| {
            criterion(
                "1",
                "tessarine relations on 1000 tangents, d = 2..6",
                config(Suite::Tessarine, &[2, 3, 4, 5, 6], &[1, 2, 3, 4, 5], 2),
                &["tessarine "],
                15 * 5,
                Some(secs(10)),
            )
        }),
        Box::new(|| {
            let mut c = Vec::new();
            let start = Instant::now();
            for (d, n) in [(2, 1), (3, 1), (3, 2), (4, 2)] {
                let (report, _) = timed(&config(Suite::Symplectic, &[d], &[n], 2));
                c.extend(select(&report, &["Omega ", "vertical ", "K = "]).into_iter().cloned());
            }
            let refs: Vec<&CaseResult> = c.iter().collect();
            let (pass, detail) = judge(&refs, 4 * 8, start.elapsed(), Some(secs(30)));
            Outcome { id: "2", title: "symplectic form properties", pass, detail }
        }),
        Box::new(|| {
            let mut c = Vec::new();
            let start = Instant::now();
            for (d, n) in [(2, 1), (3, 1), (3, 2), (4, 2)] {
                let (report, _) = timed(&config(Suite::Symplectic, &[d], &[n], 2));
                c.extend(select(&report, &["<[M,N]>", "Pauli bracket"]).into_iter().cloned());
            }
            let refs: Vec<&CaseResult> = c.iter().collect();
            let (pass, detail) = judge(&refs, 4 + 4, start.elapsed(), None);
            Outcome { id: "3", title: "expectation map is a Lie homomorphism", pass, detail }
        }),
        Box::new(|| {
            let mut c = Vec::new();
            let start = Instant::now();
            for (d, n) in [(2, 1), (3, 1), (4, 2)] {
                let (report, _) = timed(&config(Suite::Quantization, &[d], &[n], MC_SAMPLES));
                c.extend(select(&report, &["overcompleteness"]).into_iter().cloned());
            }
            let refs: Vec<&CaseResult> = c.iter().collect();
            let (pass, detail) = judge(&refs, 3, start.elapsed(), Some(secs(60)));
            Outcome { id: "4", title: "overcompleteness at N = 1e6", pass, detail }
        }),
        Box::new(berezin_with_oracle),
        Box::new(|| {
            criterion(
                "6",
                "curvature from the three-point function",
                config(Suite::Propagator, &[2, 3], &[1], 2),
                &["curvature "],
                4,
                None,
            )
        }),
        Box::new(|| {
            criterion(
                "7",
                "convolution idempotency at N = 1e6",
                config(Suite::Propagator, &[2, 3], &[1], MC_SAMPLES),
                &["convolution idempotency"],
                4,
                None,
            )
        }),
        Box::new(|| {
            criterion(
                "8",
                "octant holonomy and O(1/m) transport convergence",
                config(Suite::Path, &[2], &[1], 2),
                &["octant "],
                3,
                None,
            )
        }),
        Box::new(|| {
            criterion(
                "9",
                "Kostant-Souriau identity and rank-2 failure probe",
                config(Suite::Propagator, &[2, 3], &[1], 2),
                &["Kostant-Souriau"],
                3,
                None,
            )
        }),
        Box::new(|| {
            criterion(
                "10",
                "unitary equivalence at N = 1e6",
                config(Suite::Propagator, &[2, 3], &[1], MC_SAMPLES),
                &["reproducing projection", "coherent inner products"],
                4,
                None,
            )
        }),
        Box::new(|| {
            criterion("11", "flat model kernel and polarizations", config(Suite::Flat, &[2], &[1], 2), &["flat "], 4, None)
        }),
        Box::new(|| {
            criterion(
                "12",
                "sphere model kernel, reproducing identity, conjugation, disk",
                config(Suite::Sphere, &[2], &[1], 2),
                &["sphere ", "disk "],
                5,
                None,
            )
        }),
        Box::new(|| {
            criterion("13", "hyperkahler J'", config(Suite::Hyperkahler, &[2], &[1], 2), &["J'", "IJ'"], 7, None)
        }),
        Box::new(|| {
            criterion(
                "14",
                "equivalence round trip and scaled-kernel mutant",
                config(Suite::Propagator, &[2], &[1], MC_SAMPLES),
                &["reconstructed ", "model kernel satisfies", "scaled-kernel mutant"],
                8,
                None,
            )
        }),
        Box::new(explorer),
    ];

    let mut unexpected = Vec::new();
    for run in &criteria {
        let o = run();
        let expected_fail = EXPECTED_FAILURES.contains(&o.id);
        let label = match (o.pass, expected_fail) {
            (true, false) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
            (true, true) => "PASS (unexpected)",
        };
        println!("{label:<17} criterion {:<8} {}: {}", o.id, o.title, o.detail);
        if o.pass == expected_fail {
            unexpected.push(o.id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("criteria with unexpected outcome: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
