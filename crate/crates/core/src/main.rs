use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use holoquant::geometries::{
    flat_idempotency_residual, flat_kernel, flat_polarization_residual, sphere_idempotency_residual, sphere_kernel,
    sphere_quadrature, FlatPoint, FlatSlice, SpherePoint,
};
use holoquant::verification::{
    emit_report, parse_tolerances, path_study, run_suite, write_path_csv, PathGeometry, ReportFormat, Suite,
    SuiteConfig,
};
use holoquant::{Error, Result, C64};

#[derive(Parser)]
#[command(name = "holoquant", version, about = "Verification driver for projection-matrix quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification suite and write its report.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, value_delimiter = ',', default_value = "2,3")]
        dim: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        rank: Vec<usize>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Tolerance overrides as `key=value,key=value`.
        #[arg(long, default_value = "")]
        tol: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
    },
    /// Convergence of discrete transport against the connection ODE.
    Path {
        #[arg(long, value_enum)]
        geometry: PathGeometry,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        steps: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a closed-form example geometry.
    Examples {
        #[arg(value_enum)]
        geometry: ExampleGeometry,
        #[arg(long, default_value_t = 0.5)]
        hbar: f64,
        #[arg(long, default_value_t = 64)]
        quad: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExampleGeometry {
    Flat,
    Sphere,
}

fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn verify(cfg: SuiteConfig, format: ReportFormat) -> Result<ExitCode> {
    let report = run_suite(&cfg)?;
    for c in &report.cases {
        eprintln!(
            "{} {:<64} residual {:.3e} bound {:.3e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.residual,
            c.bound
        );
    }
    match &cfg.out {
        Some(path) => emit_report(&report, format, path)?,
        None => {
            let text = match format {
                ReportFormat::Json => holoquant::verification::to_json(&report)?,
                ReportFormat::CsvSummary => holoquant::verification::to_csv_summary(&report)?,
            };
            print!("{text}");
        }
    }
    Ok(ExitCode::from(report.exit_code() as u8))
}

fn examples(geometry: ExampleGeometry, hbar: f64, quad: usize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    let w = |e: std::io::Error| Error::Format(e.to_string());
    match geometry {
        ExampleGeometry::Flat => {
            let p = FlatPoint::on_real_locus(C64::new(0.4, -0.2), hbar);
            let q = FlatPoint::on_real_locus(C64::new(-0.3, 0.6), hbar);
            let pc = FlatPoint::from_coordinates(0.4, 0.2, -0.2, -0.3, hbar);
            writeln!(out, "kernel P(p, q) = {}", flat_kernel(&p, &q)?).map_err(w)?;
            writeln!(out, "idempotency residual, real locus = {:.3e}", flat_idempotency_residual(&p, &q, quad)?)
                .map_err(w)?;
            writeln!(out, "idempotency residual, continued = {:.3e}", flat_idempotency_residual(&pc, &q, quad)?)
                .map_err(w)?;
            let wk = FlatPoint::from_coordinates(0.7, 0.0, 0.2, 0.0, hbar);
            let wr = FlatPoint::from_coordinates(-0.4, 0.0, 0.0, 0.6, hbar);
            writeln!(
                out,
                "polarization residual, Kahler slice = {:.3e}",
                flat_polarization_residual(&pc, &wk, FlatSlice::Kahler, 1e-4)?
            )
            .map_err(w)?;
            writeln!(
                out,
                "polarization residual, real slice = {:.3e}",
                flat_polarization_residual(&pc, &wr, FlatSlice::RealPolarized, 1e-4)?
            )
            .map_err(w)?;
        }
        ExampleGeometry::Sphere => {
            let side = (quad as f64).sqrt().ceil().max(2.0) as usize;
            let nodes = sphere_quadrature(side, side);
            let a = SpherePoint::from_angles(0.7, 0.3).stereographic()?;
            let b = SpherePoint::from_angles(2.1, -1.2).stereographic()?;
            writeln!(out, "kernel P(a, b) = {}", sphere_kernel(&a, &b)?).map_err(w)?;
            writeln!(out, "quadrature nodes = {}", nodes.len()).map_err(w)?;
            writeln!(out, "reproducing residual = {:.3e}", sphere_idempotency_residual(&a, &b, &nodes)?).map_err(w)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify {
            suite,
            dim,
            rank,
            samples,
            seed,
            tol,
            workers,
            out,
            format,
        } => {
            let cfg = SuiteConfig {
                suite,
                dims: dim,
                ranks: rank,
                samples,
                seed,
                tolerances: parse_tolerances(&tol)?,
                workers,
                out,
            };
            verify(cfg, format)
        }
        Command::Path { geometry, steps, out } => {
            let rows = path_study(geometry, &steps);
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
                    write_path_csv(&rows, file)?;
                }
                None => write_path_csv(&rows, std::io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Examples { geometry, hbar, quad } => {
            examples(geometry, hbar, quad)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(Error::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
