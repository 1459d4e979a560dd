use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use scarkit_cli::{CliError, Pipeline, RunConfig};

#[derive(Parser)]
#[command(name = "scarkit", version, about = "Localized kernels and quasimodes on the hyperbolic plane")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the kernel triple and check its bounds.
    BuildKernel(Common),
    /// Evaluate the microlocal kernel and sweep the tube width.
    Localize(Common),
    /// Build the extremal-point quasimode and its mass report.
    Quasimode(Common),
    /// Run every stage and write an aggregate report.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long = "C")]
    window: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "N")]
    n: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated tube widths.
    #[arg(long = "N-sweep", value_delimiter = ',')]
    n_sweep: Option<Vec<f64>>,
    /// Outside-mass fraction the sweep must reach.
    #[arg(long)]
    target: Option<f64>,
    /// `.qmb` basis file instead of a synthetic basis.
    #[arg(long)]
    basis: Option<PathBuf>,
    /// Synthetic basis size.
    #[arg(long)]
    d: Option<usize>,
    /// Lift consistency samples (0 disables the check).
    #[arg(long)]
    lift_samples: Option<usize>,
}

impl Common {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut rc = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let cfg = &mut rc.cfg;
        if let Some(v) = self.r {
            cfg.r = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.c {
            cfg.c = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.seed {
            rc.seed = v;
        }
        if let Some(v) = self.out {
            rc.out = v;
        }
        if let Some(v) = self.n_sweep {
            rc.n_sweep = v;
        }
        if let Some(v) = self.target {
            rc.target_fraction = v;
        }
        if let Some(v) = self.basis {
            rc.basis_file = Some(v);
        }
        if let Some(v) = self.d {
            rc.basis_size = Some(v);
        }
        if let Some(v) = self.lift_samples {
            rc.lift_samples = v;
        }
        Ok(rc)
    }
}

fn threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SCARKIT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("SCARKIT_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    threads()?;
    let start = Instant::now();
    let (name, common) = match cli.command {
        Command::BuildKernel(c) => ("build-kernel", c),
        Command::Localize(c) => ("localize", c),
        Command::Quasimode(c) => ("quasimode", c),
        Command::Report(c) => ("report", c),
    };
    let mut p = Pipeline::new(common.resolve()?)?;
    match name {
        "build-kernel" => {
            let b = p.build_kernel_artifacts()?;
            eprintln!("bounds: {} of {} checks pass", b.checks.checks.iter().filter(|c| c.pass).count(), b.checks.checks.len());
        }
        "localize" => {
            let l = p.localize_artifacts()?;
            eprintln!("sweep: N* = {:?}, slope = {:?}, monotone = {}", l.n_star, l.slope, l.monotone);
        }
        "quasimode" => {
            let q = p.quasimode_artifacts()?;
            eprintln!(
                "quasimode: peak = {:.4}, correlation = {:.4}, enhancement = {:.4}",
                q.report.peak, q.report.correlation, q.report.enhancement
            );
        }
        _ => {
            let s = p.report()?;
            eprintln!("report: enhancement = {:.4}, N* = {:?}", s.enhancement, s.n_star);
        }
    }
    for w in &p.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("{name} finished in {:.1} s; artifacts in {}", start.elapsed().as_secs_f64(), p.rc.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = serde_json::json!({ "error": "config", "message": e.to_string() });
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
