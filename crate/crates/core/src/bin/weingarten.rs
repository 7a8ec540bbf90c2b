use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use weingarten::cli_io::{self, ExitStatus, RunConfig};
use weingarten::selftest::{run_selftest, DEFAULT_SEED};

const AFTER_HELP: &str = "\
PSI EXPRESSIONS
  psi is a function of the unit normal (nx, ny, nz):
    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?
    primary := number | nx | ny | nz | func '(' args ')' | '(' expr ')'
  functions: exp log sin cos sqrt (smooth); abs min max are rejected.
  examples: \"0.7 - 0.2*nz\", \"0.5*exp(0.1*nx)\"

EXIT CODES
  0 success, 1 selftest failure, 2 config error, 3 Serrin condition violated,
  4 continuation failure, 5 diagnostics failure, 6 I/O error

Set RUST_LOG=info (or debug) for progress output.";

#[derive(Parser)]
#[command(name = "weingarten", version, about = "Convex radial graphs with prescribed Weingarten curvature", after_help = AFTER_HELP)]
struct Cli {
    /// Override the number of rings.
    #[arg(long, global = true)]
    rings: Option<usize>,
    /// Override the number of sectors (even).
    #[arg(long, global = true)]
    sectors: Option<usize>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Dirichlet problem and write the artifacts.
    Solve { config: PathBuf },
    /// Run the Serrin gate and build the subsolution only.
    Check { config: PathBuf },
    /// Run the seeded property checks.
    Selftest {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn load(cli: &Cli, path: &Path) -> Result<RunConfig, ExitCode> {
    let mut config = cli_io::load_config(path).map_err(|e| {
        eprintln!("error: {e}");
        exit(ExitStatus::ConfigError)
    })?;
    if let Some(r) = cli.rings {
        config.rings = r;
    }
    if let Some(s) = cli.sectors {
        config.sectors = s;
    }
    if let Some(o) = &cli.out {
        config.output.dir = o.clone();
    }
    config.validate().map_err(|e| {
        eprintln!("error: {e}");
        exit(ExitStatus::ConfigError)
    })?;
    Ok(config)
}

fn exit(status: ExitStatus) -> ExitCode {
    ExitCode::from(status.code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Solve { config } => {
            let config = match load(&cli, config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let outcome = cli_io::run(&config);
            let r = &outcome.report;
            println!("status: {} ({})", r.status, r.message);
            if let Some(c) = &r.continuation {
                println!(
                    "continuation: {} steps ({} rejected), residual {:.3e}{}",
                    c.steps,
                    c.rejected,
                    c.residual,
                    if c.immediate { ", subsolution returned" } else { "" }
                );
            }
            if let Some(d) = &r.diagnostics {
                println!(
                    "diagnostics: mesh median {:.3e}, p95 {:.3e}, duality {:.3e}, kappa in [{:.4}, {:.4}]",
                    d.mesh_median, d.mesh_p95, d.duality_equation_error, d.kappa_min, d.kappa_max
                );
            }
            for a in &r.artifacts {
                println!("wrote {}", config.output.dir.join(a).display());
            }
            exit(outcome.status)
        }
        Command::Check { config } => {
            let config = match load(&cli, config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let report = cli_io::check(&config);
            match toml::to_string(&report) {
                Ok(s) => print!("{s}"),
                Err(e) => eprintln!("error: {e}"),
            }
            exit(report.status)
        }
        Command::Selftest { seed } => {
            let results = run_selftest(*seed);
            let mut ok = true;
            for c in &results {
                ok &= c.passed;
                println!(
                    "{} {:<22} worst {:.3e} threshold {:.3e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.worst,
                    c.threshold
                );
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
