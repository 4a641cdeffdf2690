use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use num_rational::BigRational;

use greens_cli::expr::AlgebraicExpr;
use greens_cli::pipeline::{parse_form, parse_level_cutoff, parse_rational, run_pipeline, Config};
use greens_core::quadforms::{QuadForm, RMDivisor};

/// Computes the value of a p-adic Green's function at a real multiplication point.
#[derive(Parser, Debug)]
#[command(name = "greens", version)]
struct Args {
    /// Odd prime p.
    #[arg(long)]
    p: u32,
    /// Even weight k >= 4.
    #[arg(long, default_value_t = 4)]
    k: u32,
    /// Target number of p-adic digits.
    #[arg(long, default_value_t = 30)]
    precision: u32,
    /// Laurent series order (defaults to precision + 10).
    #[arg(long)]
    series_order: Option<usize>,
    /// Highest level in the assembly, or `auto`.
    #[arg(long, default_value = "auto")]
    level_cutoff: String,
    /// Branch constant L of the logarithm.
    #[arg(long, default_value = "0", value_parser = parse_rational)]
    branch: BigRational,
    /// Divisor as inline JSON or a path to a JSON file.
    #[arg(long)]
    divisor: String,
    /// Add the orientation-reversed copy of each even component.
    #[arg(long)]
    symmetrize: bool,
    /// Target form `[a, b, c]`.
    #[arg(long, value_parser = parse_form)]
    target: QuadForm,
    /// File with the expected algebraic value.
    #[arg(long)]
    expected: Option<PathBuf>,
    /// Write the report to this file instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn read_divisor(arg: &str) -> Result<RMDivisor, String> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| format!("{arg}: {e}"))?
    };
    RMDivisor::parse_json(&text).map_err(|e| format!("divisor: {e}"))
}

fn write_atomically(path: &Path, text: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

fn run(args: Args) -> Result<(), String> {
    let mut divisor = read_divisor(&args.divisor)?;
    if args.symmetrize {
        divisor = divisor.symmetrize();
    }
    let mut cfg = Config::new(args.p, args.k, args.precision, divisor, args.target);
    if let Some(m) = args.series_order {
        cfg.series_order = m;
    }
    cfg.level_cutoff = parse_level_cutoff(&args.level_cutoff)?;
    cfg.branch = args.branch;
    if let Some(path) = &args.expected {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.expected = Some(text.parse::<AlgebraicExpr>().map_err(|e| format!("{}: {e}", path.display()))?);
    }
    let report = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let text = report.render();
    match &args.report {
        Some(path) => write_atomically(path, &text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
