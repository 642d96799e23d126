use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use trafficlab::harness::{list_experiments, run_and_write, ExperimentConfig, Overrides};

/// Run a traffic-model experiment and compare simulation with theory.
///
/// Exit status: 0 on success, 1 on usage errors, 2 when a metric misses its
/// declared tolerance.
#[derive(Parser, Debug)]
#[command(name = "trafficlab", version)]
struct Cli {
    /// Experiment id, or `list` to print the catalog.
    experiment: String,
    /// Flat TOML config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<String>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn print_catalog() -> std::io::Result<()> {
    let mut out = std::io::stdout().lock();
    for e in list_experiments() {
        writeln!(out, "{}: {}", e.id, e.topic)?;
        for (key, default, doc) in &e.params {
            writeln!(out, "    {key} = {default}    # {doc}")?;
        }
        writeln!(out, "  example:")?;
        for line in e.example.lines() {
            writeln!(out, "    {line}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.experiment == "list" {
        // a closed pipe (`trafficlab list | head`) is not an error
        let _ = print_catalog();
        return ExitCode::SUCCESS;
    }
    let overrides = Overrides {
        seed: cli.seed,
        replicas: cli.replicas,
        out: cli.out,
        format: cli.format.map(|f| match f {
            Format::Csv => "csv".to_string(),
            Format::Json => "json".to_string(),
        }),
    };
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(&cli.experiment, path, &overrides),
        None => ExperimentConfig::parse_in(&cli.experiment, "", ".".as_ref(), &overrides),
    };
    let config = match config {
        Ok(c) => c,
        Err(e) => {
            eprintln!("trafficlab: {e}");
            return ExitCode::from(1);
        }
    };
    match run_and_write(&config) {
        Ok(report) if report.passed() => ExitCode::SUCCESS,
        Ok(report) => {
            for m in report.metrics.iter().filter(|m| m.pass == Some(false)) {
                eprintln!(
                    "trafficlab: {} outside tolerance: analytic {:?}, empirical {:?}",
                    m.name, m.analytic, m.empirical
                );
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("trafficlab: {e}");
            ExitCode::from(1)
        }
    }
}
