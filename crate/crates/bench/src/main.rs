use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hfce_bench::config::ExperimentSpec;
use hfce_bench::emit::write_results;
use hfce_bench::error::{BenchError, Result};
use hfce_bench::presets::{preset, PRESET_NAMES};
use hfce_bench::runner::run_experiment;
use hfce_core::verify::{compression_check, identity_suite, TOLERANCE};

#[derive(Parser)]
#[command(name = "hfce", version, about = "Cascaded channel estimation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write result files.
    Run(RunArgs),
    /// Check the algebraic identities and dictionary compression numerically.
    IdentityCheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// List built-in presets.
    Presets,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Config file layered over the preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Built-in experiment layered over the base config.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_parser = ["csv", "jsonl"])]
    format: Option<String>,
    /// Use the full-size array instead of the desk-scale one.
    #[arg(long)]
    full_scale: bool,
    /// Print the aggregate table.
    #[arg(long, short)]
    verbose: bool,
}

fn cli_layer(args: &RunArgs) -> String {
    let mut experiment = Vec::new();
    if let Some(s) = args.seed {
        experiment.push(format!("seed = {s}"));
    }
    if let Some(t) = args.trials {
        experiment.push(format!("trials = {t}"));
    }
    if let Some(o) = &args.out {
        experiment.push(format!("output = {}", toml::Value::String(o.display().to_string())));
    }
    if let Some(f) = &args.format {
        experiment.push(format!("format = \"{f}\""));
    }
    let mut text = format!("[experiment]\n{}\n", experiment.join("\n"));
    if args.full_scale {
        text.push_str("[geometry]\nscale = \"full\"\n");
    }
    text
}

fn run(args: RunArgs) -> Result<()> {
    let mut layers: Vec<String> = Vec::new();
    if let Some(p) = &args.preset {
        layers.push(preset(p)?.to_string());
    }
    if let Some(path) = &args.spec {
        layers.push(std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?);
    }
    layers.push(cli_layer(&args));
    let refs: Vec<&str> = layers.iter().map(String::as_str).collect();
    let spec = ExperimentSpec::layered(&refs)?;

    let table = run_experiment(&spec)?;
    let paths = write_results(&table, &spec, &spec.experiment.output)?;
    if args.verbose {
        eprintln!(
            "{:<11} {:>10} {:>7} {:>9} {:>11} {:>9}",
            "estimator",
            spec.experiment.sweep.name(),
            "trials",
            "failures",
            "nmse_db",
            "se_db"
        );
        for a in table.aggregates() {
            let db = a.mean_nmse_db.map_or("-".into(), |d| format!("{d:.2}"));
            // delta method: se of 10 log10(mean)
            let se = match (a.mean_nmse, a.stderr_nmse) {
                (Some(m), Some(s)) if m > 0.0 => format!("{:.2}", 10.0 / std::f64::consts::LN_10 * s / m),
                _ => "-".into(),
            };
            eprintln!(
                "{:<11} {:>10} {:>7} {:>9} {:>11} {:>9}",
                a.estimator.name(),
                a.value,
                a.trials,
                a.failures,
                db,
                se
            );
        }
    }
    for p in [&paths.raw, &paths.aggregate, &paths.timing, &paths.config] {
        println!("{}", p.display());
    }
    Ok(())
}

fn identity_check(instances: usize, seed: u64) -> Result<bool> {
    let mut checks = identity_suite(instances, seed)?;
    checks.extend(compression_check(instances, seed)?);
    let mut ok = true;
    for c in &checks {
        ok &= c.passed();
        println!(
            "{} {:<48} instances={:<4} max_rel_error={:.3e} structural_failures={}",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.instances,
            c.max_rel_error,
            c.structural_failures
        );
    }
    println!("tolerance {TOLERANCE:e}: {}", if ok { "all checks passed" } else { "FAILED" });
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args).map(|_| true),
        Command::IdentityCheck { instances, seed } => identity_check(instances, seed),
        Command::Presets => {
            for p in PRESET_NAMES {
                println!("{p}");
            }
            Ok(true)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
