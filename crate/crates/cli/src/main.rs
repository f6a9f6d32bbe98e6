//! `hcv`: command-line driver for the HCV delay model.

mod args;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hcv_core::error::{Error, Result};
use hcv_core::hopf::analyze;
use hcv_core::scenario::{compare_patient, is_input_error, run_scenario, stability_report, PatientSeries};
use hcv_core::stability::{char_coefficients, critical_delays, omega_analysis};
use hcv_core::dde::{integrate, HistorySpec};
use rayon::prelude::*;

use args::{load_batch_file, parse_tau, ModelArgs, RunArgs};

#[derive(Debug, Parser)]
#[command(name = "hcv", version, about = "HCV dynamics with intracellular delay under interferon/ribavirin therapy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one scenario and write trajectory.csv, summary.json and config.json.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Equilibria, delay-dependent stability and Hopf data for one parameter set.
    Report {
        #[command(flatten)]
        model: ModelArgs,
        /// Delay at which to state the endemic point's stability.
        #[arg(long, value_parser = parse_tau)]
        tau: Option<f64>,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Center-manifold coefficients at one critical delay.
    Hopf {
        #[command(flatten)]
        model: ModelArgs,
        /// Index j of the critical delay tau_j.
        #[arg(long, default_value_t = 0)]
        branch: usize,
    },
    /// Compare a simulated viral load with measured patient series.
    Compare {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Two-column CSV files `t_days,log10_vl`, one per patient.
        #[arg(required = true)]
        series: Vec<PathBuf>,
        /// Also write fits.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run many scenario files in parallel, one directory per run.
    Batch {
        /// JSON files, each holding one scenario or an array of scenarios.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Output directory; runs go to run_000, run_001, ...
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (defaults to the number of cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    if is_input_error(e) {
        2
    } else if matches!(e, Error::Io(_)) {
        1
    } else {
        3
    }
}

/// Writes to stdout, treating a closed pipe (`hcv ... | head`) as success.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn simulate(model: &ModelArgs, run: &RunArgs, out: &Path) -> Result<()> {
    let cfg = model.resolve_scenario(run)?;
    let summary = run_scenario(&cfg, out)?;
    print_json(&summary)
}

fn report(model: &ModelArgs, tau: Option<f64>, json: bool) -> Result<()> {
    let (p, eff) = model.resolve_model()?;
    let rep = stability_report(&p, &eff, tau);
    if json {
        print_json(&rep)
    } else {
        emit(&rep.to_string())
    }
}

fn hopf(model: &ModelArgs, branch: usize) -> Result<()> {
    let (p, eff) = model.resolve_model()?;
    let cc = char_coefficients(&p, &eff)?;
    let omega0 = omega_analysis(&cc)
        .omega0
        .ok_or_else(|| Error::Degenerate("no positive crossing frequency; the endemic point does not change stability with delay".into()))?;
    let tau = critical_delays(&cc, omega0, branch)?[branch];
    let analysis = analyze(&p, &eff, &cc, omega0, tau)?;
    print_json(&serde_json::json!({
        "omega0": omega0,
        "omega0_per_hour": omega0 / 24.0,
        "branch": branch,
        "tau_days": tau,
        "tau_hours": 24.0 * tau,
        "analysis": analysis,
    }))
}

fn compare(model: &ModelArgs, run: &RunArgs, files: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let series = files
        .iter()
        .map(|f| PatientSeries::from_csv(f))
        .collect::<Result<Vec<_>>>()?;
    let mut run = run.clone();
    if run.horizon.is_none() && model.config.is_none() {
        let last = series
            .iter()
            .filter_map(|s| s.points.last().map(|p| p.0))
            .fold(0.0, f64::max);
        run.horizon = Some(last.max(0.0));
    }
    let cfg = model.resolve_scenario(&run)?;
    let traj = integrate(
        &cfg.params,
        &cfg.efficacies,
        cfg.tau,
        &HistorySpec::constant(cfg.initial),
        &cfg.integration(),
    )?;
    let fits = series
        .iter()
        .map(|s| compare_patient(&traj, s))
        .collect::<Result<Vec<_>>>()?;
    for fit in &fits {
        if fit.skipped > 0 {
            eprintln!(
                "warning: {} point(s) of `{}` lie outside [0, {}] days and were skipped",
                fit.skipped, fit.patient_id, cfg.horizon
            );
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("fits.json"), serde_json::to_string_pretty(&fits).expect("serializable") + "\n")?;
    }
    print_json(&fits)
}

fn batch(configs: &[PathBuf], out: &Path, jobs: Option<usize>) -> Result<u8> {
    let mut scenarios = Vec::new();
    for path in configs {
        for cfg in load_batch_file(path)? {
            scenarios.push((path.clone(), cfg));
        }
    }
    fs::create_dir_all(out)?;
    let work = || {
        scenarios
            .par_iter()
            .enumerate()
            .map(|(i, (source, cfg))| {
                let name = format!("run_{i:03}");
                let result = run_scenario(cfg, &out.join(&name));
                (name, source, result)
            })
            .collect::<Vec<_>>()
    };
    let results = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut worst = 0;
    let index: Vec<_> = results
        .iter()
        .map(|(name, source, result)| match result {
            Ok(summary) => serde_json::json!({
                "run": name,
                "source": source,
                "status": "ok",
                "summary": summary,
            }),
            Err(e) => {
                worst = worst.max(exit_code(e));
                eprintln!("{name} ({}): {e}", source.display());
                serde_json::json!({
                    "run": name,
                    "source": source,
                    "status": "error",
                    "error": e.to_string(),
                })
            }
        })
        .collect();
    fs::write(out.join("batch.json"), serde_json::to_string_pretty(&index).expect("serializable") + "\n")?;
    let ok = results.iter().filter(|r| r.2.is_ok()).count();
    emit(&format!(
        "{ok} of {} runs succeeded; index in {}\n",
        results.len(),
        out.join("batch.json").display()
    ))?;
    Ok(worst)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { model, run, out } => simulate(model, run, out).map(|_| 0),
        Command::Report { model, tau, json } => report(model, *tau, *json).map(|_| 0),
        Command::Hopf { model, branch } => hopf(model, *branch).map(|_| 0),
        Command::Compare { model, run, series, out } => compare(model, run, series, out.as_deref()).map(|_| 0),
        Command::Batch { configs, out, jobs } => batch(configs, out, *jobs),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
