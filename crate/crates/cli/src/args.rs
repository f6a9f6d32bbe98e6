use std::fs;
use std::path::PathBuf;

use clap::Args;
use hcv_core::error::{Error, Result};
use hcv_core::model::{ModelParams, TherapyEfficacies};
use hcv_core::scenario::{parse_delay, Preset, ScenarioConfig, Therapy};

/// Model and drug selection shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// JSON scenario file; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parameter set.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Drug regimen: none, interferon, ribavirin or combined. Zeroes the
    /// efficacy of any drug not administered.
    #[arg(long, value_parser = parse_therapy)]
    pub therapy: Option<Therapy>,
    /// Interferon efficacy in blocking virion production.
    #[arg(long)]
    pub eta1: Option<f64>,
    /// Ribavirin efficacy in rendering virions noninfectious.
    #[arg(long)]
    pub etar: Option<f64>,
    /// Fraction of the interferon effect acting on de novo infection.
    #[arg(long)]
    pub c: Option<f64>,
}

/// Time-stepping options for subcommands that integrate.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Intracellular delay, e.g. `22h`, `0.9d` or a number of days.
    #[arg(long, value_parser = parse_tau)]
    pub tau: Option<f64>,
    /// Output sampling step in days.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Simulated time span in days.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// SVR detection limit in copies/ml.
    #[arg(long)]
    pub svr_threshold: Option<f64>,
}

pub fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn parse_therapy(s: &str) -> std::result::Result<Therapy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn parse_tau(s: &str) -> std::result::Result<f64, String> {
    parse_delay(s).map_err(|e| e.to_string())
}

fn missing(flag: &str) -> Error {
    Error::InvalidConfig(format!("missing `--{flag}` (or a --config file providing it)"))
}

impl ModelArgs {
    fn base(&self) -> Result<Option<ScenarioConfig>> {
        match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                ScenarioConfig::from_json(&text).map(Some)
            }
            None => Ok(None),
        }
    }

    fn params(&self, base: Option<&ScenarioConfig>) -> Result<ModelParams> {
        match (self.preset, base) {
            (Some(p), _) => Ok(p.params()),
            (None, Some(cfg)) => Ok(cfg.params),
            (None, None) => Err(missing("preset")),
        }
    }

    fn efficacies(&self, base: Option<&ScenarioConfig>) -> Result<TherapyEfficacies> {
        let from_base = base.map(|cfg| cfg.efficacies);
        let therapy = self.therapy.unwrap_or(Therapy::Combined);
        let needs_eta1 = matches!(therapy, Therapy::Interferon | Therapy::Combined);
        let needs_etar = matches!(therapy, Therapy::Ribavirin | Therapy::Combined);
        let pick = |flag: Option<f64>, stored: Option<f64>, needed: bool, name: &str| match flag.or(stored) {
            Some(v) => Ok(v),
            None if !needed => Ok(0.0),
            None => Err(missing(name)),
        };
        let eta1 = pick(self.eta1, from_base.map(|e| e.eta1()), needs_eta1, "eta1")?;
        let eta_r = pick(self.etar, from_base.map(|e| e.eta_r()), needs_etar, "etar")?;
        let c = match self.c.or(from_base.map(|e| e.c())) {
            Some(c) => c,
            None if !needs_eta1 => TherapyEfficacies::untreated().c(),
            None => return Err(missing("c")),
        };
        therapy.efficacies(eta1, eta_r, c)
    }

    /// Parameters and efficacies only, for the analysis subcommands.
    pub fn resolve_model(&self) -> Result<(ModelParams, TherapyEfficacies)> {
        let base = self.base()?;
        Ok((self.params(base.as_ref())?, self.efficacies(base.as_ref())?))
    }

    /// A complete, validated scenario.
    pub fn resolve_scenario(&self, run: &RunArgs) -> Result<ScenarioConfig> {
        let base = self.base()?;
        let params = self.params(base.as_ref())?;
        let eff = self.efficacies(base.as_ref())?;
        let tau = match (run.tau, &base) {
            (Some(t), _) => t,
            (None, Some(cfg)) => cfg.tau,
            (None, None) => return Err(missing("tau")),
        };
        let mut cfg = match base {
            Some(mut cfg) => {
                cfg.params = params;
                cfg.efficacies = eff;
                cfg.tau = tau;
                cfg
            }
            None => ScenarioConfig::new(params, eff, tau),
        };
        if let Some(dt) = run.dt {
            cfg.dt = dt;
        }
        if let Some(h) = run.horizon {
            cfg.horizon = h;
        }
        if let Some(s) = run.svr_threshold {
            cfg.svr_threshold = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads one scenario or an array of scenarios from a JSON file.
pub fn load_batch_file(path: &PathBuf) -> Result<Vec<ScenarioConfig>> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        single => vec![single],
    };
    items
        .into_iter()
        .map(|item| ScenarioConfig::from_json(&item.to_string()))
        .collect()
}
