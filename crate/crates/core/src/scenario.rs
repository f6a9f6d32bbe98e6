//! Scenario plumbing: parameter presets, run configuration, artifact export,
//! the consolidated stability report and patient-series comparison.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dde::{
    classify_longrun, integrate, interpolate, svr_time, HistorySpec, IntegrationConfig, LongRun,
    Trajectory, DEFAULT_SVR_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::hopf::{self, lambda_prime, HopfSummary};
use crate::model::{
    basic_r0, critical_efficacy, ModelParams, SystemState, TherapyEfficacies,
};
use crate::stability::{
    char_coefficients, critical_delays, delay_length_bound, e1_verdict,
    omega_analysis, routh_hurwitz_zero_delay, transversality, CharCoefficients, CrossingSign,
    E1Verdict, OmegaRoot,
};

/// Relative tolerance used to classify the end of a scenario run.
pub const LONGRUN_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Parameters typical of chronic HCV patients with a large hepatocyte pool.
    Table1,
    /// Parameters with a slower proliferating hepatocyte pool and a strong
    /// hepatocyte source, used for the delay-induced oscillation study.
    Table2,
}

impl Preset {
    pub fn params(self) -> ModelParams {
        let (s, r, t_max, alpha, beta, d1, d2, d3) = match self {
            Preset::Table1 => (1.0, 2.0, 3.6e7, 2.25e-7, 2.9, 0.01, 1.0, 6.0),
            Preset::Table2 => (3.7e4, 0.73, 0.6e7, 1.8e-7, 13.9, 2.4e-3, 0.06, 13.9),
        };
        ModelParams::new(s, r, t_max, alpha, beta, d1, d2, d3)
            .expect("preset constants are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Table1 => "table1",
            Preset::Table2 => "table2",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table1" => Ok(Preset::Table1),
            "table2" => Ok(Preset::Table2),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset `{other}` (expected table1 or table2)"
            ))),
        }
    }
}

pub fn preset(id: Preset) -> ModelParams {
    id.params()
}

/// Which drugs a scenario administers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Therapy {
    None,
    /// Interferon only: ribavirin efficacy forced to zero.
    Interferon,
    /// Ribavirin only: interferon efficacy forced to zero.
    Ribavirin,
    Combined,
}

impl Therapy {
    /// Builds the efficacies for this therapy, zeroing the absent drug.
    pub fn efficacies(self, eta1: f64, eta_r: f64, c: f64) -> Result<TherapyEfficacies> {
        match self {
            Therapy::None => TherapyEfficacies::new(0.0, 0.0, c),
            Therapy::Interferon => TherapyEfficacies::new(eta1, 0.0, c),
            Therapy::Ribavirin => TherapyEfficacies::new(0.0, eta_r, c),
            Therapy::Combined => TherapyEfficacies::new(eta1, eta_r, c),
        }
    }

    pub fn of(eff: &TherapyEfficacies) -> Self {
        match (eff.eta1() > 0.0, eff.eta_r() > 0.0) {
            (false, false) => Therapy::None,
            (true, false) => Therapy::Interferon,
            (false, true) => Therapy::Ribavirin,
            (true, true) => Therapy::Combined,
        }
    }
}

impl FromStr for Therapy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Therapy::None),
            "interferon" | "ifn" => Ok(Therapy::Interferon),
            "ribavirin" | "rbv" => Ok(Therapy::Ribavirin),
            "combined" | "combination" => Ok(Therapy::Combined),
            other => Err(Error::InvalidConfig(format!("unknown therapy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Hours,
    Days,
}

/// Parses a delay such as `22h`, `0.9d`, `1.5 days` or a bare number of days.
pub fn parse_delay(text: &str) -> Result<f64> {
    let t = text.trim();
    let split = t
        .find(|ch: char| ch.is_ascii_alphabetic())
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse delay `{text}`")))?;
    let unit = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "d" | "day" | "days" => TimeUnit::Days,
        "h" | "hr" | "hour" | "hours" => TimeUnit::Hours,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown delay unit `{other}` (use h or d)"
            )))
        }
    };
    to_days(value, unit)
}

fn to_days(value: f64, unit: TimeUnit) -> Result<f64> {
    let days = match unit {
        TimeUnit::Days => value,
        TimeUnit::Hours => value / 24.0,
    };
    if !(days.is_finite() && days >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "delay must be finite and non-negative, got {value}"
        )));
    }
    Ok(days)
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DelayRepr {
    Days(f64),
    Text(String),
    Tagged { value: f64, unit: TimeUnit },
}

mod delay_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(days: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        DelayRepr::Tagged {
            value: *days,
            unit: TimeUnit::Days,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        let repr = DelayRepr::deserialize(d)?;
        let out = match repr {
            DelayRepr::Days(v) => to_days(v, TimeUnit::Days),
            DelayRepr::Text(s) => parse_delay(&s),
            DelayRepr::Tagged { value, unit } => to_days(value, unit),
        };
        out.map_err(serde::de::Error::custom)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ParamsRepr {
    Preset(Preset),
    Explicit(ModelParams),
}

fn deserialize_params<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<ModelParams, D::Error> {
    Ok(match ParamsRepr::deserialize(d)? {
        ParamsRepr::Preset(p) => p.params(),
        ParamsRepr::Explicit(p) => p,
    })
}

fn default_initial() -> SystemState {
    SystemState::new(1e7, 1e7, 1e7, 1e7).expect("valid default state")
}

fn default_svr_threshold() -> f64 {
    DEFAULT_SVR_THRESHOLD
}

/// A single scenario run.
///
/// In JSON, `params` may be a preset name (`"table1"`) or an explicit object,
/// and `tau` may be a number of days, a string with a unit suffix (`"22h"`)
/// or `{"value": .., "unit": "hours" | "days"}`. Emitted configs always use
/// explicit parameters and a delay tagged in days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(deserialize_with = "deserialize_params")]
    pub params: ModelParams,
    pub efficacies: TherapyEfficacies,
    /// Days.
    #[serde(with = "delay_serde")]
    pub tau: f64,
    #[serde(default = "default_initial")]
    pub initial: SystemState,
    /// Days.
    pub horizon: f64,
    /// Days.
    pub dt: f64,
    #[serde(default = "default_svr_threshold")]
    pub svr_threshold: f64,
}

impl ScenarioConfig {
    pub fn new(params: ModelParams, efficacies: TherapyEfficacies, tau: f64) -> Self {
        Self {
            params,
            efficacies,
            tau,
            initial: default_initial(),
            horizon: 200.0,
            dt: 0.01,
            svr_threshold: DEFAULT_SVR_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} = {v} is out of range")))
            }
        };
        check("tau", self.tau, self.tau.is_finite() && self.tau >= 0.0)?;
        check("horizon", self.horizon, self.horizon.is_finite() && self.horizon >= 0.0)?;
        check("dt", self.dt, self.dt.is_finite() && self.dt > 0.0)?;
        check(
            "svr_threshold",
            self.svr_threshold,
            self.svr_threshold.is_finite() && self.svr_threshold > 0.0,
        )?;
        self.integration().effective_dt(self.tau).map(|_| ())
    }

    pub fn integration(&self) -> IntegrationConfig {
        IntegrationConfig::new(self.dt, self.horizon)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub r0: f64,
    pub eta: f64,
    pub eta_c: f64,
    pub svr_day: Option<f64>,
    pub longrun: LongRun,
    pub tau0_days: Option<f64>,
    pub omega0: Option<f64>,
    pub beta2: Option<f64>,
    pub mu2: Option<f64>,
}

pub const CSV_HEADER: [&str; 7] = ["t_days", "T", "I", "V_I", "V_NI", "V_total", "log10_V_total"];

/// Output times `k * dt` for `k = 0..=floor(horizon / dt)`.
pub fn sample_times(horizon: f64, dt: f64) -> Vec<f64> {
    let n = (horizon / dt * (1.0 + 1e-12)).floor() as usize;
    (0..=n).map(|k| (k as f64 * dt).min(horizon)).collect()
}

pub fn write_trajectory_csv(traj: &Trajectory, dt: f64, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for t in sample_times(traj.t_end(), dt) {
        let s = interpolate(traj, t)?;
        let v = s.viral_load();
        let row = [t, s.t_cells(), s.i_cells(), s.v_i(), s.v_ni(), v, v.log10()];
        w.write_record(row.iter().map(|x| x.to_string()))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Hopf data of the endemic point, when it has a crossing frequency.
fn critical_summary(p: &ModelParams, eff: &TherapyEfficacies) -> (Option<f64>, Option<f64>, Option<HopfSummary>) {
    let Ok(cc) = char_coefficients(p, eff) else {
        return (None, None, None);
    };
    let Some(w0) = omega_analysis(&cc).omega0 else {
        return (None, None, None);
    };
    let Ok(taus) = critical_delays(&cc, w0, 0) else {
        return (None, Some(w0), None);
    };
    let hopf = hopf::analyze(p, eff, &cc, w0, taus[0]).ok().map(|h| h.summary);
    (Some(taus[0]), Some(w0), hopf)
}

/// Integrates a scenario and writes `trajectory.csv`, `summary.json` and
/// `config.json` into `out_dir`. Failures after the directory is created
/// leave an `error.json` describing them.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)?;
    let result = run_inner(cfg, out_dir);
    if let Err(e) = &result {
        let body = serde_json::json!({
            "error": error_kind(e),
            "message": e.to_string(),
        });
        // Best effort: the original error is what the caller needs.
        let _ = write_json(&out_dir.join("error.json"), &body);
    }
    result
}

fn run_inner(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    fs::write(out_dir.join("config.json"), cfg.to_json() + "\n")?;
    let history = HistorySpec::constant(cfg.initial);
    let traj = integrate(&cfg.params, &cfg.efficacies, cfg.tau, &history, &cfg.integration())?;
    write_trajectory_csv(&traj, cfg.dt, &out_dir.join("trajectory.csv"))?;
    let summary = summarize(cfg, &traj);
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn summarize(cfg: &ScenarioConfig, traj: &Trajectory) -> RunSummary {
    let (tau0, omega0, hopf) = critical_summary(&cfg.params, &cfg.efficacies);
    RunSummary {
        r0: basic_r0(&cfg.params, &cfg.efficacies),
        eta: cfg.efficacies.combined(),
        eta_c: critical_efficacy(&cfg.params),
        svr_day: svr_time(traj, cfg.svr_threshold),
        longrun: classify_longrun(traj, &cfg.params, &cfg.efficacies, LONGRUN_TOLERANCE),
        tau0_days: tau0,
        omega0,
        beta2: hopf.map(|h| h.beta2),
        mu2: hopf.map(|h| h.mu2),
    }
}

/// Short machine-readable tag for an error.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidParameter { .. } => "invalid_parameter",
        Error::InvalidState { .. } => "invalid_state",
        Error::InvalidConfig(_) => "invalid_config",
        Error::InvalidSeries(_) => "invalid_series",
        Error::StepTooLarge { .. } => "step_too_large",
        Error::Io(_) => "io",
        Error::NoEndemicEquilibrium { .. } => "no_endemic_equilibrium",
        Error::ArccosOutOfRange { .. } => "arccos_out_of_range",
        Error::BoundNotApplicable { .. } => "bound_not_applicable",
        Error::Degenerate(_) => "degenerate",
        Error::Singular { .. } => "singular",
        Error::BlowUp { .. } => "blow_up",
        Error::NegativeState { .. } => "negative_state",
        Error::OutOfRange { .. } => "out_of_range",
    }
}

/// Whether an error stems from user input rather than the numerics.
pub fn is_input_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter { .. }
            | Error::InvalidState { .. }
            | Error::InvalidConfig(_)
            | Error::InvalidSeries(_)
            | Error::StepTooLarge { .. }
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndemicVerdict {
    Stable,
    Unstable,
    /// The probe delay equals a critical delay.
    Critical,
}

/// Delay-free Routh-Hurwitz data as reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhReport {
    pub holds: bool,
    /// `a0 (a1 + b1) - (a2 + b2)`.
    pub expression: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub r0: f64,
    pub eta: f64,
    pub eta_c: f64,
    pub e1_verdict: E1Verdict,
    pub char_coefficients: Option<CharCoefficients>,
    pub rh_zero_delay: Option<RhReport>,
    pub omega_roots: Vec<OmegaRoot>,
    /// rad/day.
    pub omega0: Option<f64>,
    /// The same frequency in rad/hour.
    pub omega0_per_hour: Option<f64>,
    /// Critical delays in days.
    pub tau_ladder: Vec<f64>,
    pub tau0_hours: Option<f64>,
    /// Sufficient delay (days) below which the endemic point stays stable.
    pub tau_plus: Option<f64>,
    pub transversality_sign: Option<CrossingSign>,
    pub lambda_prime: Option<Complex64>,
    pub hopf: Option<HopfSummary>,
    pub tau_probe: Option<f64>,
    pub probe_verdict: Option<EndemicVerdict>,
    pub warnings: Vec<String>,
}

/// Number of critical delays listed in a report.
pub const LADDER_LENGTH: usize = 4;

pub fn stability_report(
    p: &ModelParams,
    eff: &TherapyEfficacies,
    tau_probe: Option<f64>,
) -> StabilityReport {
    let mut warnings = Vec::new();
    if !p.source_is_realistic() {
        warnings.push(format!(
            "s = {} exceeds d1 * t_max = {}: hepatocyte source above the realism bound",
            p.s(),
            p.d1() * p.t_max()
        ));
    }
    let mut report = StabilityReport {
        r0: basic_r0(p, eff),
        eta: eff.combined(),
        eta_c: critical_efficacy(p),
        e1_verdict: e1_verdict(p, eff),
        char_coefficients: None,
        rh_zero_delay: None,
        omega_roots: Vec::new(),
        omega0: None,
        omega0_per_hour: None,
        tau_ladder: Vec::new(),
        tau0_hours: None,
        tau_plus: None,
        transversality_sign: None,
        lambda_prime: None,
        hopf: None,
        tau_probe,
        probe_verdict: None,
        warnings,
    };
    let cc = match char_coefficients(p, eff) {
        Ok(cc) => cc,
        Err(Error::NoEndemicEquilibrium { .. }) => return report,
        Err(e) => {
            report.warnings.push(format!("characteristic coefficients: {e}"));
            return report;
        }
    };
    report.char_coefficients = Some(cc);
    let rh = routh_hurwitz_zero_delay(&cc);
    report.rh_zero_delay = Some(RhReport {
        holds: rh.stable,
        expression: rh.expression,
    });
    match delay_length_bound(&cc) {
        Ok(b) => report.tau_plus = Some(b.tau_plus),
        Err(e) => report.warnings.push(format!("delay bound: {e}")),
    }
    let om = omega_analysis(&cc);
    report.omega_roots = om.positive_roots.clone();
    if om.positive_roots.iter().any(|r| !r.simple) {
        report.warnings.push("repeated crossing frequency detected".into());
    }
    if let Some(w0) = om.omega0 {
        report.omega0 = Some(w0);
        report.omega0_per_hour = Some(w0 / 24.0);
        report.transversality_sign = Some(transversality(&cc, w0));
        match critical_delays(&cc, w0, LADDER_LENGTH - 1) {
            Ok(ladder) => {
                report.tau0_hours = Some(ladder[0] * 24.0);
                report.tau_ladder = ladder;
            }
            Err(e) => report.warnings.push(format!("critical delays: {e}")),
        }
    }
    if let (Some(w0), Some(&tau0)) = (report.omega0, report.tau_ladder.first()) {
        match lambda_prime(&cc, w0, tau0) {
            Ok(lp) => report.lambda_prime = Some(lp),
            Err(e) => report.warnings.push(format!("lambda': {e}")),
        }
        if rh.stable {
            match hopf::analyze(p, eff, &cc, w0, tau0) {
                Ok(h) => report.hopf = Some(h.summary),
                Err(e) => report.warnings.push(format!("normal form: {e}")),
            }
        }
    }
    if let Some(tau) = tau_probe {
        report.probe_verdict = Some(if !rh.stable {
            EndemicVerdict::Unstable
        } else {
            match report.tau_ladder.first() {
                None => EndemicVerdict::Stable,
                Some(&t0) if (tau - t0).abs() <= 1e-9 * t0 => EndemicVerdict::Critical,
                Some(&t0) if tau < t0 => EndemicVerdict::Stable,
                Some(_) => EndemicVerdict::Unstable,
            }
        });
    }
    report
}

/// Stability report of the endemic point; `E1` only when `R0 <= 1`.
impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "R0 = {:.6}  eta = {:.6}  eta_c = {:.6}", self.r0, self.eta, self.eta_c)?;
        writeln!(f, "E1: {:?}", self.e1_verdict)?;
        if let Some(rh) = &self.rh_zero_delay {
            writeln!(f, "E2 delay-free Routh-Hurwitz: {} (expression {:.6e})", rh.holds, rh.expression)?;
        }
        if let Some(w) = self.omega0 {
            writeln!(f, "omega0 = {w:.7} rad/day ({:.7} rad/h)", w / 24.0)?;
        } else if self.char_coefficients.is_some() {
            writeln!(f, "no crossing frequency: E2 stability does not depend on tau")?;
        }
        if let Some(h) = self.tau0_hours {
            writeln!(f, "tau0 = {:.6} days ({h:.4} h)", h / 24.0)?;
        }
        if self.tau_ladder.len() > 1 {
            let rest: Vec<String> = self.tau_ladder[1..].iter().map(|t| format!("{t:.4}")).collect();
            writeln!(f, "further critical delays (days): {}", rest.join(", "))?;
        }
        if let Some(t) = self.tau_plus {
            writeln!(f, "tau+ = {t:.6} days")?;
        }
        if let Some(s) = self.transversality_sign {
            writeln!(f, "transversality: {s:?}")?;
        }
        if let Some(h) = &self.hopf {
            writeln!(
                f,
                "mu2 = {:.6e}  beta2 = {:.6e}  T2 = {:.6e}  ({:?}, {:?} cycle)",
                h.mu2, h.beta2, h.t2, h.direction, h.cycle
            )?;
        }
        if let (Some(t), Some(v)) = (self.tau_probe, self.probe_verdict) {
            writeln!(f, "E2 at tau = {t:.6} days: {v:?}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Measured viral loads of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSeries {
    pub patient_id: String,
    /// `(t_days, log10 copies/ml)`.
    pub points: Vec<(f64, f64)>,
}

impl PatientSeries {
    pub fn new(patient_id: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidSeries("non-finite value".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidSeries("times must be strictly increasing".into()));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            points,
        })
    }

    /// Reads a two-column CSV `t_days,log10_vl` with a header row. The
    /// patient id is the file stem.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::InvalidSeries(e.to_string()))?;
        let mut points = Vec::new();
        for rec in rdr.deserialize::<(f64, f64)>() {
            points.push(rec.map_err(|e| Error::InvalidSeries(e.to_string()))?);
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(id, points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub t_days: f64,
    pub observed: f64,
    pub predicted: f64,
    /// `predicted - observed`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub patient_id: String,
    pub rmse: f64,
    pub max_abs_error: f64,
    pub residuals: Vec<ResidualRow>,
    /// Points outside the trajectory's time span.
    pub skipped: usize,
}

/// Compares `log10(V_I + V_NI)` along `traj` with the measured series.
pub fn compare_patient(traj: &Trajectory, series: &PatientSeries) -> Result<FitReport> {
    let mut residuals = Vec::new();
    let mut skipped = 0;
    for &(t, observed) in &series.points {
        match interpolate(traj, t) {
            Ok(s) => {
                let predicted = s.viral_load().max(f64::MIN_POSITIVE).log10();
                residuals.push(ResidualRow {
                    t_days: t,
                    observed,
                    predicted,
                    residual: predicted - observed,
                });
            }
            Err(Error::OutOfRange { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if residuals.is_empty() {
        return Err(Error::InvalidSeries(format!(
            "no point of `{}` lies within the simulated span",
            series.patient_id
        )));
    }
    let n = residuals.len() as f64;
    let rmse = (residuals.iter().map(|r| r.residual * r.residual).sum::<f64>() / n).sqrt();
    let max_abs_error = residuals.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
    Ok(FitReport {
        patient_id: series.patient_id.clone(),
        rmse,
        max_abs_error,
        residuals,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ScenarioConfig {
        let mut c = ScenarioConfig::new(
            Preset::Table1.params(),
            TherapyEfficacies::new(0.8, 0.8, 0.5).unwrap(),
            22.0 / 24.0,
        );
        c.horizon = 5.0;
        c.dt = 0.05;
        c
    }

    #[test]
    fn presets() {
        let p = Preset::Table1.params();
        assert_eq!((p.s(), p.r(), p.t_max(), p.alpha()), (1.0, 2.0, 3.6e7, 2.25e-7));
        assert_eq!((p.beta(), p.d1(), p.d2(), p.d3()), (2.9, 0.01, 1.0, 6.0));
        assert!(p.source_is_realistic());
        let q = Preset::Table2.params();
        assert_eq!((q.s(), q.r(), q.t_max(), q.alpha()), (3.7e4, 0.73, 0.6e7, 1.8e-7));
        assert_eq!((q.beta(), q.d1(), q.d2(), q.d3()), (13.9, 2.4e-3, 0.06, 13.9));
        assert_eq!("TABLE2".parse::<Preset>().unwrap(), Preset::Table2);
        assert!("table3".parse::<Preset>().is_err());
    }

    #[test]
    fn therapy_vocabulary() {
        let ifn = Therapy::Interferon.efficacies(0.8, 0.6, 0.5).unwrap();
        assert_eq!(ifn.eta_r(), 0.0);
        let rbv = Therapy::Ribavirin.efficacies(0.8, 0.6, 0.5).unwrap();
        assert_eq!(rbv.eta1(), 0.0);
        assert_eq!(Therapy::of(&rbv), Therapy::Ribavirin);
        assert_eq!(Therapy::of(&TherapyEfficacies::untreated()), Therapy::None);
    }

    #[test]
    fn delay_units() {
        assert_eq!(parse_delay("24h").unwrap(), 1.0);
        assert_eq!(parse_delay("1.5d").unwrap(), 1.5);
        assert_eq!(parse_delay(" 36 hours").unwrap(), 1.5);
        assert_eq!(parse_delay("2").unwrap(), 2.0);
        assert!(parse_delay("3w").is_err());
        assert!(parse_delay("-1h").is_err());
    }

    #[test]
    fn config_accepts_presets_and_hours() {
        let text = r#"{
            "params": "table1",
            "efficacies": {"eta1": 0.8, "eta_r": 0.8, "c": 0.5},
            "tau": {"value": 22, "unit": "hours"},
            "horizon": 10,
            "dt": 0.05
        }"#;
        let c = ScenarioConfig::from_json(text).unwrap();
        assert_eq!(c.params, Preset::Table1.params());
        assert_eq!(c.tau, 22.0 / 24.0);
        assert_eq!(c.initial, default_initial());
        let short = text.replace(r#"{"value": 22, "unit": "hours"}"#, r#""22h""#);
        assert_eq!(ScenarioConfig::from_json(&short).unwrap(), c);
        assert!(ScenarioConfig::from_json(&text.replace("\"dt\": 0.05", "\"dt\": 0.5")).is_err());
    }

    #[test]
    fn zero_horizon_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg();
        c.horizon = 0.0;
        let s = run_scenario(&c, dir.path()).unwrap();
        assert_eq!(s.longrun, LongRun::Undetermined);
        let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    }

    #[test]
    fn csv_rows_and_summary_keys() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg();
        run_scenario(&c, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + (c.horizon / c.dt).floor() as usize + 1);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        let keys: Vec<&String> = summary.as_object().unwrap().keys().collect();
        for k in ["r0", "eta", "eta_c", "svr_day", "longrun", "tau0_days", "omega0", "beta2", "mu2"] {
            assert!(keys.iter().any(|x| x.as_str() == k), "{k}");
        }
        let echoed = fs::read_to_string(dir.path().join("config.json")).unwrap();
        assert_eq!(ScenarioConfig::from_json(&echoed).unwrap(), c);
    }

    #[test]
    fn failure_writes_error_json() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg();
        c.dt = 1.0;
        let e = run_scenario(&c, dir.path()).unwrap_err();
        assert!(is_input_error(&e));
        let body: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("error.json")).unwrap())
                .unwrap();
        assert_eq!(body["error"], "step_too_large");
    }

    #[test]
    fn report_branches() {
        let strong = TherapyEfficacies::new(0.8, 0.8, 0.5).unwrap();
        let r = stability_report(&Preset::Table1.params(), &strong, None);
        assert_eq!(r.e1_verdict, E1Verdict::Stable);
        assert!(r.char_coefficients.is_none() && r.omega_roots.is_empty() && r.hopf.is_none());

        let r = stability_report(&Preset::Table2.params(), &TherapyEfficacies::untreated(), Some(1.0));
        let rh = r.rh_zero_delay.unwrap();
        assert!(rh.expression.is_finite());
        assert!(r.warnings.iter().any(|w| w.contains("realism")));
        if r.hopf.is_some() {
            assert!(!r.omega_roots.is_empty() && rh.holds);
        }

        let combo = TherapyEfficacies::new(0.5, 0.7, 0.81).unwrap();
        let r = stability_report(&Preset::Table2.params(), &combo, Some(10.0));
        assert_eq!(r.transversality_sign, Some(CrossingSign::Positive));
        assert_eq!(r.tau_ladder.len(), LADDER_LENGTH);
        assert_eq!(r.probe_verdict, Some(EndemicVerdict::Stable));
        assert!(r.hopf.is_some());
        let shown = r.to_string();
        assert!(shown.contains("omega0"));
    }

    fn declining(p: &ModelParams) -> Trajectory {
        let eff = TherapyEfficacies::new(0.8, 0.8, 0.5).unwrap();
        let h = HistorySpec::constant(default_initial());
        integrate(p, &eff, 0.5, &h, &IntegrationConfig::new(0.02, 30.0)).unwrap()
    }

    #[test]
    fn compare_self_and_offset() {
        let tr = declining(&Preset::Table1.params());
        let pts: Vec<(f64, f64)> = (0..30)
            .map(|k| {
                let t = k as f64 + 0.37;
                (t, interpolate(&tr, t).unwrap().viral_load().log10())
            })
            .collect();
        let rep = compare_patient(&tr, &PatientSeries::new("self", pts.clone()).unwrap()).unwrap();
        assert_eq!(rep.rmse, 0.0);
        let shifted: Vec<(f64, f64)> = pts.iter().map(|(t, v)| (*t, v + 0.5)).collect();
        let rep = compare_patient(&tr, &PatientSeries::new("shift", shifted).unwrap()).unwrap();
        assert!((rep.rmse - 0.5).abs() < 1e-12);
        assert!((rep.max_abs_error - 0.5).abs() < 1e-12);
        let mut late = pts.clone();
        late.push((100.0, 1.0));
        let rep = compare_patient(&tr, &PatientSeries::new("late", late).unwrap()).unwrap();
        assert_eq!(rep.skipped, 1);
    }

    #[test]
    fn declining_run_fits_declining_data_better() {
        let p = Preset::Table1.params();
        let down = declining(&p);
        let eff = TherapyEfficacies::new(0.8, 0.0, 0.5).unwrap();
        let e2 = crate::model::endemic_equilibrium(&p, &eff).unwrap();
        let flat = integrate(
            &p,
            &eff,
            0.5,
            &HistorySpec::constant(e2.state),
            &IntegrationConfig::new(0.02, 30.0),
        )
        .unwrap();
        let series = PatientSeries::new(
            "synthetic",
            (0..10).map(|k| (3.0 * k as f64, 7.3 - 0.55 * k as f64)).collect(),
        )
        .unwrap();
        let a = compare_patient(&down, &series).unwrap().rmse;
        let b = compare_patient(&flat, &series).unwrap().rmse;
        assert!(a < b, "{a} vs {b}");
    }

    #[test]
    fn patient_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p07.csv");
        fs::write(&path, "t_days,log10_vl\n0,6.5\n7, 5.1\n14,4.0\n").unwrap();
        let s = PatientSeries::from_csv(&path).unwrap();
        assert_eq!(s.patient_id, "p07");
        assert_eq!(s.points, vec![(0.0, 6.5), (7.0, 5.1), (14.0, 4.0)]);
        fs::write(&path, "t_days,log10_vl\n0,6.5\n0,5.1\n").unwrap();
        assert!(PatientSeries::from_csv(&path).is_err());
    }

    proptest! {
        #[test]
        fn config_roundtrip(
            e1 in 0.0f64..0.99, er in 0.0f64..0.99, c in 0.01f64..0.99,
            tau in 0.0f64..5.0, horizon in 0.0f64..400.0, table in prop::bool::ANY,
            t0 in 0.0f64..1e8, v0 in 0.0f64..1e8,
        ) {
            let preset = if table { Preset::Table1 } else { Preset::Table2 };
            let mut cfg = ScenarioConfig::new(
                preset.params(),
                TherapyEfficacies::new(e1, er, c).unwrap(),
                tau,
            );
            cfg.horizon = horizon;
            cfg.dt = if tau > 0.0 { tau / 20.0 } else { 0.01 };
            cfg.initial = SystemState::new(t0, v0, v0, 0.5 * v0).unwrap();
            let text = cfg.to_json();
            let back = ScenarioConfig::from_json(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_json(), text);
        }
    }
}
