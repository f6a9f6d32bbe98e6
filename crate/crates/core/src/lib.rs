//! Delay-differential model of hepatitis C infection under combination
//! therapy: equilibria, linear stability, Hopf normal form, a method-of-steps
//! integrator and scenario drivers.

pub mod dde;
pub mod error;
pub mod linalg;
pub mod hopf;
pub mod model;
pub mod scenario;
pub mod stability;

pub use error::{Error, Result};
pub use model::{
    basic_r0, combined_efficacy, critical_efficacy, endemic_equilibrium, rhs,
    uninfected_equilibrium, uninfected_point, vector_field, Equilibrium, EquilibriumKind,
    ModelParams, StateVec, SystemState, TherapyEfficacies, N_STATE,
};
pub use hopf::{
    analyze as analyze_hopf, eigen_data, g_coefficients, hopf_summary, lambda_prime,
    CenterManifoldCoefficients, EigenData, HopfAnalysis, HopfSummary,
};
pub use stability::{
    char_coefficients, critical_delays, delay_length_bound, e1_verdict, omega_analysis,
    routh_hurwitz_zero_delay, transversality, CharCoefficients, CrossingSign, DelayBound,
    E1Verdict, OmegaAnalysis, RouthHurwitz,
};
pub use dde::{
    classify_longrun, integrate, interpolate, svr_time, HistorySpec, IntegrationConfig, LongRun,
    Trajectory,
};
pub use scenario::{
    compare_patient, run_scenario, stability_report, FitReport, PatientSeries, Preset,
    RunSummary, ScenarioConfig, StabilityReport, Therapy,
};
