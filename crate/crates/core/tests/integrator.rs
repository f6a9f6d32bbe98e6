use hcv_core::dde::{
    classify_longrun, integrate, interpolate, HistorySpec, IntegrationConfig, LongRun, Trajectory,
};
use hcv_core::model::{
    endemic_equilibrium, rhs, uninfected_equilibrium, SystemState,
    TherapyEfficacies,
};
use hcv_core::scenario::Preset;
use hcv_core::stability::{char_coefficients, critical_delays, omega_analysis};
use proptest::prelude::*;

mod common;
use common::{dopri_reference, rel_err};

fn start() -> HistorySpec {
    HistorySpec::constant(SystemState::new(1e7, 1e7, 1e7, 1e7).unwrap())
}

#[test]
fn delay_free_run_matches_adaptive_reference() {
    let p = Preset::Table1.params();
    let eff = TherapyEfficacies::untreated();
    let tr = integrate(&p, &eff, 0.0, &start(), &IntegrationConfig::new(0.01, 50.0)).unwrap();
    let reference = dopri_reference(&p, &eff, start().values.to_array(), 50.0, 1e-13);
    let got = tr.final_state().to_array();
    assert!(rel_err(&got, &reference) < 1e-6, "{got:?} vs {reference:?}");
}

#[test]
fn fourth_order_convergence_without_delay() {
    let p = Preset::Table1.params();
    let eff = TherapyEfficacies::untreated();
    let t_end = 5.0;
    let reference = dopri_reference(&p, &eff, start().values.to_array(), t_end, 1e-14);
    let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&dt| {
            let tr = integrate(&p, &eff, 0.0, &start(), &IntegrationConfig::new(dt, t_end)).unwrap();
            rel_err(&tr.final_state().to_array(), &reference)
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 4.0).abs() < 0.3, "errors {errs:?}, order {order}");
    }
}

#[test]
fn endemic_history_is_invariant_with_delay() {
    let p = Preset::Table2.params();
    let eff = TherapyEfficacies::new(0.5, 0.7, 0.81).unwrap();
    let e2 = endemic_equilibrium(&p, &eff).unwrap();
    let tr = integrate(&p, &eff, 5.0, &HistorySpec::constant(e2.state), &IntegrationConfig::new(0.05, 100.0)).unwrap();
    let x = e2.state.to_array();
    for s in &tr.states {
        assert!(rel_err(&s.to_array(), &x) < 1e-6);
    }
}

/// Total virions obey `W' = beta I - d3 W`; integrate that scalar equation
/// by variation of constants with Gauss-Legendre quadrature on `I(t)`.
#[test]
fn total_virion_balance() {
    let p = Preset::Table1.params();
    let eff = TherapyEfficacies::new(0.6, 0.4, 0.5).unwrap();
    let tr = integrate(&p, &eff, 0.75, &start(), &IntegrationConfig::new(0.01, 50.0)).unwrap();
    let (beta, d3) = (p.beta(), p.d3());
    let nodes = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
    let weights = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];
    let t_end = 50.0;
    let w0 = start().values.viral_load();
    let mut integral = 0.0;
    let n = 5000;
    let h = t_end / n as f64;
    for k in 0..n {
        let mid = (k as f64 + 0.5) * h;
        for (x, w) in nodes.iter().zip(weights) {
            let s = mid + 0.5 * h * x;
            let i = interpolate(&tr, s).unwrap().i_cells();
            integral += 0.5 * h * w * (-d3 * (t_end - s)).exp() * beta * i;
        }
    }
    let expected = (-d3 * t_end).exp() * w0 + integral;
    let got = tr.final_state().viral_load();
    assert!((got - expected).abs() < 1e-6 * expected, "{got} vs {expected}");
}

#[test]
fn cleared_infection_reaches_uninfected_point() {
    let p = Preset::Table1.params();
    let eff = TherapyEfficacies::new(0.8, 0.8, 0.5).unwrap();
    let tr = integrate(&p, &eff, 22.0 / 24.0, &start(), &IntegrationConfig::new(0.01, 200.0)).unwrap();
    let f = tr.final_state();
    let t_hat = uninfected_equilibrium(&p);
    assert!((f.t_cells() - t_hat).abs() < 1e-3 * t_hat);
    assert!(f.i_cells() < 1e-3 * t_hat && f.viral_load() < 1e-3 * t_hat);
    assert_eq!(classify_longrun(&tr, &p, &eff, 1e-3), LongRun::ToE1);
}

fn late_amplitude(tr: &Trajectory, from: f64) -> f64 {
    let idx = tr.times.partition_point(|&t| t < from);
    let vals: Vec<f64> = tr.states[idx..].iter().map(|s| s.t_cells()).collect();
    vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min)
}

#[test]
fn small_perturbation_decays_below_critical_delay() {
    let p = Preset::Table2.params();
    let eff = TherapyEfficacies::new(0.5, 0.7, 0.81).unwrap();
    let cc = char_coefficients(&p, &eff).unwrap();
    let w0 = omega_analysis(&cc).omega0.unwrap();
    let tau0 = critical_delays(&cc, w0, 0).unwrap()[0];
    let e2 = endemic_equilibrium(&p, &eff).unwrap().state.to_array();
    let mut x = e2;
    x[0] *= 1.0 + 1e-6;
    let h = HistorySpec::constant(SystemState::new(x[0], x[1], x[2], x[3]).unwrap());
    let tr = integrate(&p, &eff, 0.5 * tau0, &h, &IntegrationConfig::new(0.05, 1500.0)).unwrap();
    // Envelope over successive 300-day windows shrinks.
    let amps: Vec<f64> = (0..5)
        .map(|k| {
            let lo = tr.times.partition_point(|&t| t < 300.0 * k as f64);
            let hi = tr.times.partition_point(|&t| t < 300.0 * (k + 1) as f64);
            tr.states[lo..hi]
                .iter()
                .map(|s| (s.t_cells() - e2[0]).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(amps.windows(2).all(|w| w[1] < w[0]), "{amps:?}");
    assert!(late_amplitude(&tr, 1200.0) < 1e-6 * e2[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    /// Initial cells stay within the carrying capacity and the step within
    /// the explicit stability limit of the fastest rate.
    #[test]
    fn trajectories_stay_non_negative(
        e1 in 0.0f64..0.99, er in 0.0f64..0.99, c in 0.01f64..0.99,
        tau in 0.0f64..2.0, table in prop::bool::ANY,
        t_frac in 0.0f64..1.0, i_frac in 0.0f64..1.0, v0 in 0.0f64..1e7,
    ) {
        let p = if table { Preset::Table1.params() } else { Preset::Table2.params() };
        let eff = TherapyEfficacies::new(e1, er, c).unwrap();
        let t0 = t_frac * p.t_max();
        let i0 = i_frac * (p.t_max() - t0);
        let h = HistorySpec::constant(SystemState::new(t0, i0, v0, 0.0).unwrap());
        let dt = if tau > 0.0 { (tau / 16.0).min(0.01) } else { 0.01 };
        let tr = integrate(&p, &eff, tau, &h, &IntegrationConfig::new(dt, 30.0)).unwrap();
        for s in &tr.states {
            prop_assert!(s.to_array().iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn hermite_error_shrinks_sixteenfold(k in 1usize..40) {
        // Interval midpoints on both grids, with a much finer run as reference.
        let p = Preset::Table1.params();
        let eff = TherapyEfficacies::untreated();
        let fine = integrate(&p, &eff, 0.0, &start(), &IntegrationConfig::new(1e-4, 1.0)).unwrap();
        let err = |dt: f64, t: f64| {
            let tr = integrate(&p, &eff, 0.0, &start(), &IntegrationConfig::new(dt, 1.0)).unwrap();
            // Replace node data by reference values so only the interpolation
            // error remains.
            let mut nodes = tr.clone();
            for (j, tn) in tr.times.iter().enumerate() {
                let x = interpolate(&fine, *tn).unwrap();
                nodes.states[j] = x;
                nodes.derivs[j] = rhs(&x.to_array(), &x.to_array(), &p, &eff);
            }
            let exact = interpolate(&fine, t).unwrap().to_array();
            rel_err(&interpolate(&nodes, t).unwrap().to_array(), &exact)
        };
        let coarse = err(0.02, 0.02 * k as f64 + 0.01);
        let finer = err(0.01, 0.02 * k as f64 + 0.005);
        let ratio = coarse / finer;
        prop_assert!(ratio > 12.0 && ratio < 20.0, "ratio {}", ratio);
    }
}
