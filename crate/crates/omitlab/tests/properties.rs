//! Cross-module invariants: the oracle–analytic equivalence over random
//! stable parameter sets (the central correctness property), and contract
//! checks on the bundled run configurations.

use proptest::prelude::*;
use std::path::{Path, PathBuf};

use omitlab::config::RunConfig;
use omitlab::model::{CavityOptics, DerivedCoupling, DriveConfig, MechanicalMode, OmitSystem};
use omitlab::oracle::{oracle_sweep, OracleSettings};
use omitlab::response::{beat_amplitude, SweepMode};

const OMEGA_M: f64 = 2.0 * std::f64::consts::PI * 355.6e3;
const KAPPA_T: f64 = 8.5e4;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// For every stable parameter set, the demodulated time-domain beat
    /// reproduces the analytic one to better than 1e-3 relative.
    #[test]
    fn oracle_matches_response_for_stable_systems(
        c in 0.0..20.0f64,
        red in prop::bool::ANY,
        offset_frac in -2.0..2.0f64,
        q in 300.0..2000.0f64,
    ) {
        // Blue-sideband systems must stay below threshold.
        let c = if red { c } else { c.min(0.9) };
        let delta = if red { OMEGA_M } else { -OMEGA_M };
        let mechanics = MechanicalMode::new(OMEGA_M, q, 45e-12, 1.0).unwrap();
        let optics = CavityOptics::new(KAPPA_T / 2.0, KAPPA_T / 2.0, 1.064e-6, 0.093).unwrap();
        let drive = DriveConfig::new(3e-3, delta, num_complex::Complex64::new(1.0, 0.0), delta).unwrap();
        let coupling = DerivedCoupling::from_cooperativity(&mechanics, &optics, &drive, c, 0.0).unwrap();
        let sys = OmitSystem::new(mechanics, optics, drive, coupling);

        let gamma_eff = mechanics.gamma_m * (1.0 + c);
        let omega = delta + offset_frac * gamma_eff;
        let points = oracle_sweep(&sys, &[omega], SweepMode::Locked, &OracleSettings::default()).unwrap();
        prop_assert!(!points[0].diverged);
        let analytic = beat_amplitude(&sys.at_sweep_point(omega, omega)).unwrap();
        let demod = points[0].demod.as_ref().unwrap();
        let deviation = (demod.beat_complex - analytic).norm() / analytic.norm();
        prop_assert!(deviation < 1e-3, "deviation {deviation} at C = {c}, Ω = {omega}");
        prop_assert!(demod.residual < 1e-5, "residual {}", demod.residual);
    }
}

#[test]
fn bundled_configs_parse_build_and_round_trip() {
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().map(|e| e != "json").unwrap_or(true) {
            continue;
        }
        let cfg = RunConfig::from_path(&path)
            .unwrap_or_else(|e| panic!("{} does not parse: {e}", path.display()));
        let reparsed = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, reparsed, "{} round-trip", path.display());
        let sys = cfg
            .build_system()
            .unwrap_or_else(|e| panic!("{} does not build: {e}", path.display()));
        // Every bundled dataset sits deep in the resolved-sideband regime.
        assert!(
            sys.optics.kappa_t / sys.mechanics.omega_m < 0.05,
            "{}: κ_T/Ω_m = {}",
            path.display(),
            sys.optics.kappa_t / sys.mechanics.omega_m
        );
        assert!(cfg.grid().unwrap().len() == cfg.sweep.count);
        assert!(cfg.warnings().is_empty());
    }
}

#[test]
fn headline_config_matches_the_library_constants() {
    let cfg = RunConfig::from_path(&configs_dir().join("fig2.json")).unwrap();
    let sys = cfg.build_system().unwrap();
    assert!((sys.mechanics.omega_m - OMEGA_M).abs() < 1e-6 * OMEGA_M);
    assert!((sys.optics.kappa_t - KAPPA_T).abs() < 1e-9);
    assert!((sys.coupling.g_coupling - 9.4e-3 * OMEGA_M).abs() < 1e-6 * OMEGA_M);
    assert!((sys.optics.kappa_t / sys.mechanics.omega_m - 0.038).abs() < 1e-3);
}
