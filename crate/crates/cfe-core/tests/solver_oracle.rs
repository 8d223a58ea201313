//! End-to-end solver runs validated against the closed-form oracles.

use std::sync::Arc;

use cfe_core::grid::VolumeGrid;
use cfe_core::integrator::{run, PositivityMode, StepControl, StepMethod};
use cfe_core::kernels::{make_builtin, BuiltinFamily};
use cfe_core::oracles::{compare, OracleCase};
use cfe_core::schemes::TruncationScheme;

fn rk4_ctl(dt: f64, sample_every: f64) -> StepControl<f64> {
    StepControl {
        method: StepMethod::Rk4,
        dt,
        dt_min: 1e-9,
        positivity: PositivityMode::RejectAndHalve,
        sample_every,
    }
}

#[test]
fn constant_coagulation_tracks_oracle() {
    // K = 1, F = 0, g_in = e^-y on (0, 200] with 400 geometric cells
    let grid = Arc::new(VolumeGrid::geometric(200.0, 400, 0.125).unwrap());
    let kp = make_builtin::<f64>(BuiltinFamily::Constant(1.0)).unwrap();
    let traj = run(
        |y: f64| (-y).exp(),
        grid,
        &kp,
        TruncationScheme::ConservativeBoth,
        &rk4_ctl(0.01, 0.1),
        2.0,
    )
    .unwrap();
    let rep = compare(&traj, &OracleCase::constant_coag(), &kp, &[2.0]).unwrap();
    assert!(rep.m0_rel_err < 0.01, "M0 err {}", rep.m0_rel_err);
    assert!(rep.m1_rel_err < 0.005, "M1 err {}", rep.m1_rel_err);
    // M0(2) = 0.5
    let m0_end = *traj.ledger.m0.last().unwrap();
    assert!((m0_end - 0.5).abs() < 0.005, "M0(2) = {m0_end}");
}

#[test]
fn binary_fragmentation_tracks_oracle() {
    // K = 0, F = 2, g_in = e^-y on (0, 100]
    let grid = Arc::new(VolumeGrid::geometric(100.0, 400, 0.005).unwrap());
    let kp = make_builtin::<f64>(BuiltinFamily::ConstantFrag(2.0)).unwrap();
    let traj = run(
        |y: f64| (-y).exp(),
        grid,
        &kp,
        TruncationScheme::ConservativeBoth,
        &rk4_ctl(0.01, 0.1),
        1.0,
    )
    .unwrap();
    let rep = compare(&traj, &OracleCase::binary_frag(), &kp, &[1.0]).unwrap();
    assert!(rep.m0_rel_err < 0.01, "M0 err {}", rep.m0_rel_err);
    assert!(rep.m1_rel_err < 0.005, "M1 err {}", rep.m1_rel_err);
    // M0(1) = 2
    let m0_end = *traj.ledger.m0.last().unwrap();
    assert!((m0_end - 2.0).abs() < 0.02, "M0(1) = {m0_end}");
}

#[test]
fn density_linf_error_stays_small_for_coagulation() {
    let grid = Arc::new(VolumeGrid::geometric(200.0, 400, 0.125).unwrap());
    let kp = make_builtin::<f64>(BuiltinFamily::Constant(1.0)).unwrap();
    let traj = run(
        |y: f64| (-y).exp(),
        grid,
        &kp,
        TruncationScheme::NonConsCoagConsFrag,
        &rk4_ctl(0.01, 0.5),
        2.0,
    )
    .unwrap();
    let rep = compare(&traj, &OracleCase::constant_coag(), &kp, &[1.0, 2.0]).unwrap();
    for (t, err) in rep.density_rel_linf_at_times {
        assert!(err < 0.05, "density L-inf error {err} at t={t}");
    }
}
