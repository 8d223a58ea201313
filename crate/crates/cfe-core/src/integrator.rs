//! Explicit time stepping with positivity guards and ledger accumulation.
//!
//! The boundary-loss, clipped-mass and fragmentation-imbalance rates are
//! accumulated with the same stage weights as the state update (rectangle for
//! Euler, the 1/6(1,2,2,1) weights for RK4). Because the discrete mass rate
//! identities hold exactly per stage, this makes the ledger identity
//! M1(0) - M1(t) = accumulated_loss(t) hold to rounding rather than O(dt).
//!
//! A run is sequential in time; rhs evaluation inside a step follows the
//! schemes module's deterministic parallel contract, so a run is a pure
//! function of its arguments.

use std::sync::Arc;

use crate::diagnostics::{m0, m1, MassLedger};
use crate::error::{CfeError, Result};
use crate::grid::VolumeGrid;
use crate::kernels::KernelPair;
use crate::scalar::{real, Scalar};
use crate::schemes::{assemble, frag_coefficients, DensityState, FragCoeffs, TruncationScheme};

/// Explicit stepper selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMethod {
    Euler,
    Rk4,
}

/// What to do when a step drives a cell density negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositivityMode {
    /// Retry the step with dt/2 down to dt_min, then fail.
    RejectAndHalve,
    /// Clip negative values to zero, booking the clipped mass.
    Clip,
}

/// Step-size and sampling control.
#[derive(Debug, Clone, Copy)]
pub struct StepControl<S> {
    pub method: StepMethod,
    pub dt: S,
    pub dt_min: S,
    pub positivity: PositivityMode,
    pub sample_every: S,
}

impl<S: Scalar> StepControl<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_min > S::zero()) || !(self.dt >= self.dt_min) {
            return Err(CfeError::invalid(format!(
                "step control requires dt >= dt_min > 0, got dt={} dt_min={}",
                self.dt, self.dt_min
            )));
        }
        if !(self.sample_every >= self.dt) {
            return Err(CfeError::invalid(format!(
                "sample_every {} must be >= dt {}",
                self.sample_every, self.dt
            )));
        }
        Ok(())
    }
}

/// Time-sampled solution with the mass ledger.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    /// Snapshots at 0, sample_every, 2 sample_every, ..., T.
    pub samples: Vec<DensityState<S>>,
    pub ledger: MassLedger<S>,
    /// Accumulated number inflation from mass-exact out-of-bracket deposits.
    pub number_adjust_total: S,
}

impl<S: Scalar> Trajectory<S> {
    pub fn grid(&self) -> &Arc<VolumeGrid<S>> {
        self.samples[0].grid()
    }

    pub fn final_state(&self) -> &DensityState<S> {
        self.samples.last().expect("trajectory has samples")
    }

    /// Index of the sample at time t (within 1e-9 relative), if recorded.
    pub fn sample_index_at(&self, t: S) -> Option<usize> {
        let tol = real::<S>(1e-9) * (t.abs() + S::one());
        self.samples.iter().position(|s| (s.time - t).abs() <= tol)
    }
}

/// One rhs evaluation reduced to what the stepper needs.
pub(crate) struct StageRates<S> {
    pub deriv: Vec<S>,
    pub boundary_loss: S,
    pub frag_mass_created: S,
    pub number_adjust: S,
}

/// Source of stage rates; the production impl wraps the schemes assembly,
/// tests inject synthetic right-hand sides.
pub(crate) trait RatesProvider<S> {
    fn rates(&self, values: &[S]) -> StageRates<S>;
}

pub(crate) struct SchemeRates<'a, S> {
    grid: &'a Arc<VolumeGrid<S>>,
    kp: &'a KernelPair<S>,
    scheme: TruncationScheme,
    coeffs: FragCoeffs<S>,
}

impl<'a, S: Scalar> SchemeRates<'a, S> {
    pub fn new(
        grid: &'a Arc<VolumeGrid<S>>,
        kp: &'a KernelPair<S>,
        scheme: TruncationScheme,
    ) -> Self {
        let coeffs = frag_coefficients(grid, kp, scheme);
        SchemeRates {
            grid,
            kp,
            scheme,
            coeffs,
        }
    }
}

impl<S: Scalar> RatesProvider<S> for SchemeRates<'_, S> {
    fn rates(&self, values: &[S]) -> StageRates<S> {
        let asm = assemble(self.grid, self.kp, values, self.scheme, &self.coeffs);
        StageRates {
            deriv: asm.breakdown.total,
            boundary_loss: asm.boundary_loss,
            frag_mass_created: asm.frag_mass_created,
            number_adjust: asm.number_adjust,
        }
    }
}

/// Stage-weighted ledger increments for one accepted step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepIncrements<S> {
    pub loss: S,
    pub frag_created: S,
    pub number_adjust: S,
    pub clipped_mass: S,
}

impl<S: Scalar> StepIncrements<S> {
    fn zero() -> Self {
        StepIncrements {
            loss: S::zero(),
            frag_created: S::zero(),
            number_adjust: S::zero(),
            clipped_mass: S::zero(),
        }
    }
}

pub(crate) struct StepOutcome<S> {
    pub values: Vec<S>,
    pub dt_taken: S,
    pub inc: StepIncrements<S>,
}

fn attempt<S: Scalar>(
    provider: &impl RatesProvider<S>,
    values: &[S],
    dt: S,
    method: StepMethod,
) -> (Vec<S>, StepIncrements<S>) {
    let n = values.len();
    match method {
        StepMethod::Euler => {
            let r1 = provider.rates(values);
            let next = (0..n).map(|i| values[i] + dt * r1.deriv[i]).collect();
            let inc = StepIncrements {
                loss: dt * r1.boundary_loss,
                frag_created: dt * r1.frag_mass_created,
                number_adjust: dt * r1.number_adjust,
                clipped_mass: S::zero(),
            };
            (next, inc)
        }
        StepMethod::Rk4 => {
            let half = dt / real(2.0);
            let sixth = dt / real(6.0);
            let two: S = real(2.0);
            let r1 = provider.rates(values);
            let s2: Vec<S> = (0..n).map(|i| values[i] + half * r1.deriv[i]).collect();
            let r2 = provider.rates(&s2);
            let s3: Vec<S> = (0..n).map(|i| values[i] + half * r2.deriv[i]).collect();
            let r3 = provider.rates(&s3);
            let s4: Vec<S> = (0..n).map(|i| values[i] + dt * r3.deriv[i]).collect();
            let r4 = provider.rates(&s4);
            let next = (0..n)
                .map(|i| {
                    values[i]
                        + sixth
                            * (r1.deriv[i] + two * r2.deriv[i] + two * r3.deriv[i] + r4.deriv[i])
                })
                .collect();
            let wsum = |a: S, b: S, c: S, d: S| sixth * (a + two * b + two * c + d);
            let inc = StepIncrements {
                loss: wsum(
                    r1.boundary_loss,
                    r2.boundary_loss,
                    r3.boundary_loss,
                    r4.boundary_loss,
                ),
                frag_created: wsum(
                    r1.frag_mass_created,
                    r2.frag_mass_created,
                    r3.frag_mass_created,
                    r4.frag_mass_created,
                ),
                number_adjust: wsum(
                    r1.number_adjust,
                    r2.number_adjust,
                    r3.number_adjust,
                    r4.number_adjust,
                ),
                clipped_mass: S::zero(),
            };
            (next, inc)
        }
    }
}

const NEG_TOL: f64 = 1e-14;

pub(crate) fn step_guarded<S: Scalar>(
    provider: &impl RatesProvider<S>,
    grid: &VolumeGrid<S>,
    values: &[S],
    ctl: &StepControl<S>,
    dt_request: S,
    t: S,
) -> Result<StepOutcome<S>> {
    let scale = values.iter().fold(S::zero(), |m, &v| m.max(v));
    let threshold = real::<S>(NEG_TOL) * scale;
    let mut dt = dt_request;
    loop {
        let (mut next, mut inc) = attempt(provider, values, dt, ctl.method);
        let worst = next.iter().fold(S::zero(), |m, &v| m.min(v));
        let reject = match ctl.positivity {
            PositivityMode::RejectAndHalve => worst < -threshold,
            PositivityMode::Clip => false,
        };
        if reject {
            let halved = dt / real(2.0);
            if halved < ctl.dt_min {
                return Err(CfeError::Stiffness {
                    t: t.as_f64(),
                    dt_min: ctl.dt_min.as_f64(),
                });
            }
            dt = halved;
            continue;
        }
        // clip residual (reject mode) or all (clip mode) negative values
        let mut clipped = S::zero();
        for (i, v) in next.iter_mut().enumerate() {
            if *v < S::zero() {
                clipped += grid.pivots()[i] * (-*v) * grid.widths()[i];
                *v = S::zero();
            }
        }
        inc.clipped_mass = clipped;
        return Ok(StepOutcome {
            values: next,
            dt_taken: dt,
            inc,
        });
    }
}

/// Advances the state by one explicit step of at most `dt` (the positivity
/// guard may accept a halved step; the returned state's time reflects the
/// actual advance).
pub fn step<S: Scalar>(
    s: &DensityState<S>,
    kp: &KernelPair<S>,
    scheme: TruncationScheme,
    ctl: &StepControl<S>,
    dt: S,
) -> Result<DensityState<S>> {
    if !(dt > S::zero()) {
        return Err(CfeError::invalid(format!("dt must be positive, got {dt}")));
    }
    ctl.validate()?;
    let provider = SchemeRates::new(s.grid(), kp, scheme);
    let out = step_guarded(&provider, s.grid(), &s.values, ctl, dt, s.time)?;
    DensityState::new(s.grid().clone(), out.values, s.time + out.dt_taken)
}

/// Cell averages of a density function by composite midpoint quadrature with
/// 8 sub-points per cell.
pub fn project_initial<S: Scalar>(grid: &VolumeGrid<S>, g_in: impl Fn(S) -> S) -> Vec<S> {
    let sub = 8;
    let subs: S = real(sub as f64);
    (0..grid.cell_count())
        .map(|i| {
            let lo = grid.edges()[i];
            let w = grid.widths()[i];
            let mut acc = S::zero();
            for k in 0..sub {
                let y = lo + w * (real::<S>(k as f64) + real(0.5)) / subs;
                acc += g_in(y);
            }
            acc / subs
        })
        .collect()
}

/// Integrates an initial density function to time `t_final`, recording
/// samples every `sample_every` and accumulating the mass ledger.
pub fn run<S: Scalar>(
    g_in: impl Fn(S) -> S,
    grid: Arc<VolumeGrid<S>>,
    kp: &KernelPair<S>,
    scheme: TruncationScheme,
    ctl: &StepControl<S>,
    t_final: S,
) -> Result<Trajectory<S>> {
    let values = project_initial(&grid, g_in);
    run_from_values(values, grid, kp, scheme, ctl, t_final)
}

/// As [`run`], starting from explicit cell values.
pub fn run_from_values<S: Scalar>(
    values: Vec<S>,
    grid: Arc<VolumeGrid<S>>,
    kp: &KernelPair<S>,
    scheme: TruncationScheme,
    ctl: &StepControl<S>,
    t_final: S,
) -> Result<Trajectory<S>> {
    ctl.validate()?;
    if !(t_final > S::zero()) {
        return Err(CfeError::invalid(format!(
            "t_final must be > 0, got {t_final}"
        )));
    }
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < S::zero() {
            return Err(CfeError::invalid(format!(
                "initial density must be finite and nonnegative, cell {i} has {v}"
            )));
        }
    }
    let state = DensityState::new(grid.clone(), values, S::zero())?;
    if !m0(&state).is_finite() || !m1(&state).is_finite() {
        return Err(CfeError::invalid("initial discrete M0/M1 not finite"));
    }

    let provider = SchemeRates::new(&grid, kp, scheme);
    let mut ledger = MassLedger::default();
    let mut acc = StepIncrements::<S>::zero();
    let mut samples = Vec::new();

    let push_row = |ledger: &mut MassLedger<S>,
                    samples: &mut Vec<DensityState<S>>,
                    state: &DensityState<S>,
                    acc: &StepIncrements<S>| {
        ledger.times.push(state.time);
        ledger.m0.push(m0(state));
        ledger.m1.push(m1(state));
        ledger.accumulated_loss.push(acc.loss);
        ledger.clipped_mass.push(acc.clipped_mass);
        ledger.frag_created_mass.push(acc.frag_created);
        samples.push(state.clone());
    };

    let mut current = state;
    push_row(&mut ledger, &mut samples, &current, &acc);

    let time_tol = real::<S>(1e-12).max(S::epsilon() * real(8.0)) * t_final.max(S::one());
    let mut sample_k: usize = 1;
    loop {
        let target = (real::<S>(sample_k as f64) * ctl.sample_every).min(t_final);
        while target - current.time > time_tol {
            let dt_try = ctl.dt.min(target - current.time);
            let out = step_guarded(&provider, &grid, &current.values, ctl, dt_try, current.time)?;
            let mut t_new = current.time + out.dt_taken;
            if (target - t_new).abs() <= time_tol {
                t_new = target;
            }
            current = DensityState::new(grid.clone(), out.values, t_new)?;
            acc.loss += out.inc.loss;
            acc.frag_created += out.inc.frag_created;
            acc.number_adjust += out.inc.number_adjust;
            acc.clipped_mass += out.inc.clipped_mass;
        }
        current.time = target;
        push_row(&mut ledger, &mut samples, &current, &acc);
        if (t_final - target).abs() <= time_tol {
            break;
        }
        sample_k += 1;
    }

    Ok(Trajectory {
        samples,
        ledger,
        number_adjust_total: acc.number_adjust,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{make_builtin, BuiltinFamily};

    fn ctl(method: StepMethod, dt: f64) -> StepControl<f64> {
        StepControl {
            method,
            dt,
            dt_min: 1e-9,
            positivity: PositivityMode::RejectAndHalve,
            sample_every: dt.max(0.1),
        }
    }

    #[test]
    fn zero_kernel_step_is_identity() {
        let grid = Arc::new(VolumeGrid::uniform(4.0, 8).unwrap());
        let vals: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let s = DensityState::new(grid.clone(), vals.clone(), 0.0).unwrap();
        let kp = make_builtin(BuiltinFamily::Zero).unwrap();
        for method in [StepMethod::Euler, StepMethod::Rk4] {
            for dt in [1e-3, 0.5, 10.0] {
                let mut c = ctl(method, dt);
                c.sample_every = dt;
                let out = step(&s, &kp, TruncationScheme::ConservativeBoth, &c, dt).unwrap();
                assert_eq!(out.values, vals);
                assert_eq!(out.time, dt);
            }
        }
    }

    // One Euler step on the frozen two-cell fragmentation example:
    // total = [1.125, -0.375], dt = 0.1.
    #[test]
    fn euler_step_hand_value() {
        let grid = Arc::new(VolumeGrid::uniform(2.0, 2).unwrap());
        let s = DensityState::new(grid.clone(), vec![1.0, 1.0], 0.0).unwrap();
        let kp = make_builtin(BuiltinFamily::ConstantFrag(2.0)).unwrap();
        let c = ctl(StepMethod::Euler, 0.1);
        let out = step(&s, &kp, TruncationScheme::ConservativeBoth, &c, 0.1).unwrap();
        assert!((out.values[0] - 1.1125).abs() < 1e-14);
        assert!((out.values[1] - 0.9625).abs() < 1e-14);
    }

    struct LinearDecay {
        rates: Vec<f64>,
    }

    impl RatesProvider<f64> for LinearDecay {
        fn rates(&self, values: &[f64]) -> StageRates<f64> {
            StageRates {
                deriv: values
                    .iter()
                    .zip(&self.rates)
                    .map(|(&v, &r)| -r * v)
                    .collect(),
                boundary_loss: 0.0,
                frag_mass_created: 0.0,
                number_adjust: 0.0,
            }
        }
    }

    // RK4 on g' = -p_i g reproduces exp(-p_i dt) to the fifth-order remainder.
    #[test]
    fn rk4_order_on_linear_decay() {
        let grid = Arc::new(VolumeGrid::uniform(4.0, 4).unwrap());
        let provider = LinearDecay {
            rates: grid.pivots().to_vec(),
        };
        let values = vec![1.0; 4];
        let c = StepControl {
            method: StepMethod::Rk4,
            dt: 0.2,
            dt_min: 1e-9,
            positivity: PositivityMode::RejectAndHalve,
            sample_every: 0.2,
        };
        let out = step_guarded(&provider, &grid, &values, &c, 0.2, 0.0).unwrap();
        for (i, &p) in grid.pivots().iter().enumerate() {
            let exact = (-p * 0.2f64).exp();
            let bound = (p * 0.2f64).powi(5) / 120.0 * 1.05 + 1e-15;
            assert!(
                (out.values[i] - exact).abs() <= bound,
                "cell {i}: err {} bound {}",
                (out.values[i] - exact).abs(),
                bound
            );
        }
        // halving dt shrinks the one-step error by ~2^5
        let err_at = |dt: f64| {
            let o = step_guarded(&provider, &grid, &values, &c, dt, 0.0).unwrap();
            (o.values[3] - (-grid.pivots()[3] * dt).exp()).abs()
        };
        let ratio = err_at(0.2) / err_at(0.1);
        assert!(ratio > 24.0 && ratio < 40.0, "order ratio {ratio}");
    }

    #[test]
    fn reject_and_halve_hits_stiffness_error() {
        // top-cell loss rate ~ p g: Euler with dt = 1 overshoots to negative
        let grid = Arc::new(VolumeGrid::uniform(50.0, 10).unwrap());
        let vals = vec![1.0; 10];
        let s = DensityState::new(grid.clone(), vals, 0.0).unwrap();
        let kp = make_builtin(BuiltinFamily::ConstantFrag(2.0)).unwrap();
        let c = StepControl {
            method: StepMethod::Euler,
            dt: 1.0,
            dt_min: 0.6,
            positivity: PositivityMode::RejectAndHalve,
            sample_every: 1.0,
        };
        let err = step(&s, &kp, TruncationScheme::ConservativeBoth, &c, 1.0).unwrap_err();
        assert!(matches!(err, CfeError::Stiffness { .. }));
    }

    #[test]
    fn reject_and_halve_recovers_with_smaller_steps() {
        let grid = Arc::new(VolumeGrid::uniform(50.0, 10).unwrap());
        let vals = vec![1.0; 10];
        let s = DensityState::new(grid.clone(), vals, 0.0).unwrap();
        let kp = make_builtin(BuiltinFamily::ConstantFrag(2.0)).unwrap();
        let c = StepControl {
            method: StepMethod::Euler,
            dt: 1.0,
            dt_min: 1e-6,
            positivity: PositivityMode::RejectAndHalve,
            sample_every: 1.0,
        };
        let out = step(&s, &kp, TruncationScheme::ConservativeBoth, &c, 1.0).unwrap();
        assert!(out.time < 1.0, "step must have been halved");
        assert!(out.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn clip_mode_books_clipped_mass() {
        let grid = Arc::new(VolumeGrid::uniform(50.0, 10).unwrap());
        let vals = vec![1.0; 10];
        let kp = make_builtin(BuiltinFamily::ConstantFrag(2.0)).unwrap();
        let c = StepControl {
            method: StepMethod::Euler,
            dt: 1.0,
            dt_min: 1e-6,
            positivity: PositivityMode::Clip,
            sample_every: 1.0,
        };
        let provider = SchemeRates::new(&grid, &kp, TruncationScheme::ConservativeBoth);
        let out = step_guarded(&provider, &grid, &vals, &c, 1.0, 0.0).unwrap();
        assert_eq!(out.dt_taken, 1.0);
        assert!(out.inc.clipped_mass > 0.0);
        assert!(out.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn run_zero_kernels_freezes_state_and_ledger() {
        let grid = Arc::new(VolumeGrid::geometric(20.0, 40, 0.125).unwrap());
        let kp = make_builtin(BuiltinFamily::Zero).unwrap();
        let c = StepControl {
            method: StepMethod::Rk4,
            dt: 0.05,
            dt_min: 1e-9,
            positivity: PositivityMode::RejectAndHalve,
            sample_every: 0.25,
        };
        let traj = run(
            |y: f64| (-y).exp(),
            grid,
            &kp,
            TruncationScheme::NonConsCoagConsFrag,
            &c,
            1.0,
        )
        .unwrap();
        assert_eq!(traj.ledger.times.len(), 5);
        assert_eq!(traj.samples.len(), 5);
        let first = &traj.samples[0];
        let last = traj.final_state();
        assert_eq!(first.values, last.values);
        assert!(traj.ledger.accumulated_loss.iter().all(|&l| l == 0.0));
        assert_eq!(traj.ledger.m1[0], traj.ledger.m1[4]);
        // strictly increasing sample times from 0
        assert_eq!(traj.ledger.times[0], 0.0);
        assert!(traj.ledger.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*traj.ledger.times.last().unwrap(), 1.0);
    }

    #[test]
    fn run_ledger_identity_short() {
        // M1(0) - M1(t) tracks the accumulated boundary loss to rounding
        let grid = Arc::new(VolumeGrid::geometric(10.0, 60, 0.05).unwrap());
        let kp = make_builtin(BuiltinFamily::Additive).unwrap();
        let c = StepControl {
            method: StepMethod::Rk4,
            dt: 0.01,
            dt_min: 1e-9,
            positivity: PositivityMode::RejectAndHalve,
            sample_every: 0.1,
        };
        let traj = run(
            |y: f64| (-y).exp(),
            grid,
            &kp,
            TruncationScheme::NonConsCoagConsFrag,
            &c,
            0.5,
        )
        .unwrap();
        let m1_in = traj.ledger.m1[0];
        for k in 0..traj.ledger.times.len() {
            let lhs = m1_in - traj.ledger.m1[k];
            let rhs = traj.ledger.accumulated_loss[k];
            assert!(
                (lhs - rhs).abs() <= 1e-12 * m1_in,
                "t={}: {lhs} vs {rhs}",
                traj.ledger.times[k]
            );
        }
        assert!(traj
            .ledger
            .accumulated_loss
            .windows(2)
            .all(|w| w[1] >= w[0]));
    }

    #[test]
    fn run_conserves_mass_for_conservative_scheme() {
        let grid = Arc::new(VolumeGrid::geometric(10.0, 60, 0.05).unwrap());
        let kp = make_builtin(BuiltinFamily::Additive).unwrap();
        let c = StepControl {
            method: StepMethod::Rk4,
            dt: 0.01,
            dt_min: 1e-9,
            positivity: PositivityMode::RejectAndHalve,
            sample_every: 0.1,
        };
        let traj = run(
            |y: f64| (-y).exp(),
            grid,
            &kp,
            TruncationScheme::ConservativeBoth,
            &c,
            0.5,
        )
        .unwrap();
        let m1_in = traj.ledger.m1[0];
        for &m in &traj.ledger.m1 {
            assert!((m - m1_in).abs() <= 1e-12 * m1_in);
        }
    }

    #[test]
    fn run_rejects_bad_inputs() {
        let grid = Arc::new(VolumeGrid::uniform(4.0, 4).unwrap());
        let kp = make_builtin(BuiltinFamily::Zero).unwrap();
        let c = ctl(StepMethod::Euler, 0.1);
        assert!(run(
            |_| f64::NAN,
            grid.clone(),
            &kp,
            TruncationScheme::ConservativeBoth,
            &c,
            1.0
        )
        .is_err());
        assert!(run(
            |_| 1.0,
            grid.clone(),
            &kp,
            TruncationScheme::ConservativeBoth,
            &c,
            -1.0
        )
        .is_err());
        let bad = StepControl {
            dt: 0.1,
            dt_min: 0.2,
            ..c
        };
        assert!(run(
            |_| 1.0,
            grid,
            &kp,
            TruncationScheme::ConservativeBoth,
            &bad,
            1.0
        )
        .is_err());
    }

    #[test]
    fn f32_run_smoke() {
        let grid = Arc::new(VolumeGrid::<f32>::geometric(10.0, 20, 0.125).unwrap());
        let kp = make_builtin::<f32>(BuiltinFamily::Constant(1.0)).unwrap();
        let c = StepControl {
            method: StepMethod::Rk4,
            dt: 0.05f32,
            dt_min: 1e-6,
            positivity: PositivityMode::RejectAndHalve,
            sample_every: 0.25,
        };
        let traj = run(
            |y: f32| (-y).exp(),
            grid,
            &kp,
            TruncationScheme::ConservativeBoth,
            &c,
            0.5f32,
        )
        .unwrap();
        let m1_in = traj.ledger.m1[0];
        let m1_end = *traj.ledger.m1.last().unwrap();
        assert!((m1_end - m1_in).abs() <= 1e-4 * m1_in);
    }
}
