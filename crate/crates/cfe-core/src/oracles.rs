//! Closed-form reference solutions used to validate the solver end to end.
//!
//! Oracles are evaluated analytically, never by running the solver, so the
//! validation is not circular. Each density oracle carries a build-time
//! self-check: its own PDE residual, with the time derivative taken by
//! centered finite differences and the reaction integrals by composite
//! Simpson quadrature, must stay below 1e-8 at 100 pseudo-random (y, t)
//! points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CfeError, Result};
use crate::integrator::Trajectory;
use crate::kernels::KernelPair;
use crate::scalar::{real, Scalar};

/// Gelation time of the multiplicative-kernel case with exponential data.
pub const PRODUCT_KERNEL_GEL_TIME: f64 = 0.5;

const SELF_CHECK_TOL: f64 = 1e-8;

/// A reference case: kernel/initial configuration plus closed-form density
/// and moments, valid for all t >= 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleCase<S> {
    kind: OracleKind,
    _marker: std::marker::PhantomData<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OracleKind {
    /// K = 0, F = 0, g in = e^-y: nothing evolves.
    Frozen,
    /// K = 1, F = 0, g in = e^-y.
    ConstantCoag,
    /// K = 0, F = 2, g in = e^-y.
    BinaryFrag,
}

/// Density of the constant-coagulation case: 4/(2+t)^2 e^(-2y/(2+t));
/// M0(t) = 2/(2+t), M1 = 1.
pub fn constant_coag_oracle<S: Scalar>(y: S, t: S) -> S {
    let two: S = real(2.0);
    let a = two / (two + t);
    a * a * (-a * y).exp()
}

/// Density of the binary-fragmentation case: (1+t)^2 e^(-y(1+t));
/// M0(t) = 1+t, M1 = 1.
pub fn binary_frag_oracle<S: Scalar>(y: S, t: S) -> S {
    let lam = S::one() + t;
    lam * lam * (-y * lam).exp()
}

/// Second moment of the multiplicative-kernel case before gelation:
/// M2(t) = 2/(1-2t), valid for t < 0.5.
pub fn product_kernel_m2_oracle<S: Scalar>(t: S) -> Result<S> {
    let t_gel: S = real(PRODUCT_KERNEL_GEL_TIME);
    if t >= t_gel {
        return Err(CfeError::PostGelation {
            t: t.as_f64(),
            t_gel: PRODUCT_KERNEL_GEL_TIME,
        });
    }
    Ok(real::<S>(2.0) / (S::one() - real::<S>(2.0) * t))
}

impl<S: Scalar> OracleCase<S> {
    pub fn frozen() -> Self {
        OracleCase {
            kind: OracleKind::Frozen,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn constant_coag() -> Self {
        OracleCase {
            kind: OracleKind::ConstantCoag,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn binary_frag() -> Self {
        OracleCase {
            kind: OracleKind::BinaryFrag,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "frozen" => Some(Self::frozen()),
            "constant_coag" => Some(Self::constant_coag()),
            "binary_frag" => Some(Self::binary_frag()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            OracleKind::Frozen => "frozen",
            OracleKind::ConstantCoag => "constant_coag",
            OracleKind::BinaryFrag => "binary_frag",
        }
    }

    /// Name of the built-in kernel pair this case corresponds to.
    pub fn kernel_name(&self) -> &'static str {
        match self.kind {
            OracleKind::Frozen => "zero",
            OracleKind::ConstantCoag => "constant(1)",
            OracleKind::BinaryFrag => "constant_frag(2)",
        }
    }

    pub fn density(&self, y: S, t: S) -> S {
        match self.kind {
            OracleKind::Frozen => (-y).exp(),
            OracleKind::ConstantCoag => constant_coag_oracle(y, t),
            OracleKind::BinaryFrag => binary_frag_oracle(y, t),
        }
    }

    pub fn m0(&self, t: S) -> S {
        match self.kind {
            OracleKind::Frozen => S::one(),
            OracleKind::ConstantCoag => real::<S>(2.0) / (real::<S>(2.0) + t),
            OracleKind::BinaryFrag => S::one() + t,
        }
    }

    pub fn m1(&self, _t: S) -> S {
        S::one()
    }

    /// PDE residual self-check at 100 pseudo-random points; returns the
    /// maximum |residual| or a property-violation error above 1e-8.
    pub fn self_check(&self) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0C0A);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let y = rng.gen_range((1e-3f64).ln()..(15f64).ln()).exp();
            let t = rng.gen_range(0.1..4.0);
            let res = self.pde_residual(y, t);
            worst = worst.max(res.abs());
        }
        if worst >= SELF_CHECK_TOL {
            return Err(CfeError::PropertyViolation {
                check: format!("oracle self-check ({})", self.name()),
                witness: String::new(),
                detail: format!("max residual {worst}"),
            });
        }
        Ok(worst)
    }

    fn pde_residual(&self, y: f64, t: f64) -> f64 {
        let g = |y: f64, t: f64| -> f64 {
            OracleCase::<f64> {
                kind: self.kind,
                _marker: std::marker::PhantomData,
            }
            .density(y, t)
        };
        let delta = 1e-5;
        let dgdt = (g(y, t + delta) - g(y, t - delta)) / (2.0 * delta);
        let rhs = match self.kind {
            OracleKind::Frozen => 0.0,
            OracleKind::ConstantCoag => {
                // (1/2) int_0^y g(y-z) g(z) dz - g(y) int_0^inf g(z) dz
                let gain = 0.5 * simpson(|z| g(y - z, t) * g(z, t), 0.0, y, 2000);
                let zmax = y + 45.0 * (2.0 + t) / 2.0;
                let loss = g(y, t) * simpson(|z| g(z, t), 0.0, zmax, 20000);
                gain - loss
            }
            OracleKind::BinaryFrag => {
                // int_0^inf F g(y+z) dz - (1/2) int_0^y F dz g(y)
                let zmax = 45.0 / (1.0 + t);
                let gain = simpson(|z| 2.0 * g(y + z, t), 0.0, zmax, 20000);
                let loss = y * g(y, t);
                gain - loss
            }
        };
        dgdt - rhs
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n.is_multiple_of(2) { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Relative errors of a trajectory against an oracle case.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub m0_rel_err: f64,
    pub m1_rel_err: f64,
    /// (time, relative L-infinity density error on pivots) at request times.
    pub density_rel_linf_at_times: Vec<(f64, f64)>,
}

const INITIAL_MATCH_TOL: f64 = 1e-2;

/// Compares moments along the whole trajectory and the density at the
/// requested sample times. The kernel pair must be the oracle's case and the
/// initial sample must match the oracle's initial datum (projection error);
/// anything else is a configuration mismatch.
pub fn compare<S: Scalar>(
    traj: &Trajectory<S>,
    oracle: &OracleCase<S>,
    kp: &KernelPair<S>,
    density_times: &[S],
) -> Result<CompareReport> {
    if kp.name != oracle.kernel_name() {
        return Err(CfeError::invalid(format!(
            "kernel '{}' does not match oracle case '{}' (expects '{}')",
            kp.name,
            oracle.name(),
            oracle.kernel_name()
        )));
    }
    let grid = traj.grid();
    let init = &traj.samples[0];
    let mut worst0 = 0.0f64;
    let mut scale0 = 0.0f64;
    for (i, &p) in grid.pivots().iter().enumerate() {
        let exact = oracle.density(p, S::zero()).as_f64();
        worst0 = worst0.max((init.values[i].as_f64() - exact).abs());
        scale0 = scale0.max(exact.abs());
    }
    if worst0 > INITIAL_MATCH_TOL * scale0 {
        return Err(CfeError::invalid(format!(
            "initial datum does not match oracle '{}' (rel L-inf {:.3e})",
            oracle.name(),
            worst0 / scale0
        )));
    }

    let mut m0_err = 0.0f64;
    let mut m1_err = 0.0f64;
    for k in 0..traj.ledger.times.len() {
        let t = traj.ledger.times[k];
        let m0x = oracle.m0(t).as_f64();
        let m1x = oracle.m1(t).as_f64();
        m0_err = m0_err.max((traj.ledger.m0[k].as_f64() - m0x).abs() / m0x.abs());
        m1_err = m1_err.max((traj.ledger.m1[k].as_f64() - m1x).abs() / m1x.abs());
    }

    let mut density = Vec::with_capacity(density_times.len());
    for &t in density_times {
        let idx = traj
            .sample_index_at(t)
            .ok_or_else(|| CfeError::invalid(format!("t={t} is not a sample time")))?;
        let s = &traj.samples[idx];
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for (i, &p) in grid.pivots().iter().enumerate() {
            let exact = oracle.density(p, t).as_f64();
            worst = worst.max((s.values[i].as_f64() - exact).abs());
            scale = scale.max(exact.abs());
        }
        density.push((t.as_f64(), worst / scale.max(f64::MIN_POSITIVE)));
    }

    Ok(CompareReport {
        m0_rel_err: m0_err,
        m1_rel_err: m1_err,
        density_rel_linf_at_times: density,
    })
}
