//! Coagulation and fragmentation rate kernels.
//!
//! A [`KernelPair`] bundles the coagulation rate K(y,z), the fragmentation
//! rate F(y,z) and the tightest linear-growth constants k1, k2 for which
//! K(y,z) <= k1(1+y+z) and F(y,z) <= k2(1+y+z) hold. The multiplicative
//! kernel K = y*z admits no such constant and carries the explicit
//! [`GrowthBound::NoLinearBound`] sentinel; convergence tooling refuses
//! vanishing-mass-loss claims for it.
//!
//! All built-ins are total on [0, inf)^2 (grid edges touch 0) and exactly
//! symmetric. Evaluation is pure and stateless; call from as many workers as
//! you like.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CfeError, Result};
use crate::scalar::{real, Scalar};

/// Linear-growth constant for a kernel, or the explicit "no linear bound"
/// flag. The flag is not a float infinity: it never enters arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GrowthBound<S> {
    Finite(S),
    NoLinearBound,
}

impl<S: Scalar> GrowthBound<S> {
    pub fn is_finite(self) -> bool {
        matches!(self, GrowthBound::Finite(_))
    }

    pub fn finite(self) -> Option<S> {
        match self {
            GrowthBound::Finite(v) => Some(v),
            GrowthBound::NoLinearBound => None,
        }
    }
}

/// Coagulation rate families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoagRate<S> {
    Zero,
    /// K(y,z) = c
    Constant(S),
    /// K(y,z) = y + z
    Additive,
    /// K(y,z) = y * z
    Multiplicative,
    /// K(y,z) = a * (1 + y + z), the extremal kernel for the linear bound.
    LinearSum(S),
}

impl<S: Scalar> CoagRate<S> {
    #[inline]
    pub fn eval(&self, y: S, z: S) -> S {
        match *self {
            CoagRate::Zero => S::zero(),
            CoagRate::Constant(c) => c,
            CoagRate::Additive => y + z,
            CoagRate::Multiplicative => y * z,
            // 1 + (y+z) keeps evaluation exactly symmetric in (y, z)
            CoagRate::LinearSum(a) => a * (S::one() + (y + z)),
        }
    }

    fn tightest_k1(&self) -> GrowthBound<S> {
        match *self {
            CoagRate::Zero => GrowthBound::Finite(S::zero()),
            // sup c/(1+y+z) = c at the origin
            CoagRate::Constant(c) => GrowthBound::Finite(c),
            // sup (y+z)/(1+y+z) -> 1
            CoagRate::Additive => GrowthBound::Finite(S::one()),
            // yz/(1+y+z) is unbounded
            CoagRate::Multiplicative => GrowthBound::NoLinearBound,
            CoagRate::LinearSum(a) => GrowthBound::Finite(a),
        }
    }
}

/// Fragmentation rate families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FragRate<S> {
    Zero,
    /// F(y,z) = c
    Constant(S),
}

impl<S: Scalar> FragRate<S> {
    #[inline]
    pub fn eval(&self, _y: S, _z: S) -> S {
        match *self {
            FragRate::Zero => S::zero(),
            FragRate::Constant(c) => c,
        }
    }

    fn tightest_k2(&self) -> GrowthBound<S> {
        match *self {
            FragRate::Zero => GrowthBound::Finite(S::zero()),
            FragRate::Constant(c) => GrowthBound::Finite(c),
        }
    }
}

/// A coagulation/fragmentation kernel pair with growth metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair<S> {
    pub coag: CoagRate<S>,
    pub frag: FragRate<S>,
    /// Tightest constant with K(y,z) <= k1(1+y+z), or the sentinel.
    pub k1: GrowthBound<S>,
    /// Tightest constant with F(y,z) <= k2(1+y+z), or the sentinel.
    pub k2: GrowthBound<S>,
    pub name: String,
}

/// Built-in kernel families selectable by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinFamily {
    /// K = c, F = 0
    Constant(f64),
    /// K = y + z, F = 0
    Additive,
    /// K = y z, F = 0; declared not H3-admissible.
    Multiplicative,
    /// K = a(1 + y + z), F = 0
    LinearSum(f64),
    /// K = 0, F = c
    ConstantFrag(f64),
    /// K = 0, F = 0
    Zero,
}

/// Builds one of the built-in kernel pairs with its tightest growth
/// constants. Family parameters must be finite and nonnegative.
pub fn make_builtin<S: Scalar>(family: BuiltinFamily) -> Result<KernelPair<S>> {
    let check_param = |p: f64, what: &str| -> Result<S> {
        if !p.is_finite() || p < 0.0 {
            return Err(CfeError::invalid(format!(
                "{what} parameter must be finite and nonnegative, got {p}"
            )));
        }
        Ok(real(p))
    };
    let (coag, frag, name) = match family {
        BuiltinFamily::Constant(c) => {
            let c = check_param(c, "constant")?;
            (
                CoagRate::Constant(c),
                FragRate::Zero,
                format!("constant({c})"),
            )
        }
        BuiltinFamily::Additive => (CoagRate::Additive, FragRate::Zero, "additive".to_string()),
        BuiltinFamily::Multiplicative => (
            CoagRate::Multiplicative,
            FragRate::Zero,
            "multiplicative".to_string(),
        ),
        BuiltinFamily::LinearSum(a) => {
            let a = check_param(a, "linear_sum")?;
            (
                CoagRate::LinearSum(a),
                FragRate::Zero,
                format!("linear_sum({a})"),
            )
        }
        BuiltinFamily::ConstantFrag(c) => {
            let c = check_param(c, "constant_frag")?;
            (
                CoagRate::Zero,
                FragRate::Constant(c),
                format!("constant_frag({c})"),
            )
        }
        BuiltinFamily::Zero => (CoagRate::Zero, FragRate::Zero, "zero".to_string()),
    };
    Ok(KernelPair {
        k1: coag.tightest_k1(),
        k2: frag.tightest_k2(),
        coag,
        frag,
        name,
    })
}

impl<S: Scalar> KernelPair<S> {
    /// Combines the coagulation side of one family with the fragmentation
    /// side of another (run configs name the two sides independently).
    pub fn from_parts(coag: CoagRate<S>, frag: FragRate<S>, name: impl Into<String>) -> Self {
        KernelPair {
            k1: coag.tightest_k1(),
            k2: frag.tightest_k2(),
            coag,
            frag,
            name: name.into(),
        }
    }

    /// Raw constructor used by tests to build deliberately broken pairs.
    #[cfg(test)]
    pub(crate) fn raw(
        coag: CoagRate<S>,
        frag: FragRate<S>,
        k1: GrowthBound<S>,
        k2: GrowthBound<S>,
        name: &str,
    ) -> Self {
        KernelPair {
            coag,
            frag,
            k1,
            k2,
            name: name.to_string(),
        }
    }

    #[inline]
    pub fn coag(&self, y: S, z: S) -> S {
        self.coag.eval(y, z)
    }

    #[inline]
    pub fn frag(&self, y: S, z: S) -> S {
        self.frag.eval(y, z)
    }

    /// True when both growth constants are finite, i.e. the pair satisfies
    /// the linear-growth hypotheses the convergence theorem needs.
    pub fn h3_h4_admissible(&self) -> bool {
        self.k1.is_finite() && self.k2.is_finite()
    }
}

/// Result of sampling-based admissibility checks.
#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    pub symmetric: bool,
    pub h3_ok: bool,
    pub h4_ok: bool,
    /// max over samples of K/(k1(1+y+z)); for a NoLinearBound k1 this is the
    /// unnormalized sup of K/(1+y+z) and h3_ok is false by declaration.
    pub worst_coag_ratio: f64,
    pub worst_frag_ratio: f64,
    pub worst_ratio: f64,
}

const RATIO_SLACK: f64 = 1e-12;

/// Samples both kernels on a deterministic pseudo-random set of points in
/// (0, domain_max]^2 (always including the far corner) and checks symmetry
/// and the linear growth bounds against the declared constants.
pub fn check_admissibility<S: Scalar>(
    kp: &KernelPair<S>,
    sample_count: usize,
    domain_max: f64,
    seed: u64,
) -> Result<AdmissibilityReport> {
    if sample_count < 1 {
        return Err(CfeError::invalid("sample_count must be >= 1"));
    }
    if !(domain_max > 0.0) {
        return Err(CfeError::invalid("domain_max must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(sample_count + 1);
    points.push((domain_max, domain_max));
    for _ in 0..sample_count {
        let y: f64 = rng.gen_range(0.0..domain_max) + domain_max * 1e-12;
        let z: f64 = rng.gen_range(0.0..domain_max) + domain_max * 1e-12;
        points.push((y, z));
    }

    let mut symmetric = true;
    let mut worst_coag = 0.0f64;
    let mut worst_frag = 0.0f64;
    for &(y, z) in &points {
        let ys: S = real(y);
        let zs: S = real(z);
        for (val, what) in [
            (kp.coag(ys, zs), "coagulation"),
            (kp.frag(ys, zs), "fragmentation"),
        ] {
            if !val.is_finite() || val < S::zero() {
                return Err(CfeError::KernelEval {
                    y,
                    z,
                    detail: format!("{what} kernel returned {val}"),
                });
            }
        }
        if kp.coag(ys, zs) != kp.coag(zs, ys) || kp.frag(ys, zs) != kp.frag(zs, ys) {
            symmetric = false;
        }
        let lin = 1.0 + (y + z);
        let coag = kp.coag(ys, zs).as_f64();
        let frag = kp.frag(ys, zs).as_f64();
        let coag_ratio = match kp.k1 {
            GrowthBound::Finite(k1) if k1.as_f64() > 0.0 => coag / (k1.as_f64() * lin),
            GrowthBound::Finite(_) => {
                // k1 == 0 declares a vanishing kernel; any positive value violates it.
                if coag == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            GrowthBound::NoLinearBound => coag / lin,
        };
        let frag_ratio = match kp.k2 {
            GrowthBound::Finite(k2) if k2.as_f64() > 0.0 => frag / (k2.as_f64() * lin),
            GrowthBound::Finite(_) => {
                if frag == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            GrowthBound::NoLinearBound => frag / lin,
        };
        worst_coag = worst_coag.max(coag_ratio);
        worst_frag = worst_frag.max(frag_ratio);
    }

    let h3_ok = kp.k1.is_finite() && worst_coag <= 1.0 + RATIO_SLACK;
    let h4_ok = kp.k2.is_finite() && worst_frag <= 1.0 + RATIO_SLACK;
    Ok(AdmissibilityReport {
        symmetric,
        h3_ok,
        h4_ok,
        worst_coag_ratio: worst_coag,
        worst_frag_ratio: worst_frag,
        worst_ratio: worst_coag.max(worst_frag),
    })
}
