//! JSON run configuration and its mapping onto the solver types.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use cfe_core::grid::VolumeGrid;
use cfe_core::integrator::{project_initial, PositivityMode, StepControl, StepMethod};
use cfe_core::kernels::{CoagRate, FragRate, KernelPair};
use cfe_core::schemes::TruncationScheme;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    pub grid: GridSpec,
    pub scheme: SchemeSpec,
    pub step: StepSpec,
    pub initial: InitialSpec,
    pub t_final: f64,
    /// Snapshot cadence; defaults to every ledger sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub coag: CoagSpec,
    pub frag: FragSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoagSpec {
    Zero,
    Constant { c: f64 },
    Additive,
    Multiplicative,
    LinearSum { a: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FragSpec {
    Zero,
    Constant { c: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "type")]
    pub kind: GridKind,
    #[serde(rename = "R")]
    pub r: f64,
    pub cells: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Uniform,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeSpec {
    Conservative,
    NonconsCoag,
    NonconsBoth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub method: MethodSpec,
    pub dt: f64,
    pub dt_min: f64,
    pub positivity: PositivitySpec,
    pub sample_every: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivitySpec {
    Reject,
    Clip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    ExpDecay { lambda: f64 },
    MonodisperseCell { cell: usize, mass: f64 },
    CustomTable { path: String },
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::usage(format!(
                "config parse error at line {}, column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) {
            return Err(CliError::usage("t_final must be > 0"));
        }
        if let Some(se) = self.snapshot_every {
            if !(se > 0.0) {
                return Err(CliError::usage("snapshot_every must be > 0"));
            }
        }
        Ok(())
    }

    pub fn build_kernel(&self) -> Result<KernelPair<f64>> {
        let check = |v: f64, what: &str| -> Result<f64> {
            if !v.is_finite() || v < 0.0 {
                return Err(CliError::usage(format!(
                    "{what} parameter must be finite and nonnegative, got {v}"
                )));
            }
            Ok(v)
        };
        let (coag, coag_name) = match self.kernel.coag {
            CoagSpec::Zero => (CoagRate::Zero, "zero".to_string()),
            CoagSpec::Constant { c } => {
                let c = check(c, "constant")?;
                (CoagRate::Constant(c), format!("constant({c})"))
            }
            CoagSpec::Additive => (CoagRate::Additive, "additive".to_string()),
            CoagSpec::Multiplicative => (CoagRate::Multiplicative, "multiplicative".to_string()),
            CoagSpec::LinearSum { a } => {
                let a = check(a, "linear_sum")?;
                (CoagRate::LinearSum(a), format!("linear_sum({a})"))
            }
        };
        let (frag, frag_name) = match self.kernel.frag {
            FragSpec::Zero => (FragRate::Zero, "zero".to_string()),
            FragSpec::Constant { c } => {
                let c = check(c, "constant_frag")?;
                (FragRate::Constant(c), format!("constant_frag({c})"))
            }
        };
        // canonical names: a pure side keeps the builtin family name
        let name = match (&coag, &frag) {
            (CoagRate::Zero, FragRate::Zero) => "zero".to_string(),
            (_, FragRate::Zero) => coag_name,
            (CoagRate::Zero, _) => frag_name,
            _ => format!("{coag_name}+{frag_name}"),
        };
        Ok(KernelPair::from_parts(coag, frag, name))
    }

    pub fn build_grid(&self) -> Result<Arc<VolumeGrid<f64>>> {
        let g = match self.grid.kind {
            GridKind::Uniform => VolumeGrid::uniform(self.grid.r, self.grid.cells),
            GridKind::Geometric => {
                let fw = self
                    .grid
                    .first_width
                    .unwrap_or(self.grid.r / (4.0 * self.grid.cells as f64));
                VolumeGrid::geometric(self.grid.r, self.grid.cells, fw)
            }
        }
        .map_err(|e| CliError::usage(format!("grid: {e}")))?;
        Ok(Arc::new(g))
    }

    pub fn scheme(&self) -> TruncationScheme {
        match self.scheme {
            SchemeSpec::Conservative => TruncationScheme::ConservativeBoth,
            SchemeSpec::NonconsCoag => TruncationScheme::NonConsCoagConsFrag,
            SchemeSpec::NonconsBoth => TruncationScheme::NonConsBoth,
        }
    }

    pub fn build_ctl(&self) -> Result<StepControl<f64>> {
        let ctl = StepControl {
            method: match self.step.method {
                MethodSpec::Euler => StepMethod::Euler,
                MethodSpec::Rk4 => StepMethod::Rk4,
            },
            dt: self.step.dt,
            dt_min: self.step.dt_min,
            positivity: match self.step.positivity {
                PositivitySpec::Reject => PositivityMode::RejectAndHalve,
                PositivitySpec::Clip => PositivityMode::Clip,
            },
            sample_every: self.step.sample_every,
        };
        ctl.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(ctl)
    }

    pub fn initial_values(&self, grid: &VolumeGrid<f64>) -> Result<Vec<f64>> {
        match &self.initial {
            InitialSpec::ExpDecay { lambda } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(CliError::usage("exp_decay lambda must be > 0"));
                }
                let lam = *lambda;
                Ok(project_initial(grid, |y: f64| (-lam * y).exp()))
            }
            InitialSpec::MonodisperseCell { cell, mass } => {
                if *cell >= grid.cell_count() {
                    return Err(CliError::usage(format!(
                        "monodisperse cell {cell} out of range (grid has {})",
                        grid.cell_count()
                    )));
                }
                if !(mass.is_finite() && *mass >= 0.0) {
                    return Err(CliError::usage("monodisperse mass must be nonnegative"));
                }
                let mut v = vec![0.0; grid.cell_count()];
                v[*cell] = mass / (grid.pivots()[*cell] * grid.widths()[*cell]);
                Ok(v)
            }
            InitialSpec::CustomTable { path } => {
                let table = read_table(Path::new(path))?;
                Ok(project_initial(grid, |y: f64| interp(&table, y)))
            }
        }
    }
}

/// Reads a two-column (y, g) CSV table, with an optional header line.
pub fn read_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read table {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let a = parts.next().unwrap_or("").trim();
        let b = parts.next().unwrap_or("").trim();
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(y), Ok(g)) => rows.push((y, g)),
            _ if lineno == 0 => continue, // header
            _ => {
                return Err(CliError::usage(format!(
                    "table {} line {}: expected 'y,g' numbers",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    if rows.len() < 2 {
        return Err(CliError::usage("table needs at least two rows"));
    }
    if !rows.windows(2).all(|w| w[1].0 > w[0].0) {
        return Err(CliError::usage(
            "table y-values must be strictly increasing",
        ));
    }
    if rows.iter().any(|&(_, g)| !g.is_finite() || g < 0.0) {
        return Err(CliError::usage(
            "table densities must be finite and nonnegative",
        ));
    }
    Ok(rows)
}

/// Piecewise-linear interpolation, zero outside the table range.
fn interp(table: &[(f64, f64)], y: f64) -> f64 {
    let n = table.len();
    if y < table[0].0 || y > table[n - 1].0 {
        return 0.0;
    }
    let idx = table.partition_point(|&(x, _)| x <= y);
    if idx == 0 {
        return table[0].1;
    }
    if idx >= n {
        return table[n - 1].1;
    }
    let (x0, g0) = table[idx - 1];
    let (x1, g1) = table[idx];
    g0 + (g1 - g0) * (y - x0) / (x1 - x0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "kernel": {"coag": {"family": "constant", "c": 1.0},
                        "frag": {"family": "zero"}},
            "grid": {"type": "geometric", "R": 20.0, "cells": 40},
            "scheme": "conservative",
            "step": {"method": "rk4", "dt": 0.01, "dt_min": 1e-9,
                      "positivity": "reject", "sample_every": 0.1},
            "initial": {"type": "exp_decay", "lambda": 1.0},
            "t_final": 1.0
        })
    }

    #[test]
    fn parses_and_builds() {
        let cfg: RunConfig = serde_json::from_value(minimal_json()).unwrap();
        cfg.validate().unwrap();
        let kp = cfg.build_kernel().unwrap();
        assert_eq!(kp.name, "constant(1)");
        let grid = cfg.build_grid().unwrap();
        assert_eq!(grid.cell_count(), 40);
        // default first_width = R/(4 cells)
        assert!((grid.widths()[0] - 20.0 / 160.0).abs() < 1e-9);
        cfg.build_ctl().unwrap();
        let vals = cfg.initial_values(&grid).unwrap();
        assert_eq!(vals.len(), 40);
    }

    #[test]
    fn combined_kernel_name() {
        let mut v = minimal_json();
        v["kernel"]["frag"] = serde_json::json!({"family": "constant", "c": 1.0});
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(
            cfg.build_kernel().unwrap().name,
            "constant(1)+constant_frag(1)"
        );
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = minimal_json();
        v["grid"]["typo"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn monodisperse_initial_puts_mass_in_one_cell() {
        let mut v = minimal_json();
        v["initial"] = serde_json::json!({"type": "monodisperse_cell", "cell": 3, "mass": 2.0});
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        let grid = cfg.build_grid().unwrap();
        let vals = cfg.initial_values(&grid).unwrap();
        let m1: f64 = vals
            .iter()
            .zip(grid.pivots())
            .zip(grid.widths())
            .map(|((&g, &p), &w)| g * p * w)
            .sum();
        assert!((m1 - 2.0).abs() < 1e-12);
        assert_eq!(vals.iter().filter(|&&g| g > 0.0).count(), 1);
    }

    #[test]
    fn interp_is_linear_and_zero_outside() {
        let table = vec![(0.0, 1.0), (1.0, 3.0), (2.0, 0.0)];
        assert_eq!(interp(&table, 0.5), 2.0);
        assert_eq!(interp(&table, 1.5), 1.5);
        assert_eq!(interp(&table, -0.1), 0.0);
        assert_eq!(interp(&table, 2.1), 0.0);
    }
}
