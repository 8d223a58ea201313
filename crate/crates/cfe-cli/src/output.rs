//! CSV writers. Locale-independent by construction: '.' decimal separator
//! via Rust's float Display (shortest round-trip form), LF line endings,
//! fixed headers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cfe_core::diagnostics::MassLedger;
use cfe_core::schemes::DensityState;

use crate::error::{CliError, Result};

pub const LEDGER_HEADER: &str = "t,M0,M1,accumulated_loss,clipped_mass,frag_created_mass";
pub const SNAPSHOT_HEADER: &str = "pivot,width,g";
pub const CONVERGENCE_HEADER: &str = "R,final_M1,final_accumulated_loss,loss_fraction,note";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| CliError::solver(format!("cannot write {}: {e}", path.display())))
}

pub fn ledger_csv(ledger: &MassLedger<f64>) -> String {
    let mut out = String::new();
    out.push_str(LEDGER_HEADER);
    out.push('\n');
    for k in 0..ledger.times.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            ledger.times[k],
            ledger.m0[k],
            ledger.m1[k],
            ledger.accumulated_loss[k],
            ledger.clipped_mass[k],
            ledger.frag_created_mass[k]
        );
    }
    out
}

pub fn write_ledger(path: &Path, ledger: &MassLedger<f64>) -> Result<()> {
    write_file(path, &ledger_csv(ledger))
}

pub fn write_snapshot(path: &Path, state: &DensityState<f64>) -> Result<()> {
    let grid = state.grid();
    let mut out = String::new();
    out.push_str(SNAPSHOT_HEADER);
    out.push('\n');
    for i in 0..grid.cell_count() {
        let _ = writeln!(
            out,
            "{},{},{}",
            grid.pivots()[i],
            grid.widths()[i],
            state.values[i]
        );
    }
    write_file(path, &out)
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub r: f64,
    pub final_m1: f64,
    pub final_accumulated_loss: f64,
    pub loss_fraction: f64,
    pub note: String,
}

pub fn write_convergence(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(CONVERGENCE_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.r, row.final_m1, row.final_accumulated_loss, row.loss_fraction, row.note
        );
    }
    write_file(path, &out)
}
