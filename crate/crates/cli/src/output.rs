//! Comma-separated result files, one header row each.

use std::path::Path;

use clfkit::roa::RoaResult;
use clfkit::simulator::Trajectory;
use clfkit::trainer::HistoryRow;
use clfkit::verify::{GridField, VerificationReport};

use crate::error::CliError;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes `header` then every row of `rows`.
pub fn write_rows<I>(path: &Path, header: &[String], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::io(path, e))?;
    }
    finish(w, path)
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn write_history(path: &Path, history: &[HistoryRow<f64>]) -> Result<(), CliError> {
    let rows = history.iter().map(|r| {
        vec![
            r.epoch.to_string(),
            r.lyapunov.to_string(),
            r.range.to_string(),
            r.shaping.to_string(),
            r.violations.map(|v| v.to_string()).unwrap_or_default(),
        ]
    });
    write_rows(path, &header(&["epoch", "L_lya", "L_else", "L_shape", "violations"]), rows)
}

/// `x,y,V,Vdot` over a planar field.
pub fn write_grid(path: &Path, field: &GridField<f64>) -> Result<(), CliError> {
    if field.grid.dim() != 2 {
        return Err(CliError::Usage(format!("grid output needs a planar system, got dimension {}", field.grid.dim())));
    }
    let rows = (0..field.grid.len()).map(|i| {
        let p = field.grid.point(i);
        vec![p[0].to_string(), p[1].to_string(), field.values[i].to_string(), field.vdot[i].to_string()]
    });
    write_rows(path, &header(&["x", "y", "V", "Vdot"]), rows)
}

pub fn write_contour(path: &Path, contour: &[[f64; 2]]) -> Result<(), CliError> {
    let rows = contour.iter().map(|p| vec![p[0].to_string(), p[1].to_string()]);
    write_rows(path, &header(&["x", "y"]), rows)
}

pub fn write_roa(path: &Path, roa: &RoaResult<f64>, delta: f64) -> Result<(), CliError> {
    let row = vec![roa.level.to_string(), roa.area.to_string(), roa.verified.to_string(), roa.contour.len().to_string(), delta.to_string()];
    write_rows(path, &header(&["level", "area", "verified", "contour_points", "delta"]), [row])
}

pub fn write_verification(path: &Path, report: &VerificationReport<f64>) -> Result<(), CliError> {
    let row = vec![
        report.satisfiable.to_string(),
        report.violation_count.to_string(),
        report.max_violation.map(|v| v.to_string()).unwrap_or_default(),
        report.max_vdot.to_string(),
        report.checked.to_string(),
        report.delta.to_string(),
        report.r0.to_string(),
    ];
    write_rows(path, &header(&["satisfiable", "violation_count", "max_violation", "max_vdot", "checked", "delta", "r0"]), [row])
}

/// Recorded violations, worst first: `s0..s{n-1},vdot`.
pub fn write_violations(path: &Path, report: &VerificationReport<f64>, dim: usize) -> Result<(), CliError> {
    let mut cols: Vec<String> = (0..dim).map(|i| format!("s{i}")).collect();
    cols.push("vdot".into());
    let rows = report.violations.iter().map(|v| {
        let mut row: Vec<String> = v.state.iter().map(|x| x.to_string()).collect();
        row.push(v.vdot.to_string());
        row
    });
    write_rows(path, &cols, rows)
}

/// `t,s0..,u0..,V` per recorded step.
pub fn write_trajectory(path: &Path, traj: &Trajectory<f64>) -> Result<(), CliError> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..traj.dim).map(|i| format!("s{i}")));
    cols.extend((0..traj.control_dim).map(|i| format!("u{i}")));
    cols.push("V".into());
    let rows = (0..traj.len()).map(|k| {
        let mut row = vec![traj.time(k).to_string()];
        row.extend(traj.state(k).iter().map(|x| x.to_string()));
        row.extend(traj.control(k).iter().map(|x| x.to_string()));
        row.push(traj.values[k].to_string());
        row
    });
    write_rows(path, &cols, rows)
}
