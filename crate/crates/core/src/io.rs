//! File exports: legacy-VTK field snapshots, CSV histories, and an exact
//! control-field round trip. All numeric formatting is fixed-width
//! scientific, so identical inputs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Error;
use crate::optimizer::{ControlField, OptimizationReport};
use crate::space::Discretization;
use crate::ssc::CurvatureProbeReport;
use crate::state::{NewtonReport, StateFields};
use crate::Result;

/// 17 significant digits: enough to reproduce any f64 exactly on re-parse.
fn full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders the solution fields sampled at mesh vertices as legacy VTK ASCII
/// (linear triangles; the quadratic mid-edge values are dropped for export).
/// The control, when given, is attached as per-cell vectors.
pub fn render_vtk(d: &Discretization, state: &StateFields, control: Option<&[f64]>) -> String {
    let mesh = &d.mesh;
    let nv = mesh.n_vertices();
    let nt = mesh.n_triangles();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("coupled flow fields\n");
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");

    let _ = writeln!(out, "POINTS {nv} double");
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:.9e} {:.9e} 0", v[0], v[1]);
    }
    let _ = writeln!(out, "CELLS {nt} {}", 4 * nt);
    for tri in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        out.push_str("5\n");
    }

    let velocity = state.velocity(d);
    let pressure = state.pressure(d);
    let scalars = state.scalars(d);
    let _ = writeln!(out, "POINT_DATA {nv}");
    out.push_str("VECTORS velocity double\n");
    for v in 0..nv {
        let _ = writeln!(
            out,
            "{:.9e} {:.9e} 0",
            velocity[d.velocity.dof(v, 0)],
            velocity[d.velocity.dof(v, 1)]
        );
    }
    for (name, get) in [
        ("pressure", &(|v: usize| pressure[d.pressure.dof(v, 0)]) as &dyn Fn(usize) -> f64),
        ("temperature", &|v: usize| scalars[d.scalars.dof(v, 0)]),
        ("concentration", &|v: usize| scalars[d.scalars.dof(v, 1)]),
    ] {
        let _ = writeln!(out, "SCALARS {name} double\nLOOKUP_TABLE default");
        for v in 0..nv {
            let _ = writeln!(out, "{:.9e}", get(v));
        }
    }

    if let Some(ctrl) = control {
        let _ = writeln!(out, "CELL_DATA {nt}");
        out.push_str("VECTORS control double\n");
        for e in 0..nt {
            let _ = writeln!(
                out,
                "{:.9e} {:.9e} 0",
                ctrl[d.control.dof(e, 0)],
                ctrl[d.control.dof(e, 1)]
            );
        }
    }
    out
}

/// One CSV row per optimizer iterate.
pub fn render_optimization_history(report: &OptimizationReport) -> String {
    let mut out = String::from(
        "iteration,cost,projected_gradient_norm,vi_residual,step,newton_iterations,control_l1,control_l2,control_l43\n",
    );
    for r in &report.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            full(r.cost),
            full(r.projected_gradient_norm),
            full(r.vi_residual),
            full(r.step),
            r.newton_iterations,
            full(r.control_l1),
            full(r.control_l2),
            full(r.control_l43)
        );
    }
    out
}

/// One CSV row per nonlinear iteration, starting from the initial residual.
pub fn render_newton_history(report: &NewtonReport) -> String {
    let mut out = String::from("iteration,momentum,continuity,transport,total,damping,picard\n");
    let mut row = |i: usize, r: &crate::state::ResidualBreakdown, damping: f64, picard: bool| {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{}",
            full(r.momentum),
            full(r.continuity),
            full(r.transport),
            full(r.total()),
            full(damping),
            u8::from(picard)
        );
    };
    row(0, &report.initial_residual, 0.0, false);
    for (i, s) in report.steps.iter().enumerate() {
        row(i + 1, &s.residual, s.damping, s.picard);
    }
    out
}

/// One CSV row per curvature probe direction.
pub fn render_probe_csv(report: &CurvatureProbeReport) -> String {
    let mut out = String::from("direction,l_ww,h_l43_sq,sigma_est\n");
    for (i, p) in report.probes.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{}",
            full(p.l_ww),
            full(p.h_l43_sq),
            full(p.sigma_est)
        );
    }
    out
}

/// One refinement level of the manufactured-solution study.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    pub n: usize,
    pub u_l2: f64,
    pub u_h1: f64,
    pub p_l2: f64,
    pub y_h1: f64,
    /// log₂ error ratios against the previous row, in the same order.
    pub orders: Option<[f64; 4]>,
}

pub fn render_convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from(
        "n,u_l2,u_h1,p_l2,y_h1,order_u_l2,order_u_h1,order_p_l2,order_y_h1\n",
    );
    for r in rows {
        let orders = match r.orders {
            Some(o) => o.map(full).join(","),
            None => ",,,".to_string(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{orders}",
            r.n,
            full(r.u_l2),
            full(r.u_h1),
            full(r.p_l2),
            full(r.y_h1)
        );
    }
    out
}

/// Writes a control field as CSV, one row per control dof, with enough
/// digits that [`import_control`] reproduces it bit for bit.
pub fn export_control(path: &Path, u: &ControlField) -> Result<()> {
    let mut out = String::from("dof,value,lower,upper\n");
    for i in 0..u.values.len() {
        let _ = writeln!(
            out,
            "{i},{},{},{}",
            full(u.values[i]),
            full(u.lower[i]),
            full(u.upper[i])
        );
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn import_control(path: &Path) -> Result<ControlField> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::RejectedInput(format!("cannot read control {}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| {
            Error::RejectedInput(format!(
                "control file {}: {what} at line {}",
                path.display(),
                idx + 1
            ))
        };
        if cols.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let dof: usize = cols[0].parse().map_err(|_| bad("bad dof index"))?;
        if dof != values.len() {
            return Err(bad("dof indices out of sequence"));
        }
        values.push(cols[1].parse::<f64>().map_err(|_| bad("bad value"))?);
        lower.push(cols[2].parse::<f64>().map_err(|_| bad("bad lower bound"))?);
        upper.push(cols[3].parse::<f64>().map_err(|_| bad("bad upper bound"))?);
    }
    ControlField::new(values, lower, upper)
}
