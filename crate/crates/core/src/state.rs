//! Nonlinear state solve for the coupled velocity/pressure/scalar system:
//! residual and Jacobian assembly on the packed dof vector, damped Newton with
//! a Picard rescue for early divergence, and forcing continuation.
//!
//! Packed layout: velocity (interleaved x/y), pressure, scalar pair
//! (interleaved T/S), and one trailing multiplier enforcing zero-mean pressure.

use crate::assemble::{
    apply_lifting, assemble_a, assemble_ay, assemble_b, assemble_buoyancy_jacobian,
    assemble_buoyancy_value, assemble_c_skew, assemble_carrier_jacobian, assemble_control_load,
    assemble_load, assemble_viscosity_coupling, pressure_integral_vector,
};
use crate::error::Error;
use crate::linalg::{LinearSystem, SparseMatrix};
use crate::model::{BuoyancyModel, PhysicalModel};
use crate::space::{extract_component, Discretization};
use crate::Result;

/// Solution of the coupled system on the packed dof vector.
#[derive(Debug, Clone)]
pub struct StateFields {
    pub packed: Vec<f64>,
}

impl StateFields {
    pub fn zero(d: &Discretization) -> StateFields {
        StateFields {
            packed: vec![0.0; d.total_dofs()],
        }
    }

    pub fn velocity<'a>(&'a self, d: &Discretization) -> &'a [f64] {
        &self.packed[d.off_u()..d.off_u() + d.n_u()]
    }

    pub fn pressure<'a>(&'a self, d: &Discretization) -> &'a [f64] {
        &self.packed[d.off_p()..d.off_p() + d.n_p()]
    }

    pub fn scalars<'a>(&'a self, d: &Discretization) -> &'a [f64] {
        &self.packed[d.off_y()..d.off_y() + d.n_y()]
    }

    pub fn multiplier(&self, d: &Discretization) -> f64 {
        self.packed[d.off_multiplier()]
    }

    /// Temperature values per scalar node (the viscosity argument).
    pub fn temperature(&self, d: &Discretization) -> Vec<f64> {
        extract_component(&d.scalars, self.scalars(d), 0)
    }
}

/// ℓ² residual norms per equation, over free (unconstrained) rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBreakdown {
    pub momentum: f64,
    /// Divergence rows plus the zero-mean row.
    pub continuity: f64,
    pub transport: f64,
}

impl ResidualBreakdown {
    pub fn total(&self) -> f64 {
        (self.momentum * self.momentum
            + self.continuity * self.continuity
            + self.transport * self.transport)
            .sqrt()
    }
}

/// One accepted step of the nonlinear iteration.
#[derive(Debug, Clone, Copy)]
pub struct NewtonStep {
    pub residual: ResidualBreakdown,
    /// Step fraction after backtracking (1.0 = full Newton step).
    pub damping: f64,
    /// True for steps taken by the Picard rescue sweep.
    pub picard: bool,
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub initial_residual: ResidualBreakdown,
    pub steps: Vec<NewtonStep>,
    /// Accepted outer iterations (a Picard sweep counts as one).
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Absolute ℓ² residual tolerance over free rows.
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> NewtonOptions {
        NewtonOptions {
            tol: 1e-10,
            max_iterations: 30,
            max_halvings: 10,
        }
    }
}

fn scaled_load(d: &Discretization, f: &Option<crate::model::PairFn>) -> Vec<f64> {
    match f {
        Some(f) => assemble_load(d, &**f),
        None => vec![0.0; d.n_u()],
    }
}

/// Raw residual of the coupled system (no boundary conditions applied):
/// momentum, divergence + multiplier coupling, pressure mean, transport.
pub fn assemble_residual(
    d: &Discretization,
    model: &PhysicalModel,
    ctrl: &[f64],
    x: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != d.total_dofs() {
        return Err(Error::DimensionMismatch(format!(
            "state vector length {} != {}",
            x.len(),
            d.total_dofs()
        )));
    }
    let u = &x[d.off_u()..d.off_u() + d.n_u()];
    let p = &x[d.off_p()..d.off_p() + d.n_p()];
    let y = &x[d.off_y()..d.off_y() + d.n_y()];
    let m = x[d.off_multiplier()];
    let t = extract_component(&d.scalars, y, 0);

    let a = assemble_a(d, model, &t)?;
    let c = assemble_c_skew(d, u);
    let b = assemble_b(d);
    let ay = assemble_ay(d, model)?;
    let e = pressure_integral_vector(d);
    let buoy = assemble_buoyancy_value(d, model, y);
    let ctrl_load = assemble_control_load(d, ctrl);
    let f_u = scaled_load(d, &model.f_u);
    let f_y = scaled_load(d, &model.f_y);

    let au = a.spmv(u)?;
    let cu = c.spmv(u)?;
    let bp = b.spmv(p)?;
    let btu = b.transpose().spmv(u)?;
    let ayy = ay.spmv(y)?;
    let cyy = c.spmv(y)?;

    let mut r = vec![0.0; d.total_dofs()];
    for i in 0..d.n_u() {
        r[d.off_u() + i] = au[i] + cu[i] + bp[i] - buoy[i] - ctrl_load[i] - f_u[i];
    }
    for l in 0..d.n_p() {
        r[d.off_p() + l] = btu[l] + e[l] * m;
    }
    r[d.off_multiplier()] = e.iter().zip(p).map(|(a, b)| a * b).sum();
    for i in 0..d.n_y() {
        r[d.off_y() + i] = ayy[i] + cyy[i] - f_y[i];
    }
    Ok(r)
}

fn add_block(tr: &mut Vec<(usize, usize, f64)>, m: &SparseMatrix, row_off: usize, col_off: usize) {
    for (r, c, v) in m.entries() {
        tr.push((row_off + r, col_off + c, v));
    }
}

fn add_block_scaled(
    tr: &mut Vec<(usize, usize, f64)>,
    m: &SparseMatrix,
    row_off: usize,
    col_off: usize,
    scale: f64,
) {
    for (r, c, v) in m.entries() {
        tr.push((row_off + r, col_off + c, scale * v));
    }
}

/// Raw Jacobian of [`assemble_residual`] at the packed state `x`.
pub fn newton_jacobian(
    d: &Discretization,
    model: &PhysicalModel,
    x: &[f64],
) -> Result<SparseMatrix> {
    if x.len() != d.total_dofs() {
        return Err(Error::DimensionMismatch(format!(
            "state vector length {} != {}",
            x.len(),
            d.total_dofs()
        )));
    }
    let u = &x[d.off_u()..d.off_u() + d.n_u()];
    let y = &x[d.off_y()..d.off_y() + d.n_y()];
    let t = extract_component(&d.scalars, y, 0);

    let a = assemble_a(d, model, &t)?;
    let c = assemble_c_skew(d, u);
    let cj_u = assemble_carrier_jacobian(d, u);
    let b = assemble_b(d);
    let bt = b.transpose();
    let visc = assemble_viscosity_coupling(d, model, u, &t);
    let bjac = assemble_buoyancy_jacobian(d, model, y);
    let ay = assemble_ay(d, model)?;
    let cj_y = assemble_carrier_jacobian(d, y);
    let e = pressure_integral_vector(d);

    let n = d.total_dofs();
    let mut tr = Vec::with_capacity(
        a.nnz() + 2 * c.nnz() + cj_u.nnz() + 2 * b.nnz() + visc.nnz() + bjac.nnz() + ay.nnz()
            + cj_y.nnz()
            + 2 * e.len(),
    );
    add_block(&mut tr, &a, d.off_u(), d.off_u());
    add_block(&mut tr, &c, d.off_u(), d.off_u());
    add_block(&mut tr, &cj_u, d.off_u(), d.off_u());
    add_block(&mut tr, &b, d.off_u(), d.off_p());
    add_block(&mut tr, &visc, d.off_u(), d.off_y());
    add_block_scaled(&mut tr, &bjac, d.off_u(), d.off_y(), -1.0);
    add_block(&mut tr, &bt, d.off_p(), d.off_u());
    for (l, &el) in e.iter().enumerate() {
        tr.push((d.off_p() + l, d.off_multiplier(), el));
        tr.push((d.off_multiplier(), d.off_p() + l, el));
    }
    add_block(&mut tr, &ay, d.off_y(), d.off_y());
    add_block(&mut tr, &c, d.off_y(), d.off_y());
    add_block(&mut tr, &cj_y, d.off_y(), d.off_u());
    Ok(SparseMatrix::from_triplets(n, n, &tr))
}

/// Per-equation ℓ² norms of a raw residual with constrained rows masked out.
pub fn residual_breakdown(d: &Discretization, r: &[f64]) -> ResidualBreakdown {
    let mut momentum = 0.0;
    for i in 0..d.n_u() {
        if !d.velocity.dirichlet_mask[i] {
            momentum += r[d.off_u() + i] * r[d.off_u() + i];
        }
    }
    let mut continuity = 0.0;
    for l in 0..d.n_p() {
        continuity += r[d.off_p() + l] * r[d.off_p() + l];
    }
    let rm = r[d.off_multiplier()];
    continuity += rm * rm;
    let mut transport = 0.0;
    for i in 0..d.n_y() {
        if !d.scalars.dirichlet_mask[i] {
            transport += r[d.off_y() + i] * r[d.off_y() + i];
        }
    }
    ResidualBreakdown {
        momentum: momentum.sqrt(),
        continuity: continuity.sqrt(),
        transport: transport.sqrt(),
    }
}

/// Default initial guess: zero fields plus the harmonic lifting of the
/// scalar boundary data, so every iterate satisfies the boundary conditions
/// exactly and Newton updates vanish on constrained dofs.
pub fn initial_guess(d: &Discretization, model: &PhysicalModel) -> Result<Vec<f64>> {
    let mut x = vec![0.0; d.total_dofs()];
    let lift = apply_lifting(d, &*model.ydata)?;
    x[d.off_y()..d.off_y() + d.n_y()].copy_from_slice(&lift);
    Ok(x)
}

/// Solves the coupled system for the given per-cell control by damped Newton.
pub fn solve_state(
    d: &Discretization,
    model: &PhysicalModel,
    ctrl: &[f64],
    opts: &NewtonOptions,
) -> Result<(StateFields, NewtonReport)> {
    model.validate()?;
    let x0 = initial_guess(d, model)?;
    solve_state_from(d, model, ctrl, opts, x0)
}

pub(crate) fn solve_state_from(
    d: &Discretization,
    model: &PhysicalModel,
    ctrl: &[f64],
    opts: &NewtonOptions,
    mut x: Vec<f64>,
) -> Result<(StateFields, NewtonReport)> {
    let constraints = d.homogeneous_constraints();
    let mut r = assemble_residual(d, model, ctrl, &x)?;
    let mut norm = residual_breakdown(d, &r);
    let mut report = NewtonReport {
        initial_residual: norm,
        steps: Vec::new(),
        iterations: 0,
        converged: false,
    };
    let mut picard_spent = false;

    for it in 0..opts.max_iterations {
        if norm.total() <= opts.tol {
            report.converged = true;
            return Ok((StateFields { packed: x }, report));
        }
        let jac = newton_jacobian(d, model, &x)?;
        let minus_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let system = LinearSystem::with_constraints(jac, minus_r, &constraints)?;
        let delta = system.solve_default()?;

        let mut accepted = false;
        let mut alpha = 1.0;
        for halving in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(xi, di)| xi + alpha * di).collect();
            let r_trial = assemble_residual(d, model, ctrl, &trial)?;
            let n_trial = residual_breakdown(d, &r_trial);
            if n_trial.total() < norm.total() {
                x = trial;
                r = r_trial;
                norm = n_trial;
                report.steps.push(NewtonStep {
                    residual: norm,
                    damping: alpha,
                    picard: false,
                });
                accepted = true;
                break;
            }
            if halving == 0 && it < 2 && !picard_spent {
                picard_spent = true;
                x = picard_sweep(d, model, ctrl, x, 5, &mut report)?;
                r = assemble_residual(d, model, ctrl, &x)?;
                norm = residual_breakdown(d, &r);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::Nonconvergence {
                iterations: it,
                last_residual: norm.total(),
                report: Box::new(report),
            });
        }
        report.iterations = it + 1;
    }

    if norm.total() <= opts.tol {
        report.converged = true;
        Ok((StateFields { packed: x }, report))
    } else {
        let iterations = report.iterations;
        Err(Error::Nonconvergence {
            iterations,
            last_residual: norm.total(),
            report: Box::new(report),
        })
    }
}

/// Picard iterations with frozen viscosity argument and frozen carrier
/// velocity; buoyancy is taken explicitly from the previous iterate.
fn picard_sweep(
    d: &Discretization,
    model: &PhysicalModel,
    ctrl: &[f64],
    mut x: Vec<f64>,
    sweeps: usize,
    report: &mut NewtonReport,
) -> Result<Vec<f64>> {
    let n = d.total_dofs();
    let constraints = d.dirichlet_constraints(&*model.ydata);
    let ctrl_load = assemble_control_load(d, ctrl);
    let f_u = scaled_load(d, &model.f_u);
    let f_y = scaled_load(d, &model.f_y);
    let b = assemble_b(d);
    let bt = b.transpose();
    let ay = assemble_ay(d, model)?;
    let e = pressure_integral_vector(d);

    for _ in 0..sweeps {
        let u = x[d.off_u()..d.off_u() + d.n_u()].to_vec();
        let y = x[d.off_y()..d.off_y() + d.n_y()].to_vec();
        let t = extract_component(&d.scalars, &y, 0);
        let a = assemble_a(d, model, &t)?;
        let c = assemble_c_skew(d, &u);
        let buoy = assemble_buoyancy_value(d, model, &y);

        let mut tr = Vec::new();
        add_block(&mut tr, &a, d.off_u(), d.off_u());
        add_block(&mut tr, &c, d.off_u(), d.off_u());
        add_block(&mut tr, &b, d.off_u(), d.off_p());
        add_block(&mut tr, &bt, d.off_p(), d.off_u());
        for (l, &el) in e.iter().enumerate() {
            tr.push((d.off_p() + l, d.off_multiplier(), el));
            tr.push((d.off_multiplier(), d.off_p() + l, el));
        }
        add_block(&mut tr, &ay, d.off_y(), d.off_y());
        add_block(&mut tr, &c, d.off_y(), d.off_y());
        let matrix = SparseMatrix::from_triplets(n, n, &tr);

        let mut rhs = vec![0.0; n];
        for i in 0..d.n_u() {
            rhs[d.off_u() + i] = buoy[i] + ctrl_load[i] + f_u[i];
        }
        for i in 0..d.n_y() {
            rhs[d.off_y() + i] = f_y[i];
        }
        let system = LinearSystem::with_constraints(matrix, rhs, &constraints)?;
        x = system.solve_default()?;

        let r = assemble_residual(d, model, ctrl, &x)?;
        report.steps.push(NewtonStep {
            residual: residual_breakdown(d, &r),
            damping: 1.0,
            picard: true,
        });
    }
    Ok(x)
}

fn scale_buoyancy(b: &BuoyancyModel, t: f64) -> BuoyancyModel {
    let value = b.value.clone();
    let jacobian = b.jacobian.clone();
    let hessian = b.hessian.clone();
    BuoyancyModel {
        value: std::sync::Arc::new(move |y| {
            let f = value(y);
            [t * f[0], t * f[1]]
        }),
        jacobian: std::sync::Arc::new(move |y| {
            let mut j = jacobian(y);
            for row in &mut j {
                for v in row {
                    *v *= t;
                }
            }
            j
        }),
        hessian: std::sync::Arc::new(move |y| {
            let mut h = hessian(y);
            for plane in &mut h {
                for row in plane {
                    for v in row {
                        *v *= t;
                    }
                }
            }
            h
        }),
        growth: t * b.growth,
        lipschitz: t * b.lipschitz,
        second_derivative_bound: t * b.second_derivative_bound,
    }
}

/// Globalization by forcing continuation: buoyancy and control amplitudes are
/// ramped through the schedule, each stage warm-starting the next. The ramp
/// must be increasing within (0, 1] and end at 1.
pub fn continuation_solve(
    d: &Discretization,
    model: &PhysicalModel,
    ctrl: &[f64],
    ramp: &[f64],
    opts: &NewtonOptions,
) -> Result<(StateFields, NewtonReport)> {
    if ramp.is_empty() || *ramp.last().unwrap() != 1.0 {
        return Err(Error::RejectedInput(
            "continuation ramp must be non-empty and end at 1".into(),
        ));
    }
    let mut prev = 0.0;
    for &t in ramp {
        if t <= prev || t > 1.0 {
            return Err(Error::RejectedInput(format!(
                "continuation ramp must increase within (0, 1], got stage {t} after {prev}"
            )));
        }
        prev = t;
    }
    model.validate()?;

    let mut x = initial_guess(d, model)?;
    let mut last = None;
    for (stage, &t) in ramp.iter().enumerate() {
        let mut scaled = model.clone();
        scaled.buoyancy = scale_buoyancy(&model.buoyancy, t);
        let scaled_ctrl: Vec<f64> = ctrl.iter().map(|v| v * t).collect();
        match solve_state_from(d, &scaled, &scaled_ctrl, opts, x) {
            Ok((fields, rep)) => {
                x = fields.packed;
                last = Some(rep);
            }
            Err(e) => {
                return Err(Error::ContinuationFailure {
                    stage,
                    ramp: t,
                    source: Box::new(e),
                });
            }
        }
    }
    Ok((StateFields { packed: x }, last.expect("ramp checked non-empty")))
}
