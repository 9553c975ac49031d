//! Reduced-cost optimization over per-cell controls: box projection, the
//! adjoint-based reduced gradient, projected-gradient descent with Armijo
//! backtracking, and the variational-inequality residual used as the
//! stopping criterion.

use crate::assemble::{cell_average_velocity, tracking_misfit};
use crate::error::Error;
use crate::model::PhysicalModel;
use crate::sensitivity::{solve_adjoint, AdjointFields};
use crate::space::Discretization;
use crate::state::{solve_state, solve_state_from, NewtonOptions, StateFields};
use crate::Result;

/// Per-cell two-component control with box bounds of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlField {
    pub fn new(values: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<ControlField> {
        if values.len() != lower.len() || values.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "control/bounds lengths differ: {} / {} / {}",
                values.len(),
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, up)) in lower.iter().zip(&upper).enumerate() {
            if lo > up {
                return Err(Error::RejectedInput(format!(
                    "lower bound {lo} exceeds upper bound {up} at control dof {i}"
                )));
            }
        }
        Ok(ControlField {
            values,
            lower,
            upper,
        })
    }

    /// Zero control with the given uniform componentwise bounds.
    pub fn with_uniform_bounds(d: &Discretization, lo: f64, up: f64) -> Result<ControlField> {
        let n = d.control.dof_count;
        ControlField::new(vec![0.0; n], vec![lo; n], vec![up; n])
    }

    /// Zero control with bounds wide enough to never activate.
    pub fn unbounded(d: &Discretization) -> ControlField {
        let n = d.control.dof_count;
        ControlField {
            values: vec![0.0; n],
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn is_admissible(&self) -> bool {
        self.values
            .iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((v, lo), up)| lo <= v && v <= up)
    }
}

/// Componentwise clamp onto the box; idempotent and ℓ²-nonexpansive.
pub fn project(u: &ControlField) -> ControlField {
    let values = u
        .values
        .iter()
        .zip(&u.lower)
        .zip(&u.upper)
        .map(|((v, lo), up)| v.clamp(*lo, *up))
        .collect();
    ControlField {
        values,
        lower: u.lower.clone(),
        upper: u.upper.clone(),
    }
}

/// L^r norm of a per-cell-constant 2-component field, computed cellwise
/// exactly: (Σ_e area_e · |U_e|^r)^{1/r} with |·| the Euclidean magnitude.
pub fn control_lr_norm(d: &Discretization, vals: &[f64], r: f64) -> f64 {
    assert_eq!(vals.len(), d.control.dof_count);
    let mut acc = 0.0;
    for e in 0..d.mesh.n_triangles() {
        let ux = vals[d.control.dof(e, 0)];
        let uy = vals[d.control.dof(e, 1)];
        let mag = (ux * ux + uy * uy).sqrt();
        acc += d.mesh.signed_area(e) * mag.powf(r);
    }
    acc.powf(1.0 / r)
}

pub fn control_l2_norm(d: &Discretization, vals: &[f64]) -> f64 {
    control_lr_norm(d, vals, 2.0)
}

/// Control-space L² inner product Σ_e area_e · U_e·V_e.
pub fn control_inner(d: &Discretization, a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), d.control.dof_count);
    assert_eq!(b.len(), d.control.dof_count);
    let mut acc = 0.0;
    for e in 0..d.mesh.n_triangles() {
        let area = d.mesh.signed_area(e);
        acc += area
            * (a[d.control.dof(e, 0)] * b[d.control.dof(e, 0)]
                + a[d.control.dof(e, 1)] * b[d.control.dof(e, 1)]);
    }
    acc
}

/// One row of the per-iteration optimization log.
#[derive(Debug, Clone, Copy)]
pub struct OptimizationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub projected_gradient_norm: f64,
    pub vi_residual: f64,
    /// Accepted Armijo step (0 for the initial record).
    pub step: f64,
    pub newton_iterations: usize,
    pub control_l1: f64,
    pub control_l2: f64,
    pub control_l43: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    KktResidualBelowTolerance,
    MaxIterationsReached,
    LineSearchStagnated,
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub records: Vec<OptimizationRecord>,
    pub termination: Termination,
    pub final_cost: f64,
    pub final_vi_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    pub kkt_tol: f64,
    pub max_iterations: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub backtrack: f64,
    pub min_step: f64,
    pub newton: crate::state::NewtonOptions,
}

impl Default for OptimizeOptions {
    fn default() -> OptimizeOptions {
        OptimizeOptions {
            kkt_tol: 1e-6,
            max_iterations: 200,
            c1: 1e-4,
            backtrack: 0.5,
            min_step: 1e-14,
            newton: crate::state::NewtonOptions::default(),
        }
    }
}

/// State solve at a control together with the cost value it yields.
#[derive(Debug, Clone)]
pub struct CostEvaluation {
    pub cost: f64,
    pub state: StateFields,
    pub newton_iterations: usize,
}

fn cost_at_state(
    d: &Discretization,
    model: &PhysicalModel,
    u: &ControlField,
    state: &StateFields,
) -> f64 {
    let misfit_u = tracking_misfit(d, &d.velocity, state.velocity(d), &model.u_d);
    let misfit_y = tracking_misfit(d, &d.scalars, state.scalars(d), &model.y_d);
    misfit_u + misfit_y + 0.5 * model.lambda * control_inner(d, &u.values, &u.values)
}

/// Evaluates the reduced cost ½‖u−u_d‖₀² + ½‖y−y_d‖₀² + (λ/2)‖U‖₀² by solving
/// the state equation at `u`.
pub fn reduced_cost(
    d: &Discretization,
    model: &PhysicalModel,
    u: &ControlField,
    newton: &NewtonOptions,
) -> Result<CostEvaluation> {
    let (state, report) = solve_state(d, model, &u.values, newton)?;
    Ok(CostEvaluation {
        cost: cost_at_state(d, model, u, &state),
        newton_iterations: report.iterations,
        state,
    })
}

fn reduced_cost_from(
    d: &Discretization,
    model: &PhysicalModel,
    u: &ControlField,
    newton: &NewtonOptions,
    x0: Vec<f64>,
) -> Result<CostEvaluation> {
    let (state, report) = solve_state_from(d, model, &u.values, newton, x0)?;
    Ok(CostEvaluation {
        cost: cost_at_state(d, model, u, &state),
        newton_iterations: report.iterations,
        state,
    })
}

/// Cellwise gradient of the reduced cost: λU plus the per-cell average of the
/// adjoint velocity.
pub fn reduced_gradient(
    d: &Discretization,
    model: &PhysicalModel,
    u: &ControlField,
    adjoint: &AdjointFields,
) -> Vec<f64> {
    let avg = cell_average_velocity(d, adjoint.phi(d));
    u.values
        .iter()
        .zip(avg)
        .map(|(ui, ai)| model.lambda * ui + ai)
        .collect()
}

/// L² distance between `u` and the box projection of −φ̄/λ; vanishes exactly
/// at a stationary point of the constrained problem.
pub fn vi_residual(
    d: &Discretization,
    model: &PhysicalModel,
    u: &ControlField,
    adjoint: &AdjointFields,
) -> f64 {
    let avg = cell_average_velocity(d, adjoint.phi(d));
    let diff: Vec<f64> = u
        .values
        .iter()
        .zip(avg)
        .zip(u.lower.iter().zip(&u.upper))
        .map(|((ui, ai), (lo, up))| ui - (-ai / model.lambda).clamp(*lo, *up))
        .collect();
    control_l2_norm(d, &diff)
}

fn projected_gradient_norm(d: &Discretization, u: &ControlField, grad: &[f64]) -> f64 {
    let diff: Vec<f64> = u
        .values
        .iter()
        .zip(grad)
        .zip(u.lower.iter().zip(&u.upper))
        .map(|((ui, gi), (lo, up))| ui - (ui - gi).clamp(*lo, *up))
        .collect();
    control_l2_norm(d, &diff)
}

fn log_row(
    d: &Discretization,
    iteration: usize,
    eval: &CostEvaluation,
    u: &ControlField,
    grad: &[f64],
    vi: f64,
    step: f64,
) -> OptimizationRecord {
    OptimizationRecord {
        iteration,
        cost: eval.cost,
        projected_gradient_norm: projected_gradient_norm(d, u, grad),
        vi_residual: vi,
        step,
        newton_iterations: eval.newton_iterations,
        control_l1: control_lr_norm(d, &u.values, 1.0),
        control_l2: control_l2_norm(d, &u.values),
        control_l43: control_lr_norm(d, &u.values, 4.0 / 3.0),
    }
}

/// Projected-gradient descent on the reduced cost with Armijo backtracking.
///
/// Starts from the box projection of `u0` and stops once the
/// variational-inequality residual drops below `opts.kkt_tol` or the
/// iteration budget runs out; either way the report carries one log row per
/// visited iterate. Each line search restarts from step 1/λ and halves until
/// j(P(U − s g)) ≤ j(U) + c1 (g, P(U − s g) − U)₀; a trial whose state solve
/// fails to converge is rejected like an insufficient decrease. If the step
/// collapses below `opts.min_step` the error carries the partial report.
pub fn optimize(
    d: &Discretization,
    model: &PhysicalModel,
    u0: &ControlField,
    opts: &OptimizeOptions,
) -> Result<(ControlField, StateFields, AdjointFields, OptimizationReport)> {
    model.validate()?;
    let mut u = project(u0);
    let mut eval = reduced_cost(d, model, &u, &opts.newton)?;
    let mut adjoint = solve_adjoint(d, model, &eval.state)?;
    let mut records: Vec<OptimizationRecord> = Vec::new();
    let mut last_step = 0.0;
    // The first search starts at 1/λ; afterwards it resumes a little above
    // the last accepted step (still capped by 1/λ), so the search doesn't
    // re-pay the same halvings every iteration.
    let mut step_start = 1.0 / model.lambda;

    for iteration in 0..=opts.max_iterations {
        let grad = reduced_gradient(d, model, &u, &adjoint);
        let vi = vi_residual(d, model, &u, &adjoint);
        records.push(log_row(d, iteration, &eval, &u, &grad, vi, last_step));

        let done = if vi <= opts.kkt_tol {
            Some(Termination::KktResidualBelowTolerance)
        } else if iteration == opts.max_iterations {
            Some(Termination::MaxIterationsReached)
        } else {
            None
        };
        if let Some(termination) = done {
            let report = OptimizationReport {
                termination,
                final_cost: eval.cost,
                final_vi_residual: vi,
                records,
            };
            return Ok((u, eval.state, adjoint, report));
        }

        let mut step = step_start;
        let (trial, trial_eval, accepted) = loop {
            let proposal = ControlField {
                values: u
                    .values
                    .iter()
                    .zip(&grad)
                    .map(|(ui, gi)| ui - step * gi)
                    .collect(),
                lower: u.lower.clone(),
                upper: u.upper.clone(),
            };
            let trial = project(&proposal);
            let direction: Vec<f64> = trial
                .values
                .iter()
                .zip(&u.values)
                .map(|(t, ui)| t - ui)
                .collect();
            let moved = direction.iter().any(|&di| di != 0.0);
            if moved {
                match reduced_cost_from(d, model, &trial, &opts.newton, eval.state.packed.clone())
                {
                    Ok(trial_eval) => {
                        let decrease = control_inner(d, &grad, &direction);
                        if trial_eval.cost <= eval.cost + opts.c1 * decrease {
                            break (trial, trial_eval, step);
                        }
                    }
                    Err(Error::Nonconvergence { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            step *= opts.backtrack;
            if step < opts.min_step {
                let report = OptimizationReport {
                    termination: Termination::LineSearchStagnated,
                    final_cost: eval.cost,
                    final_vi_residual: vi,
                    records,
                };
                return Err(Error::Stagnation {
                    step,
                    report: Box::new(report),
                });
            }
        };
        last_step = accepted;
        step_start = (accepted * 4.0).min(1.0 / model.lambda);
        u = trial;
        eval = trial_eval;
        adjoint = solve_adjoint(d, model, &eval.state)?;
    }
    unreachable!("loop exits through a termination branch");
}


#[cfg(test)]
mod optimize_tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;
    use crate::model::{default_boussinesq_model, BoussinesqParams, GivenField};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn disc(n: usize) -> Discretization {
        Discretization::new(build_unit_square_mesh(n).unwrap())
    }

    fn tracking_model(lambda: f64) -> PhysicalModel {
        let mut model = default_boussinesq_model(BoussinesqParams {
            lambda,
            ..BoussinesqParams::default()
        })
        .unwrap();
        model.ydata = Arc::new(|x| [0.3 * x[0] * (1.0 - x[0]), 0.2 * (x[0] - x[1])]);
        model.u_d = GivenField::analytic(|x| [0.2 * x[1], -0.2 * x[0]]);
        model.y_d = GivenField::analytic(|x| [0.1 * x[0], 0.1 * x[1] * x[1]]);
        model
    }

    /// Per-cell control sampled at cell centroids from the curl of a smooth
    /// stream function, so it is not annihilated by the divergence-free
    /// velocity test space.
    fn smooth_control(d: &Discretization, amplitude: f64) -> Vec<f64> {
        use std::f64::consts::PI;
        let mut vals = vec![0.0; d.control.dof_count];
        for e in 0..d.mesh.n_triangles() {
            let c = d.mesh.centroid(e);
            vals[d.control.dof(e, 0)] = amplitude * (PI * c[0]).sin() * (PI * c[1]).cos();
            vals[d.control.dof(e, 1)] = -amplitude * (PI * c[0]).cos() * (PI * c[1]).sin();
        }
        vals
    }

    /// Targets manufactured from a forward solve, so the misfit vanishes at
    /// the generating control.
    fn attainable_targets(d: &Discretization, model: &mut PhysicalModel, ctrl: &[f64]) {
        let (state, _) = solve_state(d, model, ctrl, &NewtonOptions::default()).unwrap();
        model.u_d = GivenField::Discrete(state.velocity(d).to_vec());
        model.y_d = GivenField::Discrete(state.scalars(d).to_vec());
    }

    #[test]
    fn reduced_gradient_matches_finite_differences() {
        let d = disc(2);
        let model = tracking_model(0.5);
        let newton = NewtonOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let base: Vec<f64> = (0..d.control.dof_count)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let u = ControlField {
            values: base.clone(),
            ..ControlField::unbounded(&d)
        };
        let eval = reduced_cost(&d, &model, &u, &newton).unwrap();
        let adjoint = solve_adjoint(&d, &model, &eval.state).unwrap();
        let grad = reduced_gradient(&d, &model, &u, &adjoint);

        let t = 1e-4;
        for _ in 0..3 {
            let h: Vec<f64> = (0..d.control.dof_count)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let shift = |s: f64| ControlField {
                values: base.iter().zip(&h).map(|(b, hi)| b + s * hi).collect(),
                ..ControlField::unbounded(&d)
            };
            let jp = reduced_cost(&d, &model, &shift(t), &newton).unwrap().cost;
            let jm = reduced_cost(&d, &model, &shift(-t), &newton).unwrap().cost;
            let fd = (jp - jm) / (2.0 * t);
            let pairing = control_inner(&d, &grad, &h);
            assert!(
                (fd - pairing).abs() <= 1e-6 * (1.0 + pairing.abs()),
                "directional derivative {pairing} vs finite difference {fd}"
            );
        }
    }

    #[test]
    fn kkt_point_terminates_without_stepping() {
        let d = disc(2);
        let mut model = tracking_model(1.0);
        let zero = vec![0.0; d.control.dof_count];
        attainable_targets(&d, &mut model, &zero);

        let u0 = ControlField::unbounded(&d);
        let (u, _, _, report) = optimize(&d, &model, &u0, &OptimizeOptions::default()).unwrap();
        assert_eq!(report.termination, Termination::KktResidualBelowTolerance);
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.final_cost, 0.0);
        assert!(report.final_vi_residual <= 1e-10);
        assert!(u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn manufactured_control_is_recovered_up_to_regularization_bias() {
        let d = disc(3);
        let mut model = tracking_model(1e-4);
        let truth = smooth_control(&d, 0.5);
        attainable_targets(&d, &mut model, &truth);

        let u0 = ControlField::unbounded(&d);
        let opts = OptimizeOptions {
            max_iterations: 400,
            ..OptimizeOptions::default()
        };
        let (u, _, adjoint, report) = optimize(&d, &model, &u0, &opts).unwrap();
        assert_eq!(report.termination, Termination::KktResidualBelowTolerance);
        assert!(report.final_vi_residual <= 1e-6);

        // the accepted iterates never increase the cost
        for w in report.records.windows(2) {
            assert!(w[1].cost <= w[0].cost * (1.0 + 1e-14));
        }
        // the recovered control does at least as well as the generating one
        let truth_cost = 0.5 * model.lambda * control_inner(&d, &truth, &truth);
        assert!(report.final_cost <= truth_cost * (1.0 + 1e-10));

        // without active bounds the optimality system reduces to U = -avg(phi)/lambda
        let avg = cell_average_velocity(&d, adjoint.phi(&d));
        for (ui, ai) in u.values.iter().zip(&avg) {
            assert!((ui + ai / model.lambda).abs() <= 1e-5);
        }
        // regularization bias keeps the recovery near the generating control
        let diff: Vec<f64> = u.values.iter().zip(&truth).map(|(a, b)| a - b).collect();
        let rel = control_l2_norm(&d, &diff) / control_l2_norm(&d, &truth);
        assert!(rel <= 0.5, "relative recovery error {rel}");
    }

    #[test]
    fn active_bounds_land_exactly_on_the_box() {
        let d = disc(3);
        let mut model = tracking_model(1e-4);
        let truth = smooth_control(&d, 0.5);
        attainable_targets(&d, &mut model, &truth);

        let lo = -0.15;
        let up = 0.2;
        let u0 = ControlField::with_uniform_bounds(&d, lo, up).unwrap();
        let opts = OptimizeOptions {
            max_iterations: 400,
            ..OptimizeOptions::default()
        };
        let (u, _, adjoint, report) = optimize(&d, &model, &u0, &opts).unwrap();
        assert_eq!(report.termination, Termination::KktResidualBelowTolerance);

        let avg = cell_average_velocity(&d, adjoint.phi(&d));
        let mut n_active = 0;
        for (i, ui) in u.values.iter().enumerate() {
            assert!((lo..=up).contains(ui));
            let unconstrained = -avg[i] / model.lambda;
            if unconstrained < lo || unconstrained > up {
                // projection writes the bound verbatim
                assert!(*ui == lo || *ui == up);
                n_active += 1;
            } else {
                assert!((ui - unconstrained).abs() <= 1e-5);
            }
        }
        assert!(n_active > 0, "fixture never touches the bounds");
    }
}
