//! Linearized (control-to-state derivative) and adjoint solves around a
//! converged state, plus the transpose-consistency check between them.
//!
//! Both solves share the Newton Jacobian. Constraints are eliminated
//! symmetrically (identity row *and* column), so the constrained transpose
//! equals the transpose of the constrained matrix, and the adjoint system is
//! literally the transposed linearized system. `check_transpose_consistency`
//! verifies that against an adjoint operator assembled from independently
//! transposed ingredients (Kᵀ, Dᵀ, negated skew convection, swapped-role
//! coupling loops).

use crate::assemble::{
    assemble_a, assemble_ay, assemble_b, assemble_c_skew, assemble_control_load,
    assemble_tracking_load, elem_quad, field2_gradient, field2_value, pressure_integral_vector,
};
use crate::error::Error;
use crate::linalg::{Factorization, LinearSystem, SparseMatrix};
use crate::model::PhysicalModel;
use crate::space::{extract_component, Discretization};
use crate::state::{newton_jacobian, StateFields};
use crate::Result;

/// Solution (ζ, μ) of the linearized system, with its auxiliary pressure and
/// zero-mean multiplier, on the packed layout.
#[derive(Debug, Clone)]
pub struct LinearizedFields {
    pub packed: Vec<f64>,
}

impl LinearizedFields {
    pub fn zeta<'a>(&'a self, d: &Discretization) -> &'a [f64] {
        &self.packed[d.off_u()..d.off_u() + d.n_u()]
    }

    pub fn mu<'a>(&'a self, d: &Discretization) -> &'a [f64] {
        &self.packed[d.off_y()..d.off_y() + d.n_y()]
    }

    pub fn aux_pressure<'a>(&'a self, d: &Discretization) -> &'a [f64] {
        &self.packed[d.off_p()..d.off_p() + d.n_p()]
    }
}

/// Adjoint solution (φ̄, ξ, η̄) on the packed layout.
#[derive(Debug, Clone)]
pub struct AdjointFields {
    pub packed: Vec<f64>,
}

impl AdjointFields {
    pub fn phi<'a>(&'a self, d: &Discretization) -> &'a [f64] {
        &self.packed[d.off_u()..d.off_u() + d.n_u()]
    }

    pub fn xi<'a>(&'a self, d: &Discretization) -> &'a [f64] {
        &self.packed[d.off_p()..d.off_p() + d.n_p()]
    }

    pub fn eta<'a>(&'a self, d: &Discretization) -> &'a [f64] {
        &self.packed[d.off_y()..d.off_y() + d.n_y()]
    }
}

/// Constrained Jacobian at the state: identity rows/columns at Dirichlet dofs.
pub(crate) fn constrained_jacobian(
    d: &Discretization,
    model: &PhysicalModel,
    state: &StateFields,
) -> Result<SparseMatrix> {
    let jac = newton_jacobian(d, model, &state.packed)?;
    let system = LinearSystem::with_constraints(
        jac,
        vec![0.0; d.total_dofs()],
        &d.homogeneous_constraints(),
    )?;
    Ok(system.matrix().clone())
}

/// Derivative of the state with respect to the control in direction `h`
/// (per-cell layout): solves the linearized system with right-hand side
/// (h, v) on the momentum rows.
pub fn solve_linearized(
    d: &Discretization,
    model: &PhysicalModel,
    state: &StateFields,
    h: &[f64],
) -> Result<LinearizedFields> {
    let jac = newton_jacobian(d, model, &state.packed)?;
    let mut rhs = vec![0.0; d.total_dofs()];
    let load = assemble_control_load(d, h);
    rhs[d.off_u()..d.off_u() + d.n_u()].copy_from_slice(&load);
    let system = LinearSystem::with_constraints(jac, rhs, &d.homogeneous_constraints())?;
    let packed = system.solve_default().map_err(singular_hint)?;
    Ok(LinearizedFields { packed })
}

/// Linearized solves for a batch of control directions sharing one
/// factorization of the constrained Jacobian.
pub(crate) fn solve_linearized_batch(
    d: &Discretization,
    model: &PhysicalModel,
    state: &StateFields,
    dirs: &[Vec<f64>],
) -> Result<Vec<LinearizedFields>> {
    if dirs.is_empty() {
        return Ok(Vec::new());
    }
    let jac = newton_jacobian(d, model, &state.packed)?;
    let system = LinearSystem::with_constraints(
        jac,
        vec![0.0; d.total_dofs()],
        &d.homogeneous_constraints(),
    )?;
    let fact = Factorization::new(system.matrix()).map_err(singular_hint)?;
    dirs.iter()
        .map(|h| {
            let mut rhs = vec![0.0; d.total_dofs()];
            let load = assemble_control_load(d, h);
            rhs[d.off_u()..d.off_u() + d.n_u()].copy_from_slice(&load);
            for &(i, _) in system.constrained_dofs() {
                rhs[i] = 0.0;
            }
            Ok(LinearizedFields {
                packed: fact.solve(&rhs),
            })
        })
        .collect()
}

/// Adjoint solve: transposed constrained Jacobian against the tracking
/// residuals (ū − u_d, v) and (ȳ − y_d, s).
pub fn solve_adjoint(
    d: &Discretization,
    model: &PhysicalModel,
    state: &StateFields,
) -> Result<AdjointFields> {
    let matrix = constrained_jacobian(d, model, state)?.transpose();
    let mut rhs = vec![0.0; d.total_dofs()];
    let load_u = assemble_tracking_load(d, &d.velocity, state.velocity(d), &model.u_d);
    let load_y = assemble_tracking_load(d, &d.scalars, state.scalars(d), &model.y_d);
    rhs[d.off_u()..d.off_u() + d.n_u()].copy_from_slice(&load_u);
    rhs[d.off_y()..d.off_y() + d.n_y()].copy_from_slice(&load_y);
    // the transposed matrix already carries identity rows at constrained
    // dofs; zero the right-hand side there so the adjoint vanishes on Γ
    for (dof, _) in d.homogeneous_constraints() {
        rhs[dof] = 0.0;
    }
    let system = LinearSystem::new(matrix, rhs)?;
    let packed = system.solve_default().map_err(singular_hint)?;
    Ok(AdjointFields { packed })
}

fn singular_hint(e: Error) -> Error {
    match e {
        Error::SolverFailure { reason, achieved } => Error::SolverFailure {
            reason: format!(
                "{reason}; the linearization may be singular — retry with continuation or smaller data"
            ),
            achieved,
        },
        other => other,
    }
}

/// Comparison of the directly assembled adjoint operator against the
/// transposed linearized operator, over all dofs of the constrained system.
#[derive(Debug, Clone, Copy)]
pub struct TransposeReport {
    pub max_deviation: f64,
    pub max_entry: f64,
    pub threshold: f64,
    pub free_dofs: usize,
    pub constrained_dofs: usize,
    pub pass: bool,
}

impl std::fmt::Display for TransposeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "transpose consistency: max deviation {:.3e} vs threshold {:.3e} (max entry {:.3e}, {} free / {} constrained dofs): {}",
            self.max_deviation,
            self.threshold,
            self.max_entry,
            self.free_dofs,
            self.constrained_dofs,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Transposed carrier derivative: entry((a,i),(b,j)) =
/// ½ ∫ [N_a (∂_i ψ_j) N_b − N_a (∂_i N_b) ψ_j], the (v ↔ direction) role swap
/// of the carrier Jacobian.
fn assemble_carrier_adjoint(d: &Discretization, transported: &[f64]) -> SparseMatrix {
    assert_eq!(transported.len(), d.n_u());
    let mut tr = Vec::new();
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        let mut local = vec![[[0.0f64; 2]; 2]; 36];
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let psi = field2_value(&d.velocity, transported, eq.nodes, sv);
            let gpsi = field2_gradient(&d.velocity, transported, eq.nodes, &eq.grads[q]);
            for a in 0..6 {
                for b in 0..6 {
                    for i in 0..2 {
                        for j in 0..2 {
                            local[6 * a + b][i][j] += w
                                * 0.5
                                * (sv[a] * gpsi[j][i] * sv[b] - sv[a] * eq.grads[q][b][i] * psi[j]);
                        }
                    }
                }
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                for i in 0..2 {
                    for j in 0..2 {
                        let v = local[6 * a + b][i][j];
                        if v != 0.0 {
                            tr.push((
                                d.velocity.dof(eq.nodes[a], i),
                                d.velocity.dof(eq.nodes[b], j),
                                v,
                            ));
                        }
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(d.n_u(), d.n_u(), &tr)
}

/// Transposed viscosity coupling: scalar rows, velocity columns;
/// entry((b,0),(a,i)) = ∫ ν_T(T̄) N_b (∇ū_i·∇N_a).
fn assemble_viscosity_coupling_adjoint(
    d: &Discretization,
    model: &PhysicalModel,
    u: &[f64],
    temperature: &[f64],
) -> SparseMatrix {
    let nu_t = &model.viscosity.nu_t;
    let mut tr = Vec::new();
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let t: f64 = eq
                .nodes
                .iter()
                .enumerate()
                .map(|(a, &n)| sv[a] * temperature[n])
                .sum();
            let nt = nu_t(t);
            if nt == 0.0 {
                continue;
            }
            let gu = field2_gradient(&d.velocity, u, eq.nodes, &eq.grads[q]);
            for b in 0..6 {
                for a in 0..6 {
                    for i in 0..2 {
                        let dot = gu[i][0] * eq.grads[q][a][0] + gu[i][1] * eq.grads[q][a][1];
                        let v = w * nt * sv[b] * dot;
                        if v != 0.0 {
                            tr.push((
                                d.scalars.dof(eq.nodes[b], 0),
                                d.velocity.dof(eq.nodes[a], i),
                                v,
                            ));
                        }
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(d.n_y(), d.n_u(), &tr)
}

/// Transposed buoyancy derivative: scalar rows, velocity columns;
/// entry((b,k),(a,i)) = ∫ F_y(ȳ)[i][k] N_a N_b.
fn assemble_buoyancy_jacobian_adjoint(
    d: &Discretization,
    model: &PhysicalModel,
    y: &[f64],
) -> SparseMatrix {
    let fy = &model.buoyancy.jacobian;
    let mut tr = Vec::new();
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        let mut local = [[0.0f64; 4]; 36];
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let yv = field2_value(&d.scalars, y, eq.nodes, sv);
            let j = fy(yv);
            for b in 0..6 {
                for a in 0..6 {
                    let mass = w * sv[a] * sv[b];
                    for k in 0..2 {
                        for i in 0..2 {
                            local[6 * b + a][2 * k + i] += mass * j[i][k];
                        }
                    }
                }
            }
        }
        for b in 0..6 {
            for a in 0..6 {
                for k in 0..2 {
                    for i in 0..2 {
                        let v = local[6 * b + a][2 * k + i];
                        if v != 0.0 {
                            tr.push((
                                d.scalars.dof(eq.nodes[b], k),
                                d.velocity.dof(eq.nodes[a], i),
                                v,
                            ));
                        }
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(d.n_y(), d.n_u(), &tr)
}

fn transpose_2x2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

/// Adjoint system matrix assembled from independently transposed ingredients
/// (raw, before constraints).
fn assemble_adjoint_operator(
    d: &Discretization,
    model: &PhysicalModel,
    state: &StateFields,
) -> Result<SparseMatrix> {
    let u = state.velocity(d);
    let y = state.scalars(d);
    let t = extract_component(&d.scalars, y, 0);

    let mut flipped = model.clone();
    flipped.kinv = transpose_2x2(model.kinv);
    flipped.diffusion = transpose_2x2(model.diffusion);

    let a = assemble_a(d, &flipped, &t)?;
    let c = assemble_c_skew(d, u);
    let cja = assemble_carrier_adjoint(d, u);
    let b = assemble_b(d);
    let bt = b.transpose();
    let visc_adj = assemble_viscosity_coupling_adjoint(d, model, u, &t);
    let bjac_adj = assemble_buoyancy_jacobian_adjoint(d, model, y);
    let ay = assemble_ay(d, &flipped)?;
    let cja_y = assemble_carrier_adjoint(d, y);
    let e = pressure_integral_vector(d);

    let n = d.total_dofs();
    let mut tr = Vec::new();
    let mut add = |m: &SparseMatrix, ro: usize, co: usize, s: f64| {
        for (r, c, v) in m.entries() {
            tr.push((ro + r, co + c, s * v));
        }
    };
    add(&a, d.off_u(), d.off_u(), 1.0);
    add(&c, d.off_u(), d.off_u(), -1.0);
    add(&cja, d.off_u(), d.off_u(), 1.0);
    add(&b, d.off_u(), d.off_p(), 1.0);
    add(&cja_y, d.off_u(), d.off_y(), 1.0);
    add(&bt, d.off_p(), d.off_u(), 1.0);
    add(&ay, d.off_y(), d.off_y(), 1.0);
    add(&c, d.off_y(), d.off_y(), -1.0);
    add(&visc_adj, d.off_y(), d.off_u(), 1.0);
    add(&bjac_adj, d.off_y(), d.off_u(), -1.0);
    for (l, &el) in e.iter().enumerate() {
        tr.push((d.off_p() + l, d.off_multiplier(), el));
        tr.push((d.off_multiplier(), d.off_p() + l, el));
    }
    Ok(SparseMatrix::from_triplets(n, n, &tr))
}

/// Compares the directly assembled constrained adjoint matrix against the
/// transpose of the constrained Jacobian, entry by entry.
pub fn check_transpose_consistency(
    d: &Discretization,
    model: &PhysicalModel,
    state: &StateFields,
) -> Result<TransposeReport> {
    let lin_t = constrained_jacobian(d, model, state)?.transpose();
    let adj_raw = assemble_adjoint_operator(d, model, state)?;
    let adj = LinearSystem::with_constraints(
        adj_raw,
        vec![0.0; d.total_dofs()],
        &d.homogeneous_constraints(),
    )?
    .matrix()
    .clone();

    let max_entry = lin_t.max_abs();
    let mut max_dev = 0.0f64;
    for (r, c, v) in adj.entries() {
        max_dev = max_dev.max((v - lin_t.get(r, c)).abs());
    }
    for (r, c, v) in lin_t.entries() {
        max_dev = max_dev.max((v - adj.get(r, c)).abs());
    }
    let constrained_dofs = d.homogeneous_constraints().len();
    let threshold = 1e-12 * max_entry;
    Ok(TransposeReport {
        max_deviation: max_dev,
        max_entry,
        threshold,
        free_dofs: d.total_dofs() - constrained_dofs,
        constrained_dofs,
        pass: max_dev <= threshold,
    })
}

/// Both sides of the duality identity (ζ, ū−u_d) + (μ, ȳ−y_d) = (h, φ̄):
/// the left from a linearized solve, the right from the adjoint.
pub fn duality_pairing(
    d: &Discretization,
    model: &PhysicalModel,
    state: &StateFields,
    linearized: &LinearizedFields,
    adjoint: &AdjointFields,
    h: &[f64],
) -> (f64, f64) {
    let load_u = assemble_tracking_load(d, &d.velocity, state.velocity(d), &model.u_d);
    let load_y = assemble_tracking_load(d, &d.scalars, state.scalars(d), &model.y_d);
    let lhs: f64 = linearized
        .zeta(d)
        .iter()
        .zip(&load_u)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        + linearized
            .mu(d)
            .iter()
            .zip(&load_y)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    let ctrl_load = assemble_control_load(d, h);
    let rhs: f64 = adjoint
        .phi(d)
        .iter()
        .zip(&ctrl_load)
        .map(|(a, b)| a * b)
        .sum();
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::form_b;
    use crate::mesh::build_unit_square_mesh;
    use crate::model::{default_boussinesq_model, BoussinesqParams, GivenField};
    use crate::space::h1_norm;
    use crate::state::{solve_state, NewtonOptions};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn disc(n: usize) -> Discretization {
        Discretization::new(build_unit_square_mesh(n).unwrap())
    }

    fn tracking_model() -> PhysicalModel {
        let mut model = default_boussinesq_model(BoussinesqParams::default()).unwrap();
        model.ydata = Arc::new(|x| [x[0] * x[1], x[0] - x[1]]);
        model.u_d = GivenField::analytic(|x| [x[1], -x[0]]);
        model.y_d = GivenField::analytic(|x| [0.5 * x[0], x[1] * x[1]]);
        model
    }

    fn solved_state(d: &Discretization, model: &PhysicalModel) -> StateFields {
        let mut ctrl = vec![0.0; d.control.dof_count];
        for e in 0..d.mesh.n_triangles() {
            ctrl[d.control.dof(e, 0)] = 0.8;
            ctrl[d.control.dof(e, 1)] = -0.3;
        }
        solve_state(d, model, &ctrl, &NewtonOptions::default())
            .unwrap()
            .0
    }

    fn random_control(d: &Discretization, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..d.control.dof_count)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect()
    }

    #[test]
    fn zero_direction_gives_zero_sensitivity() {
        let d = disc(2);
        let model = tracking_model();
        let state = solved_state(&d, &model);
        let lin = solve_linearized(&d, &model, &state, &vec![0.0; d.control.dof_count]).unwrap();
        assert!(lin.packed.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn linearized_solve_scales_exactly() {
        let d = disc(3);
        let model = tracking_model();
        let state = solved_state(&d, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_control(&d, &mut rng);
        let h2: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
        let lin1 = solve_linearized(&d, &model, &state, &h).unwrap();
        let lin2 = solve_linearized(&d, &model, &state, &h2).unwrap();
        for (a, b) in lin1.packed.iter().zip(&lin2.packed) {
            assert!((2.0 * a - b).abs() <= 1e-11 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn linearized_velocity_is_discretely_divergence_free() {
        let d = disc(3);
        let model = tracking_model();
        let state = solved_state(&d, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = random_control(&d, &mut rng);
        let lin = solve_linearized(&d, &model, &state, &h).unwrap();
        let b = assemble_b(&d);
        let btz = b.transpose().spmv(lin.zeta(&d)).unwrap();
        let norm: f64 = btz.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-9, "divergence of ζ: {norm}");
        let q = d.pressure.interpolate_scalar(&|x| x[0] - x[1] * x[1]);
        assert!(form_b(&d, lin.zeta(&d), &q).abs() <= 1e-9);
        // homogeneous boundary values
        for i in 0..d.n_u() {
            if d.velocity.dirichlet_mask[i] {
                assert_eq!(lin.zeta(&d)[i], 0.0);
                assert_eq!(lin.mu(&d)[i], 0.0);
            }
        }
    }

    #[test]
    fn taylor_remainder_of_the_control_to_state_map_is_second_order() {
        let d = disc(3);
        let model = tracking_model();
        let base = vec![0.4; d.control.dof_count];
        let opts = NewtonOptions::default();
        let (state, _) = solve_state(&d, &model, &base, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = random_control(&d, &mut rng);
        let lin = solve_linearized(&d, &model, &state, &h).unwrap();
        let mut remainders = Vec::new();
        for t in [1e-2, 1e-3, 1e-4] {
            let shifted: Vec<f64> = base.iter().zip(&h).map(|(a, b)| a + t * b).collect();
            let (st, _) = solve_state(&d, &model, &shifted, &opts).unwrap();
            let du: Vec<f64> = st
                .velocity(&d)
                .iter()
                .zip(state.velocity(&d))
                .zip(lin.zeta(&d))
                .map(|((a, b), z)| a - b - t * z)
                .collect();
            let dy: Vec<f64> = st
                .scalars(&d)
                .iter()
                .zip(state.scalars(&d))
                .zip(lin.mu(&d))
                .map(|((a, b), z)| a - b - t * z)
                .collect();
            remainders.push(
                h1_norm(&d.mesh, &d.velocity, &d.quad, &du)
                    + h1_norm(&d.mesh, &d.scalars, &d.quad, &dy),
            );
        }
        let order1 = (remainders[0] / remainders[1]).log10();
        let order2 = (remainders[1] / remainders[2]).log10();
        assert!(order1 >= 1.9, "observed order {order1}");
        assert!(order2 >= 1.9, "observed order {order2}");
    }

    #[test]
    fn perfect_tracking_zeroes_the_adjoint() {
        let d = disc(2);
        let mut model = tracking_model();
        let state = solved_state(&d, &model);
        model.u_d = GivenField::Discrete(state.velocity(&d).to_vec());
        model.y_d = GivenField::Discrete(state.scalars(&d).to_vec());
        let adj = solve_adjoint(&d, &model, &state).unwrap();
        assert!(adj.packed.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn decoupled_adjoint_splits_into_independent_solves() {
        // ν_T ≡ 0, F ≡ 0, ū = 0: the adjoint velocity block no longer sees
        // the scalars, so η̄ solves a pure transposed-diffusion problem
        let d = disc(3);
        let mut model = default_boussinesq_model(BoussinesqParams {
            gamma: 0.0,
            g_t: 0.0,
            g_s: 0.0,
            ..Default::default()
        })
        .unwrap();
        model.y_d = GivenField::analytic(|x| [x[0] * (1.0 - x[0]), 0.0]);
        let state = solve_state(&d, &model, &vec![0.0; d.control.dof_count], &NewtonOptions::default())
            .unwrap()
            .0;
        assert!(state.velocity(&d).iter().all(|v| v.abs() < 1e-12));
        let adj = solve_adjoint(&d, &model, &state).unwrap();
        // tracking misfit in u is zero (u_d = 0 = ū) → φ̄ = 0, ξ = 0
        assert!(adj.phi(&d).iter().all(|v| v.abs() < 1e-11));
        assert!(adj.xi(&d).iter().all(|v| v.abs() < 1e-11));
        // η̄ solves Dᵀ-diffusion with the y-misfit load; verify its residual
        let mut flipped = model.clone();
        flipped.diffusion = transpose_2x2(model.diffusion);
        let ay_t = assemble_ay(&d, &flipped).unwrap();
        let action = ay_t.spmv(adj.eta(&d)).unwrap();
        let load = assemble_tracking_load(&d, &d.scalars, state.scalars(&d), &model.y_d);
        for i in 0..d.n_y() {
            if !d.scalars.dirichlet_mask[i] {
                assert!((action[i] - load[i]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn duality_identity_holds_for_random_directions() {
        let d = disc(3);
        let model = tracking_model();
        let state = solved_state(&d, &model);
        let adj = solve_adjoint(&d, &model, &state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let h = random_control(&d, &mut rng);
            let lin = solve_linearized(&d, &model, &state, &h).unwrap();
            let (lhs, rhs) = duality_pairing(&d, &model, &state, &lin, &adj, &h);
            let scale = lhs.abs().max(rhs.abs()).max(1e-30);
            assert!(
                (lhs - rhs).abs() <= 1e-8 * scale,
                "duality gap {} at scale {scale}",
                lhs - rhs
            );
        }
    }

    #[test]
    fn adjoint_matrix_is_the_transposed_linearization() {
        let d = disc(3);
        let model = tracking_model();
        let state = solved_state(&d, &model);
        let report = check_transpose_consistency(&d, &model, &state).unwrap();
        assert!(report.pass, "{report}");
        assert!(report.free_dofs + report.constrained_dofs == d.total_dofs());
        assert!(report.constrained_dofs > 0);
    }

    #[test]
    fn stokes_block_transpose_consistency_is_symmetric_case() {
        // symmetric data (K and D symmetric, γ=0, F=0, zero state) makes the
        // operator symmetric up to the skew convection at ū=0, which vanishes
        let d = disc(2);
        let mut model = default_boussinesq_model(BoussinesqParams {
            gamma: 0.0,
            g_t: 0.0,
            g_s: 0.0,
            diffusion: [[1.0, 0.0], [0.0, 1.0]],
            ..Default::default()
        })
        .unwrap();
        model.ydata = Arc::new(|_| [0.0, 0.0]);
        let state = StateFields::zero(&d);
        let jac = constrained_jacobian(&d, &model, &state).unwrap();
        let jac_t = jac.transpose();
        let mut max_dev = 0.0f64;
        for (r, c, v) in jac.entries() {
            max_dev = max_dev.max((v - jac_t.get(r, c)).abs());
        }
        assert!(max_dev <= 1e-12 * jac.max_abs());
        let report = check_transpose_consistency(&d, &model, &state).unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn adjoint_energy_ratio_is_invariant_under_residual_scaling() {
        // a-priori estimate echo: ‖φ̄‖₁+‖η̄‖₁ ≤ C(‖ū−u_d‖₀+‖ȳ−y_d‖₀); by
        // linearity in the misfit the ratio is exactly scale-invariant
        let d = disc(3);
        let model = tracking_model();
        let state = solved_state(&d, &model);

        let norm_ratio = |scale: f64| -> f64 {
            let mut m = model.clone();
            let u = state.velocity(&d).to_vec();
            let y = state.scalars(&d).to_vec();
            // target = state − scale·(state − target₀) keeps the misfit
            // direction fixed while scaling its magnitude
            let u0 = match &model.u_d {
                GivenField::Analytic(f) => d.velocity.interpolate_vector(&**f),
                GivenField::Discrete(v) => v.clone(),
            };
            let y0 = match &model.y_d {
                GivenField::Analytic(f) => d.scalars.interpolate_vector(&**f),
                GivenField::Discrete(v) => v.clone(),
            };
            let ud: Vec<f64> = u.iter().zip(&u0).map(|(s, t)| s - scale * (s - t)).collect();
            let yd: Vec<f64> = y.iter().zip(&y0).map(|(s, t)| s - scale * (s - t)).collect();
            m.u_d = GivenField::Discrete(ud);
            m.y_d = GivenField::Discrete(yd);
            let adj = solve_adjoint(&d, &m, &state).unwrap();
            let num = h1_norm(&d.mesh, &d.velocity, &d.quad, adj.phi(&d))
                + h1_norm(&d.mesh, &d.scalars, &d.quad, adj.eta(&d));
            num / scale
        };

        let r1 = norm_ratio(1.0);
        let r2 = norm_ratio(1e-3);
        assert!(r1.is_finite() && r1 > 0.0);
        assert!((r1 - r2).abs() <= 1e-9 * r1, "{r1} vs {r2}");
    }
}
