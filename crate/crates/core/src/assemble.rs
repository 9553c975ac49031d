//! Assembly of every bilinear/trilinear form of the coupled system: viscous
//! and Darcy terms, the pressure/divergence pairing, skew-symmetrized
//! convection for velocity and scalars, cross-diffusion, buoyancy, the
//! coupling blocks of the Newton linearization, load vectors, and the
//! harmonic lifting of scalar boundary data.
//!
//! Matrix assemblers scatter per-element contributions into triplets and
//! build CSR; the `form_*` evaluators integrate the same quantities directly
//! from coefficient vectors and serve as an independent cross-check path.

use crate::error::Error;
use crate::linalg::{LinearSystem, SparseMatrix};
use crate::model::{GivenField, PhysicalModel};
use crate::space::{element_geometry, push_gradient, Discretization, FESpace};
use crate::Result;

/// Per-element quadrature data: scalar P2 nodes, physical weights and points,
/// physical P2 gradients indexed [q][a].
pub(crate) struct ElemQuad<'a> {
    pub nodes: &'a [usize],
    pub weights: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub grads: Vec<[[f64; 2]; 6]>,
}

pub(crate) fn elem_quad<'a>(d: &'a Discretization, e: usize) -> ElemQuad<'a> {
    let (it, det) = element_geometry(&d.mesh, e);
    let scale = det.abs();
    let nq = d.quad.points.len();
    let mut weights = Vec::with_capacity(nq);
    let mut points = Vec::with_capacity(nq);
    let mut grads = Vec::with_capacity(nq);
    for q in 0..nq {
        weights.push(d.quad.weights[q] * scale);
        points.push(d.mesh.map_point(e, d.quad.points[q]));
        let mut g = [[0.0; 2]; 6];
        for a in 0..6 {
            g[a] = push_gradient(it, d.p2_table.grads[q][a]);
        }
        grads.push(g);
    }
    ElemQuad {
        nodes: d.velocity.elem_nodes(e),
        weights,
        points,
        grads,
    }
}

/// Value of a 2-component P2 field at a quadrature point.
pub(crate) fn field2_value(
    space: &FESpace,
    vals: &[f64],
    nodes: &[usize],
    sv: &[f64],
) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (a, &n) in nodes.iter().enumerate() {
        out[0] += sv[a] * vals[space.dof(n, 0)];
        out[1] += sv[a] * vals[space.dof(n, 1)];
    }
    out
}

/// Gradient of a 2-component P2 field: `out[c] = [∂x field_c, ∂y field_c]`.
pub(crate) fn field2_gradient(
    space: &FESpace,
    vals: &[f64],
    nodes: &[usize],
    gq: &[[f64; 2]; 6],
) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for (a, &n) in nodes.iter().enumerate() {
        for c in 0..2 {
            let v = vals[space.dof(n, c)];
            out[c][0] += gq[a][0] * v;
            out[c][1] += gq[a][1] * v;
        }
    }
    out
}

fn nodal_value(per_node: &[f64], nodes: &[usize], sv: &[f64]) -> f64 {
    nodes
        .iter()
        .enumerate()
        .map(|(a, &n)| sv[a] * per_node[n])
        .sum()
}

fn given2(
    field: &GivenField,
    space: &FESpace,
    nodes: &[usize],
    sv: &[f64],
    x: [f64; 2],
) -> [f64; 2] {
    match field {
        GivenField::Analytic(f) => f(x),
        GivenField::Discrete(v) => field2_value(space, v, nodes, sv),
    }
}

/// Viscous/Darcy matrix of the momentum equation:
/// entry((a,i),(b,j)) = ∫ K⁻¹[i][j] N_b N_a + δ_ij ν(T) ∇N_b·∇N_a.
/// `temperature` holds one value per P2 scalar node.
pub fn assemble_a(
    d: &Discretization,
    model: &PhysicalModel,
    temperature: &[f64],
) -> Result<SparseMatrix> {
    assert_eq!(temperature.len(), d.scalars.n_nodes());
    let nu = &model.viscosity.nu;
    let kinv = model.kinv;
    let mut tr = Vec::new();
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        let mut local = [[0.0f64; 12]; 12];
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let t = nodal_value(temperature, eq.nodes, sv);
            let nu_q = nu(t);
            if nu_q <= 0.0 {
                return Err(Error::ModelViolation(format!(
                    "viscosity {nu_q} <= 0 at T = {t} (element {e}); the model requires nu >= nu1 > 0"
                )));
            }
            for a in 0..6 {
                for b in 0..6 {
                    let mass = sv[a] * sv[b];
                    let stiff =
                        eq.grads[q][a][0] * eq.grads[q][b][0] + eq.grads[q][a][1] * eq.grads[q][b][1];
                    for ca in 0..2 {
                        for cb in 0..2 {
                            let mut v = kinv[ca][cb] * mass;
                            if ca == cb {
                                v += nu_q * stiff;
                            }
                            local[2 * a + ca][2 * b + cb] += w * v;
                        }
                    }
                }
            }
        }
        scatter2x2(&mut tr, &local, eq.nodes, eq.nodes, &d.velocity, &d.velocity);
    }
    Ok(SparseMatrix::from_triplets(d.n_u(), d.n_u(), &tr))
}

/// Pressure/divergence pairing on momentum rows:
/// entry((a,i), l) = −∫ P1_l ∂_i N_a. The continuity block is its transpose.
pub fn assemble_b(d: &Discretization) -> SparseMatrix {
    let mut tr = Vec::new();
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        let p_nodes = d.pressure.elem_nodes(e);
        let mut local = [[0.0f64; 3]; 12];
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let pv = &d.p1_table.vals[q];
            for a in 0..6 {
                for ca in 0..2 {
                    for l in 0..3 {
                        local[2 * a + ca][l] -= w * pv[l] * eq.grads[q][a][ca];
                    }
                }
            }
        }
        for a in 0..6 {
            for ca in 0..2 {
                for l in 0..3 {
                    let v = local[2 * a + ca][l];
                    if v != 0.0 {
                        tr.push((d.velocity.dof(eq.nodes[a], ca), p_nodes[l], v));
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(d.n_u(), d.n_p(), &tr)
}

fn skew_convection(d: &Discretization, w_field: &[f64]) -> SparseMatrix {
    assert_eq!(w_field.len(), d.n_u());
    let mut tr = Vec::new();
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        let mut local = [[0.0f64; 6]; 6];
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let wvals = field2_value(&d.velocity, w_field, eq.nodes, sv);
            let mut wg = [0.0f64; 6];
            for a in 0..6 {
                wg[a] = wvals[0] * eq.grads[q][a][0] + wvals[1] * eq.grads[q][a][1];
            }
            for a in 0..6 {
                for b in 0..6 {
                    // ½[(w·∇N_b)N_a − (w·∇N_a)N_b]: exactly antisymmetric in (a,b)
                    local[a][b] += w * 0.5 * (wg[b] * sv[a] - wg[a] * sv[b]);
                }
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                let v = local[a][b];
                if v != 0.0 {
                    for c in 0..2 {
                        tr.push((
                            d.velocity.dof(eq.nodes[a], c),
                            d.velocity.dof(eq.nodes[b], c),
                            v,
                        ));
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(d.n_u(), d.n_u(), &tr)
}

/// Skew-symmetrized convection ½[c(w,u,v) − c(w,v,u)] as a matrix in (u, v);
/// the quadratic form vᵀCv vanishes identically by construction.
pub fn assemble_c_skew(d: &Discretization, w_field: &[f64]) -> SparseMatrix {
    skew_convection(d, w_field)
}

/// Skew-symmetrized scalar transport; the scalar pair shares the velocity
/// space's node layout, so the matrix coincides with `assemble_c_skew`.
pub fn assemble_cy_skew(d: &Discretization, w_field: &[f64]) -> SparseMatrix {
    skew_convection(d, w_field)
}

/// Cross-diffusion matrix: entry((a,k),(b,m)) = D[k][m] ∫ ∇N_b·∇N_a.
pub fn assemble_ay(d: &Discretization, model: &PhysicalModel) -> Result<SparseMatrix> {
    if model.alpha2() <= 0.0 {
        return Err(Error::ModelViolation(format!(
            "diffusion tensor not positive definite: sym part min eigenvalue {}",
            model.alpha2()
        )));
    }
    let dm = model.diffusion;
    let mut tr = Vec::new();
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        let mut stiff = [[0.0f64; 6]; 6];
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            for a in 0..6 {
                for b in 0..6 {
                    stiff[a][b] += w
                        * (eq.grads[q][a][0] * eq.grads[q][b][0]
                            + eq.grads[q][a][1] * eq.grads[q][b][1]);
                }
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                for ka in 0..2 {
                    for kb in 0..2 {
                        let v = dm[ka][kb] * stiff[a][b];
                        if v != 0.0 {
                            tr.push((
                                d.scalars.dof(eq.nodes[a], ka),
                                d.scalars.dof(eq.nodes[b], kb),
                                v,
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(d.n_y(), d.n_y(), &tr))
}

/// Buoyancy load vector (F(y), φ) on momentum rows.
pub fn assemble_buoyancy_value(
    d: &Discretization,
    model: &PhysicalModel,
    y: &[f64],
) -> Vec<f64> {
    assert_eq!(y.len(), d.n_y());
    let f = &model.buoyancy.value;
    let mut out = vec![0.0; d.n_u()];
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let yv = field2_value(&d.scalars, y, eq.nodes, sv);
            let fv = f(yv);
            for (a, &n) in eq.nodes.iter().enumerate() {
                for c in 0..2 {
                    out[d.velocity.dof(n, c)] += w * fv[c] * sv[a];
                }
            }
        }
    }
    out
}

/// Derivative of the buoyancy load in the scalar directions:
/// entry((a,i),(b,k)) = ∫ F_y(y)[i][k] N_b N_a, momentum rows × scalar columns.
pub fn assemble_buoyancy_jacobian(
    d: &Discretization,
    model: &PhysicalModel,
    y: &[f64],
) -> SparseMatrix {
    assert_eq!(y.len(), d.n_y());
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
            for a in 0..6 {
                for b in 0..6 {
                    let mass = w * sv[a] * sv[b];
                    for i in 0..2 {
                        for k in 0..2 {
                            local[6 * a + b][2 * i + k] += mass * j[i][k];
                        }
                    }
                }
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                for i in 0..2 {
                    for k in 0..2 {
                        let v = local[6 * a + b][2 * i + k];
                        if v != 0.0 {
                            tr.push((
                                d.velocity.dof(eq.nodes[a], i),
                                d.scalars.dof(eq.nodes[b], k),
                                v,
                            ));
                        }
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(d.n_u(), d.n_y(), &tr)
}

/// Derivative of the skew transport term with respect to the carrier velocity,
/// at a fixed transported field ψ (velocity or scalar pair):
/// entry((a,k),(b,j)) = ½ ∫ [N_b (∂_j ψ_k) N_a − N_b (∂_j N_a) ψ_k].
pub fn assemble_carrier_jacobian(d: &Discretization, transported: &[f64]) -> SparseMatrix {
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
                    for k in 0..2 {
                        for j in 0..2 {
                            local[6 * a + b][k][j] += w
                                * 0.5
                                * (sv[b] * gpsi[k][j] * sv[a] - sv[b] * eq.grads[q][a][j] * psi[k]);
                        }
                    }
                }
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                for k in 0..2 {
                    for j in 0..2 {
                        let v = local[6 * a + b][k][j];
                        if v != 0.0 {
                            tr.push((
                                d.velocity.dof(eq.nodes[a], k),
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

/// Derivative of the viscous term with respect to temperature:
/// entry((a,i),(b,k)) = δ_{k,T} ∫ ν_T(T) N_b (∇u_i·∇N_a),
/// momentum rows × scalar columns (only the first scalar component couples).
pub fn assemble_viscosity_coupling(
    d: &Discretization,
    model: &PhysicalModel,
    u: &[f64],
    temperature: &[f64],
) -> SparseMatrix {
    assert_eq!(u.len(), d.n_u());
    assert_eq!(temperature.len(), d.scalars.n_nodes());
    let nu_t = &model.viscosity.nu_t;
    let mut tr = Vec::new();
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        let mut local = [[0.0f64; 2]; 36];
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let t = nodal_value(temperature, eq.nodes, sv);
            let nt = nu_t(t);
            if nt == 0.0 {
                continue;
            }
            let gu = field2_gradient(&d.velocity, u, eq.nodes, &eq.grads[q]);
            for a in 0..6 {
                for i in 0..2 {
                    let dot = gu[i][0] * eq.grads[q][a][0] + gu[i][1] * eq.grads[q][a][1];
                    for b in 0..6 {
                        local[6 * a + b][i] += w * nt * sv[b] * dot;
                    }
                }
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                for i in 0..2 {
                    let v = local[6 * a + b][i];
                    if v != 0.0 {
                        tr.push((
                            d.velocity.dof(eq.nodes[a], i),
                            d.scalars.dof(eq.nodes[b], 0),
                            v,
                        ));
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(d.n_u(), d.n_y(), &tr)
}

/// Load vector (f, φ) for a closed-form right-hand side on a 2-component
/// P2 space (momentum source on velocity rows, scalar source on scalar rows).
pub fn assemble_load(d: &Discretization, f: &dyn Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    let mut out = vec![0.0; d.n_u()];
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let fv = f(eq.points[q]);
            for (a, &n) in eq.nodes.iter().enumerate() {
                for c in 0..2 {
                    out[d.velocity.dof(n, c)] += w * fv[c] * sv[a];
                }
            }
        }
    }
    out
}

/// Load vector (U, φ) of a per-cell-constant control on momentum rows.
pub fn assemble_control_load(d: &Discretization, ctrl: &[f64]) -> Vec<f64> {
    assert_eq!(ctrl.len(), d.control.dof_count);
    let mut out = vec![0.0; d.n_u()];
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        let uc = [ctrl[d.control.dof(e, 0)], ctrl[d.control.dof(e, 1)]];
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            for (a, &n) in eq.nodes.iter().enumerate() {
                for c in 0..2 {
                    out[d.velocity.dof(n, c)] += w * uc[c] * sv[a];
                }
            }
        }
    }
    out
}

/// Residual load ∫ (field − target)·φ of a tracking term; `space` is the
/// 2-component P2 space the coefficients live on.
pub fn assemble_tracking_load(
    d: &Discretization,
    space: &FESpace,
    coeffs: &[f64],
    target: &GivenField,
) -> Vec<f64> {
    assert_eq!(coeffs.len(), space.dof_count);
    let mut out = vec![0.0; space.dof_count];
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let v = field2_value(space, coeffs, eq.nodes, sv);
            let t = given2(target, space, eq.nodes, sv, eq.points[q]);
            for (a, &n) in eq.nodes.iter().enumerate() {
                for c in 0..2 {
                    out[space.dof(n, c)] += w * (v[c] - t[c]) * sv[a];
                }
            }
        }
    }
    out
}

/// ½‖field − target‖₀², integrated with the assembly quadrature so that
/// `assemble_tracking_load` is its exact derivative.
pub fn tracking_misfit(
    d: &Discretization,
    space: &FESpace,
    coeffs: &[f64],
    target: &GivenField,
) -> f64 {
    assert_eq!(coeffs.len(), space.dof_count);
    let mut acc = 0.0;
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        for q in 0..eq.weights.len() {
            let sv = &d.p2_table.vals[q];
            let v = field2_value(space, coeffs, eq.nodes, sv);
            let t = given2(target, space, eq.nodes, sv, eq.points[q]);
            let dx = v[0] - t[0];
            let dy = v[1] - t[1];
            acc += eq.weights[q] * (dx * dx + dy * dy);
        }
    }
    0.5 * acc
}

/// Vector e with e_l = ∫ P1_l; eᵀp = ∫p for any discrete pressure, the row
/// and column enforcing the zero-mean constraint.
pub fn pressure_integral_vector(d: &Discretization) -> Vec<f64> {
    let mut out = vec![0.0; d.n_p()];
    for e in 0..d.mesh.n_triangles() {
        let (_, det) = d.mesh.jacobian(e);
        let scale = det.abs();
        let p_nodes = d.pressure.elem_nodes(e);
        for q in 0..d.quad.points.len() {
            let w = d.quad.weights[q] * scale;
            for (l, &n) in p_nodes.iter().enumerate() {
                out[n] += w * d.p1_table.vals[q][l];
            }
        }
    }
    out
}

/// Per-cell averages of a 2-component P2 field, control-space layout.
pub fn cell_average_velocity(d: &Discretization, vals: &[f64]) -> Vec<f64> {
    assert_eq!(vals.len(), d.n_u());
    let mut out = vec![0.0; d.control.dof_count];
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        let area = d.mesh.signed_area(e);
        let mut acc = [0.0; 2];
        for q in 0..eq.weights.len() {
            let sv = &d.p2_table.vals[q];
            let v = field2_value(&d.velocity, vals, eq.nodes, sv);
            acc[0] += eq.weights[q] * v[0];
            acc[1] += eq.weights[q] * v[1];
        }
        out[d.control.dof(e, 0)] = acc[0] / area;
        out[d.control.dof(e, 1)] = acc[1] / area;
    }
    out
}

/// Discrete harmonic extension of scalar-pair boundary data: solves the
/// identity-diffusion problem componentwise with the data as Dirichlet values.
pub fn apply_lifting(d: &Discretization, ydata: &dyn Fn([f64; 2]) -> [f64; 2]) -> Result<Vec<f64>> {
    let mut tr = Vec::new();
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            for a in 0..6 {
                for b in 0..6 {
                    let v = w
                        * (eq.grads[q][a][0] * eq.grads[q][b][0]
                            + eq.grads[q][a][1] * eq.grads[q][b][1]);
                    for k in 0..2 {
                        tr.push((
                            d.scalars.dof(eq.nodes[a], k),
                            d.scalars.dof(eq.nodes[b], k),
                            v,
                        ));
                    }
                }
            }
        }
    }
    let matrix = SparseMatrix::from_triplets(d.n_y(), d.n_y(), &tr);
    let mut constraints = Vec::new();
    for node in 0..d.scalars.n_nodes() {
        let dof0 = d.scalars.dof(node, 0);
        if d.scalars.dirichlet_mask[dof0] {
            let val = ydata(d.scalars.dof_coords[dof0]);
            constraints.push((dof0, val[0]));
            constraints.push((d.scalars.dof(node, 1), val[1]));
        }
    }
    let system = LinearSystem::with_constraints(matrix, vec![0.0; d.n_y()], &constraints)?;
    system.solve_default()
}

fn scatter2x2(
    tr: &mut Vec<(usize, usize, f64)>,
    local: &[[f64; 12]; 12],
    row_nodes: &[usize],
    col_nodes: &[usize],
    row_space: &FESpace,
    col_space: &FESpace,
) {
    for a in 0..6 {
        for ca in 0..2 {
            for b in 0..6 {
                for cb in 0..2 {
                    let v = local[2 * a + ca][2 * b + cb];
                    if v != 0.0 {
                        tr.push((
                            row_space.dof(row_nodes[a], ca),
                            col_space.dof(col_nodes[b], cb),
                            v,
                        ));
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Direct form evaluation from coefficient vectors (independent of the matrix
// path; used for cross-checks and the curvature diagnostics).
// ---------------------------------------------------------------------------

/// a(y; u, v) = (K⁻¹u, v) + (ν(T)∇u, ∇v).
pub fn form_a(
    d: &Discretization,
    model: &PhysicalModel,
    temperature: &[f64],
    u: &[f64],
    v: &[f64],
) -> f64 {
    let nu = &model.viscosity.nu;
    let kinv = model.kinv;
    let mut acc = 0.0;
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let t = nodal_value(temperature, eq.nodes, sv);
            let uv = field2_value(&d.velocity, u, eq.nodes, sv);
            let vv = field2_value(&d.velocity, v, eq.nodes, sv);
            let gu = field2_gradient(&d.velocity, u, eq.nodes, &eq.grads[q]);
            let gv = field2_gradient(&d.velocity, v, eq.nodes, &eq.grads[q]);
            let mut val = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    val += kinv[i][j] * uv[j] * vv[i];
                }
                val += nu(t) * (gu[i][0] * gv[i][0] + gu[i][1] * gv[i][1]);
            }
            acc += w * val;
        }
    }
    acc
}

/// b(v, q) = −(q, div v).
pub fn form_b(d: &Discretization, v: &[f64], p: &[f64]) -> f64 {
    assert_eq!(p.len(), d.n_p());
    let mut acc = 0.0;
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        let p_nodes = d.pressure.elem_nodes(e);
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let gv = field2_gradient(&d.velocity, v, eq.nodes, &eq.grads[q]);
            let div = gv[0][0] + gv[1][1];
            let mut pq = 0.0;
            for (l, &n) in p_nodes.iter().enumerate() {
                pq += d.p1_table.vals[q][l] * p[n];
            }
            acc -= w * pq * div;
        }
    }
    acc
}

/// Raw convection c(w, u, v) = ((w·∇)u, v); works for any pair of
/// 2-component P2 coefficient vectors (velocity or scalar pair).
pub fn form_c(d: &Discretization, w_field: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let wv = field2_value(&d.velocity, w_field, eq.nodes, sv);
            let vv = field2_value(&d.velocity, v, eq.nodes, sv);
            let gu = field2_gradient(&d.velocity, u, eq.nodes, &eq.grads[q]);
            let mut val = 0.0;
            for i in 0..2 {
                val += (wv[0] * gu[i][0] + wv[1] * gu[i][1]) * vv[i];
            }
            acc += w * val;
        }
    }
    acc
}

/// Skew-symmetrized convection ½[c(w,u,v) − c(w,v,u)].
pub fn form_c_skew(d: &Discretization, w_field: &[f64], u: &[f64], v: &[f64]) -> f64 {
    0.5 * (form_c(d, w_field, u, v) - form_c(d, w_field, v, u))
}

/// a_y(y, s) = (D∇y, ∇s).
pub fn form_ay(d: &Discretization, model: &PhysicalModel, y: &[f64], s: &[f64]) -> f64 {
    let dm = model.diffusion;
    let mut acc = 0.0;
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let gy = field2_gradient(&d.scalars, y, eq.nodes, &eq.grads[q]);
            let gs = field2_gradient(&d.scalars, s, eq.nodes, &eq.grads[q]);
            let mut val = 0.0;
            for ka in 0..2 {
                for kb in 0..2 {
                    val += dm[ka][kb] * (gy[kb][0] * gs[ka][0] + gy[kb][1] * gs[ka][1]);
                }
            }
            acc += w * val;
        }
    }
    acc
}

/// d(y, v) = (F(y), v).
pub fn form_buoyancy(d: &Discretization, model: &PhysicalModel, y: &[f64], v: &[f64]) -> f64 {
    let f = &model.buoyancy.value;
    let mut acc = 0.0;
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let yv = field2_value(&d.scalars, y, eq.nodes, sv);
            let vv = field2_value(&d.velocity, v, eq.nodes, sv);
            let fv = f(yv);
            acc += w * (fv[0] * vv[0] + fv[1] * vv[1]);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;
    use crate::model::{
        default_boussinesq_model, BoussinesqParams, BuoyancyModel, GivenField, ViscosityModel,
    };
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn disc(n: usize) -> Discretization {
        Discretization::new(build_unit_square_mesh(n).unwrap())
    }

    fn model_with(nu0: f64, gamma: f64) -> PhysicalModel {
        default_boussinesq_model(BoussinesqParams {
            nu0,
            gamma,
            ..Default::default()
        })
        .unwrap()
    }

    fn zero_temperature(d: &Discretization) -> Vec<f64> {
        vec![0.0; d.scalars.n_nodes()]
    }

    fn random_field(d: &Discretization, rng: &mut ChaCha8Rng, zero_boundary: bool) -> Vec<f64> {
        let mut v: Vec<f64> = (0..d.n_u()).map(|_| rng.random_range(-1.0..1.0)).collect();
        if zero_boundary {
            for (dof, m) in d.velocity.dirichlet_mask.iter().enumerate() {
                if *m {
                    v[dof] = 0.0;
                }
            }
        }
        v
    }

    #[test]
    fn viscous_form_of_quadratic_field_matches_hand_integral() {
        // u = v = (x², 0), ν ≡ 1, K⁻¹ = I:
        // ∫ x⁴ + ∫ (2x)² = 1/5 + 4/3 = 23/15
        let d = disc(1);
        let model = model_with(1.0, 0.0);
        let u = d.velocity.interpolate_vector(&|x| [x[0] * x[0], 0.0]);
        let a = assemble_a(&d, &model, &zero_temperature(&d)).unwrap();
        let au = a.spmv(&u).unwrap();
        let quad_form: f64 = u.iter().zip(&au).map(|(x, y)| x * y).sum();
        assert!((quad_form - 23.0 / 15.0).abs() < 1e-13, "got {quad_form}");
        let direct = form_a(&d, &model, &zero_temperature(&d), &u, &u);
        assert!((direct - 23.0 / 15.0).abs() < 1e-13);
    }

    #[test]
    fn viscous_matrix_scales_linearly_in_viscosity() {
        let d = disc(2);
        let mut m1 = model_with(1.0, 0.0);
        m1.kinv = [[0.0; 2]; 2];
        let mut m2 = model_with(2.0, 0.0);
        m2.kinv = [[0.0; 2]; 2];
        let t = zero_temperature(&d);
        let a1 = assemble_a(&d, &m1, &t).unwrap();
        let a2 = assemble_a(&d, &m2, &t).unwrap();
        assert_eq!(a1.nnz(), a2.nnz());
        for (v1, v2) in a1.values().iter().zip(a2.values()) {
            assert!((2.0 * v1 - v2).abs() <= 1e-15 * v2.abs().max(1.0));
        }
    }

    #[test]
    fn viscous_action_on_constant_field_is_pure_mass_action() {
        // gradients of a constant interpolant vanish, leaving (K⁻¹ u, φ)
        let d = disc(2);
        let model = model_with(1.0, 0.5);
        let t = d
            .scalars
            .interpolate(&|x| vec![x[0] - 0.3, 0.0])
            .iter()
            .step_by(2)
            .copied()
            .collect::<Vec<_>>();
        let u = d.velocity.interpolate_vector(&|_| [1.0, 2.0]);
        let a = assemble_a(&d, &model, &t).unwrap();
        let au = a.spmv(&u).unwrap();
        let k = model.kinv;
        let expect = assemble_load(&d, &|_| {
            [k[0][0] * 1.0 + k[0][1] * 2.0, k[1][0] * 1.0 + k[1][1] * 2.0]
        });
        for (got, want) in au.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn nonpositive_viscosity_is_a_model_violation() {
        let d = disc(2);
        let mut model = model_with(1.0, 0.0);
        model.viscosity = ViscosityModel {
            nu: Arc::new(|t| t),
            ..ViscosityModel::constant(1.0)
        };
        let t: Vec<f64> = d
            .scalars
            .interpolate(&|x| vec![x[0] - 0.5, 0.0])
            .iter()
            .step_by(2)
            .copied()
            .collect();
        let err = assemble_a(&d, &model, &t);
        assert!(matches!(err, Err(Error::ModelViolation(_))));
    }

    #[test]
    fn pressure_pairing_vanishes_for_divergence_free_field() {
        let d = disc(3);
        let v = d.velocity.interpolate_vector(&|x| [x[0], -x[1]]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let q: Vec<f64> = (0..d.n_p()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = form_b(&d, &v, &q);
            assert!(b.abs() < 1e-13, "divergence-free pairing {b}");
        }
    }

    #[test]
    fn pressure_pairing_of_quadratic_field_matches_hand_integral() {
        // v = (x², 0), q = x − 1/2: −∫ (x−1/2)·2x = −1/6
        let d = disc(1);
        let v = d.velocity.interpolate_vector(&|x| [x[0] * x[0], 0.0]);
        let q = d.pressure.interpolate_scalar(&|x| x[0] - 0.5);
        let direct = form_b(&d, &v, &q);
        assert!((direct + 1.0 / 6.0).abs() < 1e-14, "got {direct}");
        let b = assemble_b(&d);
        let bq = b.spmv(&q).unwrap();
        let paired: f64 = v.iter().zip(&bq).map(|(a, c)| a * c).sum();
        assert!((paired + 1.0 / 6.0).abs() < 1e-14);
        // constant divergence against a zero-mean pressure integrates to zero
        let vlin = d.velocity.interpolate_vector(&|x| [x[0], 0.0]);
        assert!(form_b(&d, &vlin, &q).abs() < 1e-14);
    }

    #[test]
    fn skew_convection_quadratic_form_vanishes() {
        let d = disc(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w = random_field(&d, &mut rng, false);
            let v = random_field(&d, &mut rng, false);
            let c = assemble_c_skew(&d, &w);
            let cv = c.spmv(&v).unwrap();
            let quad: f64 = v.iter().zip(&cv).map(|(a, b)| a * b).sum();
            let scale: f64 = 1.0
                + v.iter().map(|x| x * x).sum::<f64>().sqrt()
                    * cv.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(quad.abs() <= 1e-12 * scale, "quad {quad} scale {scale}");
        }
    }

    #[test]
    fn skew_convection_matches_direct_form_evaluation() {
        let d = disc(2);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let w = random_field(&d, &mut rng, false);
            let u = random_field(&d, &mut rng, false);
            let v = random_field(&d, &mut rng, false);
            let c = assemble_c_skew(&d, &w);
            let cu = c.spmv(&u).unwrap();
            let via_matrix: f64 = v.iter().zip(&cu).map(|(a, b)| a * b).sum();
            let direct = form_c_skew(&d, &w, &u, &v);
            assert!(
                (via_matrix - direct).abs() <= 1e-12 * (1.0 + direct.abs()),
                "{via_matrix} vs {direct}"
            );
        }
    }

    #[test]
    fn skew_convection_of_shear_fields_evaluates_to_zero() {
        // w = (y,0), u = (x,0), v = (0,x): both raw orders integrate to the
        // same value, so the skew combination cancels
        let d = disc(2);
        let w = d.velocity.interpolate_vector(&|x| [x[1], 0.0]);
        let u = d.velocity.interpolate_vector(&|x| [x[0], 0.0]);
        let v = d.velocity.interpolate_vector(&|x| [0.0, x[0]]);
        assert!(form_c_skew(&d, &w, &u, &v).abs() < 1e-14);
    }

    #[test]
    fn skew_convection_of_quadratic_transport_matches_hand_integral() {
        // w = (1,0), u = (x²,0), v = (x,0):
        // c(w,u,v) = ∫2x·x = 2/3, c(w,v,u) = ∫x² = 1/3, skew = 1/6
        let d = disc(2);
        let w = d.velocity.interpolate_vector(&|_| [1.0, 0.0]);
        let u = d.velocity.interpolate_vector(&|x| [x[0] * x[0], 0.0]);
        let v = d.velocity.interpolate_vector(&|x| [x[0], 0.0]);
        assert!((form_c(&d, &w, &u, &v) - 2.0 / 3.0).abs() < 1e-14);
        assert!((form_c(&d, &w, &v, &u) - 1.0 / 3.0).abs() < 1e-14);
        assert!((form_c_skew(&d, &w, &u, &v) - 1.0 / 6.0).abs() < 1e-14);
        // the scalar-pair version reuses the same layout and must agree
        let cy = assemble_cy_skew(&d, &w);
        let cyu = cy.spmv(&u).unwrap();
        let paired: f64 = v.iter().zip(&cyu).map(|(a, b)| a * b).sum();
        assert!((paired - 1.0 / 6.0).abs() < 1e-13);
    }

    #[test]
    fn raw_transport_of_constant_field_vanishes() {
        let d = disc(2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = random_field(&d, &mut rng, false);
        let y = d.velocity.interpolate_vector(&|_| [3.0, -2.0]);
        let s = random_field(&d, &mut rng, false);
        assert!(form_c(&d, &w, &y, &s).abs() < 1e-13);
    }

    #[test]
    fn cross_diffusion_annihilates_constants_and_stays_coercive() {
        let d = disc(2);
        let model = model_with(1.0, 0.0);
        let ay = assemble_ay(&d, &model).unwrap();
        let yconst = d.scalars.interpolate(&|_| vec![2.0, -1.0]);
        let action = ay.spmv(&yconst).unwrap();
        assert!(action.iter().all(|v| v.abs() < 1e-12));
        // quadratic form dominates alpha2 · |y|₁² (alpha2 = 0.85 for the default D)
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let y = random_field(&d, &mut rng, true);
            let ayy = ay.spmv(&y).unwrap();
            let quad: f64 = y.iter().zip(&ayy).map(|(a, b)| a * b).sum();
            let semi =
                crate::space::h1_seminorm_sq(&d.mesh, &d.scalars, &d.quad, &y);
            assert!(quad >= model.alpha2() * semi - 1e-11 * semi.max(1.0));
        }
    }

    #[test]
    fn cross_diffusion_couples_components_through_off_diagonal_entries() {
        // D = [[1, 0.1],[0.2, 1]], y = (x², 0), s = (0, x²):
        // a_y(y,s) = D[1][0]·∫(2x)² = 0.2·4/3 = 4/15
        let d = disc(2);
        let model = model_with(1.0, 0.0);
        let y = d.scalars.interpolate(&|x| vec![x[0] * x[0], 0.0]);
        let s = d.scalars.interpolate(&|x| vec![0.0, x[0] * x[0]]);
        let val = form_ay(&d, &model, &y, &s);
        assert!((val - 4.0 / 15.0).abs() < 1e-13, "got {val}");
        let ay = assemble_ay(&d, &model).unwrap();
        let ayy = ay.spmv(&y).unwrap();
        let paired: f64 = s.iter().zip(&ayy).map(|(a, b)| a * b).sum();
        assert!((paired - 4.0 / 15.0).abs() < 1e-13);
    }

    #[test]
    fn indefinite_diffusion_tensor_is_rejected() {
        let d = disc(1);
        let mut model = model_with(1.0, 0.0);
        model.diffusion = [[1.0, 3.0], [3.0, 1.0]];
        assert!(matches!(
            assemble_ay(&d, &model),
            Err(Error::ModelViolation(_))
        ));
    }

    #[test]
    fn buoyancy_load_vanishes_at_zero_scalars_and_matches_hand_integral() {
        let d = disc(2);
        let model = model_with(1.0, 0.0);
        let zero = vec![0.0; d.n_y()];
        let load = assemble_buoyancy_value(&d, &model, &zero);
        assert!(load.iter().all(|v| v.abs() == 0.0));
        // F(y) = (0, T²) with T = x: (F, v) with v = (0,1) is ∫x² = 1/3
        let mut quad_model = model_with(1.0, 0.0);
        quad_model.buoyancy = BuoyancyModel {
            value: Arc::new(|y| [0.0, y[0] * y[0]]),
            jacobian: Arc::new(|y| [[0.0, 0.0], [2.0 * y[0], 0.0]]),
            hessian: Arc::new(|_| {
                let mut h = [[[0.0; 2]; 2]; 2];
                h[1][0][0] = 2.0;
                h
            }),
            growth: 1.0,
            lipschitz: 1.0,
            second_derivative_bound: 2.0,
        };
        let y = d.scalars.interpolate(&|x| vec![x[0], 0.0]);
        let v = d.velocity.interpolate_vector(&|_| [0.0, 1.0]);
        let val = form_buoyancy(&d, &quad_model, &y, &v);
        assert!((val - 1.0 / 3.0).abs() < 1e-14, "got {val}");
        let load = assemble_buoyancy_value(&d, &quad_model, &y);
        let paired: f64 = v.iter().zip(&load).map(|(a, b)| a * b).sum();
        assert!((paired - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn linear_buoyancy_jacobian_is_state_independent() {
        let d = disc(2);
        let model = model_with(1.0, 0.0);
        let y1 = vec![0.0; d.n_y()];
        let y2 = d.scalars.interpolate(&|x| vec![x[0], x[1]]);
        let j1 = assemble_buoyancy_jacobian(&d, &model, &y1);
        let j2 = assemble_buoyancy_jacobian(&d, &model, &y2);
        assert_eq!(j1.nnz(), j2.nnz());
        for (a, b) in j1.values().iter().zip(j2.values()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn buoyancy_jacobian_matches_directional_finite_difference() {
        let d = disc(2);
        let mut model = model_with(1.0, 0.0);
        model.buoyancy = BuoyancyModel {
            value: Arc::new(|y| [0.1 * y[1] * y[1], y[0] * y[0]]),
            jacobian: Arc::new(|y| [[0.0, 0.2 * y[1]], [2.0 * y[0], 0.0]]),
            hessian: Arc::new(|_| {
                let mut h = [[[0.0; 2]; 2]; 2];
                h[0][1][1] = 0.2;
                h[1][0][0] = 2.0;
                h
            }),
            growth: 1.0,
            lipschitz: 1.0,
            second_derivative_bound: 2.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let y = random_field(&d, &mut rng, false);
        let mu = random_field(&d, &mut rng, false);
        let v = random_field(&d, &mut rng, false);
        let j = assemble_buoyancy_jacobian(&d, &model, &y);
        let jmu = j.spmv(&mu).unwrap();
        let predicted: f64 = v.iter().zip(&jmu).map(|(a, b)| a * b).sum();
        let h = 1e-5;
        let plus: Vec<f64> = y.iter().zip(&mu).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = y.iter().zip(&mu).map(|(a, b)| a - h * b).collect();
        let fd =
            (form_buoyancy(&d, &model, &plus, &v) - form_buoyancy(&d, &model, &minus, &v))
                / (2.0 * h);
        assert!(
            (fd - predicted).abs() <= 1e-8 * (1.0 + predicted.abs()),
            "fd {fd} vs {predicted}"
        );
    }

    #[test]
    fn carrier_jacobian_agrees_with_form_linearity_in_the_transport_field() {
        let d = disc(2);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let psi = random_field(&d, &mut rng, false);
        let dw = random_field(&d, &mut rng, false);
        let v = random_field(&d, &mut rng, false);
        let cj = assemble_carrier_jacobian(&d, &psi);
        let cjd = cj.spmv(&dw).unwrap();
        let predicted: f64 = v.iter().zip(&cjd).map(|(a, b)| a * b).sum();
        // the skew form is linear in its carrier, so the derivative equals
        // the form evaluated at the perturbation itself
        let direct = form_c_skew(&d, &dw, &psi, &v);
        assert!(
            (predicted - direct).abs() <= 1e-12 * (1.0 + direct.abs()),
            "{predicted} vs {direct}"
        );
    }

    #[test]
    fn viscosity_coupling_matches_directional_finite_difference() {
        let d = disc(2);
        let model = model_with(1.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let u = random_field(&d, &mut rng, false);
        let v = random_field(&d, &mut rng, false);
        let t0: Vec<f64> = (0..d.scalars.n_nodes())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mu_pair = random_field(&d, &mut rng, false);
        let vc = assemble_viscosity_coupling(&d, &model, &u, &t0);
        let vcm = vc.spmv(&mu_pair).unwrap();
        let predicted: f64 = v.iter().zip(&vcm).map(|(a, b)| a * b).sum();
        let h = 1e-5;
        let mu_t: Vec<f64> = (0..d.scalars.n_nodes())
            .map(|n| mu_pair[d.scalars.dof(n, 0)])
            .collect();
        let tp: Vec<f64> = t0.iter().zip(&mu_t).map(|(a, b)| a + h * b).collect();
        let tm: Vec<f64> = t0.iter().zip(&mu_t).map(|(a, b)| a - h * b).collect();
        let fd = (form_a(&d, &model, &tp, &u, &v) - form_a(&d, &model, &tm, &u, &v)) / (2.0 * h);
        assert!(
            (fd - predicted).abs() <= 1e-6 * (1.0 + predicted.abs()),
            "fd {fd} vs {predicted}"
        );
        // the concentration column must be empty
        for (_, col, val) in vc.entries() {
            if col % 2 == 1 {
                assert_eq!(val, 0.0);
            }
        }
    }

    #[test]
    fn viscous_quadratic_form_dominates_scaled_stiffness() {
        let d = disc(2);
        let model = model_with(1.0, 0.5);
        let mut stiffness_model = model_with(1.0, 0.0);
        stiffness_model.kinv = [[0.0; 2]; 2];
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let t: Vec<f64> = (0..d.scalars.n_nodes())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let a = assemble_a(&d, &model, &t).unwrap();
        let s = assemble_a(&d, &stiffness_model, &zero_temperature(&d)).unwrap();
        for _ in 0..5 {
            let v = random_field(&d, &mut rng, true);
            let av = a.spmv(&v).unwrap();
            let sv = s.spmv(&v).unwrap();
            let qa: f64 = v.iter().zip(&av).map(|(x, y)| x * y).sum();
            let qs: f64 = v.iter().zip(&sv).map(|(x, y)| x * y).sum();
            assert!(qa >= model.viscosity.nu_lower * qs - 1e-12 * qs.abs().max(1.0));
        }
    }

    #[test]
    fn control_load_pairs_like_the_l2_inner_product() {
        let d = disc(2);
        let mut ctrl = vec![0.0; d.control.dof_count];
        for e in 0..d.mesh.n_triangles() {
            ctrl[d.control.dof(e, 0)] = 1.0;
        }
        let load = assemble_control_load(&d, &ctrl);
        let v = d.velocity.interpolate_vector(&|x| [x[0], 0.0]);
        let paired: f64 = v.iter().zip(&load).map(|(a, b)| a * b).sum();
        assert!((paired - 0.5).abs() < 1e-14, "∫x over the square, got {paired}");
    }

    #[test]
    fn pressure_integral_vector_integrates_linears_exactly() {
        let d = disc(3);
        let e = pressure_integral_vector(&d);
        let total: f64 = e.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        let q = d.pressure.interpolate_scalar(&|x| x[0] - 0.5);
        let mean: f64 = e.iter().zip(&q).map(|(a, b)| a * b).sum();
        assert!(mean.abs() < 1e-15);
    }

    #[test]
    fn cell_averages_of_linear_field_are_centroid_values() {
        let d = disc(3);
        let v = d.velocity.interpolate_vector(&|x| [x[0], x[1]]);
        let avg = cell_average_velocity(&d, &v);
        for e in 0..d.mesh.n_triangles() {
            let c = d.mesh.centroid(e);
            assert!((avg[d.control.dof(e, 0)] - c[0]).abs() < 1e-13);
            assert!((avg[d.control.dof(e, 1)] - c[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn tracking_load_is_the_exact_derivative_of_the_misfit() {
        let d = disc(2);
        let target = GivenField::analytic(|x| [0.3 * x[1], 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let u = random_field(&d, &mut rng, false);
        let delta = random_field(&d, &mut rng, false);
        let load = assemble_tracking_load(&d, &d.velocity, &u, &target);
        let predicted: f64 = delta.iter().zip(&load).map(|(a, b)| a * b).sum();
        let h = 1e-6;
        let plus: Vec<f64> = u.iter().zip(&delta).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = u.iter().zip(&delta).map(|(a, b)| a - h * b).collect();
        // the misfit is quadratic in the coefficients, so the central
        // difference is exact up to round-off
        let fd = (tracking_misfit(&d, &d.velocity, &plus, &target)
            - tracking_misfit(&d, &d.velocity, &minus, &target))
            / (2.0 * h);
        assert!((fd - predicted).abs() <= 1e-9 * (1.0 + predicted.abs()));
    }

    #[test]
    fn discrete_target_makes_misfit_exactly_zero() {
        let d = disc(2);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let u = random_field(&d, &mut rng, false);
        let target = GivenField::Discrete(u.clone());
        assert_eq!(tracking_misfit(&d, &d.velocity, &u, &target), 0.0);
        let load = assemble_tracking_load(&d, &d.velocity, &u, &target);
        assert!(load.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lifting_reproduces_harmonic_boundary_data() {
        let d = disc(3);
        // x is harmonic and lies in the P2 space, so the extension is exact
        let lift = apply_lifting(&d, &|x| [x[0], x[0]]).unwrap();
        let expect = d.scalars.interpolate(&|x| vec![x[0], x[0]]);
        for (a, b) in lift.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10);
        }
        let const_lift = apply_lifting(&d, &|_| [2.5, -1.0]).unwrap();
        for node in 0..d.scalars.n_nodes() {
            assert!((const_lift[d.scalars.dof(node, 0)] - 2.5).abs() < 1e-10);
            assert!((const_lift[d.scalars.dof(node, 1)] + 1.0).abs() < 1e-10);
        }
        let zero_lift = apply_lifting(&d, &|_| [0.0, 0.0]).unwrap();
        assert!(zero_lift.iter().all(|v| v.abs() < 1e-14));
    }
}
