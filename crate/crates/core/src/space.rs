//! Finite-element spaces on the triangulated unit square: Taylor–Hood P2/P1
//! for velocity/pressure, a P2 pair for the transported scalars, a per-cell
//! constant pair for the control, and the packed dof layout of the coupled
//! system (velocity | pressure | scalars | zero-mean multiplier).

use crate::mesh::{EdgeTable, TriMesh};
use crate::quadrature::QuadratureRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    /// Quadratic vector elements (velocity, adjoint velocity).
    VelocityP2,
    /// Linear pressure with the zero-mean constraint carried by a multiplier.
    PressureP1,
    /// Quadratic scalar (a single transported quantity or lifting component).
    ScalarP2,
    /// Two stacked quadratic scalars (temperature, concentration), interleaved.
    ScalarPairP2,
    /// Piecewise-constant 2-component control.
    ControlP0,
}

#[derive(Debug, Clone)]
pub struct FESpace {
    pub kind: SpaceKind,
    pub components: usize,
    pub dof_count: usize,
    pub dof_coords: Vec<[f64; 2]>,
    pub dirichlet_mask: Vec<bool>,
    nodes: usize,
    stride: usize,
    elem_nodes: Vec<usize>,
}

impl FESpace {
    pub fn build(kind: SpaceKind, mesh: &TriMesh, edges: &EdgeTable) -> FESpace {
        let components = match kind {
            SpaceKind::VelocityP2 | SpaceKind::ScalarPairP2 | SpaceKind::ControlP0 => 2,
            SpaceKind::PressureP1 | SpaceKind::ScalarP2 => 1,
        };
        let nv = mesh.n_vertices();
        let (nodes, stride) = match kind {
            SpaceKind::VelocityP2 | SpaceKind::ScalarP2 | SpaceKind::ScalarPairP2 => {
                (nv + edges.n_edges(), 6)
            }
            SpaceKind::PressureP1 => (nv, 3),
            SpaceKind::ControlP0 => (mesh.n_triangles(), 1),
        };
        let mut elem_nodes = Vec::with_capacity(mesh.n_triangles() * stride);
        for (t, tri) in mesh.triangles.iter().enumerate() {
            match stride {
                6 => {
                    elem_nodes.extend_from_slice(tri);
                    elem_nodes.extend(edges.tri_edges[t].iter().map(|&e| nv + e));
                }
                3 => elem_nodes.extend_from_slice(tri),
                1 => elem_nodes.push(t),
                _ => unreachable!(),
            }
        }
        let mut node_coords = Vec::with_capacity(nodes);
        match kind {
            SpaceKind::ControlP0 => {
                for t in 0..mesh.n_triangles() {
                    node_coords.push(mesh.centroid(t));
                }
            }
            SpaceKind::PressureP1 => node_coords.extend_from_slice(&mesh.vertices),
            _ => {
                node_coords.extend_from_slice(&mesh.vertices);
                for e in &edges.edges {
                    let (p, q) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
                    node_coords.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                }
            }
        }
        let dof_count = nodes * components;
        let mut dof_coords = Vec::with_capacity(dof_count);
        let mut dirichlet_mask = Vec::with_capacity(dof_count);
        let constrained_kind = matches!(
            kind,
            SpaceKind::VelocityP2 | SpaceKind::ScalarP2 | SpaceKind::ScalarPairP2
        );
        for coord in &node_coords {
            for _ in 0..components {
                dof_coords.push(*coord);
                dirichlet_mask.push(constrained_kind && mesh.on_boundary(*coord));
            }
        }
        FESpace {
            kind,
            components,
            dof_count,
            dof_coords,
            dirichlet_mask,
            nodes,
            stride,
            elem_nodes,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes
    }

    /// Scalar node count per element (6 for P2, 3 for P1, 1 for P0).
    pub fn nodes_per_elem(&self) -> usize {
        self.stride
    }

    pub fn elem_nodes(&self, e: usize) -> &[usize] {
        &self.elem_nodes[e * self.stride..(e + 1) * self.stride]
    }

    pub fn dof(&self, node: usize, comp: usize) -> usize {
        node * self.components + comp
    }

    /// Nodal interpolation; `f` returns one value per component.
    pub fn interpolate(&self, f: &dyn Fn([f64; 2]) -> Vec<f64>) -> Vec<f64> {
        let mut vals = vec![0.0; self.dof_count];
        for node in 0..self.nodes {
            let x = self.dof_coords[self.dof(node, 0)];
            let fx = f(x);
            assert_eq!(fx.len(), self.components);
            for (c, v) in fx.iter().enumerate() {
                vals[self.dof(node, c)] = *v;
            }
        }
        vals
    }

    pub fn interpolate_vector(&self, f: &dyn Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        assert_eq!(self.components, 2);
        self.interpolate(&|x| f(x).to_vec())
    }

    pub fn interpolate_scalar(&self, f: &dyn Fn([f64; 2]) -> f64) -> Vec<f64> {
        assert_eq!(self.components, 1);
        self.interpolate(&|x| vec![f(x)])
    }
}

/// One component of a multi-component field as a per-node vector.
pub fn extract_component(space: &FESpace, vals: &[f64], comp: usize) -> Vec<f64> {
    assert_eq!(vals.len(), space.dof_count);
    assert!(comp < space.components);
    (0..space.n_nodes()).map(|n| vals[space.dof(n, comp)]).collect()
}

/// P2 shape values at a barycentric point, local order [v0, v1, v2, e01, e12, e20].
pub fn shape_p2(b: [f64; 3]) -> [f64; 6] {
    let [l0, l1, l2] = b;
    [
        l0 * (2.0 * l0 - 1.0),
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        4.0 * l0 * l1,
        4.0 * l1 * l2,
        4.0 * l2 * l0,
    ]
}

/// Reference-coordinate gradients of the P2 shapes (x = l1, y = l2).
pub fn grad_p2_ref(b: [f64; 3]) -> [[f64; 2]; 6] {
    let [l0, l1, l2] = b;
    let g0 = [-1.0, -1.0];
    let g1 = [1.0, 0.0];
    let g2 = [0.0, 1.0];
    let vertex = |l: f64, g: [f64; 2]| [(4.0 * l - 1.0) * g[0], (4.0 * l - 1.0) * g[1]];
    let edge = |la: f64, ga: [f64; 2], lb: f64, gb: [f64; 2]| {
        [4.0 * (la * gb[0] + lb * ga[0]), 4.0 * (la * gb[1] + lb * ga[1])]
    };
    [
        vertex(l0, g0),
        vertex(l1, g1),
        vertex(l2, g2),
        edge(l0, g0, l1, g1),
        edge(l1, g1, l2, g2),
        edge(l2, g2, l0, g0),
    ]
}

pub fn shape_p1(b: [f64; 3]) -> [f64; 3] {
    [b[0], b[1], b[2]]
}

pub const GRAD_P1_REF: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

/// Shape values/reference gradients tabulated at the quadrature points.
#[derive(Debug, Clone)]
pub(crate) struct BasisTable {
    pub vals: Vec<Vec<f64>>,
    pub grads: Vec<Vec<[f64; 2]>>,
}

impl BasisTable {
    pub fn tabulate(stride: usize, rule: &QuadratureRule) -> BasisTable {
        let mut vals = Vec::with_capacity(rule.len());
        let mut grads = Vec::with_capacity(rule.len());
        for &p in &rule.points {
            match stride {
                6 => {
                    vals.push(shape_p2(p).to_vec());
                    grads.push(grad_p2_ref(p).to_vec());
                }
                3 => {
                    vals.push(shape_p1(p).to_vec());
                    grads.push(GRAD_P1_REF.to_vec());
                }
                1 => {
                    vals.push(vec![1.0]);
                    grads.push(vec![[0.0, 0.0]]);
                }
                _ => unreachable!(),
            }
        }
        BasisTable { vals, grads }
    }
}

/// Mesh, spaces, quadrature, and the packed layout of the coupled system:
/// [velocity | pressure | scalar pair | zero-mean multiplier].
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: TriMesh,
    pub edges: EdgeTable,
    pub velocity: FESpace,
    pub pressure: FESpace,
    pub scalars: FESpace,
    pub control: FESpace,
    pub quad: QuadratureRule,
    pub(crate) p2_table: BasisTable,
    pub(crate) p1_table: BasisTable,
}

impl Discretization {
    pub fn new(mesh: TriMesh) -> Discretization {
        let edges = EdgeTable::build(&mesh);
        let velocity = FESpace::build(SpaceKind::VelocityP2, &mesh, &edges);
        let pressure = FESpace::build(SpaceKind::PressureP1, &mesh, &edges);
        let scalars = FESpace::build(SpaceKind::ScalarPairP2, &mesh, &edges);
        let control = FESpace::build(SpaceKind::ControlP0, &mesh, &edges);
        let quad = QuadratureRule::degree6();
        let p2_table = BasisTable::tabulate(6, &quad);
        let p1_table = BasisTable::tabulate(3, &quad);
        Discretization {
            mesh,
            edges,
            velocity,
            pressure,
            scalars,
            control,
            quad,
            p2_table,
            p1_table,
        }
    }

    pub fn n_u(&self) -> usize {
        self.velocity.dof_count
    }

    pub fn n_p(&self) -> usize {
        self.pressure.dof_count
    }

    pub fn n_y(&self) -> usize {
        self.scalars.dof_count
    }

    pub fn off_u(&self) -> usize {
        0
    }

    pub fn off_p(&self) -> usize {
        self.n_u()
    }

    pub fn off_y(&self) -> usize {
        self.n_u() + self.n_p()
    }

    /// Index of the zero-mean pressure multiplier (last dof).
    pub fn off_multiplier(&self) -> usize {
        self.n_u() + self.n_p() + self.n_y()
    }

    pub fn total_dofs(&self) -> usize {
        self.n_u() + self.n_p() + self.n_y() + 1
    }

    /// Dirichlet constraints of the coupled system in packed indices:
    /// velocity zero on the boundary, scalars prescribed by `ydata`.
    pub fn dirichlet_constraints(&self, ydata: &dyn Fn([f64; 2]) -> [f64; 2]) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for dof in 0..self.n_u() {
            if self.velocity.dirichlet_mask[dof] {
                out.push((self.off_u() + dof, 0.0));
            }
        }
        for node in 0..self.scalars.n_nodes() {
            let dof0 = self.scalars.dof(node, 0);
            if self.scalars.dirichlet_mask[dof0] {
                let x = self.scalars.dof_coords[dof0];
                let val = ydata(x);
                out.push((self.off_y() + dof0, val[0]));
                out.push((self.off_y() + dof0 + 1, val[1]));
            }
        }
        out
    }

    /// Packed Dirichlet dofs with homogeneous values (linearized/adjoint systems).
    pub fn homogeneous_constraints(&self) -> Vec<(usize, f64)> {
        self.dirichlet_constraints(&|_| [0.0, 0.0])
    }
}

fn invjt(j: [[f64; 2]; 2], det: f64) -> [[f64; 2]; 2] {
    // inverse-transpose of the affine map Jacobian
    [
        [j[1][1] / det, -j[1][0] / det],
        [-j[0][1] / det, j[0][0] / det],
    ]
}

/// Physical gradient from a reference gradient.
pub(crate) fn push_gradient(it: [[f64; 2]; 2], g: [f64; 2]) -> [f64; 2] {
    [
        it[0][0] * g[0] + it[0][1] * g[1],
        it[1][0] * g[0] + it[1][1] * g[1],
    ]
}

pub(crate) fn element_geometry(mesh: &TriMesh, e: usize) -> ([[f64; 2]; 2], f64) {
    let (j, det) = mesh.jacobian(e);
    (invjt(j, det), det)
}

/// ‖v‖₀² by quadrature, all components summed.
pub fn l2_norm_sq(mesh: &TriMesh, space: &FESpace, rule: &QuadratureRule, vals: &[f64]) -> f64 {
    l2_error_sq(mesh, space, rule, vals, &|_, _| 0.0)
}

/// |v|₁² (gradient seminorm) by quadrature.
pub fn h1_seminorm_sq(mesh: &TriMesh, space: &FESpace, rule: &QuadratureRule, vals: &[f64]) -> f64 {
    h1_error_seminorm_sq(mesh, space, rule, vals, &|_, _| [0.0, 0.0])
}

/// ‖v − v_exact‖₀² with `exact(x, comp)` evaluated at quadrature points.
pub fn l2_error_sq(
    mesh: &TriMesh,
    space: &FESpace,
    rule: &QuadratureRule,
    vals: &[f64],
    exact: &dyn Fn([f64; 2], usize) -> f64,
) -> f64 {
    assert_eq!(vals.len(), space.dof_count);
    let table = BasisTable::tabulate(space.nodes_per_elem(), rule);
    let mut acc = 0.0;
    for e in 0..mesh.n_triangles() {
        let (_, det) = mesh.jacobian(e);
        let nodes = space.elem_nodes(e);
        for (q, point) in rule.points.iter().enumerate() {
            let x = mesh.map_point(e, *point);
            let w = rule.weights[q] * det.abs();
            for c in 0..space.components {
                let mut v = 0.0;
                for (a, &node) in nodes.iter().enumerate() {
                    v += table.vals[q][a] * vals[space.dof(node, c)];
                }
                let d = v - exact(x, c);
                acc += w * d * d;
            }
        }
    }
    acc
}

/// |v − v_exact|₁² with `exact_grad(x, comp)` the exact component gradients.
pub fn h1_error_seminorm_sq(
    mesh: &TriMesh,
    space: &FESpace,
    rule: &QuadratureRule,
    vals: &[f64],
    exact_grad: &dyn Fn([f64; 2], usize) -> [f64; 2],
) -> f64 {
    assert_eq!(vals.len(), space.dof_count);
    let table = BasisTable::tabulate(space.nodes_per_elem(), rule);
    let mut acc = 0.0;
    for e in 0..mesh.n_triangles() {
        let (it, det) = element_geometry(mesh, e);
        let nodes = space.elem_nodes(e);
        for (q, point) in rule.points.iter().enumerate() {
            let x = mesh.map_point(e, *point);
            let w = rule.weights[q] * det.abs();
            for c in 0..space.components {
                let mut g = [0.0, 0.0];
                for (a, &node) in nodes.iter().enumerate() {
                    let ga = push_gradient(it, table.grads[q][a]);
                    let v = vals[space.dof(node, c)];
                    g[0] += ga[0] * v;
                    g[1] += ga[1] * v;
                }
                let ge = exact_grad(x, c);
                acc += w * ((g[0] - ge[0]).powi(2) + (g[1] - ge[1]).powi(2));
            }
        }
    }
    acc
}

/// ‖v‖₁ = (‖v‖₀² + |v|₁²)^{1/2}.
pub fn h1_norm(mesh: &TriMesh, space: &FESpace, rule: &QuadratureRule, vals: &[f64]) -> f64 {
    (l2_norm_sq(mesh, space, rule, vals) + h1_seminorm_sq(mesh, space, rule, vals)).sqrt()
}

/// Gradient-jump seminorm Σ_E ∫_E |[∇v]|² ds over interior edges — the
/// discrete surrogate used for the extra-regularity norms in the advisory
/// diagnostics. Two-point Gauss per edge, exact for the P2 gradients.
pub fn gradient_jump_seminorm(
    mesh: &TriMesh,
    edges: &EdgeTable,
    space: &FESpace,
    vals: &[f64],
) -> f64 {
    assert!(space.nodes_per_elem() == 6, "jump seminorm expects a P2 space");
    let g = 0.5 / 3.0_f64.sqrt();
    let edge_points = [0.5 - g, 0.5 + g];
    let mut acc = 0.0;
    for (eid, &(t0, t1)) in edges.edge_tris.iter().enumerate() {
        let Some(t1) = t1 else { continue };
        let [va, vb] = edges.edges[eid];
        let (pa, pb) = (mesh.vertices[va], mesh.vertices[vb]);
        let elen = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        for &s in &edge_points {
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            for c in 0..space.components {
                let g0 = eval_p2_gradient(mesh, space, vals, t0, x, c);
                let g1 = eval_p2_gradient(mesh, space, vals, t1, x, c);
                let jump = [(g0[0] - g1[0]), (g0[1] - g1[1])];
                acc += 0.5 * elen * (jump[0] * jump[0] + jump[1] * jump[1]);
            }
        }
    }
    acc.sqrt()
}

/// Barycentric coordinates of a physical point within a given triangle.
fn barycentric(mesh: &TriMesh, t: usize, x: [f64; 2]) -> [f64; 3] {
    let (j, det) = mesh.jacobian(t);
    let v0 = mesh.vertices[mesh.triangles[t][0]];
    let r = [x[0] - v0[0], x[1] - v0[1]];
    let l1 = (j[1][1] * r[0] - j[0][1] * r[1]) / det;
    let l2 = (-j[1][0] * r[0] + j[0][0] * r[1]) / det;
    [1.0 - l1 - l2, l1, l2]
}

fn eval_p2_gradient(
    mesh: &TriMesh,
    space: &FESpace,
    vals: &[f64],
    t: usize,
    x: [f64; 2],
    comp: usize,
) -> [f64; 2] {
    let b = barycentric(mesh, t, x);
    let (it, _) = element_geometry(mesh, t);
    let grads = grad_p2_ref(b);
    let nodes = space.elem_nodes(t);
    let mut g = [0.0, 0.0];
    for (a, &node) in nodes.iter().enumerate() {
        let ga = push_gradient(it, grads[a]);
        let v = vals[space.dof(node, comp)];
        g[0] += ga[0] * v;
        g[1] += ga[1] * v;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;
    use crate::quadrature::QuadratureRule;

    fn disc(n: usize) -> Discretization {
        Discretization::new(build_unit_square_mesh(n).unwrap())
    }

    #[test]
    fn p2_space_has_vertex_plus_edge_dofs() {
        let d = disc(2);
        let (nv, ne) = (9, 9 + 8 - 1);
        assert_eq!(d.velocity.n_nodes(), nv + ne);
        assert_eq!(d.velocity.dof_count, 2 * (nv + ne));
        assert_eq!(d.scalars.dof_count, d.velocity.dof_count);
        assert_eq!(d.pressure.dof_count, nv);
        assert_eq!(d.control.dof_count, 2 * 8);
    }

    #[test]
    fn dirichlet_mask_marks_exactly_the_boundary() {
        let d = disc(3);
        for dof in 0..d.velocity.dof_count {
            let on = d.mesh.on_boundary(d.velocity.dof_coords[dof]);
            assert_eq!(d.velocity.dirichlet_mask[dof], on);
        }
        assert!(d.pressure.dirichlet_mask.iter().all(|&m| !m));
        assert!(d.control.dirichlet_mask.iter().all(|&m| !m));
    }

    #[test]
    fn p2_shapes_are_nodal() {
        // vertex nodes and edge midpoints in barycentric coordinates
        let nodes = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.5, 0.5, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
        ];
        for (i, &b) in nodes.iter().enumerate() {
            let s = shape_p2(b);
            for (j, &v) in s.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-15, "shape {j} at node {i}: {v}");
            }
        }
    }

    #[test]
    fn p2_gradients_match_finite_differences() {
        let h = 1e-6;
        let at = |x: f64, y: f64| shape_p2([1.0 - x - y, x, y]);
        let b = [1.0 - 0.3 - 0.2, 0.3, 0.2];
        let g = grad_p2_ref(b);
        let fx = at(0.3 + h, 0.2);
        let bx = at(0.3 - h, 0.2);
        let fy = at(0.3, 0.2 + h);
        let by = at(0.3, 0.2 - h);
        for a in 0..6 {
            assert!(((fx[a] - bx[a]) / (2.0 * h) - g[a][0]).abs() < 1e-8);
            assert!(((fy[a] - by[a]) / (2.0 * h) - g[a][1]).abs() < 1e-8);
        }
    }

    #[test]
    fn interpolation_reproduces_quadratics_exactly() {
        let d = disc(2);
        let f = |x: [f64; 2]| x[0] * x[0] + 0.5 * x[1];
        let space = FESpace::build(SpaceKind::ScalarP2, &d.mesh, &d.edges);
        let vals = space.interpolate_scalar(&f);
        let rule = QuadratureRule::gauss_collapsed(4);
        let err = l2_error_sq(&d.mesh, &space, &rule, &vals, &|x, _| f(x));
        assert!(err < 1e-28, "interpolation error {err}");
    }

    #[test]
    fn l2_norm_of_constant_is_area() {
        let d = disc(4);
        let ones = vec![1.0; d.pressure.dof_count];
        let n = l2_norm_sq(&d.mesh, &d.pressure, &d.quad, &ones);
        assert!((n - 1.0).abs() < 1e-13);
    }

    #[test]
    fn h1_seminorm_of_linear_field() {
        let d = disc(3);
        let space = FESpace::build(SpaceKind::ScalarP2, &d.mesh, &d.edges);
        let vals = space.interpolate_scalar(&|x| 2.0 * x[0] - x[1]);
        let s = h1_seminorm_sq(&d.mesh, &space, &d.quad, &vals);
        assert!((s - 5.0).abs() < 1e-12, "|∇(2x−y)|² = 5, got {s}");
    }

    #[test]
    fn packed_layout_offsets_are_consistent() {
        let d = disc(2);
        assert_eq!(d.off_p(), d.n_u());
        assert_eq!(d.off_y(), d.n_u() + d.n_p());
        assert_eq!(d.off_multiplier(), d.total_dofs() - 1);
        let bcs = d.dirichlet_constraints(&|x| [x[0], -x[0]]);
        for &(dof, v) in &bcs {
            if dof >= d.off_y() && dof < d.off_multiplier() {
                let local = dof - d.off_y();
                let x = d.scalars.dof_coords[local];
                let expect = if local % 2 == 0 { x[0] } else { -x[0] };
                assert_eq!(v, expect);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn gradient_jump_vanishes_for_globally_smooth_quadratic() {
        let d = disc(3);
        let space = FESpace::build(SpaceKind::ScalarP2, &d.mesh, &d.edges);
        let vals = space.interpolate_scalar(&|x| x[0] * x[0] + x[0] * x[1]);
        let j = gradient_jump_seminorm(&d.mesh, &d.edges, &space, &vals);
        assert!(j < 1e-12, "quadratic has continuous gradient, jump {j}");
        // a per-element random field jumps
        let mut bumpy = vals;
        bumpy[space.dof(0, 0)] += 1.0;
        let j2 = gradient_jump_seminorm(&d.mesh, &d.edges, &space, &bumpy);
        assert!(j2 > 1e-3);
    }
}
