//! Structured triangular meshing of the unit square.

use std::collections::HashMap;

use crate::{Error, Result};

/// Boundary sides of the unit square.
pub const SIDE_BOTTOM: u8 = 0;
pub const SIDE_RIGHT: u8 = 1;
pub const SIDE_TOP: u8 = 2;
pub const SIDE_LEFT: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub side: u8,
}

/// Conforming triangulation of [0,1]² with positively oriented triangles.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

impl TriMesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.signed_area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Affine map F(ξ) = v0 + J ξ from the reference triangle; returns
    /// (J columns, det J). det J = 2·area for positively oriented triangles.
    pub fn jacobian(&self, t: usize) -> ([[f64; 2]; 2], f64) {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let j = [[q[0] - p[0], r[0] - p[0]], [q[1] - p[1], r[1] - p[1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        (j, det)
    }

    pub fn map_point(&self, t: usize, bary: [f64; 3]) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [
            bary[0] * p[0] + bary[1] * q[0] + bary[2] * r[0],
            bary[0] * p[1] + bary[1] * q[1] + bary[2] * r[1],
        ]
    }

    pub fn on_boundary(&self, p: [f64; 2]) -> bool {
        p[0] == 0.0 || p[0] == 1.0 || p[1] == 0.0 || p[1] == 1.0
    }
}

/// Unique-edge table with triangle adjacency, shared by the P2 spaces and the
/// gradient-jump diagnostics.
#[derive(Debug, Clone)]
pub struct EdgeTable {
    /// Edge endpoints, low vertex first.
    pub edges: Vec<[usize; 2]>,
    /// Edge ids per triangle in local order (0,1), (1,2), (2,0).
    pub tri_edges: Vec<[usize; 3]>,
    /// Adjacent triangles per edge; boundary edges have one.
    pub edge_tris: Vec<(usize, Option<usize>)>,
}

impl EdgeTable {
    pub fn build(mesh: &TriMesh) -> EdgeTable {
        let mut ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut tri_edges = Vec::with_capacity(mesh.n_triangles());
        let mut edge_tris: Vec<(usize, Option<usize>)> = Vec::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let mut local = [0usize; 3];
            for (k, (i, j)) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])]
                .into_iter()
                .enumerate()
            {
                let key = (i.min(j), i.max(j));
                let id = *ids.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edge_tris.push((t, None));
                    edges.len() - 1
                });
                if edge_tris[id].0 != t && edge_tris[id].1.is_none() {
                    edge_tris[id].1 = Some(t);
                }
                local[k] = id;
            }
            tri_edges.push(local);
        }
        EdgeTable {
            edges,
            tri_edges,
            edge_tris,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Structured mesh: n×n cells, each split along its SW–NE diagonal.
pub fn build_unit_square_mesh(n: usize) -> Result<TriMesh> {
    if n == 0 {
        return Err(Error::RejectedInput(
            "mesh subdivisions must be at least 1".into(),
        ));
    }
    let np = n + 1;
    let mut vertices = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let v = |i: usize, j: usize| j * np + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            // SW–NE diagonal from (i,j) to (i+1,j+1)
            triangles.push([v(i, j), v(i + 1, j), v(i + 1, j + 1)]);
            triangles.push([v(i, j), v(i + 1, j + 1), v(i, j + 1)]);
        }
    }
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary_edges.push(BoundaryEdge {
            vertices: [v(i, 0), v(i + 1, 0)],
            side: SIDE_BOTTOM,
        });
    }
    for j in 0..n {
        boundary_edges.push(BoundaryEdge {
            vertices: [v(n, j), v(n, j + 1)],
            side: SIDE_RIGHT,
        });
    }
    for i in (0..n).rev() {
        boundary_edges.push(BoundaryEdge {
            vertices: [v(i + 1, n), v(i, n)],
            side: SIDE_TOP,
        });
    }
    for j in (0..n).rev() {
        boundary_edges.push(BoundaryEdge {
            vertices: [v(0, j + 1), v(0, j)],
            side: SIDE_LEFT,
        });
    }
    Ok(TriMesh {
        vertices,
        triangles,
        boundary_edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n1_counts() {
        let m = build_unit_square_mesh(1).unwrap();
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.boundary_edges.len(), 4);
    }

    #[test]
    fn n2_counts() {
        let m = build_unit_square_mesh(2).unwrap();
        assert_eq!(m.n_triangles(), 8);
        assert_eq!(m.n_vertices(), 9);
        assert_eq!(m.boundary_edges.len(), 8);
    }

    #[test]
    fn n8_total_area_is_one() {
        let m = build_unit_square_mesh(8).unwrap();
        assert!((m.total_area() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(
            build_unit_square_mesh(0),
            Err(Error::RejectedInput(_))
        ));
    }

    #[test]
    fn all_triangles_positively_oriented() {
        for n in [1, 3, 8] {
            let m = build_unit_square_mesh(n).unwrap();
            for t in 0..m.n_triangles() {
                assert!(m.signed_area(t) > 0.0);
            }
        }
    }

    #[test]
    fn boundary_edges_tile_the_square_boundary() {
        let m = build_unit_square_mesh(4).unwrap();
        let mut length = 0.0;
        for be in &m.boundary_edges {
            let [a, b] = be.vertices;
            let (p, q) = (m.vertices[a], m.vertices[b]);
            length += ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
            assert!(m.on_boundary(p) && m.on_boundary(q));
        }
        assert!((length - 4.0).abs() < 1e-14);
    }

    #[test]
    fn edge_table_euler_count_and_adjacency() {
        for n in [1usize, 2, 5] {
            let m = build_unit_square_mesh(n).unwrap();
            let et = EdgeTable::build(&m);
            // V − E + F = 1 for a disk triangulation
            assert_eq!(et.n_edges(), m.n_vertices() + m.n_triangles() - 1);
            let boundary = et
                .edge_tris
                .iter()
                .filter(|(_, second)| second.is_none())
                .count();
            assert_eq!(boundary, 4 * n);
        }
    }

    #[test]
    fn jacobian_determinant_is_twice_area() {
        let m = build_unit_square_mesh(3).unwrap();
        for t in 0..m.n_triangles() {
            let (_, det) = m.jacobian(t);
            assert!((det - 2.0 * m.signed_area(t)).abs() < 1e-15);
        }
    }
}
