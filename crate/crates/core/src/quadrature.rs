//! Quadrature rules on the reference triangle {(x,y) : x,y ≥ 0, x+y ≤ 1}.
//!
//! Points are stored in barycentric coordinates (l0, l1, l2) with x = l1,
//! y = l2; weights sum to the reference-triangle area 1/2. The degree-6 rule
//! covers every polynomial integrand the assembly produces on affine elements;
//! the collapsed Gauss rule serves as an independent high-accuracy rule for
//! error norms and integration oracles in tests.

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Three-point edge-midpoint rule, exact through degree 2.
    pub fn degree2() -> QuadratureRule {
        let h = 0.5;
        QuadratureRule {
            degree: 2,
            points: vec![[h, h, 0.0], [0.0, h, h], [h, 0.0, h]],
            weights: vec![1.0 / 6.0; 3],
        }
    }

    /// Twelve-point rule exact through degree 6 (Dunavant). Weights below are
    /// normalized to sum to 1 and scaled by the reference area.
    pub fn degree6() -> QuadratureRule {
        let mut points = Vec::with_capacity(12);
        let mut weights = Vec::with_capacity(12);
        let mut push3 = |w: f64, a: f64, b: f64| {
            for p in [[a, b, b], [b, a, b], [b, b, a]] {
                points.push(p);
                weights.push(w / 2.0);
            }
        };
        push3(0.050844906370207, 0.873821971016996, 0.063089014491502);
        push3(0.116786275726379, 0.501426509658179, 0.249286745170910);
        let (w, a, b, c) = (
            0.082851075618374,
            0.636502499121399,
            0.310352451033785,
            0.053145049844816,
        );
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            points.push(p);
            weights.push(w / 2.0);
        }
        QuadratureRule {
            degree: 6,
            points,
            weights,
        }
    }

    /// Tensor Gauss–Legendre rule on the collapsed square: x = u(1−v), y = v,
    /// Jacobian (1−v). Exact through degree 2m−2; independent of the Dunavant
    /// tables, which makes it a usable cross-check oracle.
    pub fn gauss_collapsed(m: usize) -> QuadratureRule {
        let (nodes, wts) = gauss_legendre_unit(m);
        let mut points = Vec::with_capacity(m * m);
        let mut weights = Vec::with_capacity(m * m);
        for (i, &u) in nodes.iter().enumerate() {
            for (j, &v) in nodes.iter().enumerate() {
                let x = u * (1.0 - v);
                let y = v;
                points.push([1.0 - x - y, x, y]);
                weights.push(wts[i] * wts[j] * (1.0 - v));
            }
        }
        QuadratureRule {
            degree: 2 * m - 2,
            points,
            weights,
        }
    }
}

/// Gauss–Legendre nodes and weights on [0,1] (weights sum to 1).
pub fn gauss_legendre_unit(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for k in 0..m {
        // initial guess on [-1,1], then Newton on P_m
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..60 {
            let (p, dp) = legendre_with_derivative(m, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(m, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map [-1,1] → [0,1]
        nodes[k] = 0.5 * (1.0 - x);
        weights[k] = 0.5 * w;
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=m {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
