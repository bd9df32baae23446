//! Quadratic (P2) and linear (P1) Lagrange shape functions on triangles.
//!
//! Local P2 node order: vertices 0, 1, 2, then edge midpoints 01, 12, 20.

/// Constant geometric data of one straight-sided triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub area: f64,
    /// Gradients of the barycentric coordinates λ₀, λ₁, λ₂.
    pub grad_lambda: [[f64; 2]; 3],
    pub vertices: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(vertices: [[f64; 2]; 3]) -> Self {
        let [a, b, c] = vertices;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        // ∇λ_i = rot(opposite edge) / det
        let g = |p: [f64; 2], q: [f64; 2]| [(p[1] - q[1]) / det, (q[0] - p[0]) / det];
        Self {
            area: 0.5 * det,
            grad_lambda: [g(b, c), g(c, a), g(a, b)],
            vertices,
        }
    }

    pub fn point(&self, lambda: &[f64; 3]) -> [f64; 2] {
        let mut p = [0.0; 2];
        for (l, v) in lambda.iter().zip(&self.vertices) {
            p[0] += l * v[0];
            p[1] += l * v[1];
        }
        p
    }

    /// Physical gradients of the six P2 shape functions at `lambda`.
    pub fn p2_gradients(&self, lambda: &[f64; 3]) -> [[f64; 2]; 6] {
        let gl = &self.grad_lambda;
        let comb = |c: [f64; 3]| {
            [
                c[0] * gl[0][0] + c[1] * gl[1][0] + c[2] * gl[2][0],
                c[0] * gl[0][1] + c[1] * gl[1][1] + c[2] * gl[2][1],
            ]
        };
        let [l0, l1, l2] = *lambda;
        [
            comb([4.0 * l0 - 1.0, 0.0, 0.0]),
            comb([0.0, 4.0 * l1 - 1.0, 0.0]),
            comb([0.0, 0.0, 4.0 * l2 - 1.0]),
            comb([4.0 * l1, 4.0 * l0, 0.0]),
            comb([0.0, 4.0 * l2, 4.0 * l1]),
            comb([4.0 * l2, 0.0, 4.0 * l0]),
        ]
    }
}

pub fn p2_values(lambda: &[f64; 3]) -> [f64; 6] {
    let [l0, l1, l2] = *lambda;
    [
        l0 * (2.0 * l0 - 1.0),
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        4.0 * l0 * l1,
        4.0 * l1 * l2,
        4.0 * l2 * l0,
    ]
}

/// Quadratic shape functions on an edge parametrised by s ∈ [0, 1]:
/// (start, midpoint, end).
pub fn p2_edge_values(s: f64) -> [f64; 3] {
    [
        (1.0 - s) * (1.0 - 2.0 * s),
        4.0 * s * (1.0 - s),
        s * (2.0 * s - 1.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p2_basis_is_nodal() {
        let nodes = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.5, 0.5, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
        ];
        for (k, l) in nodes.iter().enumerate() {
            let v = p2_values(l);
            for (j, vj) in v.iter().enumerate() {
                assert!((vj - if j == k { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let geo = ElementGeometry::new([[0.1, 0.2], [1.3, 0.1], [0.4, 0.9]]);
        let lam = [0.2, 0.5, 0.3];
        let grads = geo.p2_gradients(&lam);
        // barycentric coordinates of a physical point
        let bary = |p: [f64; 2]| {
            let [a, _, _] = geo.vertices;
            let d = [p[0] - a[0], p[1] - a[1]];
            let l1 = geo.grad_lambda[1][0] * d[0] + geo.grad_lambda[1][1] * d[1];
            let l2 = geo.grad_lambda[2][0] * d[0] + geo.grad_lambda[2][1] * d[1];
            [1.0 - l1 - l2, l1, l2]
        };
        let p = geo.point(&lam);
        let h = 1e-6;
        for dir in 0..2 {
            let mut pp = p;
            let mut pm = p;
            pp[dir] += h;
            pm[dir] -= h;
            let (vp, vm) = (p2_values(&bary(pp)), p2_values(&bary(pm)));
            for k in 0..6 {
                let fd = (vp[k] - vm[k]) / (2.0 * h);
                assert!((fd - grads[k][dir]).abs() < 1e-8);
            }
        }
    }
}
