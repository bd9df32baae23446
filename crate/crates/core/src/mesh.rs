//! Structured triangulation of a rectangle with a two-part boundary partition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary part. `Gamma1` carries the total-pressure condition, `Gamma2` the
/// no-slip wall with prescribed heat flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    #[serde(rename = "gamma1")]
    Gamma1,
    #[serde(rename = "gamma2")]
    Gamma2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Top => "top",
        }
    }
}

/// Which boundary part each side of the rectangle belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryAssignment {
    pub left: BoundaryTag,
    pub right: BoundaryTag,
    pub bottom: BoundaryTag,
    pub top: BoundaryTag,
}

impl Default for BoundaryAssignment {
    /// Pressure-controlled ends, heated walls.
    fn default() -> Self {
        Self {
            left: BoundaryTag::Gamma1,
            right: BoundaryTag::Gamma1,
            bottom: BoundaryTag::Gamma2,
            top: BoundaryTag::Gamma2,
        }
    }
}

impl BoundaryAssignment {
    pub fn uniform(tag: BoundaryTag) -> Self {
        Self {
            left: tag,
            right: tag,
            bottom: tag,
            top: tag,
        }
    }

    pub fn tag(&self, side: Side) -> BoundaryTag {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for tag in [BoundaryTag::Gamma1, BoundaryTag::Gamma2] {
            if !Side::ALL.iter().any(|&s| self.tag(s) == tag) {
                let name = match tag {
                    BoundaryTag::Gamma1 => "Γ₁",
                    BoundaryTag::Gamma2 => "Γ₂",
                };
                return Err(Error::config(
                    "mesh.boundary",
                    format!("{name} empty: at least one side must be assigned to it"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    /// Endpoints, ordered counterclockwise around the domain.
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
    pub side: Side,
    pub normal: [f64; 2],
    pub triangle: usize,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub lengths: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub assignment: BoundaryAssignment,
}

impl Mesh {
    /// Structured grid of `nx × ny` cells, each split along its (i,j)–(i+1,j+1)
    /// diagonal. Vertex `(i, j)` has index `j (nx + 1) + i`.
    pub fn rectangle(
        nx: usize,
        ny: usize,
        lengths: (f64, f64),
        assignment: BoundaryAssignment,
    ) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::config("mesh", "nx and ny must be at least 1"));
        }
        let (lx, ly) = lengths;
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::config("mesh", "domain lengths must be positive and finite"));
        }
        assignment.validate()?;

        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([lx * i as f64 / nx as f64, ly * j as f64 / ny as f64]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        let cell_lower = |i: usize, j: usize| 2 * (j * nx + i);

        let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
        let mut push = |v0: usize, v1: usize, side: Side, triangle: usize| {
            let (p, q) = (vertices[v0], vertices[v1]);
            let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
            let len = dx.hypot(dy);
            boundary_edges.push(BoundaryEdge {
                vertices: [v0, v1],
                tag: assignment.tag(side),
                side,
                normal: [dy / len, -dx / len],
                triangle,
            });
        };
        for i in 0..nx {
            push(vid(i, 0), vid(i + 1, 0), Side::Bottom, cell_lower(i, 0));
        }
        for j in 0..ny {
            push(vid(nx, j), vid(nx, j + 1), Side::Right, cell_lower(nx - 1, j));
        }
        for i in (0..nx).rev() {
            push(vid(i + 1, ny), vid(i, ny), Side::Top, cell_lower(i, ny - 1) + 1);
        }
        for j in (0..ny).rev() {
            push(vid(0, j + 1), vid(0, j), Side::Left, cell_lower(0, j) + 1);
        }

        Ok(Mesh {
            vertices,
            triangles,
            boundary_edges,
            lengths,
            nx,
            ny,
            assignment,
        })
    }

    pub fn unit_square(n: usize) -> Mesh {
        Mesh::rectangle(n, n, (1.0, 1.0), BoundaryAssignment::default())
            .expect("default unit square is valid")
    }

    pub fn outward_normal(&self, edge: usize) -> Result<[f64; 2]> {
        self.boundary_edges
            .get(edge)
            .map(|e| e.normal)
            .ok_or(Error::OutOfRange {
                what: "boundary edge",
                index: edge,
                len: self.boundary_edges.len(),
            })
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [p, q] = self.boundary_edges[e].vertices.map(|v| self.vertices[v]);
        (q[0] - p[0]).hypot(q[1] - p[1])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] > 0.0 && p[0] < self.lengths.0 && p[1] > 0.0 && p[1] < self.lengths.1
    }

    /// Number of distinct (interior + boundary) edges of the triangulation.
    pub fn edge_count(&self) -> usize {
        let mut edges = BTreeMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)), ());
            }
        }
        edges.len()
    }

    /// Checks every structural invariant of the mesh.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config("mesh", msg));
        for t in 0..self.triangles.len() {
            if self.signed_area(t) <= 0.0 {
                return bad(format!("triangle {t} has non-positive area"));
            }
        }
        // edge -> owning triangles
        let mut owners: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                owners.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        let boundary: Vec<(usize, usize)> = owners
            .iter()
            .filter(|(_, o)| o.len() == 1)
            .map(|(&k, _)| k)
            .collect();
        if boundary.len() != self.boundary_edges.len() {
            return bad(format!(
                "{} topological boundary edges but {} tagged",
                boundary.len(),
                self.boundary_edges.len()
            ));
        }
        let mut has_gamma2 = false;
        for (e, edge) in self.boundary_edges.iter().enumerate() {
            let [a, b] = edge.vertices;
            let key = (a.min(b), a.max(b));
            match owners.get(&key) {
                Some(o) if o.len() == 1 && o[0] == edge.triangle => {}
                _ => return bad(format!("boundary edge {e} does not belong to exactly one triangle")),
            }
            let len = edge.normal[0].hypot(edge.normal[1]);
            if (len - 1.0).abs() > 1e-14 {
                return bad(format!("normal of edge {e} has length {len}"));
            }
            let tri = self.triangles[edge.triangle];
            let third = tri.iter().copied().find(|&v| v != a && v != b).unwrap();
            let (p, q) = (self.vertices[a], self.vertices[third]);
            let inward = (q[0] - p[0]) * edge.normal[0] + (q[1] - p[1]) * edge.normal[1];
            if inward >= 0.0 {
                return bad(format!("normal of edge {e} does not point outward"));
            }
            has_gamma2 |= edge.tag == BoundaryTag::Gamma2;
        }
        if !has_gamma2 {
            return bad("Γ₂ edge set is empty".into());
        }
        Ok(())
    }
}

/// Quadrature rule on the reference triangle with vertices (0,0), (1,0), (0,1).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Barycentric coordinates (λ₀, λ₁, λ₂) with reference point (λ₁, λ₂).
    pub points: Vec<[f64; 3]>,
    /// Weights summing to the reference area 1/2.
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Returns a rule exact for bivariate polynomials up to `degree`.
///
/// Only the 7-point degree-5 rule is tabulated; requests up to degree 5 get it.
pub fn quadrature_rule(degree: usize) -> Result<QuadratureRule> {
    if degree > 5 {
        return Err(Error::OutOfRange {
            what: "quadrature degree (max 5)",
            index: degree,
            len: 6,
        });
    }
    let s15 = 15f64.sqrt();
    let a = (6.0 - s15) / 21.0;
    let b = (6.0 + s15) / 21.0;
    let wa = (155.0 - s15) / 2400.0;
    let wb = (155.0 + s15) / 2400.0;
    let points = vec![
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [1.0 - 2.0 * a, a, a],
        [a, 1.0 - 2.0 * a, a],
        [a, a, 1.0 - 2.0 * a],
        [1.0 - 2.0 * b, b, b],
        [b, 1.0 - 2.0 * b, b],
        [b, b, 1.0 - 2.0 * b],
    ];
    let weights = vec![9.0 / 80.0, wa, wa, wa, wb, wb, wb];
    Ok(QuadratureRule {
        points,
        weights,
        degree: 5,
    })
}

/// Three-point Gauss–Legendre rule on [0, 1] (exact to degree 5).
pub fn edge_gauss_rule() -> [(f64, f64); 3] {
    let r = (0.6f64).sqrt() / 2.0;
    [(0.5 - r, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + r, 5.0 / 18.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn integrate(rule: &QuadratureRule, f: impl Fn(f64, f64) -> f64) -> f64 {
        rule.points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * f(p[1], p[2]))
            .sum()
    }

    /// ∫_T x^a y^b = a! b! / (a + b + 2)!
    fn monomial_exact(a: u32, b: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn counts_for_small_meshes() {
        let m = Mesh::rectangle(1, 1, (1.0, 1.0), BoundaryAssignment::default()).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 2);
        assert_eq!(m.boundary_edges.len(), 4);
        for tag in [BoundaryTag::Gamma1, BoundaryTag::Gamma2] {
            assert_eq!(m.boundary_edges.iter().filter(|e| e.tag == tag).count(), 2);
        }
        let m = Mesh::unit_square(2);
        assert_eq!(
            (m.vertices.len(), m.triangles.len(), m.boundary_edges.len()),
            (9, 8, 8)
        );
    }

    #[test]
    fn all_gamma2_is_rejected() {
        let err = Mesh::rectangle(
            2,
            2,
            (1.0, 1.0),
            BoundaryAssignment::uniform(BoundaryTag::Gamma2),
        )
        .unwrap_err();
        assert!(err.to_string().contains("Γ₁ empty"), "{err}");
        let err = Mesh::rectangle(
            2,
            2,
            (1.0, 1.0),
            BoundaryAssignment::uniform(BoundaryTag::Gamma1),
        )
        .unwrap_err();
        assert!(err.to_string().contains("Γ₂ empty"), "{err}");
    }

    #[test]
    fn axis_aligned_normals() {
        let m = Mesh::unit_square(3);
        for (e, edge) in m.boundary_edges.iter().enumerate() {
            let n = m.outward_normal(e).unwrap();
            let expected = match edge.side {
                Side::Bottom => [0.0, -1.0],
                Side::Left => [-1.0, 0.0],
                Side::Right => [1.0, 0.0],
                Side::Top => [0.0, 1.0],
            };
            assert_eq!(n, expected);
            assert!((n[0].hypot(n[1]) - 1.0).abs() <= 1e-14);
        }
        assert!(m.outward_normal(99).is_err());
    }

    #[test]
    fn quadrature_integrates_reference_values() {
        let q = quadrature_rule(5).unwrap();
        assert!((q.weights.iter().sum::<f64>() - 0.5).abs() <= 1e-15);
        assert!((integrate(&q, |_, _| 1.0) - 0.5).abs() < 1e-15);
        assert!((integrate(&q, |x, _| x) - 1.0 / 6.0).abs() < 1e-15);
        assert!((integrate(&q, |x, y| x * x * y * y) - 1.0 / 180.0).abs() < 1e-16);
        assert!(quadrature_rule(7).is_err());
    }

    #[test]
    fn quadrature_exact_up_to_degree_five() {
        let q = quadrature_rule(5).unwrap();
        for a in 0..=5u32 {
            for b in 0..=(5 - a) {
                let exact = monomial_exact(a, b);
                let got = integrate(&q, |x, y| x.powi(a as i32) * y.powi(b as i32));
                assert!(((got - exact) / exact).abs() < 1e-14, "x^{a} y^{b}");
            }
        }
    }

    #[test]
    fn edge_rule_exact_to_degree_five() {
        for p in 0..=5 {
            let got: f64 = edge_gauss_rule().iter().map(|(s, w)| w * s.powi(p)).sum();
            assert!((got - 1.0 / (p as f64 + 1.0)).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn mesh_invariants_hold(nx in 1usize..=64, ny in 1usize..=64, lx in 0.1f64..10.0, ly in 0.1f64..10.0) {
            let m = Mesh::rectangle(nx, ny, (lx, ly), BoundaryAssignment::default()).unwrap();
            m.check_invariants().unwrap();
            let area: f64 = (0..m.triangles.len()).map(|t| m.signed_area(t)).sum();
            prop_assert!(((area - lx * ly) / (lx * ly)).abs() <= 1e-12);
            let (v, e, f) = (m.vertices.len() as i64, m.edge_count() as i64, m.triangles.len() as i64);
            prop_assert_eq!(v - e + f, 1);
            for (k, edge) in m.boundary_edges.iter().enumerate() {
                let [p, q] = edge.vertices.map(|i| m.vertices[i]);
                let mid = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
                let n = m.outward_normal(k).unwrap();
                prop_assert!(!m.contains([mid[0] + 1e-8 * n[0], mid[1] + 1e-8 * n[1]]));
                prop_assert!(m.contains([mid[0] - 1e-8 * n[0], mid[1] - 1e-8 * n[1]]));
            }
        }
    }
}
