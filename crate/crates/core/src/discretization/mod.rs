//! Discrete function spaces and assembly of every bilinear, trilinear and
//! boundary form of the weak Boussinesq system.
//!
//! Velocity and temperature use continuous quadratic elements, the total
//! pressure continuous linear elements. On the structured mesh the quadratic
//! nodes form a `(2nx+1) × (2ny+1)` lattice; node `(I, J)` has id
//! `J (2nx+1) + I`. Velocity degree of freedom `2·node + c` holds component
//! `c`; pressure degree of freedom `v` is mesh vertex `v`.

mod boundary;
mod coercivity;
pub mod element;
mod forms;

pub use boundary::*;
pub use coercivity::*;
pub use forms::*;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::mesh::{quadrature_rule, BoundaryTag, Mesh, QuadratureRule, Side};

use element::{p2_values, ElementGeometry};

pub type SparseOperator = CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    Velocity,
    Pressure,
    Temperature,
}

/// Degree-of-freedom layout and essential-constraint masks.
#[derive(Debug, Clone)]
pub struct SpaceSet {
    /// Coordinates of the quadratic nodes.
    pub nodes: Vec<[f64; 2]>,
    /// Lattice coordinates `(I, J)` of each quadratic node.
    pub lattice: Vec<(usize, usize)>,
    pub lattice_dims: (usize, usize),
    /// Quadratic node ids per triangle in local order.
    pub element_nodes: Vec<[usize; 6]>,
    /// Quadratic node id of each pressure (mesh vertex) dof.
    pub pressure_nodes: Vec<usize>,
    pub velocity_fixed: Vec<bool>,
    pub temperature_fixed: Vec<bool>,
    /// Sorted quadratic node ids on Γ₁ and Γ₂ (corners may appear in both).
    pub gamma1_nodes: Vec<usize>,
    pub gamma2_nodes: Vec<usize>,
    /// Unit normal used for the normal trace at each Γ₁ node.
    pub gamma1_normals: Vec<[f64; 2]>,
    /// Per mesh boundary edge: (start, midpoint, end) quadratic node ids.
    pub edge_nodes: Vec<[usize; 3]>,
}

impl SpaceSet {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self, kind: SpaceKind) -> usize {
        match kind {
            SpaceKind::Velocity => 2 * self.nodes.len(),
            SpaceKind::Pressure => self.pressure_nodes.len(),
            SpaceKind::Temperature => self.nodes.len(),
        }
    }

    pub fn fixed(&self, kind: SpaceKind) -> Vec<bool> {
        match kind {
            SpaceKind::Velocity => self.velocity_fixed.clone(),
            SpaceKind::Pressure => vec![false; self.pressure_nodes.len()],
            SpaceKind::Temperature => self.temperature_fixed.clone(),
        }
    }

    /// Position of a node in the Γ₁ node list.
    pub fn gamma1_index(&self, node: usize) -> Option<usize> {
        self.gamma1_nodes.binary_search(&node).ok()
    }

    pub fn gamma2_index(&self, node: usize) -> Option<usize> {
        self.gamma2_nodes.binary_search(&node).ok()
    }

    /// Zeroes the coefficients of essential degrees of freedom in place.
    pub fn apply_constraints(&self, kind: SpaceKind, coeffs: &mut [f64]) {
        let mask = match kind {
            SpaceKind::Velocity => &self.velocity_fixed,
            SpaceKind::Temperature => &self.temperature_fixed,
            SpaceKind::Pressure => return,
        };
        for (c, &f) in coeffs.iter_mut().zip(mask) {
            if f {
                *c = 0.0;
            }
        }
    }
}

/// Builds degree-of-freedom maps and constraint masks for a mesh.
pub fn build_spaces(mesh: &Mesh) -> Result<SpaceSet> {
    mesh.check_invariants()?;
    let (nx, ny) = (mesh.nx, mesh.ny);
    let (li, lj) = (2 * nx + 1, 2 * ny + 1);
    let (lx, ly) = mesh.lengths;
    let node_id = |i: usize, j: usize| j * li + i;
    let mut nodes = Vec::with_capacity(li * lj);
    let mut lattice = Vec::with_capacity(li * lj);
    for j in 0..lj {
        for i in 0..li {
            nodes.push([lx * i as f64 / (2 * nx) as f64, ly * j as f64 / (2 * ny) as f64]);
            lattice.push((i, j));
        }
    }
    let vertex_lattice = |v: usize| (2 * (v % (nx + 1)), 2 * (v / (nx + 1)));
    let mid = |a: (usize, usize), b: (usize, usize)| node_id((a.0 + b.0) / 2, (a.1 + b.1) / 2);

    let element_nodes: Vec<[usize; 6]> = mesh
        .triangles
        .iter()
        .map(|tri| {
            let [a, b, c] = tri.map(vertex_lattice);
            [
                node_id(a.0, a.1),
                node_id(b.0, b.1),
                node_id(c.0, c.1),
                mid(a, b),
                mid(b, c),
                mid(c, a),
            ]
        })
        .collect();
    let pressure_nodes = (0..mesh.vertices.len())
        .map(|v| {
            let (i, j) = vertex_lattice(v);
            node_id(i, j)
        })
        .collect();

    let mut velocity_fixed = vec![false; 2 * nodes.len()];
    let mut temperature_fixed = vec![false; nodes.len()];
    let mut g1: BTreeMap<usize, [f64; 2]> = BTreeMap::new();
    let mut g2: BTreeMap<usize, ()> = BTreeMap::new();
    let mut edge_nodes = Vec::with_capacity(mesh.boundary_edges.len());
    for edge in &mesh.boundary_edges {
        let [a, b] = edge.vertices.map(vertex_lattice);
        let ids = [node_id(a.0, a.1), mid(a, b), node_id(b.0, b.1)];
        edge_nodes.push(ids);
        for &n in &ids {
            match edge.tag {
                BoundaryTag::Gamma2 => {
                    velocity_fixed[2 * n] = true;
                    velocity_fixed[2 * n + 1] = true;
                    g2.insert(n, ());
                }
                BoundaryTag::Gamma1 => {
                    // tangential component of an axis-aligned edge
                    let tangential = match edge.side {
                        Side::Left | Side::Right => 1,
                        Side::Bottom | Side::Top => 0,
                    };
                    velocity_fixed[2 * n + tangential] = true;
                    temperature_fixed[n] = true;
                    let acc = g1.entry(n).or_insert([0.0, 0.0]);
                    acc[0] += edge.normal[0];
                    acc[1] += edge.normal[1];
                }
            }
        }
    }
    let gamma1_nodes: Vec<usize> = g1.keys().copied().collect();
    let gamma1_normals = g1
        .values()
        .map(|n| {
            let len = n[0].hypot(n[1]);
            [n[0] / len, n[1] / len]
        })
        .collect();
    Ok(SpaceSet {
        nodes,
        lattice,
        lattice_dims: (li, lj),
        element_nodes,
        pressure_nodes,
        velocity_fixed,
        temperature_fixed,
        gamma1_nodes,
        gamma2_nodes: g2.keys().copied().collect(),
        gamma1_normals,
        edge_nodes,
    })
}

/// Coefficient vector over one of the discrete spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub space: SpaceKind,
    pub coeffs: Vec<f64>,
}

impl Field {
    pub fn new(space: SpaceKind, coeffs: Vec<f64>) -> Self {
        Self { space, coeffs }
    }

    pub fn zeros(spaces: &SpaceSet, space: SpaceKind) -> Self {
        Self::new(space, vec![0.0; spaces.dim(space)])
    }

    pub(crate) fn expect(&self, space: SpaceKind, what: &'static str) -> Result<&[f64]> {
        if self.space != space {
            return Err(Error::Space {
                what,
                message: format!("expected {space:?} field, got {:?}", self.space),
            });
        }
        Ok(&self.coeffs)
    }
}

/// Mesh, spaces, and every state-independent operator of the discrete system.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub spaces: SpaceSet,
    pub(crate) quadrature: QuadratureRule,
    pub(crate) geometry: Vec<ElementGeometry>,
    /// P2 shape function values at each quadrature point.
    pub(crate) basis_at_qp: Vec<[f64; 6]>,
    pub mass_velocity: CsrMatrix,
    pub mass_temperature: CsrMatrix,
    pub a1: CsrMatrix,
    pub a2: CsrMatrix,
    /// ∫ ∇u : ∇v on the velocity space.
    pub stiffness_velocity: CsrMatrix,
    /// Pressure × velocity: ∫ (div φ) χ.
    pub div: CsrMatrix,
    /// Velocity × Γ₁ nodes: ∫_{Γ₁} φ_k (ψ·n) ds.
    pub h1_map: CsrMatrix,
    /// Temperature × Γ₂ nodes: ∫_{Γ₂} φ_k φ ds.
    pub h2_map: CsrMatrix,
    pub edge_mass1: CsrMatrix,
    pub edge_mass2: CsrMatrix,
    /// Positive nodal (Simpson) boundary weights on Γ₁ and Γ₂.
    pub weights1: Vec<f64>,
    pub weights2: Vec<f64>,
    pub(crate) saddle_order: Vec<usize>,
    pub(crate) temperature_order: Vec<usize>,
}

impl Discretization {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let spaces = build_spaces(&mesh)?;
        let quadrature = quadrature_rule(5)?;
        let geometry = mesh
            .triangles
            .iter()
            .map(|t| ElementGeometry::new(t.map(|v| mesh.vertices[v])))
            .collect();
        let basis_at_qp = quadrature.points.iter().map(p2_values).collect();
        let mut disc = Discretization {
            mesh,
            spaces,
            quadrature,
            geometry,
            basis_at_qp,
            mass_velocity: CsrMatrix::zeros(0, 0),
            mass_temperature: CsrMatrix::zeros(0, 0),
            a1: CsrMatrix::zeros(0, 0),
            a2: CsrMatrix::zeros(0, 0),
            stiffness_velocity: CsrMatrix::zeros(0, 0),
            div: CsrMatrix::zeros(0, 0),
            h1_map: CsrMatrix::zeros(0, 0),
            h2_map: CsrMatrix::zeros(0, 0),
            edge_mass1: CsrMatrix::zeros(0, 0),
            edge_mass2: CsrMatrix::zeros(0, 0),
            weights1: Vec::new(),
            weights2: Vec::new(),
            saddle_order: Vec::new(),
            temperature_order: Vec::new(),
        };
        disc.mass_velocity = assemble_mass(&disc, SpaceKind::Velocity);
        disc.mass_temperature = assemble_mass(&disc, SpaceKind::Temperature);
        disc.a1 = assemble_a1(&disc);
        disc.a2 = assemble_a2(&disc);
        disc.stiffness_velocity = assemble_velocity_stiffness(&disc);
        disc.div = assemble_div(&disc);
        let b = assemble_boundary_operators(&disc);
        disc.h1_map = b.h1_map;
        disc.h2_map = b.h2_map;
        disc.edge_mass1 = b.edge_mass1;
        disc.edge_mass2 = b.edge_mass2;
        disc.weights1 = b.weights1;
        disc.weights2 = b.weights2;
        disc.saddle_order = disc.lattice_order(true);
        disc.temperature_order = disc.lattice_order(false);
        Ok(disc)
    }

    pub fn n_velocity(&self) -> usize {
        self.spaces.dim(SpaceKind::Velocity)
    }

    pub fn n_pressure(&self) -> usize {
        self.spaces.dim(SpaceKind::Pressure)
    }

    pub fn n_temperature(&self) -> usize {
        self.spaces.dim(SpaceKind::Temperature)
    }

    pub fn n_gamma1(&self) -> usize {
        self.spaces.gamma1_nodes.len()
    }

    pub fn n_gamma2(&self) -> usize {
        self.spaces.gamma2_nodes.len()
    }

    /// Elimination order following lattice rows along the shorter side, so
    /// coupled unknowns stay within a narrow band.
    fn lattice_order(&self, saddle: bool) -> Vec<usize> {
        let (li, lj) = self.spaces.lattice_dims;
        let key = |node: usize| {
            let (i, j) = self.spaces.lattice[node];
            if li <= lj {
                j * li + i
            } else {
                i * lj + j
            }
        };
        let mut keyed: Vec<(usize, usize, usize)> = if saddle {
            let nv = self.n_velocity();
            let mut k: Vec<_> = (0..nv).map(|d| (key(d / 2), d % 2, d)).collect();
            k.extend(
                self.spaces
                    .pressure_nodes
                    .iter()
                    .enumerate()
                    .map(|(p, &node)| (key(node), 2, nv + p)),
            );
            k
        } else {
            (0..self.n_temperature()).map(|d| (key(d), 0, d)).collect()
        };
        keyed.sort_unstable();
        keyed.into_iter().map(|(_, _, d)| d).collect()
    }

    /// Quadrature points of element `t` in physical coordinates with their
    /// physical weights.
    pub fn element_quadrature(&self, t: usize) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        let geo = &self.geometry[t];
        self.quadrature
            .points
            .iter()
            .zip(&self.quadrature.weights)
            .map(move |(l, w)| (geo.point(l), 2.0 * geo.area * w))
    }

    /// Nodal interpolant of a vector function (constraints not applied).
    pub fn interpolate_velocity(&self, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_velocity()];
        for (n, p) in self.spaces.nodes.iter().enumerate() {
            let v = f(p[0], p[1]);
            out[2 * n] = v[0];
            out[2 * n + 1] = v[1];
        }
        out
    }

    pub fn interpolate_scalar(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.spaces.nodes.iter().map(|p| f(p[0], p[1])).collect()
    }

    pub fn interpolate_pressure(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.mesh.vertices.iter().map(|p| f(p[0], p[1])).collect()
    }

    /// Squared H¹ norm of a velocity field.
    pub fn h1_norm_velocity_sq(&self, z: &[f64]) -> f64 {
        self.mass_velocity.form(z, z) + self.stiffness_velocity.form(z, z)
    }

    pub fn h1_norm_temperature_sq(&self, w: &[f64]) -> f64 {
        self.mass_temperature.form(w, w) + self.a2.form(w, w)
    }

    pub fn l2_norm_velocity(&self, z: &[f64]) -> f64 {
        self.mass_velocity.form(z, z).max(0.0).sqrt()
    }

    pub fn l2_norm_temperature(&self, w: &[f64]) -> f64 {
        self.mass_temperature.form(w, w).max(0.0).sqrt()
    }

    /// Euclidean norm of the discrete divergence `D z`.
    pub fn divergence_residual(&self, z: &[f64]) -> f64 {
        crate::linalg::norm2(&self.div.mul_vec(z))
    }

    /// L² distance between a discrete velocity and an exact field.
    pub fn l2_error_velocity(&self, z: &[f64], exact: impl Fn(f64, f64) -> [f64; 2]) -> f64 {
        let mut s = 0.0;
        for (t, nodes) in self.spaces.element_nodes.iter().enumerate() {
            for (q, (p, w)) in self.element_quadrature(t).enumerate() {
                let phi = &self.basis_at_qp[q];
                let mut u = [0.0; 2];
                for (k, &n) in nodes.iter().enumerate() {
                    u[0] += phi[k] * z[2 * n];
                    u[1] += phi[k] * z[2 * n + 1];
                }
                let e = exact(p[0], p[1]);
                s += w * ((u[0] - e[0]).powi(2) + (u[1] - e[1]).powi(2));
            }
        }
        s.sqrt()
    }

    pub fn l2_error_temperature(&self, w: &[f64], exact: impl Fn(f64, f64) -> f64) -> f64 {
        let mut s = 0.0;
        for (t, nodes) in self.spaces.element_nodes.iter().enumerate() {
            for (q, (p, wq)) in self.element_quadrature(t).enumerate() {
                let phi = &self.basis_at_qp[q];
                let u: f64 = nodes.iter().enumerate().map(|(k, &n)| phi[k] * w[n]).sum();
                s += wq * (u - exact(p[0], p[1])).powi(2);
            }
        }
        s.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoundaryAssignment;

    #[test]
    fn unit_square_boundary_nodes_all_constrained() {
        let mesh = Mesh::unit_square(1);
        let s = build_spaces(&mesh).unwrap();
        for (n, p) in s.nodes.iter().enumerate() {
            let on_boundary = p[0] == 0.0 || p[0] == 1.0 || p[1] == 0.0 || p[1] == 1.0;
            if on_boundary {
                assert!(s.velocity_fixed[2 * n] || s.velocity_fixed[2 * n + 1], "node {n}");
            }
        }
    }

    #[test]
    fn gamma1_midedge_node_fixes_tangential_only() {
        let s = build_spaces(&Mesh::unit_square(1)).unwrap();
        let n = s.nodes.iter().position(|p| p[0] == 0.0 && p[1] == 0.5).unwrap();
        assert!(!s.velocity_fixed[2 * n]);
        assert!(s.velocity_fixed[2 * n + 1]);
        assert!(s.temperature_fixed[n]);
        let k = s.gamma1_index(n).unwrap();
        assert_eq!(s.gamma1_normals[k], [-1.0, 0.0]);
    }

    #[test]
    fn interior_node_is_free() {
        let s = build_spaces(&Mesh::unit_square(4)).unwrap();
        let n = s.nodes.iter().position(|p| p[0] == 0.5 && p[1] == 0.5).unwrap();
        assert!(!s.velocity_fixed[2 * n] && !s.velocity_fixed[2 * n + 1]);
        assert!(!s.temperature_fixed[n]);
    }

    #[test]
    fn corners_take_restrictive_constraints() {
        let s = build_spaces(&Mesh::unit_square(2)).unwrap();
        for (n, p) in s.nodes.iter().enumerate() {
            let corner = (p[0] == 0.0 || p[0] == 1.0) && (p[1] == 0.0 || p[1] == 1.0);
            if corner {
                assert!(s.velocity_fixed[2 * n] && s.velocity_fixed[2 * n + 1]);
                assert!(s.temperature_fixed[n]);
                assert!(s.gamma1_index(n).is_some() && s.gamma2_index(n).is_some());
            }
        }
    }

    #[test]
    fn gamma2_temperature_is_free_away_from_gamma1() {
        let s = build_spaces(&Mesh::unit_square(2)).unwrap();
        let n = s.nodes.iter().position(|p| p[0] == 0.5 && p[1] == 0.0).unwrap();
        assert!(!s.temperature_fixed[n]);
        assert!(s.velocity_fixed[2 * n] && s.velocity_fixed[2 * n + 1]);
    }

    #[test]
    fn two_gamma1_sides_meeting_fix_both_components() {
        let assignment = BoundaryAssignment {
            left: BoundaryTag::Gamma1,
            bottom: BoundaryTag::Gamma1,
            right: BoundaryTag::Gamma2,
            top: BoundaryTag::Gamma2,
        };
        let mesh = Mesh::rectangle(2, 2, (1.0, 1.0), assignment).unwrap();
        let s = build_spaces(&mesh).unwrap();
        let n = 0; // origin
        assert!(s.velocity_fixed[0] && s.velocity_fixed[1]);
        let k = s.gamma1_index(n).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.gamma1_normals[k][0] + h).abs() < 1e-15);
        assert!((s.gamma1_normals[k][1] + h).abs() < 1e-15);
    }
}
