//! Boundary functionals H₁ (total-pressure load on Γ₁), H₂ (heat-flux load on
//! Γ₂), boundary mass matrices and nodal traces.
//!
//! Boundary data live on the quadratic nodes of each boundary part and are
//! interpolated quadratically along every edge.

use super::element::p2_edge_values;
use super::{Discretization, Field, SpaceKind};
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, TripletBuilder};
use crate::mesh::{edge_gauss_rule, BoundaryTag};

pub(crate) struct BoundaryOperators {
    pub h1_map: CsrMatrix,
    pub h2_map: CsrMatrix,
    pub edge_mass1: CsrMatrix,
    pub edge_mass2: CsrMatrix,
    pub weights1: Vec<f64>,
    pub weights2: Vec<f64>,
}

pub(crate) fn assemble_boundary_operators(disc: &Discretization) -> BoundaryOperators {
    let s = &disc.spaces;
    let (n1, n2) = (s.gamma1_nodes.len(), s.gamma2_nodes.len());
    let mut h1 = TripletBuilder::new(disc.n_velocity(), n1);
    let mut h2 = TripletBuilder::new(disc.n_temperature(), n2);
    let mut e1 = TripletBuilder::new(n1, n1);
    let mut e2 = TripletBuilder::new(n2, n2);
    let mut weights1 = vec![0.0; n1];
    let mut weights2 = vec![0.0; n2];
    let simpson = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
    for (e, edge) in disc.mesh.boundary_edges.iter().enumerate() {
        let ids = s.edge_nodes[e];
        let len = disc.mesh.edge_length(e);
        let n = edge.normal;
        let (local, h, em, weights) = match edge.tag {
            BoundaryTag::Gamma1 => (
                ids.map(|id| s.gamma1_index(id).expect("Γ₁ node registered")),
                &mut h1,
                &mut e1,
                &mut weights1,
            ),
            BoundaryTag::Gamma2 => (
                ids.map(|id| s.gamma2_index(id).expect("Γ₂ node registered")),
                &mut h2,
                &mut e2,
                &mut weights2,
            ),
        };
        for (a, w) in simpson.iter().enumerate() {
            weights[local[a]] += w * len;
        }
        for (sq, wq) in edge_gauss_rule() {
            let phi = p2_edge_values(sq);
            for a in 0..3 {
                for b in 0..3 {
                    let m = wq * len * phi[a] * phi[b];
                    em.add(local[a], local[b], m);
                    match edge.tag {
                        // row: velocity test dof at node a; column: control node b
                        BoundaryTag::Gamma1 => {
                            for c in 0..2 {
                                if n[c] != 0.0 {
                                    h.add(2 * ids[a] + c, local[b], m * n[c]);
                                }
                            }
                        }
                        BoundaryTag::Gamma2 => h.add(ids[a], local[b], m),
                    }
                }
            }
        }
    }
    BoundaryOperators {
        h1_map: h1.build(),
        h2_map: h2.build(),
        edge_mass1: e1.build(),
        edge_mass2: e2.build(),
        weights1,
        weights2,
    }
}

/// Velocity dual vector ⟨H₁v₁, ψ⟩ = ∫_{Γ₁} v₁ (ψ·n) ds, zero at essential dofs.
pub fn assemble_h1_load(disc: &Discretization, v1: &[f64]) -> Result<Vec<f64>> {
    if disc.n_gamma1() == 0 {
        return Err(Error::config("mesh.boundary", "Γ₁ empty"));
    }
    if v1.len() != disc.n_gamma1() {
        return Err(Error::Mismatch {
            what: "H₁ load (Γ₁ node values)",
            expected: disc.n_gamma1(),
            got: v1.len(),
        });
    }
    let mut out = disc.h1_map.mul_vec(v1);
    disc.spaces.apply_constraints(SpaceKind::Velocity, &mut out);
    Ok(out)
}

/// Temperature dual vector ⟨H₂v₂, φ⟩ = ∫_{Γ₂} v₂ φ ds, zero at essential dofs.
pub fn assemble_h2_load(disc: &Discretization, v2: &[f64]) -> Result<Vec<f64>> {
    if v2.len() != disc.n_gamma2() {
        return Err(Error::Mismatch {
            what: "H₂ load (Γ₂ node values)",
            expected: disc.n_gamma2(),
            got: v2.len(),
        });
    }
    let mut out = disc.h2_map.mul_vec(v2);
    disc.spaces.apply_constraints(SpaceKind::Temperature, &mut out);
    Ok(out)
}

/// z·n at every Γ₁ node (corner nodes use the averaged normal).
pub fn normal_trace(disc: &Discretization, z: &Field) -> Result<Vec<f64>> {
    let z = z.expect(SpaceKind::Velocity, "normal_trace")?;
    Ok(normal_trace_raw(disc, z))
}

pub(crate) fn normal_trace_raw(disc: &Discretization, z: &[f64]) -> Vec<f64> {
    let s = &disc.spaces;
    s.gamma1_nodes
        .iter()
        .zip(&s.gamma1_normals)
        .map(|(&n, nv)| z[2 * n] * nv[0] + z[2 * n + 1] * nv[1])
        .collect()
}

/// Values of a temperature-space field at the Γ₂ nodes.
pub fn gamma2_trace(disc: &Discretization, w: &[f64]) -> Vec<f64> {
    disc.spaces.gamma2_nodes.iter().map(|&n| w[n]).collect()
}
