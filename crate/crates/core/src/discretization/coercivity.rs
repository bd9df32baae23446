//! Discrete coercivity constants of a₁ and a₂ relative to the H¹ norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Discretization, SpaceKind};
use crate::error::{Error, Result};
use crate::linalg::{BandLu, CsrMatrix, TripletBuilder};

/// Estimated `c₁` (velocity) and `c₁′` (temperature).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coercivity {
    /// min a₁(z,z)/‖z‖₁² over constrained, discretely divergence-free z.
    pub c1: f64,
    /// min a₂(w,w)/‖w‖₁² over constrained w.
    pub c1_prime: f64,
    pub iterations: (usize, usize),
}

pub const COERCIVITY_TOL: f64 = 1e-10;
const MAX_ITER: usize = 50_000;

/// Inverse power iteration for the smallest eigenvalue of `K x = λ G x`.
///
/// For the velocity pencil the divergence constraint is imposed through a
/// multiplier block, so iterates stay in the discretely divergence-free
/// subspace.
pub fn estimate_coercivity(disc: &Discretization) -> Result<Coercivity> {
    let vfix = disc.spaces.fixed(SpaceKind::Velocity);
    let tfix = disc.spaces.fixed(SpaceKind::Temperature);
    let gram_v = CsrMatrix::linear_combination(&[
        (1.0, &disc.mass_velocity),
        (1.0, &disc.stiffness_velocity),
    ])
    .without_fixed(&vfix, &vfix);
    let gram_w = CsrMatrix::linear_combination(&[(1.0, &disc.mass_temperature), (1.0, &disc.a2)])
        .without_fixed(&tfix, &tfix);

    let nv = disc.n_velocity();
    let saddle = saddle_matrix(disc, &disc.a1, &vfix);
    let lu_v = BandLu::factor(&saddle, &disc.saddle_order, "coercivity (velocity)")?;
    let a1 = disc.a1.without_fixed(&vfix, &vfix);
    let (c1, it1) = inverse_iteration(&a1, &gram_v, &vfix, 11, |rhs| {
        let mut full = rhs.to_vec();
        full.resize(nv + disc.n_pressure(), 0.0);
        let x = lu_v.solve(&full)?;
        Ok(x[..nv].to_vec())
    })?;

    let a2 = disc.a2.without_fixed(&tfix, &tfix);
    let k2 = with_identity(&a2, &tfix);
    let lu_w = BandLu::factor(&k2, &disc.temperature_order, "coercivity (temperature)")?;
    let (c1p, it2) = inverse_iteration(&a2, &gram_w, &tfix, 13, |rhs| lu_w.solve(rhs))?;
    Ok(Coercivity {
        c1,
        c1_prime: c1p,
        iterations: (it1, it2),
    })
}

/// Adds a unit diagonal at every fixed row of a matrix whose fixed rows and
/// columns are already empty.
pub(crate) fn with_identity(m: &CsrMatrix, fixed: &[bool]) -> CsrMatrix {
    let mut b = TripletBuilder::with_capacity(m.nrows(), m.ncols(), m.nnz() + fixed.len());
    for (i, j, v) in m.iter() {
        b.add(i, j, v);
    }
    for (i, &f) in fixed.iter().enumerate() {
        if f {
            b.add(i, i, 1.0);
        }
    }
    b.build()
}

/// `[K  −Dᵀ; −D  0]` with essential velocity dofs replaced by identity rows
/// and columns.
pub(crate) fn saddle_matrix(disc: &Discretization, k: &CsrMatrix, vfix: &[bool]) -> CsrMatrix {
    let nv = disc.n_velocity();
    let np = disc.n_pressure();
    let n = nv + np;
    let mut b = TripletBuilder::with_capacity(n, n, k.nnz() + 2 * disc.div.nnz() + nv);
    for (i, j, v) in k.iter() {
        if !vfix[i] && !vfix[j] {
            b.add(i, j, v);
        }
    }
    for (p, j, v) in disc.div.iter() {
        if !vfix[j] {
            b.add(nv + p, j, -v);
            b.add(j, nv + p, -v);
        }
    }
    for (i, &f) in vfix.iter().enumerate() {
        if f {
            b.add(i, i, 1.0);
        }
    }
    b.build()
}

fn inverse_iteration(
    k: &CsrMatrix,
    g: &CsrMatrix,
    fixed: &[bool],
    seed: u64,
    solve: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = fixed
        .iter()
        .map(|&f| if f { 0.0 } else { rng.random_range(-1.0..1.0) })
        .collect();
    let mut prev = f64::INFINITY;
    let mut prev_delta = f64::INFINITY;
    for it in 1..=MAX_ITER {
        let mut y = g.mul_vec(&x);
        for (yi, &f) in y.iter_mut().zip(fixed) {
            if f {
                *yi = 0.0;
            }
        }
        x = solve(&y)?;
        let gx = g.form(&x, &x);
        if !(gx > 0.0) {
            return Err(Error::NoConvergence {
                stage: "coercivity estimate",
                message: "iterate collapsed to zero".into(),
            });
        }
        let inv = 1.0 / gx.sqrt();
        x.iter_mut().for_each(|v| *v *= inv);
        let lambda = k.form(&x, &x);
        let delta = (prev - lambda).abs();
        if it > 2 {
            // geometric tail estimate of the remaining error
            let ratio = (delta / prev_delta).min(0.999_999);
            let remaining = delta * ratio / (1.0 - ratio);
            if remaining <= COERCIVITY_TOL * lambda.abs() || delta == 0.0 {
                return Ok((lambda, it));
            }
        }
        prev_delta = delta;
        prev = lambda;
    }
    Err(Error::NoConvergence {
        stage: "coercivity estimate",
        message: format!("inverse power iteration exceeded {MAX_ITER} iterations"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn dense(m: &CsrMatrix, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let d = m.to_dense();
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| d[rows[i]][cols[j]])
    }

    /// Smallest eigenvalue of `K x = λ G x` restricted to the columns of `basis`.
    fn dense_min_eig(k: DMatrix<f64>, g: DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
        let kr = basis.transpose() * k * basis;
        let gr = basis.transpose() * g * basis;
        let l = gr.cholesky().unwrap().l();
        let linv = l.clone().try_inverse().unwrap();
        let c = &linv * kr * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        SymmetricEigen::new(c).eigenvalues.min()
    }

    fn oracle(disc: &Discretization) -> (f64, f64) {
        let vfix = disc.spaces.fixed(SpaceKind::Velocity);
        let free: Vec<usize> = (0..vfix.len()).filter(|&i| !vfix[i]).collect();
        let all_p: Vec<usize> = (0..disc.n_pressure()).collect();
        let gram = CsrMatrix::linear_combination(&[
            (1.0, &disc.mass_velocity),
            (1.0, &disc.stiffness_velocity),
        ]);
        // null space of the constrained divergence via the orthogonal projector
        let dmat = dense(&disc.div, &all_p, &free);
        let svd = dmat.clone().svd(false, true);
        let vt = svd.v_t.unwrap();
        let smax = svd.singular_values.max();
        let mut null = Vec::new();
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * smax).count();
        let full = nalgebra::DMatrix::<f64>::identity(free.len(), free.len());
        let range = vt.rows(0, rank).transpose();
        let proj = &full - &range * range.transpose();
        let eig = SymmetricEigen::new(proj);
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev > 0.5 {
                null.push(eig.eigenvectors.column(i).into_owned());
            }
        }
        let basis = DMatrix::from_columns(&null);
        let c1 = dense_min_eig(dense(&disc.a1, &free, &free), dense(&gram, &free, &free), &basis);

        let tfix = disc.spaces.fixed(SpaceKind::Temperature);
        let tfree: Vec<usize> = (0..tfix.len()).filter(|&i| !tfix[i]).collect();
        let tgram =
            CsrMatrix::linear_combination(&[(1.0, &disc.mass_temperature), (1.0, &disc.a2)]);
        let id = DMatrix::<f64>::identity(tfree.len(), tfree.len());
        let c1p = dense_min_eig(dense(&disc.a2, &tfree, &tfree), dense(&tgram, &tfree, &tfree), &id);
        (c1, c1p)
    }

    #[test]
    fn inverse_iteration_matches_dense_eigensolver() {
        for n in [2, 3] {
            let disc = Discretization::new(Mesh::unit_square(n)).unwrap();
            let est = estimate_coercivity(&disc).unwrap();
            let (c1, c1p) = oracle(&disc);
            assert!((est.c1 - c1).abs() <= 1e-8 * c1, "{} vs {c1}", est.c1);
            assert!((est.c1_prime - c1p).abs() <= 1e-8 * c1p, "{} vs {c1p}", est.c1_prime);
        }
    }

    #[test]
    fn constants_are_positive_on_default_mesh() {
        let disc = Discretization::new(Mesh::unit_square(4)).unwrap();
        let est = estimate_coercivity(&disc).unwrap();
        assert!(est.c1 > 0.0 && est.c1_prime > 0.0);
    }
}
