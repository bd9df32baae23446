//! Linearized state equations, the discrete adjoint, switching fields and
//! exact gradients of the discrete cost.
//!
//! The linearization differentiates the forward scheme step by step, so the
//! adjoint march uses the transposes of exactly the same step matrices.

use crate::discretization::{
    b_matrix, c_scalar_matrix, normal_trace_raw, saddle_matrix, BSlot, Coercivity,
};
use crate::error::{Error, Result};
use crate::forward::{BoundarySeries, ControlTrajectory, CostForm, Model, ProblemSpec, StateTrajectory};
use crate::linalg::{norm2, BandLu, CsrMatrix};

const PICARD_MAX: usize = 25;
const PICARD_TOL: f64 = 1e-12;

/// Perturbations `(gⁿ, π′ⁿ, ηⁿ)`, `n = 0..=Nt`, with zero initial level.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedTrajectory {
    pub g: Vec<Vec<f64>>,
    pub pi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
}

/// Adjoint fields. Entry `m - 1` holds the multipliers of step `m`, which
/// pair with the controls on `(t_{m-1}, t_m]`; entry `Nt` is the terminal
/// value and is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub p: Vec<Vec<f64>>,
    pub pi: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub form: CostForm,
}

/// `σ₁ = p·n` on Γ₁ and `σ₂ = q` on Γ₂ per step.
pub type SwitchingFields = BoundarySeries;

impl Model {
    fn conv_second(&self, z: &[f64]) -> CsrMatrix {
        b_matrix(&self.disc, z, BSlot::Second).without_fixed(&self.vfix, &self.vfix)
    }

    fn adv_scalar(&self, w: &[f64]) -> CsrMatrix {
        c_scalar_matrix(&self.disc, w, true).without_fixed(&self.tfix, &self.vfix)
    }

    fn check_base(&self, base: &StateTrajectory) -> Result<()> {
        if base.z.len() != self.spec.nt + 1 || base.w.len() != self.spec.nt + 1 {
            return Err(Error::Mismatch {
                what: "base trajectory length",
                expected: self.spec.nt + 1,
                got: base.z.len(),
            });
        }
        Ok(())
    }

    /// Forward sensitivities for control perturbation `dv`. With `eps > 0`
    /// the quadratic terms `ε b(g, g, ψ)` and `ε c(g, η, φ)` are added and the
    /// velocity step is resolved by Picard iteration.
    pub fn run_linearized(
        &self,
        base: &StateTrajectory,
        dv: &ControlTrajectory,
        eps: f64,
    ) -> Result<LinearizedTrajectory> {
        self.check_base(base)?;
        self.check_controls(dv)?;
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::config("epsilon", "must be finite and non-negative"));
        }
        let disc = &self.disc;
        let (nv, np, dt) = (disc.n_velocity(), disc.n_pressure(), self.dt());
        let mut out = LinearizedTrajectory {
            g: vec![vec![0.0; nv]],
            pi: vec![vec![0.0; np]],
            eta: vec![vec![0.0; disc.n_temperature()]],
        };
        for n in 0..self.spec.nt {
            let (g, eta) = (&out.g[n], &out.eta[n]);
            let mut rhs = self.mass_v.mul_vec(g);
            rhs.iter_mut().for_each(|r| *r /= dt);
            let conv = self.conv_second(&base.z[n + 1]).mul_vec(g);
            let buoy = self.buoyancy.mul_vec(eta);
            let h = self.h1.mul_vec(&dv.gamma1[n]);
            for i in 0..nv {
                rhs[i] += h[i] - conv[i] - buoy[i];
            }
            rhs.resize(nv + np, 0.0);
            let x = if eps == 0.0 {
                self.factor_velocity(&base.z[n])?.solve(&rhs)
            } else {
                self.picard_velocity(&base.z[n], &rhs, eps)
            }
            .map_err(|e| e.at_step("linearized solve", n + 1))?;
            let g_new = x[..nv].to_vec();

            let mut rhs_w = self.mass_w.mul_vec(eta);
            rhs_w.iter_mut().for_each(|r| *r /= dt);
            let h = self.h2.mul_vec(&dv.gamma2[n]);
            let cg = self.adv_scalar(&base.w[n + 1]).mul_vec(&g_new);
            for i in 0..rhs_w.len() {
                rhs_w[i] += h[i] - cg[i];
            }
            let eta_new = if eps == 0.0 {
                self.factor_temperature(&base.z[n + 1])?.solve(&rhs_w)
            } else {
                let zg: Vec<f64> = base.z[n + 1]
                    .iter()
                    .zip(&g_new)
                    .map(|(z, g)| z + eps * g)
                    .collect();
                self.factor_temperature(&zg)?.solve(&rhs_w)
            }
            .map_err(|e| e.at_step("linearized solve", n + 1))?;
            out.g.push(g_new);
            out.pi.push(x[nv..].to_vec());
            out.eta.push(eta_new);
        }
        Ok(out)
    }

    fn picard_velocity(&self, z_frozen: &[f64], rhs: &[f64], eps: f64) -> Result<Vec<f64>> {
        let nv = self.disc.n_velocity();
        let block = self.velocity_block(z_frozen);
        let mut x = vec![0.0; rhs.len()];
        let mut increment = f64::INFINITY;
        for _ in 0..PICARD_MAX {
            let quad = b_matrix(&self.disc, &x[..nv], BSlot::First).without_fixed(&self.vfix, &self.vfix);
            let k = CsrMatrix::linear_combination(&[(1.0, &block), (eps, &quad)]);
            let sys = saddle_matrix(&self.disc, &k, &self.vfix);
            let next = BandLu::factor(&sys, &self.disc.saddle_order, "ε-linearized momentum")?.solve(rhs)?;
            let diff: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
            increment = norm2(&diff) / norm2(&next).max(f64::MIN_POSITIVE);
            x = next;
            if increment <= PICARD_TOL {
                return Ok(x);
            }
        }
        Err(Error::NoConvergence {
            stage: "Picard iteration",
            message: format!("relative increment {increment:.3e} after {PICARD_MAX} iterations"),
        })
    }

    /// Backward adjoint march from zero terminal data. Sources are
    /// `N₁H₁r₁` for the velocity and, for [`CostForm::Trace`], `N₂H₂r₂` for
    /// the temperature.
    pub fn run_adjoint(&self, base: &StateTrajectory, form: CostForm) -> Result<AdjointTrajectory> {
        self.check_base(base)?;
        let disc = &self.disc;
        let (nv, np, nw) = (disc.n_velocity(), disc.n_pressure(), disc.n_temperature());
        let (nt, dt) = (self.spec.nt, self.dt());
        let mut adj = AdjointTrajectory {
            p: vec![vec![0.0; nv]; nt + 1],
            pi: vec![vec![0.0; np]; nt + 1],
            q: vec![vec![0.0; nw]; nt + 1],
            form,
        };
        let r = &self.spec.r;
        for m in (1..=nt).rev() {
            let (p_next, q_next) = (&adj.p[m], &adj.q[m]);
            let mut rhs_q = self.mass_w.mul_vec(q_next);
            rhs_q.iter_mut().for_each(|v| *v /= dt);
            let gt = self.buoyancy.tr_mul_vec(p_next);
            for i in 0..nw {
                rhs_q[i] -= gt[i];
            }
            if form == CostForm::Trace {
                let c = self.h2.mul_vec(&r.gamma2[m - 1]);
                for i in 0..nw {
                    rhs_q[i] += self.spec.n2 * c[i];
                }
            }
            let q = self
                .factor_temperature(&base.z[m])
                .and_then(|lu| lu.solve_transpose(&rhs_q))
                .map_err(|e| e.at_step("adjoint solve", m))?;

            let mut rhs_p = self.mass_v.mul_vec(p_next);
            rhs_p.iter_mut().for_each(|v| *v /= dt);
            if m < nt {
                let bt = self.conv_second(&base.z[m + 1]).tr_mul_vec(p_next);
                for i in 0..nv {
                    rhs_p[i] -= bt[i];
                }
            }
            let ct = self.adv_scalar(&base.w[m]).tr_mul_vec(&q);
            let a = self.h1.mul_vec(&r.gamma1[m - 1]);
            for i in 0..nv {
                rhs_p[i] += self.spec.n1 * a[i] - ct[i];
            }
            rhs_p.resize(nv + np, 0.0);
            let x = self
                .factor_velocity(&base.z[m - 1])
                .and_then(|lu| lu.solve_transpose(&rhs_p))
                .map_err(|e| e.at_step("adjoint solve", m))?;
            adj.p[m - 1] = x[..nv].to_vec();
            adj.pi[m - 1] = x[nv..].to_vec();
            adj.q[m - 1] = q;
        }
        Ok(adj)
    }

    pub fn switching_fields(&self, adj: &AdjointTrajectory) -> SwitchingFields {
        let nt = adj.p.len().saturating_sub(1);
        let gamma2 = &self.disc.spaces.gamma2_nodes;
        BoundarySeries {
            gamma1: (0..nt).map(|m| normal_trace_raw(&self.disc, &adj.p[m])).collect(),
            gamma2: (0..nt)
                .map(|m| gamma2.iter().map(|&i| adj.q[m][i]).collect())
                .collect(),
        }
    }

    /// Gradient of [`Model::evaluate_cost`] (in the adjoint's cost form) with
    /// respect to every control value.
    pub fn discrete_gradient(
        &self,
        base: &StateTrajectory,
        adj: &AdjointTrajectory,
    ) -> Result<ControlTrajectory> {
        self.check_base(base)?;
        let nt = self.spec.nt;
        if adj.p.len() != nt + 1 || adj.q.len() != nt + 1 {
            return Err(Error::Mismatch {
                what: "adjoint trajectory length",
                expected: nt + 1,
                got: adj.p.len(),
            });
        }
        let dt = self.dt();
        let disc = &self.disc;
        let mut grad = BoundarySeries::zeros(nt, disc.n_gamma1(), disc.n_gamma2());
        for m in 0..nt {
            grad.gamma1[m] = self.h1.tr_mul_vec(&adj.p[m]).iter().map(|v| dt * v).collect();
            grad.gamma2[m] = self.h2.tr_mul_vec(&adj.q[m]).iter().map(|v| dt * v).collect();
            if adj.form == CostForm::Flux {
                let e = disc.edge_mass2.mul_vec(&self.spec.r.gamma2[m]);
                for (gv, ev) in grad.gamma2[m].iter_mut().zip(&e) {
                    *gv -= self.spec.n2 * dt * ev / self.spec.k;
                }
            }
        }
        Ok(grad)
    }

    /// Largest deviation of the v₂-gradient from its adjoint-trace part
    /// `dt H₂ᵀq`, relative to the gradient's size. Nonzero only for the
    /// flux form of the cost.
    pub fn flux_trace_discrepancy(&self, adj: &AdjointTrajectory, grad: &ControlTrajectory) -> f64 {
        let dt = self.dt();
        let mut dev: f64 = 0.0;
        let mut size: f64 = 0.0;
        for (m, row) in grad.gamma2.iter().enumerate() {
            let trace = self.h2.tr_mul_vec(&adj.q[m]);
            for (g, t) in row.iter().zip(&trace) {
                dev = dev.max((g - dt * t).abs());
                size = size.max(g.abs());
            }
        }
        if size == 0.0 {
            0.0
        } else {
            dev / size
        }
    }
}

/// Best relative error between `∇J·d` and central differences of `J` along
/// `d`, over steps `10⁻³ … 10⁻⁶`.
pub fn gradient_check(
    model: &Model,
    v: &ControlTrajectory,
    grad: &ControlTrajectory,
    d: &ControlTrajectory,
    form: CostForm,
) -> Result<f64> {
    let exact = grad.dot(d);
    let cost = |c: &ControlTrajectory| -> Result<f64> { model.evaluate_cost(&model.run(c)?, c, form) };
    let mut best = f64::INFINITY;
    for h in [1e-3, 1e-4, 1e-5, 1e-6] {
        let fd = (cost(&v.combine(1.0, d, h))? - cost(&v.combine(1.0, d, -h))?) / (2.0 * h);
        let denom = exact.abs().max(fd.abs());
        let err = if denom == 0.0 { 0.0 } else { (fd - exact).abs() / denom };
        best = best.min(err);
    }
    Ok(best)
}

/// Left-hand side of the smallness condition divided by its right-hand side:
/// `[β|ξ|(β|ξ| + 1)/(ν c₁)] / [k c₁′/4]`. Values ≤ 1 satisfy it.
pub fn smallness_ratio(spec: &ProblemSpec, coercivity: &Coercivity) -> f64 {
    let bx = spec.beta * (spec.xi[0] * spec.xi[0] + spec.xi[1] * spec.xi[1]).sqrt();
    (bx * (bx + 1.0) / (spec.nu * coercivity.c1)) / (spec.k * coercivity.c1_prime / 4.0)
}

/// Both sides of the pairing identity: the cost variation
/// `N₁Σdt⟨H₁r₁, gⁿ⟩ + N₂Σdt⟨H₂r₂, ηⁿ⟩` and the adjoint pairing
/// `Σdt⟨H₁δv₁ⁿ, pⁿ⟩ + Σdt⟨H₂δv₂ⁿ, qⁿ⟩`.
pub fn pairing_sides(
    model: &Model,
    lin: &LinearizedTrajectory,
    adj: &AdjointTrajectory,
    dv: &ControlTrajectory,
) -> (f64, f64) {
    let dt = model.dt();
    let r = &model.spec.r;
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for m in 1..lin.g.len() {
        lhs += model.spec.n1 * dt * crate::linalg::dot(&model.h1.mul_vec(&r.gamma1[m - 1]), &lin.g[m]);
        lhs += model.spec.n2 * dt * crate::linalg::dot(&model.h2.mul_vec(&r.gamma2[m - 1]), &lin.eta[m]);
        rhs += dt * crate::linalg::dot(&model.h1.mul_vec(&dv.gamma1[m - 1]), &adj.p[m - 1]);
        rhs += dt * crate::linalg::dot(&model.h2.mul_vec(&dv.gamma2[m - 1]), &adj.q[m - 1]);
    }
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{normal_trace, Discretization, Field, SpaceKind};
    use crate::forward::InitialCondition;
    use crate::mesh::Mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup(n: usize, nt: usize, seed: u64) -> (Model, ControlTrajectory, ChaCha8Rng) {
        let d = Arc::new(Discretization::new(Mesh::unit_square(n)).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = ProblemSpec::channel(&d, 0.5, nt);
        spec.beta = rng.random_range(0.05..0.5);
        spec.r = spec.r.map(|_| rng.random_range(-1.0..1.0));
        spec.initial = InitialCondition::from_fn(
            &d,
            |_, y| [y * (1.0 - y), 0.0],
            |x, y| (3.0 * x).sin() * y,
        );
        let m = Model::new(d, spec).unwrap();
        let v = m.spec.bounds.lower.zip_with(&m.spec.bounds.upper, |a, b| rng.random_range(a..=b));
        (m, v, rng)
    }

    fn random_direction(v: &ControlTrajectory, rng: &mut ChaCha8Rng) -> ControlTrajectory {
        v.map(|_| rng.random_range(-1.0..1.0))
    }

    fn stacked(t: &LinearizedTrajectory) -> Vec<f64> {
        t.g.iter().chain(&t.eta).flatten().copied().collect()
    }

    #[test]
    fn zero_perturbation_gives_zero_response() {
        let (m, v, _) = setup(2, 3, 1);
        let base = m.run(&v).unwrap();
        let lin = m.run_linearized(&base, &v.zeros_like(), 0.0).unwrap();
        assert!(stacked(&lin).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linearized_response_is_linear() {
        let (m, v, mut rng) = setup(3, 4, 2);
        let base = m.run(&v).unwrap();
        let dv = random_direction(&v, &mut rng);
        let a = stacked(&m.run_linearized(&base, &dv, 0.0).unwrap());
        let b = stacked(&m.run_linearized(&base, &dv.map(|x| 2.0 * x), 0.0).unwrap());
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (2.0 * x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-12 * norm2(&b), "{diff}");
    }

    #[test]
    fn taylor_remainder_is_second_order() {
        let (m, v, mut rng) = setup(3, 5, 3);
        let base = m.run(&v).unwrap();
        let dv = random_direction(&v, &mut rng);
        let lin = m.run_linearized(&base, &dv, 0.0).unwrap();
        let remainder = |h: f64| {
            let t = m.run(&v.combine(1.0, &dv, h)).unwrap();
            let mut s = 0.0;
            for n in 0..t.z.len() {
                for i in 0..t.z[n].len() {
                    s += (t.z[n][i] - base.z[n][i] - h * lin.g[n][i]).powi(2);
                }
                for i in 0..t.w[n].len() {
                    s += (t.w[n][i] - base.w[n][i] - h * lin.eta[n][i]).powi(2);
                }
            }
            s.sqrt()
        };
        let (r1, r2) = (remainder(1e-2), remainder(5e-3));
        let order = (r1 / r2).log2();
        assert!((order - 2.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn adjoint_pairing_identity() {
        for seed in 0..3 {
            let (m, v, mut rng) = setup(3, 4, 10 + seed);
            let base = m.run(&v).unwrap();
            let dv = random_direction(&v, &mut rng);
            let lin = m.run_linearized(&base, &dv, 0.0).unwrap();
            let adj = m.run_adjoint(&base, CostForm::Trace).unwrap();
            let (lhs, rhs) = pairing_sides(&m, &lin, &adj, &dv);
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
            assert!(adj.p[m.spec.nt].iter().chain(&adj.q[m.spec.nt]).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_cost_weights_give_zero_adjoint_and_gradient() {
        let (mut m, v, _) = setup(2, 3, 4);
        m.spec.r = m.spec.r.zeros_like();
        let base = m.run(&v).unwrap();
        for form in [CostForm::Flux, CostForm::Trace] {
            let adj = m.run_adjoint(&base, form).unwrap();
            assert!(adj.p.iter().chain(&adj.q).flatten().all(|&x| x == 0.0));
            assert_eq!(m.discrete_gradient(&base, &adj).unwrap().max_abs(), 0.0);
            assert_eq!(m.switching_fields(&adj).max_abs(), 0.0);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (m, v, mut rng) = setup(3, 4, 5);
        let base = m.run(&v).unwrap();
        for form in [CostForm::Flux, CostForm::Trace] {
            let adj = m.run_adjoint(&base, form).unwrap();
            let grad = m.discrete_gradient(&base, &adj).unwrap();
            let cost = |c: &ControlTrajectory| m.evaluate_cost(&m.run(c).unwrap(), c, form).unwrap();
            for _ in 0..3 {
                let dv = random_direction(&v, &mut rng);
                let exact = grad.dot(&dv);
                let best = [1e-3, 1e-4, 1e-5]
                    .iter()
                    .map(|&h| {
                        let fd = (cost(&v.combine(1.0, &dv, h)) - cost(&v.combine(1.0, &dv, -h))) / (2.0 * h);
                        (fd - exact).abs() / exact.abs().max(1e-12)
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(best <= 1e-6, "{form:?}: relative error {best}");
            }
        }
    }

    #[test]
    fn velocity_gradient_vanishes_without_velocity_cost_or_coupling() {
        let (mut m, v, _) = setup(2, 3, 6);
        m.spec.n1 = 0.0;
        m.spec.beta = 0.0;
        let m = Model::new(m.disc.clone(), m.spec.clone()).unwrap();
        let base = m.run(&v).unwrap();
        // the flux form of J does not see the temperature state
        let adj = m.run_adjoint(&base, CostForm::Flux).unwrap();
        let grad = m.discrete_gradient(&base, &adj).unwrap();
        assert!(grad.gamma1.iter().flatten().all(|&x| x == 0.0));
        assert!(grad.gamma2.iter().flatten().any(|&x| x != 0.0));
    }

    #[test]
    fn switching_fields_match_normal_trace() {
        let (m, v, mut rng) = setup(2, 3, 7);
        let base = m.run(&v).unwrap();
        let mut adj = m.run_adjoint(&base, CostForm::Trace).unwrap();
        for k in 0..3 {
            adj.p[k] = (0..m.disc.n_velocity()).map(|_| rng.random_range(-1.0..1.0)).collect();
        }
        let s = m.switching_fields(&adj);
        for k in 0..3 {
            let f = Field::new(SpaceKind::Velocity, adj.p[k].clone());
            assert_eq!(s.gamma1[k], normal_trace(&m.disc, &f).unwrap());
        }
        // p = (1, 0) on the left side has p·n = −1
        let mut p = vec![0.0; m.disc.n_velocity()];
        for &n in &m.disc.spaces.gamma1_nodes {
            p[2 * n] = 1.0;
        }
        adj.p[0] = p;
        let s = m.switching_fields(&adj);
        for (k, &n) in m.disc.spaces.gamma1_nodes.iter().enumerate() {
            let x = m.disc.spaces.nodes[n];
            let y_interior = x[1] > 0.0 && x[1] < 1.0;
            if x[0] == 0.0 && y_interior {
                assert_eq!(s.gamma1[0][k], -1.0);
            }
        }
    }

    #[test]
    fn epsilon_system_is_continuous_at_zero() {
        let (m, v, mut rng) = setup(3, 3, 8);
        let base = m.run(&v).unwrap();
        let dv = random_direction(&v, &mut rng);
        let g0 = stacked(&m.run_linearized(&base, &dv, 0.0).unwrap());
        let dist = |eps: f64| {
            let g = stacked(&m.run_linearized(&base, &dv, eps).unwrap());
            g.iter().zip(&g0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let (d1, d2) = (dist(1e-6), dist(2e-6));
        assert!(d1 > 0.0 && d1 <= 1e-4 * norm2(&g0));
        assert!((d2 / d1 - 2.0).abs() < 0.05, "{}", d2 / d1);
    }

    #[test]
    fn smallness_ratio_example() {
        let (m, _, _) = setup(2, 1, 9);
        let c = Coercivity {
            c1: 0.5,
            c1_prime: 0.8,
            iterations: (0, 0),
        };
        let mut spec = m.spec.clone();
        spec.beta = 0.1;
        // 0.1 · 1.1 / 0.5 = 0.22 over 0.2
        assert!((smallness_ratio(&spec, &c) - 1.1).abs() < 1e-14);
    }
}
