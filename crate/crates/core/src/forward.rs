//! Time integration of the Boussinesq state system, cost evaluation and
//! energy diagnostics.
//!
//! One implicit Euler step solves the momentum/total-pressure saddle system
//! with convection frozen as `b(zⁿ, zⁿ⁺¹, ψ)` and explicit buoyancy, then the
//! temperature equation with skew advection by `zⁿ⁺¹`.

use std::sync::Arc;

use crate::discretization::{
    b_matrix, c_velocity_matrix, load_scalar, load_velocity, saddle_matrix, with_identity,
    assemble_buoyancy, BSlot, Coercivity, Discretization, SpaceKind,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, BandLu, CsrMatrix};

/// Node × time values on Γ₁ and Γ₂. Entry `[n - 1][i]` belongs to step `n`
/// (the interval `(t_{n-1}, t_n]`) and boundary node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySeries {
    pub gamma1: Vec<Vec<f64>>,
    pub gamma2: Vec<Vec<f64>>,
}

/// Controls `v₁` (total pressure on Γ₁) and `v₂` (heat flux on Γ₂).
pub type ControlTrajectory = BoundarySeries;

impl BoundarySeries {
    pub fn constant(nt: usize, n1: usize, n2: usize, c1: f64, c2: f64) -> Self {
        Self {
            gamma1: vec![vec![c1; n1]; nt],
            gamma2: vec![vec![c2; n2]; nt],
        }
    }

    pub fn zeros(nt: usize, n1: usize, n2: usize) -> Self {
        Self::constant(nt, n1, n2, 0.0, 0.0)
    }

    /// Samples `f₁(t, x, y)` at Γ₁ nodes and `f₂` at Γ₂ nodes, with `t` the
    /// right endpoint of each step.
    pub fn from_fn(
        disc: &Discretization,
        nt: usize,
        dt: f64,
        f1: impl Fn(f64, f64, f64) -> f64,
        f2: impl Fn(f64, f64, f64) -> f64,
    ) -> Self {
        let sample = |nodes: &[usize], f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<Vec<f64>> {
            (1..=nt)
                .map(|n| {
                    let t = n as f64 * dt;
                    nodes
                        .iter()
                        .map(|&i| {
                            let p = disc.spaces.nodes[i];
                            f(t, p[0], p[1])
                        })
                        .collect()
                })
                .collect()
        };
        Self {
            gamma1: sample(&disc.spaces.gamma1_nodes, &f1),
            gamma2: sample(&disc.spaces.gamma2_nodes, &f2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| 0.0)
    }

    pub fn steps(&self) -> usize {
        self.gamma1.len()
    }

    pub fn check_shape(&self, nt: usize, n1: usize, n2: usize, what: &'static str) -> Result<()> {
        let check = |rows: &[Vec<f64>], width: usize| -> Result<()> {
            if rows.len() != nt {
                return Err(Error::Mismatch {
                    what,
                    expected: nt,
                    got: rows.len(),
                });
            }
            for r in rows {
                if r.len() != width {
                    return Err(Error::Mismatch {
                        what,
                        expected: width,
                        got: r.len(),
                    });
                }
            }
            Ok(())
        };
        check(&self.gamma1, n1)?;
        check(&self.gamma2, n2)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        self.zip_with(self, |x, _| f(x))
    }

    /// Entrywise `f(self, other)`; shapes must agree.
    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut out = self.clone();
        for (o, (a, b)) in out.values_mut().zip(self.values().zip(other.values())) {
            *o = f(a, b);
        }
        out
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        self.zip_with(other, |x, y| a * x + b * y)
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Every entry, Γ₁ block first, each step in node order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.gamma1
            .iter()
            .flatten()
            .chain(self.gamma2.iter().flatten())
            .copied()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.gamma1
            .iter_mut()
            .flatten()
            .chain(self.gamma2.iter_mut().flatten())
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Plain Euclidean inner product of the stacked entries.
    pub fn dot(&self, other: &Self) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }
}

/// Box bounds `α ≤ v ≤ β` per node and step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds {
    pub lower: BoundarySeries,
    pub upper: BoundarySeries,
}

impl ControlBounds {
    pub fn constant(nt: usize, n1: usize, n2: usize, alpha: f64, beta: f64) -> Self {
        Self {
            lower: BoundarySeries::constant(nt, n1, n2, alpha, alpha),
            upper: BoundarySeries::constant(nt, n1, n2, beta, beta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = [
            ("bounds.alpha1", "bounds.beta1", &self.lower.gamma1, &self.upper.gamma1),
            ("bounds.alpha2", "bounds.beta2", &self.lower.gamma2, &self.upper.gamma2),
        ];
        for (lo_path, hi_path, lo, hi) in blocks {
            for (a_row, b_row) in lo.iter().zip(hi) {
                for (&a, &b) in a_row.iter().zip(b_row) {
                    if !(a.is_finite() && a > 0.0) {
                        return Err(Error::config(lo_path, format!("lower bound must be positive, got {a}")));
                    }
                    if !(b.is_finite() && a <= b) {
                        return Err(Error::config(
                            hi_path,
                            format!("upper bound {b} is below lower bound {a}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: &ControlTrajectory) -> bool {
        v.values()
            .zip(self.lower.values().zip(self.upper.values()))
            .all(|(x, (a, b))| a <= x && x <= b)
    }

    pub fn midpoint(&self) -> ControlTrajectory {
        self.lower.combine(0.5, &self.upper, 0.5)
    }
}

/// Initial velocity and temperature as nodal coefficient vectors (before
/// constraints and projection).
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub z0: Vec<f64>,
    pub w0: Vec<f64>,
}

impl InitialCondition {
    pub fn zero(disc: &Discretization) -> Self {
        Self {
            z0: vec![0.0; disc.n_velocity()],
            w0: vec![0.0; disc.n_temperature()],
        }
    }

    pub fn from_fn(
        disc: &Discretization,
        z0: impl Fn(f64, f64) -> [f64; 2],
        w0: impl Fn(f64, f64) -> f64,
    ) -> Self {
        Self {
            z0: disc.interpolate_velocity(z0),
            w0: disc.interpolate_scalar(w0),
        }
    }
}

/// Which boundary functional of the temperature enters the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostForm {
    /// `N₂ ∫ r₂ ∂w/∂n` with `∂w/∂n` replaced by `−v₂/k`.
    #[default]
    Flux,
    /// `N₂ ∫ r₂ w`, the trace pairing that drives the continuous adjoint.
    Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub nu: f64,
    pub k: f64,
    pub beta: f64,
    pub xi: [f64; 2],
    pub n1: f64,
    pub n2: f64,
    /// Cost weights r₁ (normal magnitude on Γ₁) and r₂ (on Γ₂).
    pub r: BoundarySeries,
    pub bounds: ControlBounds,
    pub t_final: f64,
    pub nt: usize,
    pub initial: InitialCondition,
}

impl ProblemSpec {
    /// Default channel problem: ν = k = 1, β = 0.1, ξ = (0, −1), N₁ = N₂ = 1,
    /// r₁ the indicator of the right side for y ∈ [0.25, 0.75] (scaled to
    /// the domain), r₂ the indicator of the bottom for x ∈ [0.25, 0.75],
    /// bounds [0.5, 1.5], zero initial data.
    pub fn channel(disc: &Discretization, t_final: f64, nt: usize) -> Self {
        let (lx, ly) = disc.mesh.lengths;
        let dt = if nt == 0 { 0.0 } else { t_final / nt as f64 };
        let inside = |s: f64, len: f64| s >= 0.25 * len - 1e-12 && s <= 0.75 * len + 1e-12;
        let r = BoundarySeries::from_fn(
            disc,
            nt,
            dt,
            |_, x, y| if (x - lx).abs() < 1e-12 && inside(y, ly) { 1.0 } else { 0.0 },
            |_, x, y| if y.abs() < 1e-12 && inside(x, lx) { 1.0 } else { 0.0 },
        );
        Self {
            nu: 1.0,
            k: 1.0,
            beta: 0.1,
            xi: [0.0, -1.0],
            n1: 1.0,
            n2: 1.0,
            r,
            bounds: ControlBounds::constant(nt, disc.n_gamma1(), disc.n_gamma2(), 0.5, 1.5),
            t_final,
            nt,
            initial: InitialCondition::zero(disc),
        }
    }

    /// Time step; zero when there are no steps.
    pub fn dt(&self) -> f64 {
        if self.nt == 0 {
            0.0
        } else {
            self.t_final / self.nt as f64
        }
    }

    pub fn validate(&self, disc: &Discretization) -> Result<()> {
        let positive = |v: f64, path: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(path, format!("must be positive and finite, got {v}")))
            }
        };
        positive(self.nu, "physics.nu")?;
        positive(self.k, "physics.k")?;
        positive(self.t_final, "time.T")?;
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("physics.beta", "must be finite and non-negative"));
        }
        if !self.xi.iter().all(|v| v.is_finite()) {
            return Err(Error::config("physics.xi", "must be finite"));
        }
        for (v, path) in [(self.n1, "cost.N1"), (self.n2, "cost.N2")] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(path, format!("must be finite and non-negative, got {v}")));
            }
        }
        let (nt, g1, g2) = (self.nt, disc.n_gamma1(), disc.n_gamma2());
        self.r.check_shape(nt, g1, g2, "cost weights r")?;
        if self.r.values().any(|v| !v.is_finite()) {
            return Err(Error::config("cost", "r values must be finite"));
        }
        self.bounds.lower.check_shape(nt, g1, g2, "lower bounds")?;
        self.bounds.upper.check_shape(nt, g1, g2, "upper bounds")?;
        self.bounds.validate()?;
        if self.initial.z0.len() != disc.n_velocity() {
            return Err(Error::Mismatch {
                what: "initial velocity",
                expected: disc.n_velocity(),
                got: self.initial.z0.len(),
            });
        }
        if self.initial.w0.len() != disc.n_temperature() {
            return Err(Error::Mismatch {
                what: "initial temperature",
                expected: disc.n_temperature(),
                got: self.initial.w0.len(),
            });
        }
        Ok(())
    }
}

/// Body forces added to the momentum and heat equations (used for
/// manufactured solutions).
pub trait Forcing {
    fn momentum(&self, t: f64, x: f64, y: f64) -> [f64; 2];
    fn heat(&self, t: f64, x: f64, y: f64) -> f64;
}

/// A validated problem bound to its discretization, with the
/// state-independent operators restricted to free degrees of freedom.
#[derive(Debug, Clone)]
pub struct Model {
    pub disc: Arc<Discretization>,
    pub spec: ProblemSpec,
    pub(crate) vfix: Vec<bool>,
    pub(crate) tfix: Vec<bool>,
    /// Operators with essential rows and columns removed.
    pub(crate) mass_v: CsrMatrix,
    pub(crate) mass_w: CsrMatrix,
    pub(crate) a1: CsrMatrix,
    pub(crate) a2: CsrMatrix,
    /// β ξ coupling, velocity × temperature.
    pub(crate) buoyancy: CsrMatrix,
    pub(crate) h1: CsrMatrix,
    pub(crate) h2: CsrMatrix,
}

impl Model {
    pub fn new(disc: Arc<Discretization>, spec: ProblemSpec) -> Result<Self> {
        spec.validate(&disc)?;
        let vfix = disc.spaces.fixed(SpaceKind::Velocity);
        let tfix = disc.spaces.fixed(SpaceKind::Temperature);
        let none1 = vec![false; disc.n_gamma1()];
        let none2 = vec![false; disc.n_gamma2()];
        Ok(Self {
            mass_v: disc.mass_velocity.without_fixed(&vfix, &vfix),
            mass_w: disc.mass_temperature.without_fixed(&tfix, &tfix),
            a1: disc.a1.without_fixed(&vfix, &vfix),
            a2: disc.a2.without_fixed(&tfix, &tfix),
            buoyancy: assemble_buoyancy(&disc, spec.beta, spec.xi)?.without_fixed(&vfix, &tfix),
            h1: disc.h1_map.without_fixed(&vfix, &none1),
            h2: disc.h2_map.without_fixed(&tfix, &none2),
            vfix,
            tfix,
            disc,
            spec,
        })
    }

    pub fn dt(&self) -> f64 {
        self.spec.dt()
    }

    pub fn check_controls(&self, v: &ControlTrajectory) -> Result<()> {
        v.check_shape(self.spec.nt, self.disc.n_gamma1(), self.disc.n_gamma2(), "control trajectory")
    }

    /// Velocity block `M/dt + ν A₁ + B(z_frozen, ·)` on free dofs.
    pub(crate) fn velocity_block(&self, z_frozen: &[f64]) -> CsrMatrix {
        let dt = self.dt();
        let conv = b_matrix(&self.disc, z_frozen, BSlot::First).without_fixed(&self.vfix, &self.vfix);
        CsrMatrix::linear_combination(&[
            (1.0 / dt, &self.mass_v),
            (self.spec.nu, &self.a1),
            (1.0, &conv),
        ])
    }

    /// Full momentum/total-pressure saddle matrix for the step frozen at `z_frozen`.
    pub(crate) fn velocity_system(&self, z_frozen: &[f64]) -> CsrMatrix {
        saddle_matrix(&self.disc, &self.velocity_block(z_frozen), &self.vfix)
    }

    /// Temperature matrix `M/dt + k A₂ + C_skew(z, ·)` on free dofs, identity on fixed ones.
    pub(crate) fn temperature_system(&self, z: &[f64]) -> CsrMatrix {
        let dt = self.dt();
        let adv = c_velocity_matrix(&self.disc, z, true).without_fixed(&self.tfix, &self.tfix);
        let k = CsrMatrix::linear_combination(&[
            (1.0 / dt, &self.mass_w),
            (self.spec.k, &self.a2),
            (1.0, &adv),
        ]);
        with_identity(&k, &self.tfix)
    }

    pub(crate) fn factor_velocity(&self, z_frozen: &[f64]) -> Result<BandLu> {
        BandLu::factor(&self.velocity_system(z_frozen), &self.disc.saddle_order, "momentum/pressure")
    }

    pub(crate) fn factor_temperature(&self, z: &[f64]) -> Result<BandLu> {
        BandLu::factor(&self.temperature_system(z), &self.disc.temperature_order, "temperature")
    }

    /// Initial fields: constraints applied, velocity projected onto the
    /// discretely divergence-free subspace.
    pub fn project_initial(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let disc = &self.disc;
        let mut w0 = self.spec.initial.w0.clone();
        disc.spaces.apply_constraints(SpaceKind::Temperature, &mut w0);
        let mut z0 = self.spec.initial.z0.clone();
        disc.spaces.apply_constraints(SpaceKind::Velocity, &mut z0);
        if z0.iter().all(|&v| v == 0.0) {
            return Ok((z0, w0));
        }
        let sys = saddle_matrix(disc, &self.mass_v, &self.vfix);
        let lu = BandLu::factor(&sys, &disc.saddle_order, "initial projection")?;
        let mut rhs = self.mass_v.mul_vec(&z0);
        rhs.resize(disc.n_velocity() + disc.n_pressure(), 0.0);
        let x = lu.solve(&rhs)?;
        Ok((x[..disc.n_velocity()].to_vec(), w0))
    }

    /// One implicit Euler step from `(zⁿ, wⁿ)` with controls of step `n + 1`.
    pub fn step(
        &self,
        z: &[f64],
        w: &[f64],
        v1: &[f64],
        v2: &[f64],
        t_next: f64,
        forcing: Option<&dyn Forcing>,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let disc = &self.disc;
        let (nv, dt) = (disc.n_velocity(), self.dt());
        let mut rhs = self.mass_v.mul_vec(z);
        rhs.iter_mut().for_each(|r| *r /= dt);
        let g = self.buoyancy.mul_vec(w);
        let h = self.h1.mul_vec(v1);
        for i in 0..nv {
            rhs[i] += h[i] - g[i];
        }
        if let Some(f) = forcing {
            let load = load_velocity(disc, |x, y| f.momentum(t_next, x, y));
            for i in (0..nv).filter(|&i| !self.vfix[i]) {
                rhs[i] += load[i];
            }
        }
        rhs.resize(nv + disc.n_pressure(), 0.0);
        let x = self.factor_velocity(z)?.solve(&rhs)?;
        let (z_new, pi) = (x[..nv].to_vec(), x[nv..].to_vec());

        let mut rhs_w = self.mass_w.mul_vec(w);
        rhs_w.iter_mut().for_each(|r| *r /= dt);
        let h = self.h2.mul_vec(v2);
        for (r, hv) in rhs_w.iter_mut().zip(&h) {
            *r += hv;
        }
        if let Some(f) = forcing {
            let load = load_scalar(disc, |x, y| f.heat(t_next, x, y));
            for i in (0..load.len()).filter(|&i| !self.tfix[i]) {
                rhs_w[i] += load[i];
            }
        }
        let w_new = self.factor_temperature(&z_new)?.solve(&rhs_w)?;
        Ok((z_new, pi, w_new))
    }

    pub fn run(&self, controls: &ControlTrajectory) -> Result<StateTrajectory> {
        self.run_forced(controls, None)
    }

    pub fn run_forced(
        &self,
        controls: &ControlTrajectory,
        forcing: Option<&dyn Forcing>,
    ) -> Result<StateTrajectory> {
        self.check_controls(controls)?;
        let (z0, w0) = self.project_initial()?;
        let dt = self.dt();
        let mut traj = StateTrajectory {
            dt,
            divergence: vec![self.disc.divergence_residual(&z0)],
            z: vec![z0],
            pi: vec![vec![0.0; self.disc.n_pressure()]],
            w: vec![w0],
        };
        for n in 0..self.spec.nt {
            let t_next = (n + 1) as f64 * dt;
            let (z, pi, w) = self
                .step(
                    &traj.z[n],
                    &traj.w[n],
                    &controls.gamma1[n],
                    &controls.gamma2[n],
                    t_next,
                    forcing,
                )
                .map_err(|e| e.at_step("forward solve", n + 1))?;
            traj.divergence.push(self.disc.divergence_residual(&z));
            traj.z.push(z);
            traj.pi.push(pi);
            traj.w.push(w);
        }
        Ok(traj)
    }

    /// Discrete cost `J`.
    pub fn evaluate_cost(
        &self,
        traj: &StateTrajectory,
        controls: &ControlTrajectory,
        form: CostForm,
    ) -> Result<f64> {
        self.check_controls(controls)?;
        if traj.z.len() != self.spec.nt + 1 {
            return Err(Error::Mismatch {
                what: "state trajectory length",
                expected: self.spec.nt + 1,
                got: traj.z.len(),
            });
        }
        let (dt, r) = (self.dt(), &self.spec.r);
        let disc = &self.disc;
        let mut j = 0.0;
        for n in 1..=self.spec.nt {
            j += self.spec.n1 * dt * dot(&disc.h1_map.tr_mul_vec(&traj.z[n]), &r.gamma1[n - 1]);
            j += self.spec.n2
                * dt
                * match form {
                    CostForm::Flux => {
                        -disc.edge_mass2.form(&r.gamma2[n - 1], &controls.gamma2[n - 1]) / self.spec.k
                    }
                    CostForm::Trace => dot(&disc.h2_map.tr_mul_vec(&traj.w[n]), &r.gamma2[n - 1]),
                };
        }
        Ok(j)
    }

    /// Both sides of the discrete energy inequalities at every time level.
    pub fn energy_report(
        &self,
        traj: &StateTrajectory,
        controls: &ControlTrajectory,
        coercivity: &Coercivity,
    ) -> Result<Vec<EnergyRow>> {
        self.check_controls(controls)?;
        let disc = &self.disc;
        let dt = self.dt();
        let half_sq = |m: &CsrMatrix, v: &[f64]| 0.5 * m.form(v, v);
        let (ev0, et0) = (
            half_sq(&disc.mass_velocity, &traj.z[0]),
            half_sq(&disc.mass_temperature, &traj.w[0]),
        );
        let mut rows = vec![EnergyRow {
            step: 0,
            time: 0.0,
            velocity_lhs: ev0,
            velocity_rhs: ev0,
            temperature_lhs: et0,
            temperature_rhs: et0,
        }];
        let (mut dv, mut dw, mut work_v, mut work_w) = (0.0, 0.0, 0.0, 0.0);
        for n in 1..traj.z.len() {
            let (z, w) = (&traj.z[n], &traj.w[n]);
            dv += dt * self.spec.nu * coercivity.c1 * disc.h1_norm_velocity_sq(z);
            dv += dt * self.buoyancy.form(z, &traj.w[n - 1]);
            dw += dt * self.spec.k * coercivity.c1_prime * disc.h1_norm_temperature_sq(w);
            work_v += dt * dot(&self.h1.mul_vec(&controls.gamma1[n - 1]), z);
            work_w += dt * dot(&self.h2.mul_vec(&controls.gamma2[n - 1]), w);
            rows.push(EnergyRow {
                step: n,
                time: n as f64 * dt,
                velocity_lhs: half_sq(&disc.mass_velocity, z) + dv,
                velocity_rhs: ev0 + work_v,
                temperature_lhs: half_sq(&disc.mass_temperature, w) + dw,
                temperature_rhs: et0 + work_w,
            });
        }
        Ok(rows)
    }

    /// Variationally recovered `∂w/∂n` at the Γ₂ nodes of step `n ≥ 1`:
    /// the residual of the discrete heat equation tested with Γ₂ basis
    /// functions, divided by `k` and mapped through the Γ₂ edge mass.
    pub fn recovered_flux(&self, traj: &StateTrajectory, n: usize) -> Result<Vec<f64>> {
        if n == 0 || n >= traj.w.len() {
            return Err(Error::OutOfRange {
                what: "flux recovery step",
                index: n,
                len: traj.w.len(),
            });
        }
        let disc = &self.disc;
        let dt = self.dt();
        let (w, wp) = (&traj.w[n], &traj.w[n - 1]);
        let dw: Vec<f64> = w.iter().zip(wp).map(|(a, b)| (a - b) / dt).collect();
        let adv = c_velocity_matrix(disc, &traj.z[n], true);
        let mut res = disc.mass_temperature.mul_vec(&dw);
        let a = disc.a2.mul_vec(w);
        let c = adv.mul_vec(w);
        for i in 0..res.len() {
            res[i] += self.spec.k * a[i] + c[i];
        }
        // restrict to Γ₂ nodes that are not temperature-constrained
        let nodes = &disc.spaces.gamma2_nodes;
        let free: Vec<usize> = (0..nodes.len()).filter(|&i| !self.tfix[nodes[i]]).collect();
        let mut sys = crate::linalg::TripletBuilder::new(free.len(), free.len());
        let mut pos = vec![usize::MAX; nodes.len()];
        for (k, &i) in free.iter().enumerate() {
            pos[i] = k;
        }
        for (i, j, v) in disc.edge_mass2.iter() {
            if pos[i] != usize::MAX && pos[j] != usize::MAX {
                sys.add(pos[i], pos[j], v);
            }
        }
        let sys = sys.build();
        let order: Vec<usize> = (0..free.len()).collect();
        let rhs: Vec<f64> = free.iter().map(|&i| res[nodes[i]] / self.spec.k).collect();
        let sol = BandLu::factor(&sys, &order, "flux recovery")?.solve(&rhs)?;
        let mut out = vec![0.0; nodes.len()];
        for (k, &i) in free.iter().enumerate() {
            out[i] = sol[k];
        }
        Ok(out)
    }
}

/// States `(zⁿ, πⁿ, wⁿ)` for `n = 0..=Nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub dt: f64,
    pub z: Vec<Vec<f64>>,
    /// Total-pressure multiplier; zero at `n = 0`.
    pub pi: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    /// ‖D zⁿ‖ per level.
    pub divergence: Vec<f64>,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRow {
    pub step: usize,
    pub time: f64,
    pub velocity_lhs: f64,
    pub velocity_rhs: f64,
    pub temperature_lhs: f64,
    pub temperature_rhs: f64,
}

impl EnergyRow {
    pub fn velocity_margin(&self) -> f64 {
        self.velocity_rhs - self.velocity_lhs
    }

    pub fn temperature_margin(&self) -> f64 {
        self.temperature_rhs - self.temperature_lhs
    }

    /// Magnitude used to judge the margins.
    pub fn scale(&self) -> f64 {
        [self.velocity_lhs, self.velocity_rhs, self.temperature_lhs, self.temperature_rhs]
            .iter()
            .fold(1.0f64, |m, v| m.max(v.abs()))
    }
}
