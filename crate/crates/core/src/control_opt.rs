//! Admissible controls, bang-bang maps, optimality residuals and the outer
//! optimization loop.
//!
//! Boundary integrals of node × step arrays use the positive nodal weights
//! of the discretization (Simpson per edge) and the uniform step `dt`, so a
//! bang-bang vertex maximizes the pairing with its switching field exactly.

use rand::Rng;

use crate::error::{Error, Result};
use crate::forward::{BoundarySeries, ControlBounds, ControlTrajectory, CostForm, Model};
use crate::sensitivity::SwitchingFields;

pub fn project_admissible(v: &ControlTrajectory, bounds: &ControlBounds) -> Result<ControlTrajectory> {
    bounds.validate()?;
    check_same(v, &bounds.lower, "control vs bounds")?;
    let clipped = v.zip_with(&bounds.lower, f64::max);
    Ok(clipped.zip_with(&bounds.upper, f64::min))
}

/// Upper bound where `σ > 0`, lower bound elsewhere (ties go to the lower bound).
pub fn bang_bang(sigma: &SwitchingFields, bounds: &ControlBounds) -> Result<ControlTrajectory> {
    check_same(sigma, &bounds.lower, "switching field vs bounds")?;
    let mut out = bounds.lower.clone();
    for (o, (s, hi)) in out.values_mut().zip(sigma.values().zip(bounds.upper.values())) {
        if s > 0.0 {
            *o = hi;
        }
    }
    Ok(out)
}

fn check_same(a: &BoundarySeries, b: &BoundarySeries, what: &'static str) -> Result<()> {
    let n1 = b.gamma1.first().map_or(0, Vec::len);
    let n2 = b.gamma2.first().map_or(0, Vec::len);
    a.check_shape(b.steps(), n1, n2, what)
}

/// Weighted space-time pairing `N₁ Σ dt ω₁ σ₁ d₁ + N₂ Σ dt ω₂ σ₂ d₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPairing {
    pub weights1: Vec<f64>,
    pub weights2: Vec<f64>,
    pub dt: f64,
    pub n1: f64,
    pub n2: f64,
}

impl BoundaryPairing {
    /// Pairing with the model's cost weights, as in the variational inequality.
    pub fn for_model(model: &Model) -> Self {
        Self {
            weights1: model.disc.weights1.clone(),
            weights2: model.disc.weights2.clone(),
            dt: model.dt(),
            n1: model.spec.n1,
            n2: model.spec.n2,
        }
    }

    /// Same quadrature with unit cost weights.
    pub fn unweighted(model: &Model) -> Self {
        Self {
            n1: 1.0,
            n2: 1.0,
            ..Self::for_model(model)
        }
    }

    pub fn pair(&self, sigma: &SwitchingFields, d: &ControlTrajectory) -> f64 {
        let mut s = 0.0;
        for (srow, drow) in sigma.gamma1.iter().zip(&d.gamma1) {
            for ((a, b), w) in srow.iter().zip(drow).zip(&self.weights1) {
                s += self.n1 * self.dt * w * a * b;
            }
        }
        for (srow, drow) in sigma.gamma2.iter().zip(&d.gamma2) {
            for ((a, b), w) in srow.iter().zip(drow).zip(&self.weights2) {
                s += self.n2 * self.dt * w * a * b;
            }
        }
        s
    }

    /// Field `σ̂` whose unweighted pairing reproduces `−∇J·d`.
    pub fn descent_field(&self, grad: &ControlTrajectory) -> SwitchingFields {
        let mut out = grad.clone();
        let scale = |row: &mut Vec<f64>, w: &[f64], n: f64| {
            for (v, wi) in row.iter_mut().zip(w) {
                let denom = n * self.dt * wi;
                *v = if denom > 0.0 { -*v / denom } else { 0.0 };
            }
        };
        for row in &mut out.gamma1 {
            scale(row, &self.weights1, self.n1);
        }
        for row in &mut out.gamma2 {
            scale(row, &self.weights2, self.n2);
        }
        out
    }
}

/// Conditional-gradient gap `pairing(σ, bang_bang(σ) − v) ≥ 0`.
pub fn fw_gap(
    v: &ControlTrajectory,
    sigma: &SwitchingFields,
    bounds: &ControlBounds,
    pairing: &BoundaryPairing,
) -> Result<f64> {
    let vertex = bang_bang(sigma, bounds)?;
    Ok(pairing.pair(sigma, &vertex.combine(1.0, v, -1.0)))
}

/// Largest `pairing(σ, ṽ − v)` over `samples` random admissible `ṽ` and the
/// bang-bang vertex. Nonpositive at a maximum-principle point.
pub fn vi_residual(
    v: &ControlTrajectory,
    sigma: &SwitchingFields,
    bounds: &ControlBounds,
    pairing: &BoundaryPairing,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let vertex = bang_bang(sigma, bounds)?;
    let mut worst = pairing.pair(sigma, &vertex.combine(1.0, v, -1.0));
    for _ in 0..samples {
        let trial = bounds.lower.zip_with(&bounds.upper, |a, b| rng.random_range(a..=b));
        worst = worst.max(pairing.pair(sigma, &trial.combine(1.0, v, -1.0)));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    ConditionalGradient,
    ProjectedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GapTol,
    MaxIter,
    StalledLineSearch,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::GapTol => "gap-tol",
            Termination::MaxIter => "max-iter",
            Termination::StalledLineSearch => "stalled-line-search",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub method: Method,
    pub gap_tol: f64,
    pub max_iter: usize,
    pub form: CostForm,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            method: Method::ConditionalGradient,
            gap_tol: 1e-6,
            max_iter: 50,
            form: CostForm::Flux,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub control: ControlTrajectory,
    /// Cost at each evaluated iterate.
    pub cost_history: Vec<f64>,
    pub gap_history: Vec<f64>,
    /// Number of evaluated iterates (equal to the history length).
    pub iterations: usize,
    pub reason: Termination,
    pub gradient: ControlTrajectory,
    /// Descent field `σ̂` at the final control.
    pub sigma: SwitchingFields,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

/// Minimizes the discrete cost over the admissible box.
pub fn optimize(
    model: &Model,
    initial: &ControlTrajectory,
    settings: &OptimizerSettings,
) -> Result<OptimizationResult> {
    if !(settings.gap_tol.is_finite() && settings.gap_tol >= 0.0) {
        return Err(Error::config("optimizer.gap_tol", "must be finite and non-negative"));
    }
    let bounds = &model.spec.bounds;
    let unit = BoundaryPairing::unweighted(model);
    let cost = |v: &ControlTrajectory, it: usize| -> Result<f64> {
        let traj = model.run(v).map_err(|e| e.at_iterate("optimizer", it))?;
        model.evaluate_cost(&traj, v, settings.form)
    };
    let mut v = project_admissible(initial, bounds)?;
    let (mut costs, mut gaps) = (Vec::new(), Vec::new());
    for it in 0.. {
        let traj = model.run(&v).map_err(|e| e.at_iterate("optimizer", it))?;
        let j = model.evaluate_cost(&traj, &v, settings.form)?;
        let adj = model
            .run_adjoint(&traj, settings.form)
            .map_err(|e| e.at_iterate("optimizer", it))?;
        let grad = model.discrete_gradient(&traj, &adj)?;
        let sigma = unit.descent_field(&grad);
        let vertex = bang_bang(&sigma, bounds)?;
        let gap = -grad.dot(&vertex.combine(1.0, &v, -1.0));
        costs.push(j);
        gaps.push(gap);
        log::info!("iterate {it}: J = {j:.12e}, gap = {gap:.3e}");
        let finish = |reason, v: ControlTrajectory, costs: Vec<f64>, gaps: Vec<f64>| OptimizationResult {
            control: v,
            iterations: costs.len(),
            cost_history: costs,
            gap_history: gaps,
            reason,
            gradient: grad.clone(),
            sigma: sigma.clone(),
        };
        if gap <= settings.gap_tol * (1.0 + j.abs()) {
            return Ok(finish(Termination::GapTol, v, costs, gaps));
        }
        if it >= settings.max_iter {
            return Ok(finish(Termination::MaxIter, v, costs, gaps));
        }
        let accepted = match settings.method {
            Method::ConditionalGradient => {
                let d = vertex.combine(1.0, &v, -1.0);
                let slope = grad.dot(&d);
                let mut lambda = 1.0;
                let mut found = None;
                for _ in 0..=MAX_HALVINGS {
                    let cand = v.combine(1.0, &d, lambda);
                    if cost(&cand, it)? <= j + ARMIJO * lambda * slope {
                        found = Some(cand);
                        break;
                    }
                    lambda *= 0.5;
                }
                found
            }
            Method::ProjectedGradient => {
                let width = bounds
                    .upper
                    .zip_with(&bounds.lower, |b, a| b - a)
                    .max_abs()
                    .max(f64::MIN_POSITIVE);
                let mut eta = width / grad.max_abs().max(f64::MIN_POSITIVE);
                let mut found = None;
                for _ in 0..=MAX_HALVINGS {
                    let cand = project_admissible(&v.combine(1.0, &grad, -eta), bounds)?;
                    let slope = grad.dot(&cand.combine(1.0, &v, -1.0));
                    if slope < 0.0 && cost(&cand, it)? <= j + ARMIJO * slope {
                        found = Some(cand);
                        break;
                    }
                    eta *= 0.5;
                }
                found
            }
        };
        match accepted {
            Some(next) => v = next,
            None => return Ok(finish(Termination::StalledLineSearch, v, costs, gaps)),
        }
    }
    unreachable!("the iteration loop only exits by returning")
}

/// Count of (node, step) pairs where `σ` is significant but `v` is not at
/// the bang-bang value: `|σ| > rel_sigma·‖σ‖∞` and
/// `|v − bang_bang(σ)| > rel_dev·(β − α)`.
pub fn argmax_violations(
    v: &ControlTrajectory,
    sigma: &SwitchingFields,
    bounds: &ControlBounds,
    rel_sigma: f64,
    rel_dev: f64,
) -> Result<usize> {
    let vertex = bang_bang(sigma, bounds)?;
    let smax = sigma.max_abs();
    let mut count = 0;
    let width = bounds.upper.combine(1.0, &bounds.lower, -1.0);
    for (((s, x), b), w) in sigma.values().zip(v.values()).zip(vertex.values()).zip(width.values()) {
        if s.abs() > rel_sigma * smax && (x - b).abs() > rel_dev * w {
            count += 1;
        }
    }
    Ok(count)
}
