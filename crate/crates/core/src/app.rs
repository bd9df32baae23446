//! Run orchestration behind the `flexctl` command.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Format, RunConfig, Setup};
use crate::control_opt::{argmax_violations, optimize, vi_residual, BoundaryPairing};
use crate::discretization::{apply_b, apply_c, estimate_coercivity, Discretization, Field, SpaceKind};
use crate::error::{Error, Result};
use crate::forward::{ControlTrajectory, CostForm, Model, StateTrajectory};
use crate::output::{fmt_num, pressure_on_nodes, series_rows, write_csv, write_vtk, VtkArray, SERIES_HEADER};
use crate::sensitivity::{gradient_check, pairing_sides, smallness_ratio, AdjointTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Simulate,
    Optimize,
    Verify,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides `output.directory` when set.
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { out_dir: None, seed: 42 }
    }
}

/// Files written by a run.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

struct Writer<'a> {
    cfg: &'a RunConfig,
    out: Outcome,
}

impl Writer<'_> {
    fn digits(&self) -> usize {
        self.cfg.output.precision
    }

    fn num(&self, x: f64) -> String {
        fmt_num(x, self.digits())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        if self.cfg.output.wants(Format::Csv) {
            let p = self.out.dir.join(name);
            write_csv(&p, header, rows)?;
            self.out.files.push(p);
        }
        Ok(())
    }

    fn vtk(&mut self, name: String, disc: &Discretization, arrays: &[VtkArray]) -> Result<()> {
        if self.cfg.output.wants(Format::Vtk) {
            let p = self.out.dir.join(name);
            write_vtk(&p, disc, arrays, self.digits())?;
            self.out.files.push(p);
        }
        Ok(())
    }

    fn states(&mut self, model: &Model, traj: &StateTrajectory) -> Result<()> {
        let disc = &model.disc;
        for n in 0..traj.len() {
            let pi = pressure_on_nodes(disc, &traj.pi[n]);
            self.vtk(
                format!("state_{n}.vtk"),
                disc,
                &[
                    VtkArray::Vector("velocity", &traj.z[n]),
                    VtkArray::Scalar("total_pressure", &pi),
                    VtkArray::Scalar("temperature", &traj.w[n]),
                ],
            )?;
        }
        Ok(())
    }

    /// `adjoint_<m>.vtk` holds the multipliers of step `m`.
    fn adjoints(&mut self, model: &Model, adj: &AdjointTrajectory) -> Result<()> {
        let disc = &model.disc;
        for m in 1..adj.p.len() {
            self.vtk(
                format!("adjoint_{m}.vtk"),
                disc,
                &[
                    VtkArray::Vector("adjoint_velocity", &adj.p[m - 1]),
                    VtkArray::Scalar("adjoint_temperature", &adj.q[m - 1]),
                ],
            )?;
        }
        Ok(())
    }

    fn controls(&mut self, model: &Model, v: &ControlTrajectory) -> Result<()> {
        let rows = series_rows(&model.disc, model.dt(), &[("v", v)], self.digits());
        self.csv("controls.csv", &SERIES_HEADER, &rows)
    }

    fn summary(&mut self, entries: &[(&str, String)]) -> Result<()> {
        let rows: Vec<Vec<String>> = entries.iter().map(|(k, v)| vec![k.to_string(), v.clone()]).collect();
        self.csv("summary.csv", &["key", "value"], &rows)
    }
}

pub fn run_command(cfg: &RunConfig, base_dir: &Path, mode: Mode, opts: &RunOptions) -> Result<Outcome> {
    let setup = cfg.build(base_dir)?;
    let dir = opts.out_dir.clone().unwrap_or_else(|| cfg.output.directory.clone());
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut w = Writer {
        cfg,
        out: Outcome { dir, files: Vec::new() },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    match mode {
        Mode::Simulate => simulate(&setup, &mut w)?,
        Mode::Optimize => run_optimize(&setup, &mut w, &mut rng)?,
        Mode::Verify => verify(&setup, &mut w, &mut rng)?,
    }
    Ok(w.out)
}

fn simulate(setup: &Setup, w: &mut Writer) -> Result<()> {
    let model = &setup.model;
    let v = &setup.controls;
    if !model.spec.bounds.contains(v) {
        log::warn!("controls leave the admissible box");
    }
    let traj = model.run(v)?;
    let coer = estimate_coercivity(&model.disc)?;
    let energy = model.energy_report(&traj, v, &coer)?;
    w.states(model, &traj)?;
    w.controls(model, v)?;
    let rows: Vec<Vec<String>> = energy
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                w.num(r.time),
                w.num(r.velocity_lhs),
                w.num(r.velocity_rhs),
                w.num(r.velocity_margin()),
                w.num(r.temperature_lhs),
                w.num(r.temperature_rhs),
                w.num(r.temperature_margin()),
            ]
        })
        .collect();
    w.csv(
        "energy_report.csv",
        &[
            "step",
            "time",
            "velocity_lhs",
            "velocity_rhs",
            "velocity_margin",
            "temperature_lhs",
            "temperature_rhs",
            "temperature_margin",
        ],
        &rows,
    )?;
    let worst = energy
        .iter()
        .map(|r| r.velocity_margin().min(r.temperature_margin()) / r.scale())
        .fold(f64::INFINITY, f64::min);
    let max_div = traj.divergence.iter().fold(0.0f64, |m, d| m.max(*d));
    let entries = [
        ("J_flux", w.num(model.evaluate_cost(&traj, v, CostForm::Flux)?)),
        ("J_trace", w.num(model.evaluate_cost(&traj, v, CostForm::Trace)?)),
        ("max_divergence_residual", w.num(max_div)),
        ("min_relative_energy_margin", w.num(worst)),
        ("c1", w.num(coer.c1)),
        ("c1_prime", w.num(coer.c1_prime)),
    ];
    w.summary(&entries)
}

fn run_optimize(setup: &Setup, w: &mut Writer, rng: &mut ChaCha8Rng) -> Result<()> {
    let model = &setup.model;
    let res = optimize(model, &setup.controls, &setup.settings)?;
    log::info!(
        "optimizer stopped ({}) after {} iterates",
        res.reason.name(),
        res.iterations
    );
    let traj = model.run(&res.control)?;
    let adj = model.run_adjoint(&traj, setup.settings.form)?;
    // the switching fields of the trace-form adjoint are reported alongside σ̂
    let trace_adj = model.run_adjoint(&traj, CostForm::Trace)?;
    let sigma = model.switching_fields(&trace_adj);
    let bounds = &model.spec.bounds;
    let vi = vi_residual(&res.control, &res.sigma, bounds, &BoundaryPairing::unweighted(model), 100, rng)?;
    let vi_trace = vi_residual(&res.control, &sigma, bounds, &BoundaryPairing::for_model(model), 100, rng)?;
    let violations = argmax_violations(&res.control, &res.sigma, bounds, 1e-6, 1e-6)?;

    w.states(model, &traj)?;
    w.adjoints(model, &adj)?;
    w.controls(model, &res.control)?;
    let history = |h: &[f64], w: &Writer| -> Vec<Vec<String>> {
        h.iter().enumerate().map(|(i, x)| vec![i.to_string(), w.num(*x)]).collect()
    };
    let rows = history(&res.cost_history, w);
    w.csv("cost_history.csv", &["iteration", "J"], &rows)?;
    let rows = history(&res.gap_history, w);
    w.csv("gap_history.csv", &["iteration", "gap"], &rows)?;
    let rows = series_rows(
        &model.disc,
        model.dt(),
        &[("sigma", &sigma), ("descent", &res.sigma)],
        w.digits(),
    );
    w.csv("switching.csv", &SERIES_HEADER, &rows)?;
    let entries = [
        ("termination", res.reason.name().to_string()),
        ("iterations", res.iterations.to_string()),
        ("J", w.num(*res.cost_history.last().unwrap_or(&f64::NAN))),
        ("gap", w.num(*res.gap_history.last().unwrap_or(&f64::NAN))),
        ("vi_residual", w.num(vi)),
        ("vi_residual_trace_switching", w.num(vi_trace)),
        ("argmax_violations", violations.to_string()),
    ];
    w.summary(&entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Warn,
    Info,
}

impl Status {
    fn name(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Warn => "warn",
            Status::Info => "info",
        }
    }
}

struct Check {
    name: &'static str,
    value: f64,
    threshold: f64,
    status: Status,
}

fn at_most(name: &'static str, value: f64, threshold: f64) -> Check {
    Check {
        name,
        value,
        threshold,
        status: if value <= threshold { Status::Pass } else { Status::Fail },
    }
}

fn verify(setup: &Setup, w: &mut Writer, rng: &mut ChaCha8Rng) -> Result<()> {
    let model = &setup.model;
    let disc = &model.disc;
    let mut checks = Vec::new();

    let (mut bvv, mut bsym, mut cww) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let mut vel = || {
            let c: Vec<f64> = (0..disc.n_velocity()).map(|_| rng.random_range(-1.0..1.0)).collect();
            Field::new(SpaceKind::Velocity, c)
        };
        let (u, v, x) = (vel(), vel(), vel());
        let t = Field::new(
            SpaceKind::Temperature,
            (0..disc.n_temperature()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let n = |f: &Field| disc.h1_norm_velocity_sq(&f.coeffs).sqrt();
        let nt = disc.h1_norm_temperature_sq(&t.coeffs).sqrt();
        bvv = bvv.max(apply_b(disc, &u, &v, &v)?.abs() / (n(&u) * n(&v) * n(&v)));
        let sum = apply_b(disc, &u, &v, &x)? + apply_b(disc, &u, &x, &v)?;
        bsym = bsym.max(sum.abs() / (n(&u) * n(&v) * n(&x)));
        cww = cww.max(apply_c(disc, &u, &t, &t, true)?.abs() / (n(&u) * nt * nt));
    }
    checks.push(at_most("b(u,v,v) relative", bvv, 1e-12));
    checks.push(at_most("b(u,v,w)+b(u,w,v) relative", bsym, 1e-12));
    checks.push(at_most("c_skew(z,w,w) relative", cww, 1e-12));

    let coer = estimate_coercivity(disc)?;
    checks.push(Check {
        name: "coercivity c1",
        value: coer.c1,
        threshold: 0.0,
        status: if coer.c1 > 0.0 { Status::Pass } else { Status::Fail },
    });
    checks.push(Check {
        name: "coercivity c1_prime",
        value: coer.c1_prime,
        threshold: 0.0,
        status: if coer.c1_prime > 0.0 { Status::Pass } else { Status::Fail },
    });

    let v = &setup.controls;
    let traj = model.run(v)?;
    let max_div = traj.divergence.iter().fold(0.0f64, |m, d| m.max(*d));
    checks.push(at_most("divergence residual", max_div, 1e-10));
    let energy = model.energy_report(&traj, v, &coer)?;
    let worst = energy
        .iter()
        .map(|r| -(r.velocity_margin().min(r.temperature_margin())) / r.scale())
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(at_most("energy margin deficit (relative)", worst, 1e-10));

    if model.spec.nt > 0 {
        let dv = v.map(|_| rng.random_range(-1.0..1.0));
        let lin = model.run_linearized(&traj, &dv, 0.0)?;
        let trace_adj = model.run_adjoint(&traj, CostForm::Trace)?;
        let (lhs, rhs) = pairing_sides(model, &lin, &trace_adj, &dv);
        let denom = lhs.abs().max(rhs.abs());
        let rel = if denom == 0.0 { 0.0 } else { (lhs - rhs).abs() / denom };
        checks.push(at_most("adjoint pairing identity", rel, 1e-10));

        let form = setup.settings.form;
        let adj = model.run_adjoint(&traj, form)?;
        let grad = model.discrete_gradient(&traj, &adj)?;
        let mut worst_fd = 0.0f64;
        for _ in 0..3 {
            let d = v.map(|_| rng.random_range(-1.0..1.0));
            worst_fd = worst_fd.max(gradient_check(model, v, &grad, &d, form)?);
        }
        checks.push(at_most("gradient vs central differences", worst_fd, 1e-6));
        checks.push(Check {
            name: "v2-gradient deviation from adjoint trace",
            value: model.flux_trace_discrepancy(&adj, &grad),
            threshold: f64::NAN,
            status: Status::Info,
        });

        // recovered ∂w/∂n against both sign readings of the heat-flux condition
        let n = model.spec.nt;
        let flux = model.recovered_flux(&traj, n)?;
        let v2 = &v.gamma2[n - 1];
        let k = model.spec.k;
        let rel_dev = |sign: f64| {
            let mut dev = 0.0f64;
            let mut size = 0.0f64;
            for (i, (&f, &c)) in flux.iter().zip(v2).enumerate() {
                if model.disc.spaces.temperature_fixed[model.disc.spaces.gamma2_nodes[i]] {
                    continue;
                }
                dev = dev.max((f - sign * c / k).abs());
                size = size.max((c / k).abs());
            }
            if size == 0.0 {
                dev
            } else {
                dev / size
            }
        };
        checks.push(Check {
            name: "recovered flux vs +v2/k",
            value: rel_dev(1.0),
            threshold: f64::NAN,
            status: Status::Info,
        });
        checks.push(Check {
            name: "recovered flux vs -v2/k",
            value: rel_dev(-1.0),
            threshold: f64::NAN,
            status: Status::Info,
        });
    }

    let ratio = smallness_ratio(&model.spec, &coer);
    if ratio > 1.0 {
        log::warn!("smallness condition violated: ratio {ratio:.6}");
    }
    checks.push(Check {
        name: "smallness condition ratio",
        value: ratio,
        threshold: 1.0,
        status: if ratio <= 1.0 { Status::Pass } else { Status::Warn },
    });

    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.name.to_string(),
                w.num(c.value),
                if c.threshold.is_nan() { String::new() } else { w.num(c.threshold) },
                c.status.name().to_string(),
            ]
        })
        .collect();
    w.csv("verify_report.csv", &["check", "value", "threshold", "status"], &rows)?;
    for c in &checks {
        log::info!("{}: {} {:.3e}", c.status.name(), c.name, c.value);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| c.status == Status::Fail).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(failed.join(", ")))
    }
}
