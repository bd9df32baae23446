//! Run configuration (TOML) and its lowering to a [`Model`].
//!
//! Every block is optional; omitted keys take the defaults of the channel
//! problem on an 8×8 unit square with `T = 1`, `Nt = 20`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Deserializer};

use crate::control_opt::{Method, OptimizerSettings};
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::forward::{
    BoundarySeries, ControlBounds, ControlTrajectory, CostForm, InitialCondition, Model, ProblemSpec,
};
use crate::mesh::{BoundaryAssignment, BoundaryTag, Mesh, Side};
use crate::output::{read_boundary_table, FULL_PRECISION};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub physics: PhysicsConfig,
    pub time: TimeConfig,
    pub cost: CostConfig,
    pub bounds: BoundsConfig,
    pub initial: InitialConfig,
    /// Controls for `simulate` and the starting point of `optimize`.
    pub controls: ControlsConfig,
    pub optimizer: OptimizerConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    #[serde(rename = "Lx", alias = "lx")]
    pub lx: f64,
    #[serde(rename = "Ly", alias = "ly")]
    pub ly: f64,
    pub boundary: BoundaryAssignment,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            nx: 8,
            ny: 8,
            lx: 1.0,
            ly: 1.0,
            boundary: BoundaryAssignment::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    #[serde(alias = "viscosity")]
    pub nu: f64,
    #[serde(alias = "conductivity")]
    pub k: f64,
    pub beta: f64,
    pub xi: [f64; 2],
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            nu: 1.0,
            k: 1.0,
            beta: 0.1,
            xi: [0.0, -1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "Nt")]
    pub nt: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { t_final: 1.0, nt: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostFormConfig {
    #[default]
    Flux,
    Trace,
}

impl From<CostFormConfig> for CostForm {
    fn from(f: CostFormConfig) -> Self {
        match f {
            CostFormConfig::Flux => CostForm::Flux,
            CostFormConfig::Trace => CostForm::Trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    #[serde(rename = "N1")]
    pub n1: f64,
    #[serde(rename = "N2")]
    pub n2: f64,
    pub form: CostFormConfig,
    pub r1: Profile,
    pub r2: Profile,
}

impl Default for CostConfig {
    fn default() -> Self {
        let middle = |side| {
            Profile::Preset(Preset::Indicator {
                side,
                from: 0.25,
                to: 0.75,
                value: 1.0,
                outside: 0.0,
            })
        };
        Self {
            n1: 1.0,
            n2: 1.0,
            form: CostFormConfig::Flux,
            r1: middle(Side::Right),
            r2: middle(Side::Bottom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub alpha1: Profile,
    pub beta1: Profile,
    pub alpha2: Profile,
    pub beta2: Profile,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            alpha1: Profile::Value(0.5),
            beta1: Profile::Value(1.5),
            alpha2: Profile::Value(0.5),
            beta2: Profile::Value(1.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub z0: VelocityPreset,
    pub w0: ScalarPreset,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum VelocityPreset {
    #[default]
    Zero,
    Constant {
        value: [f64; 2],
    },
    /// Parabolic profile `(4A y(Ly − y)/Ly², 0)`.
    Poiseuille {
        amplitude: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScalarPreset {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
}

/// Unset controls default to the midpoint of the bounds.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlsConfig {
    pub v1: Option<Profile>,
    pub v2: Option<Profile>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = OptimizerSettings::default();
        Self {
            method: d.method,
            gap_tol: d.gap_tol,
            max_iter: d.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Vtk,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
    /// Significant digits of every written number.
    pub precision: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![Format::Vtk, Format::Csv],
            precision: FULL_PRECISION,
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// A boundary field over nodes and steps: a bare number or a preset table.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Value(f64),
    Preset(Preset),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Preset {
    Constant {
        value: f64,
    },
    /// `value` on the part of `side` between the fractions `from` and `to`
    /// of its length, `outside` elsewhere.
    Indicator {
        side: Side,
        #[serde(default)]
        from: f64,
        #[serde(default = "one")]
        to: f64,
        #[serde(default = "one")]
        value: f64,
        #[serde(default)]
        outside: f64,
    },
    /// CSV with `time`, `node_id`, `value` columns; relative paths are
    /// resolved against the config file's directory.
    Table {
        path: PathBuf,
        #[serde(default)]
        control: Option<String>,
    },
}

fn one() -> f64 {
    1.0
}

impl<'de> Deserialize<'de> for Profile {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = toml::Value::deserialize(d)?;
        match v {
            toml::Value::Float(x) => Ok(Profile::Value(x)),
            toml::Value::Integer(i) => Ok(Profile::Value(i as f64)),
            other => Preset::deserialize(other)
                .map(Profile::Preset)
                .map_err(serde::de::Error::custom),
        }
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<toml>", e.to_string().trim()))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<toml>".into() } else { path }, e.into_inner().to_string().trim())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file; relative table paths resolve against its directory.
pub fn load_config(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((parse_config(&text)?, base))
}

/// A lowered configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: Model,
    pub controls: ControlTrajectory,
    pub settings: OptimizerSettings,
}

impl RunConfig {
    /// Checks that do not need the mesh.
    pub fn validate(&self) -> Result<()> {
        let m = &self.mesh;
        if m.nx == 0 || m.ny == 0 {
            return Err(Error::config("mesh.nx", "nx and ny must be at least 1"));
        }
        for (v, path) in [(m.lx, "mesh.Lx"), (m.ly, "mesh.Ly")] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(path, format!("must be positive, got {v}")));
            }
        }
        m.boundary.validate()?;
        if !(self.time.t_final.is_finite() && self.time.t_final > 0.0) {
            return Err(Error::config("time.T", format!("must be positive, got {}", self.time.t_final)));
        }
        let o = &self.optimizer;
        if !(o.gap_tol.is_finite() && o.gap_tol >= 0.0) {
            return Err(Error::config("optimizer.gap_tol", "must be finite and non-negative"));
        }
        if !(1..=FULL_PRECISION).contains(&self.output.precision) {
            return Err(Error::config(
                "output.precision",
                format!("must be between 1 and {FULL_PRECISION} significant digits"),
            ));
        }
        for (p, path) in [
            (&self.bounds.alpha1, "bounds.alpha1"),
            (&self.bounds.alpha2, "bounds.alpha2"),
        ] {
            if let Some(x) = p.constant_value() {
                if !(x > 0.0) {
                    return Err(Error::config(path, format!("lower bound must be positive, got {x}")));
                }
            }
        }
        let profiles = [
            (Some(&self.cost.r1), "cost.r1"),
            (Some(&self.cost.r2), "cost.r2"),
            (Some(&self.bounds.alpha1), "bounds.alpha1"),
            (Some(&self.bounds.beta1), "bounds.beta1"),
            (Some(&self.bounds.alpha2), "bounds.alpha2"),
            (Some(&self.bounds.beta2), "bounds.beta2"),
            (self.controls.v1.as_ref(), "controls.v1"),
            (self.controls.v2.as_ref(), "controls.v2"),
        ];
        for (p, path) in profiles {
            if let Some(Profile::Preset(Preset::Indicator { from, to, .. })) = p {
                if !(0.0 <= *from && from <= to && *to <= 1.0) {
                    return Err(Error::config(path, "indicator needs 0 ≤ from ≤ to ≤ 1"));
                }
            }
        }
        Ok(())
    }

    pub fn discretization(&self) -> Result<Discretization> {
        let m = &self.mesh;
        Discretization::new(Mesh::rectangle(m.nx, m.ny, (m.lx, m.ly), m.boundary)?)
    }

    pub fn build(&self, base_dir: &Path) -> Result<Setup> {
        self.validate()?;
        let disc = Arc::new(self.discretization()?);
        let nt = self.time.nt;
        let dt = if nt == 0 { 0.0 } else { self.time.t_final / nt as f64 };
        let ctx = Sampler {
            disc: &disc,
            assignment: &self.mesh.boundary,
            nt,
            dt,
            base_dir,
        };
        let pair = |p1: &Profile, p1_path: &str, p2: &Profile, p2_path: &str| -> Result<BoundarySeries> {
            Ok(BoundarySeries {
                gamma1: ctx.sample(p1, BoundaryTag::Gamma1, p1_path)?,
                gamma2: ctx.sample(p2, BoundaryTag::Gamma2, p2_path)?,
            })
        };
        let r = pair(&self.cost.r1, "cost.r1", &self.cost.r2, "cost.r2")?;
        let bounds = ControlBounds {
            lower: pair(&self.bounds.alpha1, "bounds.alpha1", &self.bounds.alpha2, "bounds.alpha2")?,
            upper: pair(&self.bounds.beta1, "bounds.beta1", &self.bounds.beta2, "bounds.beta2")?,
        };
        bounds.validate()?;
        let ly = self.mesh.ly;
        let z0 = self.initial.z0.clone();
        let w0 = self.initial.w0.clone();
        let initial = InitialCondition::from_fn(
            &disc,
            move |_, y| match z0 {
                VelocityPreset::Zero => [0.0, 0.0],
                VelocityPreset::Constant { value } => value,
                VelocityPreset::Poiseuille { amplitude } => [4.0 * amplitude * y * (ly - y) / (ly * ly), 0.0],
            },
            move |_, _| match w0 {
                ScalarPreset::Zero => 0.0,
                ScalarPreset::Constant { value } => value,
            },
        );
        let spec = ProblemSpec {
            nu: self.physics.nu,
            k: self.physics.k,
            beta: self.physics.beta,
            xi: self.physics.xi,
            n1: self.cost.n1,
            n2: self.cost.n2,
            r,
            bounds,
            t_final: self.time.t_final,
            nt,
            initial,
        };
        let model = Model::new(disc.clone(), spec)?;
        let midpoint = model.spec.bounds.midpoint();
        let controls = BoundarySeries {
            gamma1: match &self.controls.v1 {
                Some(p) => ctx.sample(p, BoundaryTag::Gamma1, "controls.v1")?,
                None => midpoint.gamma1.clone(),
            },
            gamma2: match &self.controls.v2 {
                Some(p) => ctx.sample(p, BoundaryTag::Gamma2, "controls.v2")?,
                None => midpoint.gamma2,
            },
        };
        let settings = OptimizerSettings {
            method: self.optimizer.method,
            gap_tol: self.optimizer.gap_tol,
            max_iter: self.optimizer.max_iter,
            form: self.cost.form.into(),
        };
        Ok(Setup {
            model,
            controls,
            settings,
        })
    }
}

impl Profile {
    fn constant_value(&self) -> Option<f64> {
        match self {
            Profile::Value(x) | Profile::Preset(Preset::Constant { value: x }) => Some(*x),
            _ => None,
        }
    }
}

struct Sampler<'a> {
    disc: &'a Discretization,
    assignment: &'a BoundaryAssignment,
    nt: usize,
    dt: f64,
    base_dir: &'a Path,
}

impl Sampler<'_> {
    fn sample(&self, p: &Profile, part: BoundaryTag, path: &str) -> Result<Vec<Vec<f64>>> {
        let spaces = &self.disc.spaces;
        let nodes = match part {
            BoundaryTag::Gamma1 => &spaces.gamma1_nodes,
            BoundaryTag::Gamma2 => &spaces.gamma2_nodes,
        };
        let row: Vec<f64> = match p {
            Profile::Value(x) | Profile::Preset(Preset::Constant { value: x }) => vec![*x; nodes.len()],
            Profile::Preset(Preset::Indicator {
                side,
                from,
                to,
                value,
                outside,
            }) => {
                if self.assignment.tag(*side) != part {
                    return Err(Error::config(
                        path,
                        format!("side `{}` is not assigned to this boundary part", side.name()),
                    ));
                }
                let (lx, ly) = self.disc.mesh.lengths;
                nodes
                    .iter()
                    .map(|&i| {
                        let [x, y] = spaces.nodes[i];
                        let (on_side, s) = match side {
                            Side::Left => (x.abs() <= 1e-12 * lx, y / ly),
                            Side::Right => ((x - lx).abs() <= 1e-12 * lx, y / ly),
                            Side::Bottom => (y.abs() <= 1e-12 * ly, x / lx),
                            Side::Top => ((y - ly).abs() <= 1e-12 * ly, x / lx),
                        };
                        if on_side && s >= from - 1e-12 && s <= to + 1e-12 {
                            *value
                        } else {
                            *outside
                        }
                    })
                    .collect()
            }
            Profile::Preset(Preset::Table { path: file, control }) => {
                let full = if file.is_absolute() {
                    file.clone()
                } else {
                    self.base_dir.join(file)
                };
                return read_boundary_table(&full, self.disc, part, self.nt, self.dt, control.as_deref())
                    .map_err(|e| Error::config(path, e.to_string()));
            }
        };
        Ok(vec![row; self.nt])
    }
}
