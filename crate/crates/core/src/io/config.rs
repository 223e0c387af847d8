//! TOML run configuration.
//!
//! A configuration names a preset and overrides any of its fields:
//!
//! ```toml
//! preset = "test1"
//!
//! [mesh]
//! kx = 40
//! ky = 20
//!
//! [time]
//! dt = 1e-5
//! t_final = 1e-4
//! ```
//!
//! Unknown keys are rejected. Custom initial data is given as expressions in
//! `x` and `y` (evalexpr syntax, e.g. `math::exp(-x^2)`; `pi` is predefined).

use std::path::PathBuf;

use evalexpr::{
    build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node,
    Value,
};
use serde::{Deserialize, Serialize};

use crate::quadrature::MAX_DEGREE;
use crate::scheme::{InitMode, InitialData, ModelParams, TimeGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Bacteria in a drop on `[0,2]×[0,1]`.
    Test1,
    /// Manufactured solution on the unit square.
    Test2,
    Custom,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test1" => Ok(Preset::Test1),
            "test2" => Ok(Preset::Test2),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::config(
                "preset",
                format!("expected test1, test2 or custom, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub kx: usize,
    pub ky: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub dt: f64,
    pub t_final: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Test1,
    Test2,
    Expression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub kind: InitialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u2: Option<String>,
}

impl InitialSpec {
    fn of(kind: InitialKind) -> Self {
        Self {
            kind,
            eta: None,
            c: None,
            u1: None,
            u2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub snapshot_times: Vec<f64>,
    pub vtk: bool,
    pub diagnostics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub init_mode: InitMode,
    pub quadrature_degree: usize,
    pub domain: Domain,
    pub mesh: MeshSpec,
    pub time: TimeSpec,
    pub params: ModelParams,
    pub initial: InitialSpec,
    pub output: OutputSpec,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Test1 => Self {
                preset,
                init_mode: InitMode::Elliptic,
                quadrature_degree: 8,
                domain: Domain { lx: 2.0, ly: 1.0 },
                mesh: MeshSpec { kx: 80, ky: 40 },
                time: TimeSpec {
                    dt: 1e-5,
                    t_final: 30e-5,
                },
                params: ModelParams::drop_experiment(),
                initial: InitialSpec::of(InitialKind::Test1),
                output: OutputSpec {
                    dir: PathBuf::from("out/test1"),
                    snapshot_times: vec![0.0, 12e-5, 30e-5],
                    vtk: true,
                    diagnostics: true,
                },
            },
            Preset::Test2 => Self {
                preset,
                init_mode: InitMode::Elliptic,
                quadrature_degree: 8,
                domain: Domain { lx: 1.0, ly: 1.0 },
                mesh: MeshSpec { kx: 10, ky: 10 },
                time: TimeSpec {
                    dt: 2e-4,
                    t_final: 0.01,
                },
                params: ModelParams::unit(),
                initial: InitialSpec::of(InitialKind::Test2),
                output: OutputSpec {
                    dir: PathBuf::from("out/test2"),
                    snapshot_times: vec![0.0, 0.01],
                    vtk: true,
                    diagnostics: true,
                },
            },
            Preset::Custom => Self {
                preset,
                init_mode: InitMode::Elliptic,
                quadrature_degree: 8,
                domain: Domain { lx: 1.0, ly: 1.0 },
                mesh: MeshSpec { kx: 20, ky: 20 },
                time: TimeSpec {
                    dt: 1e-3,
                    t_final: 1e-2,
                },
                params: ModelParams::unit(),
                initial: InitialSpec::of(InitialKind::Expression),
                output: OutputSpec {
                    dir: PathBuf::from("out/custom"),
                    snapshot_times: vec![0.0],
                    vtk: true,
                    diagnostics: true,
                },
            },
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.dt, self.time.t_final)
            .map_err(|e| Error::config("time", e.to_string()))
    }

    /// Grid indices of the snapshot times.
    pub fn snapshot_indices(&self) -> Result<Vec<usize>> {
        let grid = self.time_grid()?;
        self.output
            .snapshot_times
            .iter()
            .map(|&t| {
                grid.index_of(t).ok_or_else(|| {
                    Error::config(
                        "output.snapshot_times",
                        format!("{t} does not lie on the time grid"),
                    )
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let Domain { lx, ly } = self.domain;
        if !(lx.is_finite() && lx > 0.0 && ly.is_finite() && ly > 0.0) {
            return Err(Error::config("domain", "lengths must be positive"));
        }
        if self.mesh.kx == 0 || self.mesh.ky == 0 {
            return Err(Error::config("mesh", "kx and ky must be at least 1"));
        }
        self.params.validate()?;
        self.time_grid()?;
        self.snapshot_indices()?;
        if !(1..=MAX_DEGREE).contains(&self.quadrature_degree) {
            return Err(Error::config(
                "quadrature_degree",
                format!("must lie in 1..={MAX_DEGREE}"),
            ));
        }
        if self.initial.kind == InitialKind::Test2 && (lx != 1.0 || ly != 1.0) {
            return Err(Error::config(
                "initial.kind",
                "the manufactured solution is defined on the unit square",
            ));
        }
        if self.initial.kind == InitialKind::Expression {
            let data = ExpressionData::from_spec(&self.initial)?;
            let v = data.eta([0.5 * lx, 0.5 * ly]) + data.c([0.5 * lx, 0.5 * ly]);
            if !v.is_finite() {
                return Err(Error::config(
                    "initial",
                    "expressions must evaluate to finite numbers",
                ));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<serialize>", e.to_string()))
    }

    /// Initial data for the configured kind.
    pub fn initial_data(&self) -> Result<Box<dyn InitialData>> {
        Ok(match self.initial.kind {
            InitialKind::Test1 => Box::new(DropInitialData),
            InitialKind::Test2 => Box::new(crate::manufactured::ExactSolution::new(self.params)),
            InitialKind::Expression => Box::new(ExpressionData::from_spec(&self.initial)?),
        })
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Parse and validate configuration text; missing fields come from the preset.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<syntax>", e.message().to_string()))?;
    let preset = match table.get("preset") {
        None => Preset::Custom,
        Some(toml::Value::String(s)) => s.parse()?,
        Some(_) => return Err(Error::config("preset", "must be a string")),
    };
    let mut merged = toml::Value::try_from(RunConfig::preset(preset))
        .map_err(|e| Error::config("<serialize>", e.to_string()))?;
    merge(&mut merged, toml::Value::Table(table));
    let cfg: RunConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("<fields>", e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// `η₀`, `c₀` of the drop experiment; `u₀ = 0` and `σ₀ = ∇c₀`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DropInitialData;

const DROP_CENTERS: [f64; 3] = [0.2, 0.5, 1.2];

impl DropInitialData {
    fn bump(x: [f64; 2], s: f64) -> f64 {
        80.0 * (-8.0 * (x[0] - s).powi(2) - 10.0 * (x[1] - 1.0).powi(2)).exp()
    }
}

impl InitialData for DropInitialData {
    fn eta(&self, x: [f64; 2]) -> f64 {
        DROP_CENTERS.iter().map(|&s| Self::bump(x, s)).sum()
    }

    fn grad_eta(&self, x: [f64; 2]) -> [f64; 2] {
        DROP_CENTERS.iter().fold([0.0, 0.0], |g, &s| {
            let b = Self::bump(x, s);
            [g[0] - 16.0 * (x[0] - s) * b, g[1] - 20.0 * (x[1] - 1.0) * b]
        })
    }

    fn c(&self, x: [f64; 2]) -> f64 {
        100.0 * (-5.0 * (x[0] - 1.0).powi(2) - 5.0 * (x[1] - 0.5).powi(2)).exp()
    }

    fn grad_c(&self, x: [f64; 2]) -> [f64; 2] {
        let c = self.c(x);
        [-10.0 * (x[0] - 1.0) * c, -10.0 * (x[1] - 0.5) * c]
    }

    fn jac_sigma(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let c = self.c(x);
        let (a, b) = (x[0] - 1.0, x[1] - 0.5);
        [
            [c * (100.0 * a * a - 10.0), c * 100.0 * a * b],
            [c * 100.0 * a * b, c * (100.0 * b * b - 10.0)],
        ]
    }

    fn u(&self, _x: [f64; 2]) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn jac_u(&self, _x: [f64; 2]) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }
}

/// Initial data from expressions in `x` and `y`; derivatives by central
/// differences.
#[derive(Debug, Clone)]
pub struct ExpressionData {
    eta: Node<DefaultNumericTypes>,
    c: Node<DefaultNumericTypes>,
    u1: Node<DefaultNumericTypes>,
    u2: Node<DefaultNumericTypes>,
}

fn compile(
    key: &str,
    src: Option<&String>,
    default: Option<&str>,
) -> Result<Node<DefaultNumericTypes>> {
    let src = match (src, default) {
        (Some(s), _) => s.as_str(),
        (None, Some(d)) => d,
        (None, None) => {
            return Err(Error::config(
                format!("initial.{key}"),
                "required for expression initial data",
            ))
        }
    };
    let node = build_operator_tree::<DefaultNumericTypes>(src)
        .map_err(|e| Error::config(format!("initial.{key}"), e.to_string()))?;
    for id in node.iter_variable_identifiers() {
        if !matches!(id, "x" | "y" | "pi") {
            return Err(Error::config(
                format!("initial.{key}"),
                format!("unknown variable `{id}`"),
            ));
        }
    }
    eval_node(&node, [0.5, 0.5]).map_err(|m| Error::config(format!("initial.{key}"), m))?;
    Ok(node)
}

fn eval_node(node: &Node<DefaultNumericTypes>, x: [f64; 2]) -> std::result::Result<f64, String> {
    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
    for (k, v) in [("x", x[0]), ("y", x[1]), ("pi", std::f64::consts::PI)] {
        ctx.set_value(k.into(), Value::Float(v))
            .map_err(|e| e.to_string())?;
    }
    node.eval_number_with_context(&ctx)
        .map_err(|e| e.to_string())
}

impl ExpressionData {
    /// `u1` and `u2` default to zero.
    pub fn from_spec(spec: &InitialSpec) -> Result<Self> {
        Ok(Self {
            eta: compile("eta", spec.eta.as_ref(), None)?,
            c: compile("c", spec.c.as_ref(), None)?,
            u1: compile("u1", spec.u1.as_ref(), Some("0.0"))?,
            u2: compile("u2", spec.u2.as_ref(), Some("0.0"))?,
        })
    }

    fn eval(node: &Node<DefaultNumericTypes>, x: [f64; 2]) -> f64 {
        eval_node(node, x).unwrap_or(f64::NAN)
    }
}

impl InitialData for ExpressionData {
    fn eta(&self, x: [f64; 2]) -> f64 {
        Self::eval(&self.eta, x)
    }

    fn c(&self, x: [f64; 2]) -> f64 {
        Self::eval(&self.c, x)
    }

    fn u(&self, x: [f64; 2]) -> [f64; 2] {
        [Self::eval(&self.u1, x), Self::eval(&self.u2, x)]
    }
}
