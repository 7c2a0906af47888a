//! Line-oriented run configuration.
//!
//! ```text
//! instance = heisenberg
//! task = full-pipeline
//! seed = 7
//!
//! [scheme]
//! resolution = [25, 25, 25]
//! ```
//!
//! Values are JSON literals (numbers, booleans, arrays) or bare strings.
//! `#` starts a comment. Unknown sections and keys are rejected.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use serde_json::Value;

use crate::action::OptimizerSettings;
use crate::error::{KamError, Result};
use crate::grid::GridBox;
use crate::hjsolver::SchemeSettings;
use crate::instances::{InstanceParams, PotentialKind, SystemSpec, INSTANCE_NAMES};
use crate::potential::{Polynomial, RadialScope};
use crate::weakkam::{BarrierWindow, LpLadder, LpLevel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    CheckAssumptions,
    Critical,
    Barrier,
    Aubry,
    Solve,
    Calibrate,
    FullPipeline,
}

impl Task {
    pub const ALL: [Task; 7] =
        [Task::CheckAssumptions, Task::Critical, Task::Barrier, Task::Aubry, Task::Solve, Task::Calibrate, Task::FullPipeline];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::CheckAssumptions => "check-assumptions",
            Task::Critical => "critical",
            Task::Barrier => "barrier",
            Task::Aubry => "aubry",
            Task::Solve => "solve",
            Task::Calibrate => "calibrate",
            Task::FullPipeline => "full-pipeline",
        }
    }
}

impl FromStr for Task {
    type Err = KamError;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| KamError::InvalidArgument(format!("unknown task `{s}`")))
    }
}

/// Grid and scheme parameters for the critical-solution solver.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeConfig {
    pub half_width: Vec<f64>,
    pub resolution: Vec<usize>,
    pub dt: f64,
    pub control_samples: usize,
    pub control_bound: f64,
    pub tol_fixed_point: f64,
    pub max_iters: usize,
    pub legendre_candidate: bool,
}

impl SchemeConfig {
    pub fn settings(&self) -> Result<SchemeSettings> {
        self.settings_with(&self.resolution, self.dt, self.tol_fixed_point)
    }

    fn settings_with(&self, resolution: &[usize], dt: f64, tol: f64) -> Result<SchemeSettings> {
        let d = self.half_width.len();
        let grid = GridBox::new(vec![0.0; d], self.half_width.clone(), resolution.to_vec())?;
        Ok(SchemeSettings {
            grid,
            dt,
            control_samples: self.control_samples,
            control_bound: self.control_bound,
            tol_fixed_point: tol,
            max_iters: self.max_iters,
            legendre_candidate: self.legendre_candidate,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticalConfig {
    pub point: Vec<f64>,
    pub t_ladder: Vec<f64>,
    pub lambda_ladder: Vec<f64>,
    /// Time step and grid of the time-average and Abel runs.
    pub dt: f64,
    pub resolution: Vec<usize>,
    pub tol: f64,
    /// Horizons up to this are cross-checked with the trajectory optimizer.
    pub cross_check_max_t: f64,
    pub lp_radius: f64,
    pub lp_control_bound: f64,
    /// `[n_x, n_u, degree]` per rung.
    pub lp_ladder: Vec<[usize; 3]>,
    pub dual_samples: usize,
    pub dual_evaluations: usize,
}

impl CriticalConfig {
    pub fn scheme(&self, base: &SchemeConfig) -> Result<SchemeSettings> {
        base.settings_with(&self.resolution, self.dt, self.tol)
    }

    pub fn lp_ladder(&self) -> LpLadder {
        LpLadder {
            radius: self.lp_radius,
            control_bound: self.lp_control_bound,
            levels: self.lp_ladder.iter().map(|r| LpLevel { n_x: r[0], n_u: r[1], degree: r[2] as u32 }).collect(),
            dual_samples: self.dual_samples,
            dual_evaluations: self.dual_evaluations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BarrierConfig {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
    pub n_horizons: usize,
}

impl BarrierConfig {
    pub fn window(&self) -> BarrierWindow {
        BarrierWindow { t_min: self.t_min, t_max: self.t_max, n: self.n_horizons }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AubryConfig {
    pub probes: Vec<Vec<f64>>,
    /// `None` selects `3·h(x*, x*) + 1e-2`.
    pub eps_a: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrateConfig {
    /// Start points; empty means `x*` (or the detected Aubry set in a pipeline).
    pub points: Vec<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChecksConfig {
    pub samples: usize,
    pub state_radius: f64,
    pub control_radius: f64,
    pub field_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub instance: String,
    pub task: Task,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Required for instances whose system is flagged experimental.
    pub experimental: bool,
    pub params: InstanceParams,
    pub system: Option<SystemSpec>,
    pub optimizer: OptimizerSettings,
    pub scheme: SchemeConfig,
    pub critical: CriticalConfig,
    pub barrier: BarrierConfig,
    pub aubry: AubryConfig,
    pub calibrate: CalibrateConfig,
    pub checks: ChecksConfig,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn axis_probes(d: usize, offsets: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; d]];
    for a in 0..d {
        for &o in offsets {
            let mut p = vec![0.0; d];
            p[a] = o;
            out.push(p);
        }
    }
    out
}

impl RunConfig {
    /// Defaults for an instance; `custom` needs its system to know `d`.
    pub fn defaults(instance: &str, system: Option<&SystemSpec>) -> Result<Self> {
        if !INSTANCE_NAMES.contains(&instance) {
            return Err(KamError::UnknownInstance(instance.to_string()));
        }
        let d = match instance {
            "euclidean-1d" | "double-well" => 1,
            "euclidean-2d" | "grushin" => 2,
            "heisenberg" | "heisenberg-horizontal" => 3,
            _ => system.and_then(|s| s.offset.first().map(Vec::len)).ok_or_else(|| {
                KamError::InvalidArgument("instance `custom` needs a [system] section with `offset`".into())
            })?,
        };
        let double = instance == "double-well";
        let (scheme, critical) = match d {
            1 => (
                SchemeConfig {
                    half_width: vec![2.0],
                    resolution: vec![401],
                    dt: 5e-3,
                    control_samples: if double { 101 } else { 41 },
                    control_bound: if double { 5.0 } else { 2.0 },
                    tol_fixed_point: 1e-9,
                    max_iters: 200_000,
                    legendre_candidate: true,
                },
                CriticalConfig {
                    point: vec![0.5],
                    t_ladder: vec![25.0, 50.0, 100.0, 200.0],
                    lambda_ladder: vec![0.1, 0.05, 0.02, 0.01],
                    dt: if double { 0.02 } else { 0.05 },
                    resolution: vec![161],
                    tol: 1e-8,
                    cross_check_max_t: 25.0,
                    lp_radius: 2.0,
                    lp_control_bound: 2.0,
                    lp_ladder: vec![[21, 41, 4], [41, 41, 4], [81, 41, 4]],
                    dual_samples: 201,
                    dual_evaluations: 200,
                },
            ),
            2 => (
                SchemeConfig {
                    half_width: vec![2.0; 2],
                    resolution: vec![81; 2],
                    dt: 0.05,
                    control_samples: 9,
                    control_bound: 2.0,
                    tol_fixed_point: 1e-8,
                    max_iters: 100_000,
                    legendre_candidate: true,
                },
                CriticalConfig {
                    point: vec![0.5; 2],
                    t_ladder: vec![25.0, 50.0, 100.0, 200.0],
                    lambda_ladder: vec![0.1, 0.05, 0.02, 0.01],
                    dt: 0.05,
                    resolution: vec![41; 2],
                    tol: 1e-8,
                    cross_check_max_t: 25.0,
                    lp_radius: 2.0,
                    lp_control_bound: 2.0,
                    lp_ladder: vec![[11, 9, 4], [21, 9, 4]],
                    dual_samples: 41,
                    dual_evaluations: 200,
                },
            ),
            _ => (
                SchemeConfig {
                    half_width: vec![2.0; d],
                    resolution: vec![21; d],
                    dt: 0.1,
                    control_samples: 9,
                    control_bound: 2.0,
                    tol_fixed_point: 1e-7,
                    max_iters: 50_000,
                    legendre_candidate: true,
                },
                CriticalConfig {
                    point: vec![0.5; d],
                    t_ladder: vec![25.0, 50.0, 100.0, 200.0],
                    lambda_ladder: vec![0.1, 0.05, 0.02, 0.01],
                    dt: 0.1,
                    resolution: vec![21; d],
                    tol: 1e-7,
                    cross_check_max_t: 25.0,
                    lp_radius: 2.0,
                    lp_control_bound: 2.0,
                    lp_ladder: vec![[7, 9, 4], [9, 9, 4]],
                    dual_samples: 15,
                    dual_evaluations: 200,
                },
            ),
        };
        let mut y = vec![0.0; d];
        y[0] = 1.0;
        let probes = if d == 1 { linspace(-1.5, 1.5, 13).into_iter().map(|v| vec![v]).collect() } else { axis_probes(d, &[-1.0, -0.5, 0.5, 1.0]) };
        Ok(Self {
            instance: instance.to_string(),
            task: Task::Critical,
            seed: 0,
            out_dir: PathBuf::from("out"),
            experimental: false,
            params: InstanceParams::default(),
            system: system.cloned(),
            optimizer: OptimizerSettings::default(),
            scheme,
            critical,
            barrier: BarrierConfig { x: vec![0.0; d], y, t_min: 5.0, t_max: 80.0, n_horizons: 12 },
            aubry: AubryConfig { probes, eps_a: None },
            calibrate: CalibrateConfig { points: Vec::new(), horizon: 5.0, dt: 0.01 },
            checks: ChecksConfig { samples: 1000, state_radius: 2.0, control_radius: 2.0, field_radius: 2.0 },
        })
    }

    /// Optimizer settings with the run seed applied.
    pub fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings { seed: self.seed, ..self.optimizer.clone() }
    }

    /// Text form of the effective configuration; parses back to `self`.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let j = |v: Value| v.to_string();
        let _ = writeln!(out, "instance = {}", self.instance);
        let _ = writeln!(out, "task = {}", self.task.as_str());
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "out_dir = {}", self.out_dir.display());
        if self.experimental {
            out.push_str("experimental = true\n");
        }

        let p = &self.params;
        out.push_str("\n[instance]\n");
        if let Some(k) = p.potential {
            let _ = writeln!(out, "potential = {}", enum_str(&k));
        }
        if let Some(s) = p.scope {
            let _ = writeln!(out, "scope = {}", enum_str(&s));
        }
        let _ = writeln!(out, "quartic = {}", j(p.quartic.into()));
        let _ = writeln!(out, "scale = {}", j(p.scale.into()));
        let _ = writeln!(out, "shift = {}", j(p.shift.into()));
        if let Some(k) = p.k_radius {
            let _ = writeln!(out, "k_radius = {}", j(k.into()));
        }
        if let Some(n) = &p.numerator {
            let _ = writeln!(out, "numerator = {}", j(serde_json::to_value(&n.terms).expect("serializable")));
        }
        if let Some(n) = &p.denominator {
            let _ = writeln!(out, "denominator = {}", j(serde_json::to_value(&n.terms).expect("serializable")));
        }

        if let Some(s) = &self.system {
            out.push_str("\n[system]\n");
            let _ = writeln!(out, "linear = {}", j(serde_json::to_value(&s.linear).expect("serializable")));
            let _ = writeln!(out, "offset = {}", j(serde_json::to_value(&s.offset).expect("serializable")));
        }

        let o = &self.optimizer;
        out.push_str("\n[optimizer]\n");
        let _ = writeln!(out, "n_steps = {}", o.n_steps);
        let _ = writeln!(out, "n_restarts = {}", o.n_restarts);
        let _ = writeln!(out, "penalty_init = {}", j(o.penalty_init.into()));
        let _ = writeln!(out, "penalty_growth = {}", j(o.penalty_growth.into()));
        let _ = writeln!(out, "max_outer = {}", o.max_outer);
        let _ = writeln!(out, "grad_tol = {}", j(o.grad_tol.into()));
        let _ = writeln!(out, "max_dt = {}", j(o.max_dt.into()));
        let _ = writeln!(out, "max_inner = {}", o.max_inner);

        let s = &self.scheme;
        out.push_str("\n[scheme]\n");
        let _ = writeln!(out, "half_width = {}", j(s.half_width.clone().into()));
        let _ = writeln!(out, "resolution = {}", j(s.resolution.clone().into()));
        let _ = writeln!(out, "dt = {}", j(s.dt.into()));
        let _ = writeln!(out, "control_samples = {}", s.control_samples);
        let _ = writeln!(out, "control_bound = {}", j(s.control_bound.into()));
        let _ = writeln!(out, "tol_fixed_point = {}", j(s.tol_fixed_point.into()));
        let _ = writeln!(out, "max_iters = {}", s.max_iters);
        let _ = writeln!(out, "legendre_candidate = {}", s.legendre_candidate);

        let c = &self.critical;
        out.push_str("\n[critical]\n");
        let _ = writeln!(out, "point = {}", j(c.point.clone().into()));
        let _ = writeln!(out, "t_ladder = {}", j(c.t_ladder.clone().into()));
        let _ = writeln!(out, "lambda_ladder = {}", j(c.lambda_ladder.clone().into()));
        let _ = writeln!(out, "dt = {}", j(c.dt.into()));
        let _ = writeln!(out, "resolution = {}", j(c.resolution.clone().into()));
        let _ = writeln!(out, "tol = {}", j(c.tol.into()));
        let _ = writeln!(out, "cross_check_max_t = {}", j(c.cross_check_max_t.into()));
        let _ = writeln!(out, "lp_radius = {}", j(c.lp_radius.into()));
        let _ = writeln!(out, "lp_control_bound = {}", j(c.lp_control_bound.into()));
        let _ = writeln!(out, "lp_ladder = {}", j(serde_json::to_value(&c.lp_ladder).expect("serializable")));
        let _ = writeln!(out, "dual_samples = {}", c.dual_samples);
        let _ = writeln!(out, "dual_evaluations = {}", c.dual_evaluations);

        let b = &self.barrier;
        out.push_str("\n[barrier]\n");
        let _ = writeln!(out, "x = {}", j(b.x.clone().into()));
        let _ = writeln!(out, "y = {}", j(b.y.clone().into()));
        let _ = writeln!(out, "t_min = {}", j(b.t_min.into()));
        let _ = writeln!(out, "t_max = {}", j(b.t_max.into()));
        let _ = writeln!(out, "n_horizons = {}", b.n_horizons);

        out.push_str("\n[aubry]\n");
        let _ = writeln!(out, "probes = {}", j(serde_json::to_value(&self.aubry.probes).expect("serializable")));
        match self.aubry.eps_a {
            Some(e) => {
                let _ = writeln!(out, "eps_a = {}", j(e.into()));
            }
            None => out.push_str("eps_a = auto\n"),
        }

        let k = &self.calibrate;
        out.push_str("\n[calibrate]\n");
        let _ = writeln!(out, "points = {}", j(serde_json::to_value(&k.points).expect("serializable")));
        let _ = writeln!(out, "horizon = {}", j(k.horizon.into()));
        let _ = writeln!(out, "dt = {}", j(k.dt.into()));

        let h = &self.checks;
        out.push_str("\n[checks]\n");
        let _ = writeln!(out, "samples = {}", h.samples);
        let _ = writeln!(out, "state_radius = {}", j(h.state_radius.into()));
        let _ = writeln!(out, "control_radius = {}", j(h.control_radius.into()));
        let _ = writeln!(out, "field_radius = {}", j(h.field_radius.into()));
        out
    }
}

fn enum_str<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        _ => String::new(),
    }
}

struct Entry {
    line: usize,
    section: String,
    key: String,
    value: Value,
}

fn parse_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn tokenize(text: &str) -> Result<Vec<Entry>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| KamError::Config { line: line_no, message: format!("malformed section header `{line}`") })?;
            section = name.trim().to_string();
            if !SECTIONS.contains(&section.as_str()) {
                return Err(KamError::Config { line: line_no, message: format!("unknown section `[{section}]`") });
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| KamError::Config { line: line_no, message: format!("expected `key = value`, got `{line}`") })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(KamError::Config { line: line_no, message: format!("empty key or value in `{line}`") });
        }
        out.push(Entry { line: line_no, section: section.clone(), key: key.to_string(), value: parse_value(value) });
    }
    Ok(out)
}

const SECTIONS: &[&str] = &["instance", "system", "optimizer", "scheme", "critical", "barrier", "aubry", "calibrate", "checks"];

fn as_f64(v: &Value) -> std::result::Result<f64, String> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| format!("expected a number, got {v}"))
}

fn as_usize(v: &Value) -> std::result::Result<usize, String> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| format!("expected a nonnegative integer, got {v}"))
}

fn as_bool(v: &Value) -> std::result::Result<bool, String> {
    v.as_bool().ok_or_else(|| format!("expected true or false, got {v}"))
}

fn as_str(v: &Value) -> std::result::Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(format!("expected a string, got {v}")),
    }
}

fn as_typed<T: serde::de::DeserializeOwned>(v: &Value, what: &str) -> std::result::Result<T, String> {
    serde_json::from_value(v.clone()).map_err(|e| format!("expected {what}: {e}"))
}

fn as_vec_f64(v: &Value) -> std::result::Result<Vec<f64>, String> {
    as_typed(v, "a list of numbers")
}

fn as_vec_usize(v: &Value) -> std::result::Result<Vec<usize>, String> {
    as_typed(v, "a list of nonnegative integers")
}

fn as_points(v: &Value) -> std::result::Result<Vec<Vec<f64>>, String> {
    as_typed(v, "a list of points")
}

fn as_terms(v: &Value) -> std::result::Result<Polynomial, String> {
    Ok(Polynomial { terms: as_typed(v, "a list of [coefficient, [exponents]] terms")? })
}

enum Apply {
    Unknown,
    Bad(String),
    Done,
}

impl From<std::result::Result<(), String>> for Apply {
    fn from(r: std::result::Result<(), String>) -> Self {
        match r {
            Ok(()) => Apply::Done,
            Err(e) => Apply::Bad(e),
        }
    }
}

fn apply(cfg: &mut RunConfig, section: &str, key: &str, v: &Value) -> Apply {
    macro_rules! set {
        ($target:expr, $conv:expr) => {
            Apply::from($conv(v).map(|x| $target = x))
        };
    }
    match (section, key) {
        ("", "instance") | ("system", "linear") | ("system", "offset") => Apply::Done,
        ("", "task") => Apply::from(as_str(v).and_then(|s| s.parse::<Task>().map_err(|e| e.to_string())).map(|t| cfg.task = t)),
        ("", "seed") => Apply::from(v.as_u64().ok_or_else(|| format!("expected a nonnegative integer, got {v}")).map(|s| cfg.seed = s)),
        ("", "experimental") => set!(cfg.experimental, as_bool),
        ("", "out_dir") => Apply::from(as_str(v).map(|s| cfg.out_dir = PathBuf::from(s))),

        ("instance", "potential") => set!(cfg.params.potential, |v| as_typed::<PotentialKind>(v, "zero, single-well, double-well or rational").map(Some)),
        ("instance", "scope") => set!(cfg.params.scope, |v| as_typed::<RadialScope>(v, "full or horizontal").map(Some)),
        ("instance", "quartic") => set!(cfg.params.quartic, as_f64),
        ("instance", "scale") => set!(cfg.params.scale, as_f64),
        ("instance", "shift") => set!(cfg.params.shift, as_f64),
        ("instance", "k_radius") => set!(cfg.params.k_radius, |v| as_f64(v).map(Some)),
        ("instance", "numerator") => set!(cfg.params.numerator, |v| as_terms(v).map(Some)),
        ("instance", "denominator") => set!(cfg.params.denominator, |v| as_terms(v).map(Some)),

        ("optimizer", "n_steps") => set!(cfg.optimizer.n_steps, as_usize),
        ("optimizer", "n_restarts") => set!(cfg.optimizer.n_restarts, as_usize),
        ("optimizer", "penalty_init") => set!(cfg.optimizer.penalty_init, as_f64),
        ("optimizer", "penalty_growth") => set!(cfg.optimizer.penalty_growth, as_f64),
        ("optimizer", "max_outer") => set!(cfg.optimizer.max_outer, as_usize),
        ("optimizer", "grad_tol") => set!(cfg.optimizer.grad_tol, as_f64),
        ("optimizer", "max_dt") => set!(cfg.optimizer.max_dt, as_f64),
        ("optimizer", "max_inner") => set!(cfg.optimizer.max_inner, as_usize),

        ("scheme", "half_width") => set!(cfg.scheme.half_width, as_vec_f64),
        ("scheme", "resolution") => set!(cfg.scheme.resolution, as_vec_usize),
        ("scheme", "dt") => set!(cfg.scheme.dt, as_f64),
        ("scheme", "control_samples") => set!(cfg.scheme.control_samples, as_usize),
        ("scheme", "control_bound") => set!(cfg.scheme.control_bound, as_f64),
        ("scheme", "tol_fixed_point") => set!(cfg.scheme.tol_fixed_point, as_f64),
        ("scheme", "max_iters") => set!(cfg.scheme.max_iters, as_usize),
        ("scheme", "legendre_candidate") => set!(cfg.scheme.legendre_candidate, as_bool),

        ("critical", "point") => set!(cfg.critical.point, as_vec_f64),
        ("critical", "t_ladder") => set!(cfg.critical.t_ladder, as_vec_f64),
        ("critical", "lambda_ladder") => set!(cfg.critical.lambda_ladder, as_vec_f64),
        ("critical", "dt") => set!(cfg.critical.dt, as_f64),
        ("critical", "resolution") => set!(cfg.critical.resolution, as_vec_usize),
        ("critical", "tol") => set!(cfg.critical.tol, as_f64),
        ("critical", "cross_check_max_t") => set!(cfg.critical.cross_check_max_t, as_f64),
        ("critical", "lp_radius") => set!(cfg.critical.lp_radius, as_f64),
        ("critical", "lp_control_bound") => set!(cfg.critical.lp_control_bound, as_f64),
        ("critical", "lp_ladder") => set!(cfg.critical.lp_ladder, |v| as_typed::<Vec<[usize; 3]>>(v, "a list of [n_x, n_u, degree]")),
        ("critical", "dual_samples") => set!(cfg.critical.dual_samples, as_usize),
        ("critical", "dual_evaluations") => set!(cfg.critical.dual_evaluations, as_usize),

        ("barrier", "x") => set!(cfg.barrier.x, as_vec_f64),
        ("barrier", "y") => set!(cfg.barrier.y, as_vec_f64),
        ("barrier", "t_min") => set!(cfg.barrier.t_min, as_f64),
        ("barrier", "t_max") => set!(cfg.barrier.t_max, as_f64),
        ("barrier", "n_horizons") => set!(cfg.barrier.n_horizons, as_usize),

        ("aubry", "probes") => set!(cfg.aubry.probes, as_points),
        ("aubry", "eps_a") => match v {
            Value::String(s) if s == "auto" => {
                cfg.aubry.eps_a = None;
                Apply::Done
            }
            _ => set!(cfg.aubry.eps_a, |v| as_f64(v).map(Some)),
        },

        ("calibrate", "points") => set!(cfg.calibrate.points, as_points),
        ("calibrate", "horizon") => set!(cfg.calibrate.horizon, as_f64),
        ("calibrate", "dt") => set!(cfg.calibrate.dt, as_f64),

        ("checks", "samples") => set!(cfg.checks.samples, as_usize),
        ("checks", "state_radius") => set!(cfg.checks.state_radius, as_f64),
        ("checks", "control_radius") => set!(cfg.checks.control_radius, as_f64),
        ("checks", "field_radius") => set!(cfg.checks.field_radius, as_f64),
        _ => Apply::Unknown,
    }
}

/// Parses and validates a configuration, filling defaults for the instance.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let entries = tokenize(text)?;
    let mut seen = std::collections::HashSet::new();
    for e in &entries {
        if !seen.insert((e.section.clone(), e.key.clone())) {
            return Err(KamError::Config { line: e.line, message: format!("duplicate key `{}`", e.key) });
        }
    }
    let find = |section: &str, key: &str| entries.iter().find(|e| e.section == section && e.key == key);
    let inst = find("", "instance").ok_or(KamError::Config { line: 0, message: "missing `instance`".into() })?;
    let name = as_str(&inst.value).map_err(|m| KamError::Config { line: inst.line, message: m })?;
    if !INSTANCE_NAMES.contains(&name.as_str()) {
        return Err(KamError::Config { line: inst.line, message: format!("unknown instance `{name}` (known: {})", INSTANCE_NAMES.join(", ")) });
    }
    let system = match (find("system", "linear"), find("system", "offset")) {
        (None, None) => None,
        (Some(l), Some(o)) => Some(SystemSpec {
            linear: as_typed(&l.value, "a list of d×d matrices").map_err(|m| KamError::Config { line: l.line, message: m })?,
            offset: as_typed(&o.value, "a list of d-vectors").map_err(|m| KamError::Config { line: o.line, message: m })?,
        }),
        (Some(e), None) | (None, Some(e)) => {
            return Err(KamError::Config { line: e.line, message: "[system] needs both `linear` and `offset`".into() });
        }
    };
    if system.is_some() && name != "custom" {
        let line = find("system", "offset").map_or(0, |e| e.line);
        return Err(KamError::Config { line, message: "[system] is only allowed with instance = custom".into() });
    }
    let mut cfg = RunConfig::defaults(&name, system.as_ref()).map_err(|e| KamError::Config { line: inst.line, message: e.to_string() })?;
    for e in &entries {
        match apply(&mut cfg, &e.section, &e.key, &e.value) {
            Apply::Done => {}
            Apply::Bad(message) => return Err(KamError::Config { line: e.line, message: format!("`{}`: {message}", e.key) }),
            Apply::Unknown => {
                let place = if e.section.is_empty() { String::new() } else { format!(" in [{}]", e.section) };
                return Err(KamError::Config { line: e.line, message: format!("unknown key `{}`{place}", e.key) });
            }
        }
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<()> {
    if cfg.instance == "grushin" && !cfg.experimental {
        return Err(KamError::Config {
            line: 0,
            message: "instance `grushin` loses rank at the origin and is experimental; set `experimental = true`".into(),
        });
    }
    let d = RunConfig::defaults(&cfg.instance, cfg.system.as_ref())?.barrier.x.len();
    let bad = |m: String| Err(KamError::Config { line: 0, message: m });
    let dims = [
        ("scheme.half_width", cfg.scheme.half_width.len()),
        ("scheme.resolution", cfg.scheme.resolution.len()),
        ("critical.point", cfg.critical.point.len()),
        ("critical.resolution", cfg.critical.resolution.len()),
        ("barrier.x", cfg.barrier.x.len()),
        ("barrier.y", cfg.barrier.y.len()),
    ];
    for (name, n) in dims {
        if n != d {
            return bad(format!("`{name}` has length {n}, expected {d}"));
        }
    }
    if let Some(p) = cfg.aubry.probes.iter().chain(&cfg.calibrate.points).find(|p| p.len() != d) {
        return bad(format!("point {p:?} has the wrong dimension (expected {d})"));
    }
    cfg.optimizer.validate().map_err(|e| KamError::Config { line: 0, message: e.to_string() })?;
    Ok(())
}
