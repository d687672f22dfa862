//! Declarative run configuration (TOML).
//!
//! The grammar is documented in `docs/config.md`. [`parse_config`] collects
//! every problem it finds (unknown keys and invariant violations), each
//! prefixed with the path of the offending field.

use serde::Deserialize;

use crate::control::{ControlParameterization, CostSpec, OptimizeOptions};
use crate::error::{Error, Result};
use crate::impulse::{ImpulseSchedule, ImpulseSpec, Multiplier};
use crate::kernels::TimeGrid;
use crate::resolvent::{build_resolvent_table, FractionalOrders, ResolventTable};
use crate::solver::SolverOptions;
use crate::spectral::{
    InitialData, NoiseKind, NoiseModel, Nonlinearity, NonlinearitySpec, SpectralModel, DEFAULT_PANELS,
};

/// Tolerance for "lies on the grid".
const GRID_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RunConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub schedule: ScheduleBlock,
    pub grid: GridBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub control: Option<ControlBlock>,
    #[serde(default)]
    pub cost: CostBlock,
    #[serde(default)]
    pub outputs: OutputsBlock,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ModelBlock {
    pub n_modes: usize,
    pub p: f64,
    pub alpha: f64,
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub betas: Vec<f64>,
    pub g1: NonlinearitySpec,
    pub g2: NonlinearitySpec,
    pub z0: InitialData,
    pub z1: InitialData,
    pub noise: NoiseBlock,
    /// Quadrature panels for projecting initial data.
    #[serde(default = "default_panels")]
    pub projection_panels: usize,
    /// Overrides the Dirichlet spectrum `−n²`.
    #[serde(default)]
    pub eigenvalues: Option<Vec<f64>>,
}

fn default_panels() -> usize {
    DEFAULT_PANELS
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct NoiseBlock {
    pub kind: NoiseKind,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
pub struct ScheduleBlock {
    #[serde(default)]
    pub impulses: Vec<ImpulseSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct GridBlock {
    pub ell: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SolverBlock {
    #[serde(default = "default_tol")]
    pub tol_picard: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

fn default_iters() -> usize {
    SolverOptions::default().max_iters
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            tol_picard: default_tol(),
            max_iters: default_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct McBlock {
    #[serde(default = "one")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl Default for McBlock {
    fn default() -> Self {
        Self { n_paths: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ControlBlock {
    /// Number of uniform control intervals (exclusive with `knots`).
    #[serde(default)]
    pub intervals: Option<usize>,
    /// Explicit breakpoints `0 = κ_0 < … < κ_J = ℓ`.
    #[serde(default)]
    pub knots: Option<Vec<f64>>,
    pub modes: usize,
    pub eta: f64,
    #[serde(default = "unit")]
    pub gain: f64,
    #[serde(default = "half")]
    pub initial_step: f64,
    #[serde(default = "default_min_step")]
    pub min_step: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_control_paths")]
    pub n_paths: usize,
}

fn unit() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_min_step() -> f64 {
    1.0 / 16.0
}
fn default_budget() -> usize {
    200
}
fn default_control_paths() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CostBlock {
    #[serde(default = "unit")]
    pub state_weight: f64,
    #[serde(default = "unit")]
    pub control_weight: f64,
    #[serde(default)]
    pub phi: f64,
    #[serde(default = "unit")]
    pub h1: f64,
    #[serde(default = "unit")]
    pub h2: f64,
}

impl Default for CostBlock {
    fn default() -> Self {
        let d = CostSpec::default();
        Self {
            state_weight: d.state_weight,
            control_weight: d.control_weight,
            phi: d.phi,
            h1: d.h1,
            h2: d.h2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct OutputsBlock {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "yes")]
    pub trajectory: bool,
    #[serde(default = "yes")]
    pub ensemble: bool,
    #[serde(default = "yes")]
    pub resolvent: bool,
    #[serde(default = "yes")]
    pub constants_csv: bool,
}

fn default_dir() -> String {
    "out".into()
}
fn yes() -> bool {
    true
}

impl Default for OutputsBlock {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            trajectory: true,
            ensemble: true,
            resolvent: true,
            constants_csv: true,
        }
    }
}

/// Parse and validate; on failure returns [`Error::Config`] with every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(vec![e.to_string().trim_end().to_string()]))?;
    let mut unknown = Vec::new();
    let cfg: std::result::Result<RunConfig, _> = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()));
    let mut errors: Vec<String> = unknown.into_iter().map(|p| format!("{p}: unknown key")).collect();
    match cfg {
        Ok(cfg) => {
            errors.extend(cfg.validate());
            if errors.is_empty() {
                Ok(cfg)
            } else {
                Err(Error::Config(errors))
            }
        }
        Err(e) => {
            errors.push(e.to_string().trim_end().to_string());
            Err(Error::Config(errors))
        }
    }
}

fn on_grid(t: f64, dt: f64) -> bool {
    let k = (t / dt).round();
    (k * dt - t).abs() <= GRID_TOL * t.abs().max(1.0)
}

impl RunConfig {
    /// Every invariant violation, as `path: message`.
    pub fn validate(&self) -> Vec<String> {
        let mut err = Vec::new();
        let mut check = |ok: bool, path: &str, msg: String| {
            if !ok {
                err.push(format!("{path}: {msg}"));
            }
        };
        let m = &self.model;
        check(m.n_modes >= 1, "model.n_modes", "must be at least 1".into());
        check(
            m.p >= 2.0 && m.p.is_finite(),
            "model.p",
            format!("moment order must be >= 2, got {}", m.p),
        );
        check(
            m.alpha > 0.0 && m.alpha <= 1.0,
            "model.alpha",
            format!("must lie in (0, 1], got {}", m.alpha),
        );
        check(
            m.gammas.len() == m.betas.len(),
            "model.betas",
            format!("{} weights for {} orders", m.betas.len(), m.gammas.len()),
        );
        for (i, g) in m.gammas.iter().enumerate() {
            check(
                *g >= m.alpha && *g < 1.0,
                &format!("model.gammas[{i}]"),
                format!("must lie in [alpha, 1), got {g}"),
            );
            if i > 0 {
                check(
                    *g <= m.gammas[i - 1],
                    &format!("model.gammas[{i}]"),
                    "orders must be nonincreasing".into(),
                );
            }
        }
        for (i, b) in m.betas.iter().enumerate() {
            check(
                *b > 0.0,
                &format!("model.betas[{i}]"),
                format!("must be positive, got {b}"),
            );
        }
        for (key, spec) in [("model.g1", &m.g1), ("model.g2", &m.g2)] {
            if let Err(e) = Nonlinearity::resolve(spec) {
                check(false, key, e.to_string());
            }
        }
        for (key, data) in [("model.z0", &m.z0), ("model.z1", &m.z1)] {
            if let Err(e) = data.coefficients(m.n_modes.max(1), m.projection_panels.max(1)) {
                check(false, key, e.to_string());
            }
        }
        check(
            m.projection_panels >= 1,
            "model.projection_panels",
            "must be at least 1".into(),
        );
        if let Err(e) = NoiseModel::new(m.noise.kind, m.noise.variances.clone()) {
            check(false, "model.noise.variances", e.to_string());
        }
        if m.noise.kind == NoiseKind::Diagonal {
            check(
                m.noise.variances.len() == m.n_modes,
                "model.noise.variances",
                format!(
                    "diagonal noise needs {} variances, got {}",
                    m.n_modes,
                    m.noise.variances.len()
                ),
            );
        }
        if let Some(ev) = &m.eigenvalues {
            check(
                ev.len() == m.n_modes,
                "model.eigenvalues",
                format!("need {} eigenvalues, got {}", m.n_modes, ev.len()),
            );
            for (i, l) in ev.iter().enumerate() {
                check(
                    *l <= 0.0 && l.is_finite(),
                    &format!("model.eigenvalues[{i}]"),
                    format!("must be finite and <= 0, got {l}"),
                );
            }
        }

        let g = &self.grid;
        let grid_ok = g.dt > 0.0 && g.dt.is_finite() && g.ell > 0.0 && g.ell.is_finite();
        check(
            g.dt > 0.0 && g.dt.is_finite(),
            "grid.dt",
            format!("must be positive, got {}", g.dt),
        );
        check(
            g.ell > 0.0 && g.ell.is_finite(),
            "grid.ell",
            format!("must be positive, got {}", g.ell),
        );
        if grid_ok {
            check(
                on_grid(g.ell, g.dt),
                "grid.dt",
                format!("{} does not divide ell = {}", g.dt, g.ell),
            );
        }

        let mut prev = 0.0;
        for (i, imp) in self.schedule.impulses.iter().enumerate() {
            let path = format!("schedule.impulses[{i}]");
            check(
                imp.t > prev,
                &format!("{path}.t"),
                format!("t = {} must exceed the previous end {prev}", imp.t),
            );
            check(
                imp.e > imp.t,
                &format!("{path}.e"),
                format!("e = {} must exceed t = {}", imp.e, imp.t),
            );
            check(
                imp.e < g.ell,
                &format!("{path}.e"),
                format!("e = {} must be below ell = {}", imp.e, g.ell),
            );
            if grid_ok {
                check(
                    on_grid(imp.t, g.dt),
                    &format!("{path}.t"),
                    format!("dt = {} does not divide t = {}", g.dt, imp.t),
                );
                check(
                    on_grid(imp.e, g.dt),
                    &format!("{path}.e"),
                    format!("dt = {} does not divide e = {}", g.dt, imp.e),
                );
            }
            for (key, spec) in [("varsigma", &imp.varsigma), ("varphi", &imp.varphi)] {
                if let Err(e) = Multiplier::resolve(spec) {
                    check(false, &format!("{path}.{key}"), e.to_string());
                }
            }
            prev = imp.e;
        }

        check(
            self.solver.tol_picard > 0.0,
            "solver.tol_picard",
            "must be positive".into(),
        );
        check(
            self.solver.max_iters >= 1,
            "solver.max_iters",
            "must be at least 1".into(),
        );
        check(self.mc.n_paths >= 1, "mc.n_paths", "must be at least 1".into());

        if let Some(c) = &self.control {
            match (&c.intervals, &c.knots) {
                (Some(_), Some(_)) => check(
                    false,
                    "control.knots",
                    "give either `intervals` or `knots`, not both".into(),
                ),
                (None, None) => check(false, "control.intervals", "give `intervals` or `knots`".into()),
                (Some(n), None) => check(*n >= 1, "control.intervals", "must be at least 1".into()),
                (None, Some(k)) => {
                    check(k.len() >= 2, "control.knots", "need at least two knots".into());
                    check(
                        k.first() == Some(&0.0) && k.last().is_some_and(|l| (l - g.ell).abs() <= GRID_TOL),
                        "control.knots",
                        "must start at 0 and end at ell".into(),
                    );
                    check(
                        k.windows(2).all(|w| w[1] > w[0]),
                        "control.knots",
                        "must be increasing".into(),
                    );
                }
            }
            if grid_ok {
                for (j, kappa) in self.knots(g.ell).iter().enumerate() {
                    check(
                        on_grid(*kappa, g.dt),
                        &format!("control.knots[{j}]"),
                        format!("knot {kappa} is not on the time grid"),
                    );
                }
            }
            check(
                c.modes >= 1 && c.modes <= m.n_modes,
                "control.modes",
                format!("must lie in 1..={}, got {}", m.n_modes, c.modes),
            );
            check(
                c.eta >= 0.0 && c.eta.is_finite(),
                "control.eta",
                "must be finite and >= 0".into(),
            );
            check(c.gain.is_finite(), "control.gain", "must be finite".into());
            check(c.initial_step > 0.0, "control.initial_step", "must be positive".into());
            check(c.min_step > 0.0, "control.min_step", "must be positive".into());
            check(
                c.min_step <= c.initial_step,
                "control.min_step",
                "must not exceed initial_step".into(),
            );
            check(c.budget >= 1, "control.budget", "must be at least 1".into());
            check(c.n_paths >= 1, "control.n_paths", "must be at least 1".into());
        }
        let k = &self.cost;
        check(k.state_weight >= 0.0, "cost.state_weight", "must be >= 0".into());
        check(k.control_weight >= 0.0, "cost.control_weight", "must be >= 0".into());
        check(k.h1 >= 0.0, "cost.h1", "must be >= 0".into());
        check(k.h2 > 0.0, "cost.h2", "must be positive".into());
        err
    }

    fn knots(&self, ell: f64) -> Vec<f64> {
        match &self.control {
            Some(ControlBlock { knots: Some(k), .. }) => k.clone(),
            Some(ControlBlock { intervals: Some(n), .. }) if *n >= 1 => {
                (0..=*n).map(|j| ell * j as f64 / *n as f64).collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::covering(self.grid.ell, self.grid.dt)
    }

    pub fn build_model(&self) -> Result<SpectralModel> {
        let m = &self.model;
        let orders = FractionalOrders::new(m.alpha, m.gammas.clone(), m.betas.clone())?;
        let schedule = ImpulseSchedule::new(self.grid.ell, &self.schedule.impulses, m.p)?;
        let model = SpectralModel::new(
            m.n_modes,
            orders,
            Nonlinearity::resolve(&m.g1)?,
            Nonlinearity::resolve(&m.g2)?,
            m.z0.coefficients(m.n_modes, m.projection_panels)?,
            m.z1.coefficients(m.n_modes, m.projection_panels)?,
            NoiseModel::new(m.noise.kind, m.noise.variances.clone())?,
            schedule,
            m.p,
        )?;
        match &m.eigenvalues {
            Some(ev) => model.with_eigenvalues(ev.clone()),
            None => Ok(model),
        }
    }

    pub fn build_table(&self, model: &SpectralModel) -> Result<ResolventTable> {
        build_resolvent_table(&model.orders, &model.eigenvalues, self.time_grid()?)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver.tol_picard,
            max_iters: self.solver.max_iters,
        }
    }

    pub fn cost_spec(&self) -> CostSpec {
        CostSpec {
            state_weight: self.cost.state_weight,
            control_weight: self.cost.control_weight,
            phi: self.cost.phi,
            h1: self.cost.h1,
            h2: self.cost.h2,
        }
    }

    /// Zero control on the configured knots, if a control block is present.
    pub fn initial_control(&self) -> Result<Option<ControlParameterization>> {
        match &self.control {
            None => Ok(None),
            Some(c) => {
                ControlParameterization::zero(self.knots(self.grid.ell), c.modes, c.eta, c.gain, self.model.p).map(Some)
            }
        }
    }

    pub fn optimize_options(&self, seed: u64) -> Option<OptimizeOptions> {
        self.control.as_ref().map(|c| OptimizeOptions {
            budget: c.budget,
            initial_step: c.initial_step,
            min_step: c.min_step,
            n_paths: c.n_paths,
            seed,
        })
    }
}
