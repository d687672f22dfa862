//! Quadratic Lagrange cost, the admissible control set and a derivative-free
//! search for an optimal control.
//!
//! Controls are deterministic, piecewise constant in time and act on the
//! first `K` modes through a scalar gain `E`. All cost evaluations inside one
//! search share the master seed (common random numbers), so the Monte Carlo
//! cost is a deterministic function of the control parameters.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::kernels::TimeGrid;
use crate::resolvent::ResolventTable;
use crate::solver::{pairwise_sum, simulate_ensemble, Forcing, SolverOptions};
use crate::spectral::SpectralModel;

/// `u(t) = Σ_n values[j][n] ξ_n` for `t ∈ [knots[j], knots[j+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlParameterization {
    /// Breakpoints `0 = κ_0 < … < κ_J = ℓ`.
    pub knots: Vec<f64>,
    /// Number of controlled modes `K`.
    pub modes: usize,
    /// `values[j][n]`, `j < J`, `n < K`.
    pub values: Vec<Vec<f64>>,
    /// Radius of the admissible ball.
    pub eta: f64,
    /// Scalar gain `E`.
    pub gain: f64,
    /// Exponent of the `L^p` norm defining the ball.
    pub p: f64,
}

impl ControlParameterization {
    /// The zero control on the given knots.
    pub fn zero(knots: Vec<f64>, modes: usize, eta: f64, gain: f64, p: f64) -> Result<Self> {
        let u = Self {
            values: vec![vec![0.0; modes]; knots.len().saturating_sub(1)],
            knots,
            modes,
            eta,
            gain,
            p,
        };
        u.validate()?;
        Ok(u)
    }

    /// Uniform knots `ℓ j / J`.
    pub fn uniform(ell: f64, intervals: usize, modes: usize, eta: f64, gain: f64, p: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(invalid("knots", "need at least one control interval"));
        }
        Self::zero(
            (0..=intervals).map(|j| ell * j as f64 / intervals as f64).collect(),
            modes,
            eta,
            gain,
            p,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 || self.knots[0] != 0.0 {
            return Err(invalid("knots", "need at least two knots starting at 0"));
        }
        if self.knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("knots", "must be strictly increasing"));
        }
        if self.modes == 0 {
            return Err(invalid("modes", "must be at least 1"));
        }
        if self.values.len() != self.knots.len() - 1 || self.values.iter().any(|v| v.len() != self.modes) {
            return Err(invalid("values", "shape must be (knots - 1) x modes"));
        }
        if self.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("values", "must be finite"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "must be finite and >= 0"));
        }
        if !self.gain.is_finite() {
            return Err(invalid("gain", "must be finite"));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(invalid("p", "must be >= 1"));
        }
        Ok(())
    }

    pub fn ell(&self) -> f64 {
        *self.knots.last().expect("validated")
    }

    pub fn n_intervals(&self) -> usize {
        self.values.len()
    }

    /// `‖u‖_{L^p} = (Σ_j (κ_{j+1} − κ_j) ‖v_j‖^p)^{1/p}`.
    pub fn norm(&self) -> f64 {
        self.lp_norm(self.p)
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        let terms: Vec<f64> = self
            .values
            .iter()
            .zip(self.knots.windows(2))
            .map(|(v, w)| (w[1] - w[0]) * v.iter().map(|x| x * x).sum::<f64>().sqrt().powf(p))
            .collect();
        pairwise_sum(&terms).powf(1.0 / p)
    }

    /// `∫_0^ℓ ‖u(t)‖² dt`, exact for piecewise constants.
    pub fn energy(&self) -> f64 {
        let terms: Vec<f64> = self
            .values
            .iter()
            .zip(self.knots.windows(2))
            .map(|(v, w)| (w[1] - w[0]) * v.iter().map(|x| x * x).sum::<f64>())
            .collect();
        pairwise_sum(&terms)
    }

    pub fn is_admissible(&self) -> bool {
        self.norm() <= self.eta * (1.0 + 1e-12)
    }

    /// Interval containing `t` (right-open, the last one closed).
    pub fn interval_of(&self, t: f64) -> usize {
        let j = self.knots.partition_point(|k| *k <= t);
        j.saturating_sub(1).min(self.n_intervals() - 1)
    }

    /// `u(t)` in the first `K` modes.
    pub fn value_at(&self, t: f64) -> &[f64] {
        &self.values[self.interval_of(t)]
    }

    /// Cell values of `E u` on the grid for an `n_modes` model; every knot must
    /// be a grid point so the cells never straddle a jump.
    pub fn forcing(&self, grid: &TimeGrid, n_modes: usize) -> Result<Forcing> {
        if self.modes > n_modes {
            return Err(invalid(
                "modes",
                format!("{} controlled modes but the model has {n_modes}", self.modes),
            ));
        }
        for k in &self.knots {
            if grid.index_of(*k).is_none() {
                return Err(invalid("knots", format!("knot {k} is not a grid point")));
            }
        }
        let cells = grid.n_steps.saturating_sub(1);
        let mut values = vec![vec![0.0; cells]; n_modes];
        for c in 0..cells {
            let mid = grid.t(c) + 0.5 * grid.dt;
            let v = self.value_at(mid);
            for (n, x) in v.iter().enumerate() {
                values[n][c] = self.gain * x;
            }
        }
        Ok(Forcing { values })
    }

    /// Flattened parameters `(j, n) ↦ j K + n`.
    pub fn n_params(&self) -> usize {
        self.n_intervals() * self.modes
    }

    pub fn param(&self, i: usize) -> f64 {
        self.values[i / self.modes][i % self.modes]
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        self.values[i / self.modes][i % self.modes] = v;
    }

    /// CSV: `knot_start, knot_end, mode, value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "knot_start,knot_end,mode,value")?;
        for (j, v) in self.values.iter().enumerate() {
            for (n, x) in v.iter().enumerate() {
                writeln!(
                    w,
                    "{:.16e},{:.16e},{},{:.16e}",
                    self.knots[j],
                    self.knots[j + 1],
                    n + 1,
                    x
                )?;
            }
        }
        Ok(())
    }
}

/// Radial projection onto `{‖u‖ <= η}`.
pub fn project_admissible(u: &ControlParameterization) -> ControlParameterization {
    if u.is_admissible() {
        return u.clone();
    }
    let norm = u.norm();
    let mut out = u.clone();
    let scale = if norm > 0.0 { u.eta / norm } else { 0.0 };
    out.values.iter_mut().flatten().for_each(|v| *v *= scale);
    out
}

/// Weights of `∫ (w_z ‖z‖² + w_u ‖u‖²) dt` and the lower-bound data
/// `G̃ >= Φ + h_1 ‖z‖^p + h_2 ‖u‖^p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSpec {
    pub state_weight: f64,
    pub control_weight: f64,
    pub phi: f64,
    pub h1: f64,
    pub h2: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            state_weight: 1.0,
            control_weight: 1.0,
            phi: 0.0,
            h1: 1.0,
            h2: 1.0,
        }
    }
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.state_weight >= 0.0 && self.control_weight >= 0.0) {
            return Err(invalid("weights", "must be >= 0"));
        }
        if !(self.h2 > 0.0 && self.h1 >= 0.0) {
            return Err(invalid("h2", "need h2 > 0 and h1 >= 0"));
        }
        Ok(())
    }

    /// Integrand `G̃(z, u)`.
    pub fn integrand(&self, z: &[f64], u: &[f64]) -> f64 {
        self.state_weight * z.iter().map(|x| x * x).sum::<f64>()
            + self.control_weight * u.iter().map(|x| x * x).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub state_term: f64,
    pub control_term: f64,
}

impl CostReport {
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "cost         = {:.16e}", self.estimate)?;
        writeln!(w, "stderr       = {:.16e}", self.stderr)?;
        writeln!(w, "n_paths      = {}", self.n_paths)?;
        writeln!(w, "state_term   = {:.16e}", self.state_term)?;
        writeln!(w, "control_term = {:.16e}", self.control_term)?;
        Ok(())
    }
}

/// Monte Carlo estimate of the cost under `u` (projected first if inadmissible).
pub fn evaluate_cost(
    model: &SpectralModel,
    cost: &CostSpec,
    u: &ControlParameterization,
    table: &ResolventTable,
    n_paths: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<CostReport> {
    u.validate()?;
    let u = if u.is_admissible() {
        u.clone()
    } else {
        log::warn!("control norm {} exceeds eta = {}; projecting", u.norm(), u.eta);
        project_admissible(u)
    };
    let forcing = u.forcing(&table.grid, model.n_modes)?;
    let ens = simulate_ensemble(model, Some(&forcing), table, n_paths, seed, opts)?;
    let m = ens.state_costs.len() as f64;
    let state = pairwise_sum(&ens.state_costs) / m;
    let dev: Vec<f64> = ens.state_costs.iter().map(|c| (c - state).powi(2)).collect();
    let var = if ens.state_costs.len() > 1 && dev.iter().any(|d| *d > 0.0) {
        pairwise_sum(&dev) / (m - 1.0)
    } else {
        0.0
    };
    let control = u.energy();
    Ok(CostReport {
        estimate: cost.state_weight * state + cost.control_weight * control,
        stderr: cost.state_weight * (var / m).sqrt(),
        n_paths,
        state_term: state,
        control_term: control,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    /// Maximum number of cost evaluations.
    pub budget: usize,
    pub initial_step: f64,
    /// Search stops once the step falls below this.
    pub min_step: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// One accepted iterate of the minimizing sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub evaluations: usize,
    pub cost: f64,
    pub stderr: f64,
    /// Coordinate and signed step that produced this iterate (`None` for the start).
    pub move_: Option<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub best: ControlParameterization,
    pub report: CostReport,
    pub log: Vec<LogEntry>,
    pub evaluations: usize,
    pub budget_exhausted: bool,
}

impl OptimizeResult {
    /// CSV: `iteration, evaluations, cost, stderr`.
    pub fn write_log_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,evaluations,cost,stderr")?;
        for e in &self.log {
            writeln!(w, "{},{},{:.16e},{:.16e}", e.iteration, e.evaluations, e.cost, e.stderr)?;
        }
        Ok(())
    }
}

/// Coordinate descent with step halving, accepting only strict improvements.
/// Every trial point is projected onto the admissible ball. With steps
/// `h_0, h_0/2, …` and a start on the lattice `min_step·ℤ^d`, all iterates stay
/// on that lattice as long as the projection is inactive.
pub fn optimize(
    model: &SpectralModel,
    cost: &CostSpec,
    u0: &ControlParameterization,
    table: &ResolventTable,
    opts: &OptimizeOptions,
    solver: &SolverOptions,
) -> Result<OptimizeResult> {
    cost.validate()?;
    u0.validate()?;
    if opts.budget == 0 {
        return Err(invalid("budget", "must be at least 1"));
    }
    if !(opts.initial_step > 0.0 && opts.min_step > 0.0) {
        return Err(invalid("initial_step", "steps must be positive"));
    }
    let eval = |u: &ControlParameterization| evaluate_cost(model, cost, u, table, opts.n_paths, opts.seed, solver);
    let mut best = project_admissible(u0);
    let mut report = eval(&best)?;
    let mut evaluations = 1;
    let mut log = vec![LogEntry {
        iteration: 0,
        evaluations,
        cost: report.estimate,
        stderr: report.stderr,
        move_: None,
    }];
    let mut step = opts.initial_step;
    let mut exhausted = false;
    'outer: while step >= opts.min_step * (1.0 - 1e-12) {
        let mut improved = false;
        for i in 0..best.n_params() {
            for dir in [1.0, -1.0] {
                if evaluations >= opts.budget {
                    exhausted = true;
                    break 'outer;
                }
                let mut trial = best.clone();
                trial.set_param(i, best.param(i) + dir * step);
                let trial = project_admissible(&trial);
                if trial == best {
                    continue;
                }
                let r = eval(&trial)?;
                evaluations += 1;
                if r.estimate < report.estimate {
                    best = trial;
                    report = r;
                    improved = true;
                    log.push(LogEntry {
                        iteration: log.len(),
                        evaluations,
                        cost: report.estimate,
                        stderr: report.stderr,
                        move_: Some((i, dir * step)),
                    });
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(OptimizeResult {
        best,
        report,
        log,
        evaluations,
        budget_exhausted: exhausted,
    })
}

/// Outcome of the convexity / coercivity sampling check.
#[derive(Debug, Clone, PartialEq)]
pub struct C5Report {
    pub segments: usize,
    pub convexity_violations: usize,
    /// Smallest midpoint defect `(G̃(a)+G̃(b))/2 − G̃((a+b)/2)` seen.
    pub min_midpoint_defect: f64,
    pub samples: usize,
    pub bound_violations: usize,
}

impl C5Report {
    pub fn passes(&self) -> bool {
        self.convexity_violations == 0 && self.bound_violations == 0
    }
}

/// Check convexity in `u` along random segments and the lower bound
/// `G̃ >= Φ + h_1‖z‖^p + h_2‖u‖^p` at random points, for `(z, u)` in
/// `ℝ^{n_z} × ℝ^{n_u}`.
pub fn verify_c5(
    cost: &CostSpec,
    p: f64,
    n_z: usize,
    n_u: usize,
    segments: usize,
    samples: usize,
    seed: u64,
) -> Result<C5Report> {
    cost.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let scale: f64 = 3.0 * rng.random::<f64>();
        (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let mut violations = 0;
    let mut min_defect = f64::INFINITY;
    for _ in 0..segments {
        let z = draw(n_z, &mut rng);
        let a = draw(n_u, &mut rng);
        let b = draw(n_u, &mut rng);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let defect = 0.5 * (cost.integrand(&z, &a) + cost.integrand(&z, &b)) - cost.integrand(&z, &mid);
        let scale = 1.0 + cost.integrand(&z, &a).abs() + cost.integrand(&z, &b).abs();
        if defect < -1e-12 * scale {
            violations += 1;
        }
        min_defect = min_defect.min(defect);
    }
    let norm_p = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt().powf(p);
    let mut bound_violations = 0;
    let mut check = |z: &[f64], u: &[f64]| {
        let g = cost.integrand(z, u);
        let bound = cost.phi + cost.h1 * norm_p(z) + cost.h2 * norm_p(u);
        if g < bound - 1e-12 * (1.0 + bound.abs()) {
            bound_violations += 1;
        }
    };
    check(&vec![0.0; n_z], &vec![0.0; n_u]);
    for _ in 1..samples {
        let z = draw(n_z, &mut rng);
        let u = draw(n_u, &mut rng);
        check(&z, &u);
    }
    Ok(C5Report {
        segments,
        convexity_violations: violations,
        min_midpoint_defect: if segments == 0 { 0.0 } else { min_defect },
        samples,
        bound_violations,
    })
}
