//! Path-wise mild solutions by Picard iteration, and Monte Carlo moments.
//!
//! On a flow interval with base index `b` (the grid index of `e_q`) the
//! iteration is, per mode `n` and time index `k > b`,
//!
//! ```text
//! z_k = A_k + Σ_{i=b}^{k-1} [ W(k-i) g1(t_i, z_i) + J(k-i) g2(t_i, z_i) ΔW(i) ]
//! ```
//!
//! where `A_k` collects the homogeneous terms and the control convolution,
//! `W(j) = ∫_{(j-1)dt}^{j dt} J` are exact cell weights for a piecewise
//! constant integrand, and the stochastic sum evaluates the integrand at the
//! left end of each step (Itô).

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::impulse::Interval;
use crate::kernels::TimeGrid;
use crate::resolvent::ResolventTable;
use crate::spectral::{NoiseModel, SpectralModel};

/// Wiener increments `ΔW[j][k]` for noise source `j` and step `k → k+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub grid: TimeGrid,
    pub increments: Vec<Vec<f64>>,
    pub seed: u64,
    pub path_index: u64,
}

/// Independent `N(0, q_j dt)` increments, reproducible from `(seed, path_index)`:
/// the generator is ChaCha8 keyed by `seed` on stream `path_index`.
pub fn sample_noise(noise: &NoiseModel, grid: &TimeGrid, seed: u64, path_index: u64) -> NoisePath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    let steps = grid.n_steps.saturating_sub(1);
    let increments = noise
        .variances
        .iter()
        .map(|&q| {
            let sd = (q * grid.dt).sqrt();
            (0..steps)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    if q == 0.0 {
                        0.0
                    } else {
                        sd * x
                    }
                })
                .collect()
        })
        .collect();
    NoisePath {
        grid: *grid,
        increments,
        seed,
        path_index,
    }
}

/// Deterministic forcing `(E u)` per mode, one value per grid cell `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    /// `values[n][k]`, `k < n_steps - 1`.
    pub values: Vec<Vec<f64>>,
}

impl Forcing {
    pub fn zero(n_modes: usize, grid: &TimeGrid) -> Self {
        Self {
            values: vec![vec![0.0; grid.n_steps.saturating_sub(1)]; n_modes],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().flatten().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 50,
        }
    }
}

/// Picard history on one flow interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardRecord {
    pub interval: usize,
    /// Sup-norm change of each iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl PicardRecord {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }

    /// Largest ratio of successive residuals, counting only residuals above `floor`
    /// (below it the changes are roundoff).
    pub fn max_ratio(&self, floor: f64) -> Option<f64> {
        self.residuals
            .windows(2)
            .filter(|w| w[0] > floor && w[1] > floor)
            .map(|w| w[1] / w[0])
            .reduce(f64::max)
    }
}

/// One sample path of the state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub n_modes: usize,
    /// `z[k * n_modes + n]`.
    pub z: Vec<f64>,
    pub tags: Vec<Interval>,
    pub picard: Vec<PicardRecord>,
}

impl Trajectory {
    pub fn at(&self, k: usize) -> &[f64] {
        &self.z[k * self.n_modes..(k + 1) * self.n_modes]
    }

    pub fn norm_sq(&self, k: usize) -> f64 {
        self.at(k).iter().map(|v| v * v).sum()
    }

    pub fn converged(&self) -> bool {
        self.picard.iter().all(|r| r.converged)
    }

    pub fn sup_abs(&self) -> f64 {
        self.z.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV: `t, interval_tag, z_1, …, z_N`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("t,interval_tag");
        for n in 1..=self.n_modes {
            header.push_str(&format!(",z_{n}"));
        }
        writeln!(w, "{header}")?;
        for k in 0..self.grid.n_steps {
            let mut line = format!("{:.16e},{}", self.grid.t(k), self.tags[k].tag());
            for v in self.at(k) {
                line.push_str(&format!(",{v:.16e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Grid indices of the schedule: `(t_q index, e_q index)` per impulse.
#[derive(Debug, Clone)]
struct Layout {
    /// index of `t_q`, `q = 1..=r+1` (last is the grid end)
    t_idx: Vec<usize>,
    /// index of `e_q`, `q = 0..=r`
    e_idx: Vec<usize>,
}

fn layout(model: &SpectralModel, grid: &TimeGrid) -> Result<Layout> {
    let s = &model.schedule;
    let idx = |name: &'static str, t: f64| {
        grid.index_of(t)
            .ok_or_else(|| invalid(name, format!("schedule time {t} is not a grid point")))
    };
    if (grid.end() - s.ell()).abs() > 1e-9 * s.ell() {
        return Err(Error::GridMismatch(format!(
            "grid ends at {} but the horizon is {}",
            grid.end(),
            s.ell()
        )));
    }
    let mut t_idx = Vec::new();
    let mut e_idx = vec![0];
    for imp in s.impulses() {
        t_idx.push(idx("t", imp.t)?);
        e_idx.push(idx("e", imp.e)?);
    }
    t_idx.push(grid.n_steps - 1);
    Ok(Layout { t_idx, e_idx })
}

/// Interval tag of every grid index.
pub fn interval_tags(model: &SpectralModel, grid: &TimeGrid) -> Result<Vec<Interval>> {
    let lay = layout(model, grid)?;
    let mut tags = vec![Interval::Flow(0); grid.n_steps];
    for q in 0..=model.schedule.r() {
        if q >= 1 {
            for tag in &mut tags[lay.t_idx[q - 1] + 1..=lay.e_idx[q]] {
                *tag = Interval::Impulse(q);
            }
        }
        let start = if q == 0 { 0 } else { lay.e_idx[q] + 1 };
        for tag in &mut tags[start..=lay.t_idx[q]] {
            *tag = Interval::Flow(q);
        }
    }
    Ok(tags)
}

fn check_inputs(model: &SpectralModel, table: &ResolventTable, forcing: Option<&Forcing>) -> Result<()> {
    if table.n_modes() != model.n_modes {
        return Err(Error::MissingMode(table.n_modes()));
    }
    for (n, (a, b)) in table.eigenvalues.iter().zip(&model.eigenvalues).enumerate() {
        if a != b {
            return Err(Error::GridMismatch(format!(
                "table eigenvalue {n} is {a}, model has {b}"
            )));
        }
    }
    if table.orders != model.orders {
        return Err(Error::GridMismatch("table orders differ from the model".into()));
    }
    if let Some(f) = forcing {
        if f.values.len() != model.n_modes || f.values.iter().any(|v| v.len() != table.grid.n_steps.saturating_sub(1)) {
            return Err(Error::GridMismatch("forcing shape does not match model/grid".into()));
        }
    }
    Ok(())
}

/// Per-mode quadrature weights derived from the table.
struct Weights {
    /// `w[n][j] = K(j dt) − K((j−1) dt)` for `j >= 1`, `w[n][0] = 0`.
    drift: Vec<Vec<f64>>,
}

impl Weights {
    fn new(table: &ResolventTable) -> Self {
        let drift = table
            .j_int
            .iter()
            .map(|k| {
                let mut w = vec![0.0; k.len()];
                for j in 1..k.len() {
                    w[j] = k[j] - k[j - 1];
                }
                w
            })
            .collect();
        Self { drift }
    }
}

/// Evaluate the mild-solution map once on the flow interval `q`:
/// returns `F(z)` on indices `b..=end` given the current iterate `traj`
/// (whose values on `b..=end` are the previous Picard iterate) and the
/// affine part `affine[k - b][n]`.
#[allow(clippy::too_many_arguments)]
fn apply_map(
    model: &SpectralModel,
    table: &ResolventTable,
    weights: &Weights,
    path: Option<&NoisePath>,
    z: &[f64],
    affine: &[f64],
    b: usize,
    end: usize,
    out: &mut [f64],
) {
    let nm = model.n_modes;
    let len = end - b + 1;
    let grid = &table.grid;
    // integrands at the left points b..end-1, mode-major
    let mut g1 = vec![0.0; nm * len];
    let mut g2 = vec![0.0; nm * len];
    let mut buf = vec![0.0; nm];
    let use_g1 = !model.g1.is_zero();
    let use_g2 = !model.g2.is_zero() && path.is_some() && !model.noise.is_silent();
    for i in b..end {
        let zi = &z[i * nm..(i + 1) * nm];
        let t = grid.t(i);
        if use_g1 {
            model.g1(t, zi, &mut buf);
            for n in 0..nm {
                g1[n * len + (i - b)] = buf[n];
            }
        }
        if use_g2 {
            let p = path.expect("checked");
            model.g2(t, zi, &mut buf);
            for n in 0..nm {
                g2[n * len + (i - b)] = buf[n] * p.increments[model.noise.source_of(n)][i];
            }
        }
    }
    out[..len * nm].copy_from_slice(&affine[..len * nm]);
    if !use_g1 && !use_g2 {
        return;
    }
    for n in 0..nm {
        let w = &weights.drift[n];
        let jr = &table.j[n];
        let g1n = &g1[n * len..(n + 1) * len];
        let g2n = &g2[n * len..(n + 1) * len];
        for k in 1..len {
            let mut acc = 0.0;
            if use_g1 {
                for i in 0..k {
                    acc += w[k - i] * g1n[i];
                }
            }
            if use_g2 {
                for i in 0..k {
                    acc += jr[k - i] * g2n[i];
                }
            }
            out[k * nm + n] += acc;
        }
    }
}

/// Homogeneous terms plus control convolution on `b..=end`, restarting from
/// position `a` and velocity `v` at index `b`.
#[allow(clippy::too_many_arguments)]
fn affine_part(
    model: &SpectralModel,
    table: &ResolventTable,
    weights: &Weights,
    forcing: Option<&Forcing>,
    a: &[f64],
    v: &[f64],
    b: usize,
    end: usize,
) -> Vec<f64> {
    let nm = model.n_modes;
    let len = end - b + 1;
    let mut out = vec![0.0; len * nm];
    for n in 0..nm {
        for j in 0..len {
            out[j * nm + n] = table.s[n][j] * a[n] + table.s_int[n][j] * v[n] + table.corr[n][j] * a[n];
        }
        if let Some(f) = forcing {
            let fv = &f.values[n];
            let w = &weights.drift[n];
            for j in 1..len {
                let mut acc = 0.0;
                for i in 0..j {
                    acc += w[j - i] * fv[b + i];
                }
                out[j * nm + n] += acc;
            }
        }
    }
    out
}

/// Solve one path interval by interval. On impulse intervals the state is
/// assigned exactly; on flow intervals Picard iteration starts from the
/// affine part. Non-convergence is recorded in the trajectory, not raised.
pub fn picard_solve(
    model: &SpectralModel,
    forcing: Option<&Forcing>,
    table: &ResolventTable,
    path: Option<&NoisePath>,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    check_inputs(model, table, forcing)?;
    let grid = table.grid;
    if let Some(p) = path {
        if p.grid != grid {
            return Err(Error::GridMismatch(
                "noise path grid differs from the table grid".into(),
            ));
        }
        if p.increments.len() != model.noise.n_noise_modes() {
            return Err(Error::GridMismatch("noise path has the wrong number of sources".into()));
        }
    }
    let lay = layout(model, &grid)?;
    let tags = interval_tags(model, &grid)?;
    let forcing = forcing.filter(|f| !f.is_zero());
    let nm = model.n_modes;
    let weights = Weights::new(table);
    let mut z = vec![0.0; grid.n_steps * nm];
    z[..nm].copy_from_slice(&model.z0);
    let mut picard = Vec::new();
    let sched = &model.schedule;
    for q in 0..=sched.r() {
        let b = lay.e_idx[q];
        let end = lay.t_idx[q];
        let (a, v) = if q == 0 {
            (model.z0.clone(), model.z1.clone())
        } else {
            // impulse interval (t_q, e_q]: frozen from z(t_q)
            let tq = lay.t_idx[q - 1];
            let zq = z[tq * nm..(tq + 1) * nm].to_vec();
            for k in tq + 1..=b {
                let (s, _) = sched.impulse_state(q, grid.t(k), &zq)?;
                z[k * nm..(k + 1) * nm].copy_from_slice(&s);
            }
            sched.impulse_state(q, sched.e_q(q), &zq)?
        };
        let len = end - b + 1;
        let affine = affine_part(model, table, &weights, forcing, &a, &v, b, end);
        // initial guess: the affine part (index b keeps its assigned value)
        z[(b + 1) * nm..(end + 1) * nm].copy_from_slice(&affine[nm..]);
        let mut next = vec![0.0; len * nm];
        let mut record = PicardRecord {
            interval: q,
            residuals: Vec::new(),
            converged: false,
        };
        for _ in 0..opts.max_iters {
            apply_map(model, table, &weights, path, &z, &affine, b, end, &mut next);
            let mut res: f64 = 0.0;
            for k in 1..len {
                let row = &mut z[(b + k) * nm..(b + k + 1) * nm];
                let mut d2 = 0.0;
                for n in 0..nm {
                    let d = next[k * nm + n] - row[n];
                    d2 += d * d;
                    row[n] = next[k * nm + n];
                }
                res = res.max(d2.sqrt());
            }
            if !res.is_finite() {
                record.residuals.push(res);
                break;
            }
            record.residuals.push(res);
            if res < opts.tol {
                record.converged = true;
                break;
            }
        }
        if !record.converged {
            log::debug!(
                "Picard did not converge on flow interval {q}: residual {:e}",
                record.final_residual()
            );
        }
        picard.push(record);
    }
    Ok(Trajectory {
        grid,
        n_modes: nm,
        z,
        tags,
        picard,
    })
}

/// Like [`picard_solve`] but turns non-convergence into an error.
pub fn picard_solve_strict(
    model: &SpectralModel,
    forcing: Option<&Forcing>,
    table: &ResolventTable,
    path: Option<&NoisePath>,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    let tr = picard_solve(model, forcing, table, path, opts)?;
    if let Some(r) = tr.picard.iter().find(|r| !r.converged) {
        return Err(Error::PicardNonConvergence {
            interval: r.interval,
            iters: r.iterations(),
            residual: r.final_residual(),
        });
    }
    Ok(tr)
}

/// Per-path summary kept by the ensemble.
#[derive(Debug, Clone)]
struct PathSummary {
    norm_p: Vec<f64>,
    state_cost: f64,
    max_ratio: Option<f64>,
    max_iters: usize,
}

/// Monte Carlo moments of `‖z(t)‖^p`.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub grid: TimeGrid,
    pub p: f64,
    pub n_paths: usize,
    pub n_failed: usize,
    /// `m_p(t_k)`: mean of `‖z(t_k)‖^p` over successful paths.
    pub m_p: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sup_m_p: f64,
    pub sup_index: usize,
    /// Per successful path: `∫_0^ℓ ‖z‖² dt` by the trapezoid rule.
    pub state_costs: Vec<f64>,
    /// Largest ratio of successive Picard residuals over all paths.
    pub max_picard_ratio: Option<f64>,
    pub max_picard_iters: usize,
    /// The first path (index 0), kept for output.
    pub first_path: Option<Trajectory>,
}

/// Pairwise (tree) summation in a fixed order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn summarize(tr: &Trajectory, p: f64) -> PathSummary {
    let g = &tr.grid;
    let norm_sq: Vec<f64> = (0..g.n_steps).map(|k| tr.norm_sq(k)).collect();
    let mut state_cost = 0.0;
    for k in 1..g.n_steps {
        state_cost += 0.5 * g.dt * (norm_sq[k] + norm_sq[k - 1]);
    }
    let floor = 1e-12 * (1.0 + tr.sup_abs());
    PathSummary {
        norm_p: norm_sq.iter().map(|s| s.powf(0.5 * p)).collect(),
        state_cost,
        max_ratio: tr.picard.iter().filter_map(|r| r.max_ratio(floor)).reduce(f64::max),
        max_iters: tr.picard.iter().map(|r| r.iterations()).max().unwrap_or(0),
    }
}

/// Run `n_paths` independent paths (path `i` uses noise stream `i`).
/// Fails if more than 1% of the paths fail.
pub fn simulate_ensemble(
    model: &SpectralModel,
    forcing: Option<&Forcing>,
    table: &ResolventTable,
    n_paths: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<TrajectoryEnsemble> {
    if n_paths == 0 {
        return Err(invalid("n_paths", "need at least one path"));
    }
    check_inputs(model, table, forcing)?;
    let grid = table.grid;
    let deterministic = model.noise.is_silent() || model.g2.is_zero();
    let run = |i: usize| -> Result<Trajectory> {
        let path = (!deterministic).then(|| sample_noise(&model.noise, &grid, seed, i as u64));
        picard_solve_strict(model, forcing, table, path.as_ref(), opts)
    };
    // a deterministic model gives the same path every time
    let effective = if deterministic { 1 } else { n_paths };
    let first = run(0);
    let mut summaries: Vec<Result<PathSummary>> = Vec::with_capacity(effective);
    summaries.push(first.as_ref().map(|t| summarize(t, model.p)).map_err(Clone::clone));
    #[cfg(feature = "parallel")]
    let rest: Vec<Result<PathSummary>> = (1..effective)
        .into_par_iter()
        .map(|i| run(i).map(|t| summarize(&t, model.p)))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let rest: Vec<Result<PathSummary>> = (1..effective).map(|i| run(i).map(|t| summarize(&t, model.p))).collect();
    summaries.extend(rest);
    if deterministic && n_paths > 1 {
        let s = summaries[0].clone();
        summaries.resize(n_paths, s);
    }
    let mut ok = Vec::with_capacity(n_paths);
    let mut failed = 0;
    let mut first_error = None;
    for s in summaries {
        match s {
            Ok(s) => ok.push(s),
            Err(e) => {
                failed += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    if failed * 100 > n_paths || ok.is_empty() {
        if let Some(e) = &first_error {
            log::error!("ensemble failure: {e}");
        }
        return Err(Error::EnsembleFailure { failed, total: n_paths });
    }
    let m = ok.len() as f64;
    let mut m_p = Vec::with_capacity(grid.n_steps);
    let mut stderr = Vec::with_capacity(grid.n_steps);
    let mut col = vec![0.0; ok.len()];
    for k in 0..grid.n_steps {
        for (c, s) in col.iter_mut().zip(&ok) {
            *c = s.norm_p[k];
        }
        // identical paths (deterministic model) give the value itself and zero spread
        let mean = if deterministic { col[0] } else { pairwise_sum(&col) / m };
        for c in col.iter_mut() {
            *c = (*c - mean) * (*c - mean);
        }
        let var = if ok.len() > 1 && !deterministic {
            pairwise_sum(&col) / (m - 1.0)
        } else {
            0.0
        };
        m_p.push(mean);
        stderr.push((var / m).sqrt());
    }
    let (sup_index, sup_m_p) =
        m_p.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (k, v)| if v > acc.1 { (k, v) } else { acc },
        );
    Ok(TrajectoryEnsemble {
        grid,
        p: model.p,
        n_paths,
        n_failed: failed,
        m_p,
        stderr,
        sup_m_p,
        sup_index,
        state_costs: ok.iter().map(|s| s.state_cost).collect(),
        max_picard_ratio: ok.iter().filter_map(|s| s.max_ratio).reduce(f64::max),
        max_picard_iters: ok.iter().map(|s| s.max_iters).max().unwrap_or(0),
        first_path: first.ok(),
    })
}

impl TrajectoryEnsemble {
    /// CSV: `t, m_p, stderr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,m_p,stderr")?;
        for k in 0..self.grid.n_steps {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e}",
                self.grid.t(k),
                self.m_p[k],
                self.stderr[k]
            )?;
        }
        Ok(())
    }

    /// Standard error of `sup_t m_p(t)` taken at the maximizing time.
    pub fn sup_stderr(&self) -> f64 {
        self.stderr[self.sup_index]
    }
}
