//! Experiment orchestration: runs one subcommand on a validated config and
//! writes every artifact (plus `manifest.json`) into an output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{parse_config, RunConfig};
use crate::control::{evaluate_cost, optimize};
use crate::error::{invalid, Error, Result};
use crate::hypotheses::{check_hypotheses, ConstantsReport, HypothesisData};
use crate::laplace::InversionOptions;
use crate::resolvent::ResolventTable;
use crate::solver::{simulate_ensemble, TrajectoryEnsemble};
use crate::spectral::SpectralModel;

pub const EXAMPLE61_CFG: &str = include_str!("../../../configs/example61.cfg");
pub const EXAMPLE62_CFG: &str = include_str!("../../../configs/example62.cfg");

/// Bumped whenever a numerical default changes.
pub const DEFAULTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    CheckHypotheses,
    Resolvent,
    Simulate,
    Optimize,
    ReproduceExample61,
    ReproduceExample62,
}

impl Subcommand {
    pub const ALL: [Subcommand; 6] = [
        Subcommand::CheckHypotheses,
        Subcommand::Resolvent,
        Subcommand::Simulate,
        Subcommand::Optimize,
        Subcommand::ReproduceExample61,
        Subcommand::ReproduceExample62,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::CheckHypotheses => "check-hypotheses",
            Subcommand::Resolvent => "resolvent",
            Subcommand::Simulate => "simulate",
            Subcommand::Optimize => "optimize",
            Subcommand::ReproduceExample61 => "reproduce-example61",
            Subcommand::ReproduceExample62 => "reproduce-example62",
        }
    }

    /// The shipped config used when no `--config` is given.
    pub fn canned_config(self) -> Option<&'static str> {
        match self {
            Subcommand::ReproduceExample61 => Some(EXAMPLE61_CFG),
            Subcommand::ReproduceExample62 => Some(EXAMPLE62_CFG),
            _ => None,
        }
    }
}

impl std::str::FromStr for Subcommand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownKey {
                registry: "subcommand",
                key: s.to_string(),
            })
    }
}

/// What a run produced.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    /// File names written into the output directory, in write order.
    pub files: Vec<String>,
    /// Human-readable summary for stdout.
    pub summary: String,
    /// The checker verdict, when the run computed it.
    pub checker_pass: Option<bool>,
}

#[derive(Serialize)]
struct Defaults {
    defaults_version: u32,
    talbot_nodes: usize,
    talbot_max_nodes: usize,
    inversion_tolerance: f64,
    mu_quadrature_tolerance: f64,
    csv_float_format: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    config_sha256: String,
    seed: u64,
    n_paths: usize,
    defaults: Defaults,
    files: &'a [String],
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    seed: u64,
    outcome: RunOutcome,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.out.join(name))?);
        f(&mut w)?;
        w.flush()?;
        self.outcome.files.push(name.to_string());
        Ok(())
    }

    fn say(&mut self, line: impl AsRef<str>) {
        self.outcome.summary.push_str(line.as_ref());
        self.outcome.summary.push('\n');
    }
}

/// The hypothesis data of a config: `‖E‖` is the control gain and `‖u‖` the
/// admissible radius `η` (both 0 without a control block).
pub fn hypothesis_data(cfg: &RunConfig, model: &SpectralModel, table: &ResolventTable) -> Result<HypothesisData> {
    let (e, u) = cfg.control.as_ref().map_or((0.0, 0.0), |c| (c.gain.abs(), c.eta));
    HypothesisData::from_model(model, table, e, u)
}

fn run_check(ctx: &mut Ctx<'_>, model: &SpectralModel, table: &ResolventTable) -> Result<ConstantsReport> {
    let data = hypothesis_data(ctx.cfg, model, table)?;
    let report = check_hypotheses(&data)?;
    ctx.write("constants.txt", |w| report.write_text(w))?;
    if ctx.cfg.outputs.constants_csv {
        ctx.write("constants.csv", |w| report.write_csv(w))?;
    }
    let mut text = Vec::new();
    report.write_text(&mut text)?;
    ctx.say(String::from_utf8_lossy(&text));
    ctx.outcome.checker_pass = Some(report.passes());
    Ok(report)
}

fn run_simulate(
    ctx: &mut Ctx<'_>,
    model: &SpectralModel,
    table: &ResolventTable,
    report: &ConstantsReport,
) -> Result<TrajectoryEnsemble> {
    let opts = ctx.cfg.solver_options();
    let ens = simulate_ensemble(model, None, table, ctx.cfg.mc.n_paths, ctx.seed, &opts)?;
    if ctx.cfg.outputs.trajectory {
        if let Some(first) = &ens.first_path {
            ctx.write("trajectory.csv", |w| first.write_csv(w))?;
        }
    }
    if ctx.cfg.outputs.ensemble {
        ctx.write("ensemble.csv", |w| ens.write_csv(w))?;
    }
    let bound_ok = ens.sup_m_p <= report.delta + 3.0 * ens.sup_stderr();
    let lines = [
        ("n_paths", ens.n_paths.to_string()),
        ("n_failed", ens.n_failed.to_string()),
        ("p", format!("{:.16e}", ens.p)),
        ("sup_m_p", format!("{:.16e}", ens.sup_m_p)),
        ("sup_m_p_stderr", format!("{:.16e}", ens.sup_stderr())),
        ("t_of_sup", format!("{:.16e}", ens.grid.t(ens.sup_index))),
        ("max_picard_iterations", ens.max_picard_iters.to_string()),
        (
            "max_picard_ratio",
            ens.max_picard_ratio.map_or("none".into(), |r| format!("{r:.16e}")),
        ),
        ("checker_pass", report.passes().to_string()),
        ("Delta", format!("{:.16e}", report.delta)),
        ("sup_m_p_le_Delta", bound_ok.to_string()),
    ];
    ctx.write("simulate.txt", |w| {
        let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &lines {
            writeln!(w, "{k:<width$} = {v}")?;
        }
        Ok(())
    })?;
    ctx.say(format!(
        "simulate: sup_t m_p = {:.6e} (stderr {:.2e}), Delta = {:.6e}, max Picard iterations {}",
        ens.sup_m_p,
        ens.sup_stderr(),
        report.delta,
        ens.max_picard_iters
    ));
    Ok(ens)
}

fn run_optimize(ctx: &mut Ctx<'_>, model: &SpectralModel, table: &ResolventTable) -> Result<()> {
    let cfg = ctx.cfg;
    let u0 = cfg
        .initial_control()?
        .ok_or_else(|| invalid("control", "the optimize subcommand needs a [control] block"))?;
    let opts = cfg.optimize_options(ctx.seed).expect("control block present");
    let solver = cfg.solver_options();
    let cost = cfg.cost_spec();
    let result = optimize(model, &cost, &u0, table, &opts, &solver)?;
    ctx.write("control_log.csv", |w| result.write_log_csv(w))?;
    ctx.write("control_best.csv", |w| result.best.write_csv(w))?;
    ctx.write("cost_report.txt", |w| {
        result.report.write_text(&mut *w)?;
        writeln!(w, "evaluations = {}", result.evaluations)?;
        writeln!(w, "budget_exhausted = {}", result.budget_exhausted)?;
        writeln!(w, "control_norm = {:.16e}", result.best.norm())?;
        Ok(())
    })?;
    let baseline = evaluate_cost(model, &cost, &u0, table, opts.n_paths, ctx.seed, &solver)?;
    ctx.say(format!(
        "optimize: cost {:.6e} -> {:.6e} (stderr {:.2e}) in {} evaluations",
        baseline.estimate, result.report.estimate, result.report.stderr, result.evaluations
    ));
    Ok(())
}

/// Run one subcommand; all files go to `out`. `seed` overrides `mc.seed`.
pub fn run_experiment(
    cfg: &RunConfig,
    config_text: &str,
    sub: Subcommand,
    out: &Path,
    seed: Option<u64>,
) -> Result<RunOutcome> {
    fs::create_dir_all(out)?;
    let mut ctx = Ctx {
        cfg,
        out,
        seed: seed.unwrap_or(cfg.mc.seed),
        outcome: RunOutcome::default(),
    };
    let model = cfg.build_model()?;
    let table = cfg.build_table(&model)?;
    if table.warnings > 0 {
        ctx.say(format!(
            "warning: {} resolvent inversions missed their tolerance",
            table.warnings
        ));
    }
    let full = matches!(sub, Subcommand::ReproduceExample61 | Subcommand::ReproduceExample62);
    if sub == Subcommand::CheckHypotheses || sub == Subcommand::Simulate || full {
        let report = run_check(&mut ctx, &model, &table)?;
        if sub == Subcommand::Simulate || full {
            if full && cfg.outputs.resolvent {
                ctx.write("resolvent.csv", |w| table.write_csv(w))?;
            }
            run_simulate(&mut ctx, &model, &table, &report)?;
        }
        if full && cfg.control.is_some() {
            run_optimize(&mut ctx, &model, &table)?;
        }
    } else if sub == Subcommand::Resolvent {
        ctx.write("resolvent.csv", |w| table.write_csv(w))?;
        ctx.say(format!(
            "resolvent: {} modes x {} times, grid sup|S| = {:.6e}",
            table.n_modes(),
            table.grid.n_steps,
            table.sup_norm_s
        ));
    } else {
        run_optimize(&mut ctx, &model, &table)?;
    }

    let inv = InversionOptions::default();
    let mut files = ctx.outcome.files.clone();
    files.push("manifest.json".into());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand: sub.name(),
        config_sha256: sha256_hex(config_text),
        seed: ctx.seed,
        n_paths: cfg.mc.n_paths,
        defaults: Defaults {
            defaults_version: DEFAULTS_VERSION,
            talbot_nodes: inv.nodes,
            talbot_max_nodes: inv.max_nodes,
            inversion_tolerance: inv.tolerance,
            mu_quadrature_tolerance: 1e-10,
            csv_float_format: "{:.16e}",
        },
        files: &files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    ctx.write("manifest.json", |w| Ok(writeln!(w, "{json}")?))?;
    Ok(ctx.outcome)
}

/// Parse `text` and run; convenience for the CLI and tests.
pub fn run_text(text: &str, sub: Subcommand, out: &Path, seed: Option<u64>) -> Result<RunOutcome> {
    let cfg = parse_config(text)?;
    run_experiment(&cfg, text, sub, out, seed)
}
