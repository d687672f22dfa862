//! Browser bindings: resolvent curves, a single simulated path with its
//! checker verdict, and the Mainardi density. Each export has a plain Rust
//! counterpart so it can be tested natively.

use mtfsim_core::config::parse_config;
use mtfsim_core::experiment::hypothesis_data;
use mtfsim_core::hypotheses::check_hypotheses;
use mtfsim_core::kernels::{mainardi_density, TimeGrid};
use mtfsim_core::resolvent::{eval_resolvent_J, eval_resolvent_S, FractionalOrders, ResolventSymbol};
use mtfsim_core::solver::{picard_solve, sample_noise};
use mtfsim_core::Result;
use wasm_bindgen::prelude::*;

/// The config preloaded in the page.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/example61_desk.cfg");

/// `[t_0..t_{n-1}, S(t_0).., J(t_0)..]` on `[0, t_end]` with `n` points.
pub fn resolvent_curves_impl(
    alpha: f64,
    gammas: &[f64],
    betas: &[f64],
    lambda: f64,
    t_end: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let orders = FractionalOrders::new(alpha, gammas.to_vec(), betas.to_vec())?;
    let sym = ResolventSymbol::new(orders, lambda)?;
    let grid = TimeGrid::new(0.0, t_end / (n.max(2) - 1) as f64, n.max(2))?;
    let mut out = grid.times();
    out.extend(eval_resolvent_S(&sym, &grid)?);
    out.extend(eval_resolvent_J(&sym, &grid)?);
    Ok(out)
}

/// One path of the configured model: JSON with `t`, `norm` (`‖z(t)‖`),
/// `tags`, the checker verdict and `Delta`.
pub fn simulate_path_impl(config: &str, seed: u64) -> Result<String> {
    let cfg = parse_config(config)?;
    let model = cfg.build_model()?;
    let table = cfg.build_table(&model)?;
    let report = check_hypotheses(&hypothesis_data(&cfg, &model, &table)?)?;
    let path = sample_noise(&model.noise, &table.grid, seed, 0);
    let tr = picard_solve(&model, None, &table, Some(&path), &cfg.solver_options())?;
    let n = table.grid.n_steps;
    let json = serde_json::json!({
        "t": table.grid.times(),
        "norm": (0..n).map(|k| tr.norm_sq(k).sqrt()).collect::<Vec<f64>>(),
        "tags": tr.tags.iter().map(|t| t.tag()).collect::<Vec<String>>(),
        "picard_iterations": tr.picard.iter().map(|p| p.iterations()).collect::<Vec<usize>>(),
        "L_F1": report.f1,
        "L_F": report.f,
        "Delta": if report.delta.is_finite() { serde_json::json!(report.delta) } else { serde_json::json!(null) },
        "pass": report.passes(),
    });
    Ok(json.to_string())
}

/// `[l_0.., M_ν(l_0)..]` on `[0, l_max]` with `n` points.
pub fn mainardi_curve_impl(nu: f64, l_max: f64, n: usize) -> Result<Vec<f64>> {
    let n = n.max(2);
    let ls: Vec<f64> = (0..n).map(|i| l_max * i as f64 / (n - 1) as f64).collect();
    let mut out = ls.clone();
    for l in ls {
        out.push(mainardi_density(nu, l)?);
    }
    Ok(out)
}

fn js_err(e: mtfsim_core::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub fn default_config() -> String {
    DEFAULT_CONFIG.to_string()
}

#[wasm_bindgen]
pub fn resolvent_curves(
    alpha: f64,
    gammas: Vec<f64>,
    betas: Vec<f64>,
    lambda: f64,
    t_end: f64,
    n: usize,
) -> std::result::Result<Vec<f64>, JsValue> {
    resolvent_curves_impl(alpha, &gammas, &betas, lambda, t_end, n).map_err(js_err)
}

#[wasm_bindgen]
pub fn simulate_path(config: &str, seed: u64) -> std::result::Result<String, JsValue> {
    simulate_path_impl(config, seed).map_err(js_err)
}

#[wasm_bindgen]
pub fn mainardi_curve(nu: f64, l_max: f64, n: usize) -> std::result::Result<Vec<f64>, JsValue> {
    mainardi_curve_impl(nu, l_max, n).map_err(js_err)
}
