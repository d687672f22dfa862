use mtfsim_core::config::parse_config;
use mtfsim_core::experiment::{run_text, sha256_hex, Subcommand, EXAMPLE61_CFG, EXAMPLE62_CFG};
use mtfsim_core::Error;

const MINIMAL: &str = r#"
[model]
n_modes = 2
p = 2.0
alpha = 0.5
z0 = { kind = "zero" }
z1 = { kind = "zero" }
g1 = { name = "zero" }
g2 = { name = "zero" }
noise = { kind = "scalar", variances = [0.0] }

[grid]
ell = 1.0
dt = 0.05
"#;

fn errors(text: &str) -> Vec<String> {
    match parse_config(text) {
        Err(Error::Config(v)) => v,
        other => panic!("expected config errors, got {other:?}"),
    }
}

#[test]
fn shipped_example61_schedule() {
    let cfg = parse_config(EXAMPLE61_CFG).unwrap();
    let imp = &cfg.schedule.impulses;
    assert_eq!(imp.len(), 1);
    assert_eq!((imp[0].t, imp[0].e, cfg.grid.ell), (0.20, 0.90, 1.0));
    let model = cfg.build_model().unwrap();
    assert_eq!(model.schedule.r(), 1);
    assert_eq!(model.n_modes, 8);
}

#[test]
fn shipped_configs_build() {
    for text in [
        EXAMPLE61_CFG,
        EXAMPLE62_CFG,
        include_str!("../../../configs/example61_desk.cfg"),
    ] {
        let cfg = parse_config(text).unwrap();
        cfg.build_model().unwrap();
        assert!(cfg.initial_control().unwrap().is_some());
    }
    let cfg = parse_config(EXAMPLE62_CFG).unwrap();
    assert_eq!(cfg.model.gammas, vec![0.6, 0.4, 0.3]);
    assert_eq!(cfg.model.betas, vec![1.0, 5.0, 8.0]);
}

#[test]
fn defaults_fill_optional_blocks() {
    let cfg = parse_config(MINIMAL).unwrap();
    assert_eq!(cfg.solver.tol_picard, 1e-8);
    assert_eq!(cfg.solver.max_iters, 50);
    assert_eq!(cfg.mc.n_paths, 1);
    assert!(cfg.control.is_none());
    assert_eq!(cfg.outputs.directory, "out");
    assert_eq!(cfg.time_grid().unwrap().n_steps, 21);
}

#[test]
fn reversed_impulse_names_schedule_field() {
    let text = format!(
        "{MINIMAL}\n[[schedule.impulses]]\nt = 0.6\ne = 0.3\nvarsigma = {{ name = \"zero\" }}\nvarphi = {{ name = \"zero\" }}\n"
    );
    let errs = errors(&text);
    assert!(errs.iter().any(|e| e.starts_with("schedule.impulses[0].e")), "{errs:?}");
}

#[test]
fn dt_must_divide_impulse_times() {
    let text = format!(
        "{MINIMAL}\n[[schedule.impulses]]\nt = 0.22\ne = 0.5\nvarsigma = {{ name = \"zero\" }}\nvarphi = {{ name = \"zero\" }}\n"
    );
    let errs = errors(&text);
    assert_eq!(errs.len(), 1, "{errs:?}");
    assert!(errs[0].starts_with("schedule.impulses[0].t") && errs[0].contains("does not divide"));
}

#[test]
fn unknown_keys_and_violations_are_reported_together() {
    let text = MINIMAL
        .replace("alpha = 0.5", "alpha = 0.5\nbogus = 1")
        .replace("p = 2.0", "p = 1.5");
    let errs = errors(&text);
    assert_eq!(errs.len(), 2, "{errs:?}");
    assert!(errs[0].starts_with("model.bogus") && errs[1].starts_with("model.p"));
}

#[test]
fn unknown_keys_carry_paths() {
    let text = MINIMAL
        .replace("alpha = 0.5", "alpha = 0.5\nbogus = 1")
        .replace("dt = 0.05", "dt = 0.05\nextra = true");
    let errs = errors(&text);
    assert!(errs.contains(&"model.bogus: unknown key".to_string()), "{errs:?}");
    assert!(errs.contains(&"grid.extra: unknown key".to_string()), "{errs:?}");
}

#[test]
fn invariant_violations_carry_paths() {
    let text = MINIMAL.replace("p = 2.0", "p = 1.5").replace(
        "dt = 0.05",
        "dt = 0.05\n[solver]\ntol_picard = 0.0\n[control]\nintervals = 3\nmodes = 5\neta = 1.0",
    );
    let errs = errors(&text);
    for path in ["model.p", "solver.tol_picard", "control.modes", "control.knots[1]"] {
        assert!(errs.iter().any(|e| e.starts_with(path)), "missing {path}: {errs:?}");
    }
}

#[test]
fn registry_keys_are_checked() {
    let text = MINIMAL.replace("g1 = { name = \"zero\" }", "g1 = { name = \"cubic\" }");
    let errs = errors(&text);
    assert!(
        errs.iter().any(|e| e.starts_with("model.g1") && e.contains("cubic")),
        "{errs:?}"
    );
}

#[test]
fn syntax_errors_are_config_errors() {
    assert!(matches!(parse_config("[model"), Err(Error::Config(_))));
}

#[test]
fn subcommand_names_round_trip() {
    for s in Subcommand::ALL {
        assert_eq!(s.name().parse::<Subcommand>().unwrap(), s);
    }
    assert!("plot".parse::<Subcommand>().is_err());
}

#[test]
fn run_writes_manifest_with_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_text(MINIMAL, Subcommand::Simulate, dir.path(), Some(3)).unwrap();
    assert_eq!(out.files.last().unwrap(), "manifest.json");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"], sha256_hex(MINIMAL));
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["subcommand"], "simulate");
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj
        .lines()
        .skip(1)
        .all(|l| l.split(',').skip(2).all(|v| v.parse::<f64>().unwrap() == 0.0)));
}

#[test]
fn optimize_requires_control_block() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        run_text(MINIMAL, Subcommand::Optimize, dir.path(), None),
        Err(Error::InvalidArgument { name: "control", .. })
    ));
}
