use adiabat::metrics::EnsembleMember;
use adiabat::optimizer::ControlProblem;
use adiabat::recipes;
use adiabat::Error;
use adiabat_cli::config::{parse_config, Mode, RunConfig};
use adiabat_cli::presets;
use adiabat_cli::run::with_mode;

fn preset(name: &str) -> RunConfig {
    parse_config(presets::get(name).expect("preset exists")).expect("preset parses")
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || a == b
}

fn assert_members_match(got: &[EnsembleMember], want: &[EnsembleMember]) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert_eq!(g.label, w.label);
        assert!(
            rel_close(g.rabi_scale, w.rabi_scale, 1e-12),
            "{} rabi {} vs {}",
            g.label,
            g.rabi_scale,
            w.rabi_scale
        );
        assert!(rel_close(g.offset, w.offset, 1e-12), "{} offset", g.label);
        assert!((g.weight - w.weight).abs() < 1e-15, "{} weight", g.label);
        assert_eq!(g.perturbation, w.perturbation);
        assert_eq!(g.metric_weights, w.metric_weights);
        assert_eq!(g.sign, w.sign);
        for (a, b) in [(g.initial, w.initial), (g.target, w.target)] {
            let (va, vb) = (a.bloch_vector(), b.bloch_vector());
            for k in 0..3 {
                assert!((va[k] - vb[k]).abs() < 1e-12, "{} state", g.label);
            }
        }
    }
}

fn assert_json_close(a: &serde_json::Value, b: &serde_json::Value, at: &str) {
    use serde_json::Value;
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!(rel_close(x, y, 1e-12), "{at}: {x} vs {y}");
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{at}");
            for (i, (p, q)) in x.iter().zip(y).enumerate() {
                assert_json_close(p, q, &format!("{at}[{i}]"));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(
                x.keys().collect::<Vec<_>>(),
                y.keys().collect::<Vec<_>>(),
                "{at}"
            );
            for (k, v) in x {
                assert_json_close(v, &y[k], &format!("{at}.{k}"));
            }
        }
        _ => assert_eq!(a, b, "{at}"),
    }
}

fn assert_problem_matches(got: &ControlProblem, want: &ControlProblem) {
    assert_json_close(
        &serde_json::to_value(&*got.ensemble.family).unwrap(),
        &serde_json::to_value(&*want.ensemble.family).unwrap(),
        "family",
    );
    assert_members_match(&got.ensemble.members, &want.ensemble.members);
}

#[test]
fn presets_build_the_recipe_problems() {
    let cases: [(&str, ControlProblem); 5] = [
        ("afp_2p3_cycles", recipes::afp_2p3_cycles(1).unwrap()),
        (
            "dipolar_electron",
            recipes::dipolar_electron(true, 1).unwrap(),
        ),
        (
            "dipolar_reference",
            recipes::dipolar_electron(false, 1).unwrap(),
        ),
        ("selective_larmor", recipes::selective_larmor(2).unwrap()),
        ("arbitrary_state", recipes::arbitrary_state(1).unwrap()),
    ];
    for (name, want) in cases {
        let got = preset(name).build_problem().unwrap();
        assert_problem_matches(&got, &want);
        assert_eq!(got.policy, want.policy, "{name}");
    }
}

#[test]
fn resolved_config_round_trips_and_is_idempotent() {
    for name in presets::names() {
        let r = preset(name).resolved().unwrap();
        let text = serde_json::to_string(&r).unwrap();
        let back = parse_config(&text).unwrap();
        assert_eq!(back, r, "{name}");
        assert_eq!(r.resolved().unwrap(), r, "{name}");
    }
}

const MINIMAL: &str = r#"{
  "units": "rad_s",
  "problem": {
    "ansatz": {"kind": "poly_afp", "num_params": 6, "duration": 10.0, "omega1_max": 1.0, "delta_omega_max": 3.0},
    "metric_weights": {"p0": 0.5, "p_ad": 0.5},
    "members": [{}, {"rabi_scale": 1.5}]
  }
}"#;

#[test]
fn defaults_are_filled() {
    let r = parse_config(MINIMAL).unwrap().resolved().unwrap();
    assert_eq!(r.mode, Some(Mode::Optimize));
    let m = &r.problem.members;
    assert_eq!(m[0].label.as_deref(), Some("member_0"));
    assert_eq!(m[0].rabi_scale, Some(1.0));
    assert_eq!(m[0].weight, Some(0.5));
    assert_eq!(m[1].weight, Some(0.5));
    assert!(m[1].perturbation.as_ref().unwrap().is_none());
}

fn config_error(text: &str) -> (String, String) {
    match parse_config(text) {
        Err(Error::Config { path, reason }) => (path, reason),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn member_weights_must_sum_to_one() {
    let text = MINIMAL.replace(
        r#"[{}, {"rabi_scale": 1.5}]"#,
        r#"[{"weight": 0.45}, {"weight": 0.45}]"#,
    );
    let (path, reason) = config_error(&text);
    assert_eq!(path, "problem.members[*].weight");
    assert!(reason.contains("0.9"), "{reason}");
}

#[test]
fn partial_weights_are_rejected() {
    let text = MINIMAL.replace(r#"[{}, {"rabi_scale": 1.5}]"#, r#"[{"weight": 1.0}, {}]"#);
    assert_eq!(config_error(&text).0, "problem.members");
}

#[test]
fn unknown_fields_report_their_path() {
    let text = MINIMAL.replace(r#""rabi_scale": 1.5"#, r#""rabi_scal": 1.5"#);
    let (path, reason) = config_error(&text);
    assert_eq!(path, "problem.members[1].rabi_scal");
    assert!(reason.contains("rabi_scal"), "{reason}");
}

#[test]
fn invalid_metric_weights_point_at_the_member() {
    let text = MINIMAL.replace(
        r#"[{}, "#,
        r#"[{"metric_weights": {"p0": 0.7, "p_ad": 0.7}}, "#,
    );
    assert_eq!(config_error(&text).0, "problem.members[0].metric_weights");
}

#[test]
fn omega1_and_rabi_scale_are_exclusive() {
    let text = MINIMAL.replace(
        r#""rabi_scale": 1.5"#,
        r#""rabi_scale": 1.5, "omega1": 1.5"#,
    );
    assert_eq!(config_error(&text).0, "problem.members[1].omega1");
}

#[test]
fn units_convert_on_load() {
    let hz = MINIMAL
        .replace("rad_s", "hz")
        .replace(r#"{"rabi_scale": 1.5}"#, r#"{"offset": 2.0}"#);
    let p = parse_config(&hz).unwrap().build_problem().unwrap();
    assert!((p.ensemble.family.omega1_max() - std::f64::consts::TAU).abs() < 1e-12);
    assert!((p.ensemble.members[1].offset - 2.0 * std::f64::consts::TAU).abs() < 1e-12);
    let cyc = MINIMAL.replace("rad_s", "omega1_units");
    let p = parse_config(&cyc).unwrap().build_problem().unwrap();
    use adiabat::ansatz::FieldFamily;
    assert!((p.ensemble.family.duration() - 10.0 * std::f64::consts::TAU).abs() < 1e-12);
}

#[test]
fn mode_mismatch_is_a_config_error() {
    let mut cfg = parse_config(MINIMAL).unwrap();
    cfg.mode = Some(Mode::Sweep);
    match with_mode(cfg.clone(), Mode::Optimize) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "mode"),
        other => panic!("{other:?}"),
    }
    assert_eq!(with_mode(cfg, Mode::Sweep).unwrap().mode, Some(Mode::Sweep));
}

#[test]
fn hash_ignores_output_dir_only() {
    let a = parse_config(MINIMAL).unwrap();
    let mut b = a.clone();
    b.output_dir = "elsewhere".into();
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    let mut c = a.clone();
    c.problem.policy.rng_seed = 9;
    assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    assert_eq!(a.hash().unwrap().len(), 64);
}

#[test]
fn named_and_angle_states_agree() {
    let text = MINIMAL.replace(
        r#"[{}, "#,
        r#"[{"initial": {"theta": 0.0, "phi": 0.0}, "target": {"bloch": [0, 0, -1]}}, "#,
    );
    let p = parse_config(&text).unwrap().build_problem().unwrap();
    let m = &p.ensemble.members[0];
    assert!((m.initial.bloch_vector()[2] - 1.0).abs() < 1e-12);
    assert!((m.target.bloch_vector()[2] + 1.0).abs() < 1e-12);
}
