use hyperharm::pipeline::*;
use hyperharm::report::*;
use proptest::prelude::*;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
        "schema": 1, "name": "small", "seed": 42,
        "space": { "n": 2 },
        "generator": { "kind": "cantor", "ratio": 0.3333333333333333, "depth": 4 },
        "hull": { "policy": { "kind": "all" } },
        "lipschitz": { "pairs": 40 },
        "volume": { "rho_max": 5.0, "samples": 400 },
        "heat": { "times": [1, 2, 3, 4, 5], "samples": 100 },
        "green": { "radii": [0.0, 3.0], "samples": 100 }
    }"#,
    )
    .unwrap()
}

fn with_solver(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.solver = Some(
        serde_json::from_str(r#"{ "radii": [1.0, 1.5], "h": 0.25, "boundary": "raw", "plateau": 100.0 }"#).unwrap(),
    );
    cfg
}

fn config_error(text: &str) -> String {
    match ExperimentConfig::from_json(text) {
        Err(hyperharm::Error::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn bundled_configs_parse_and_differ() {
    let mut hashes = std::collections::BTreeSet::new();
    for (name, _) in BUNDLED {
        let cfg = bundled(name).unwrap();
        assert_eq!(&cfg.name, name);
        assert!(hashes.insert(cfg.hash().unwrap()));
        let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }
    assert!(bundled("thm13-cantor-h3.json").is_ok());
    assert!(bundled("nope").is_err());
}

#[test]
fn cantor_ratio_out_of_range_is_rejected() {
    let text = BUNDLED[0].1.replace("0.3333333333333333", "0.6");
    let msg = config_error(&text);
    assert!(msg.starts_with("generator.ratio:"), "{msg}");
}

#[test]
fn validation_reports_field_paths() {
    let base = small();
    let cases: Vec<(Box<dyn Fn(&mut ExperimentConfig)>, &str)> = vec![
        (Box::new(|c| c.schema = 2), "schema:"),
        (Box::new(|c| c.space.n = 4), "space.n:"),
        (Box::new(|c| c.space.a = -1.0), "space.a:"),
        (Box::new(|c| c.lipschitz.as_mut().unwrap().shells = vec![3.0, 2.0, 4.0]), "lipschitz.shells:"),
        (Box::new(|c| c.heat.as_mut().unwrap().times = vec![0.5, 1.0, 2.0, 3.0, 4.0]), "heat.times:"),
        (Box::new(|c| c.generator = GeneratorSpec::Snowflake { roughness: 0.2, depth: 3 }), "generator:"),
        (Box::new(|c| *c = with_solver(c.clone())), ""),
        (
            Box::new(|c| {
                *c = with_solver(c.clone());
                c.solver.as_mut().unwrap().boundary = BoundaryData::Smoothed;
            }),
            "solver.boundary:",
        ),
    ];
    for (edit, path) in cases {
        let mut cfg = base.clone();
        edit(&mut cfg);
        match (cfg.validate(), path) {
            (Ok(()), "") => {}
            (Err(hyperharm::Error::Config(msg)), p) if !p.is_empty() => assert!(msg.starts_with(p), "{msg} vs {p}"),
            (other, p) => panic!("{p}: {other:?}"),
        }
    }
}

#[test]
fn seed_is_mandatory_and_unknown_fields_are_rejected() {
    let text = serde_json::to_value(small()).unwrap();
    let mut no_seed = text.clone();
    no_seed.as_object_mut().unwrap().remove("seed");
    assert!(config_error(&no_seed.to_string()).contains("seed"));
    let mut extra = text;
    extra["heat"]["sampels"] = 3.into();
    assert!(config_error(&extra.to_string()).contains("sampels"));
}

#[test]
fn same_seed_gives_identical_reports() {
    let a = run(&small()).unwrap();
    let b = run(&small()).unwrap();
    assert!(!a.partial, "{}", a.summary());
    assert_eq!(a.provenance, b.provenance);
    assert_eq!(serde_json::to_string(&a.stages).unwrap(), serde_json::to_string(&b.stages).unwrap());
    let mut other = small();
    other.seed += 1;
    assert_ne!(run(&other).unwrap().provenance.result_hash, a.provenance.result_hash);
}

#[test]
fn disabling_the_solver_leaves_other_stages_bit_identical() {
    let without = run(&small()).unwrap();
    let with = run(&with_solver(small())).unwrap();
    assert!(with.stage("solve").unwrap().status == StageStatus::Ok, "{}", with.summary());
    for st in &without.stages {
        let twin = with.stage(&st.id).unwrap();
        assert_eq!(serde_json::to_string(st).unwrap(), serde_json::to_string(twin).unwrap(), "stage {}", st.id);
    }
}

#[test]
fn failed_stage_skips_dependents_and_marks_partial() {
    let mut cfg = small();
    cfg.space.n = 2;
    cfg.mollifier = Some(serde_json::from_str(r#"{ "r": 0.5, "h": 0.2 }"#).unwrap());
    cfg.barrier = Some(serde_json::from_str(r#"{ "probes": 20, "probe_radius": 4.0, "floor": 50.0 }"#).unwrap());
    cfg.solver = Some(serde_json::from_str(r#"{ "radii": [1.0, 1.5], "h": 0.25 }"#).unwrap());
    let rep = run(&cfg).unwrap();
    assert!(matches!(rep.stage("phi").unwrap().status, StageStatus::Failed(_)), "{}", rep.summary());
    assert!(matches!(rep.stage("solve").unwrap().status, StageStatus::Skipped(_)));
    assert_eq!(rep.stage("heat").unwrap().status, StageStatus::Ok);
    assert!(rep.partial && !rep.passed);
}

#[test]
fn every_measure_carries_an_uncertainty() {
    let rep = run(&small()).unwrap();
    let json = serde_json::to_value(&rep).unwrap();
    for st in json["stages"].as_array().unwrap() {
        for m in st["measures"].as_array().unwrap() {
            let u = m["uncertainty"].as_object().unwrap();
            assert!(u.contains_key("stderr") || u.contains_key("tolerance"), "{m}");
        }
    }
    assert_eq!(ExperimentReport::from_json(&rep.to_json().unwrap()).unwrap(), rep);
}

fn plot(points: usize) -> DecayPlot {
    let x: Vec<f64> = (1..=points).map(|i| i as f64).collect();
    DecayPlot {
        name: "decay".into(),
        x_label: "t".into(),
        y_label: "value".into(),
        points: x.iter().map(|&t| [t, (-0.7 * t).exp()]).collect(),
        fit: Some(LogLine { intercept: 0.0, slope: -0.7 }),
        bands: vec![],
    }
}

#[test]
fn svg_has_one_marker_per_point_and_one_fit_line() {
    let mut p = plot(5);
    p.band_slopes(&[-1.0, -0.5]);
    let svg = p.to_svg(false);
    assert_eq!(svg.matches(r#"class="marker""#).count(), 5);
    assert_eq!(svg.matches(r#"class="fit""#).count(), 1);
    assert_eq!(svg.matches(r#"class="band""#).count(), 2);
    assert!(!svg.contains("partial"));
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn partial_svg_is_annotated() {
    let svg = plot(3).to_svg(true);
    assert!(svg.contains(">partial</text>"));
}

#[test]
fn report_files_are_written() {
    let rep = run(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = rep.write(dir.path(), &[Format::Json, Format::Csv, Format::Svg]).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for want in ["report.json", "heat-shell.csv", "heat-shell.svg", "lipschitz-profile.svg", "volume-profile.csv"] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }
    let csv = std::fs::read_to_string(dir.path().join("heat-shell.csv")).unwrap();
    let table = &rep.stage("heat").unwrap().tables[0];
    assert_eq!(&Table::from_csv("shell", &csv).unwrap(), table);
}

#[test]
fn band_membership() {
    assert!(Band::between(0.0, 1.0).contains(1.0));
    assert!(!Band::at_least(0.5).contains(0.4));
    assert!(!Band::at_most(1.0).contains(f64::NAN));
    assert!(!Band::default().contains(f64::INFINITY));
    assert!(Band::default().contains(-3.0));
}

#[test]
fn malformed_csv_is_rejected() {
    assert!(Table::from_csv("t", "a,b\n1,2,3\n").is_err());
    assert!(Table::from_csv("t", "a,b\n1,x\n").is_err());
    assert!(Table::from_csv("t", "").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trips_exactly(rows in prop::collection::vec(prop::collection::vec(prop::num::f64::ANY, 3), 0..20)) {
        let mut t = Table::new("t", &["a", "b", "c"]);
        for r in rows {
            t.push(r);
        }
        let back = Table::from_csv("t", &t.to_csv()).unwrap();
        prop_assert_eq!(back.columns, t.columns);
        prop_assert_eq!(back.rows.len(), t.rows.len());
        for (x, y) in back.rows.iter().flatten().zip(t.rows.iter().flatten()) {
            prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()), "{} vs {}", x, y);
        }
    }
}
