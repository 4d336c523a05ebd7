//! Command-line front end for the experiment pipeline.
//!
//! Every subcommand builds an experiment configuration from flags, lays the
//! config file (if any) over it, keeps the sections that subcommand needs and
//! runs the pipeline. Exit status: 0 when every enabled band passes, 1 when
//! some band fails or a stage errors, 2 on usage or configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use hyperharm::pipeline::{bundled, run_observed, ExperimentConfig};
use hyperharm::report::{ExperimentReport, Format};

#[derive(Parser)]
#[command(name = "hyperharm", version, about = "Harmonic maps to hyperbolic convex hulls: staged numerical experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a boundary set and write it as JSON.
    Gen(Flags),
    /// Build the geodesic hull of a boundary set.
    Hull(Flags),
    /// Smooth the nearest-point retraction with a colored net.
    Smooth(Flags),
    /// Invariant box dimension of the boundary set.
    Dim(Flags),
    /// Volume growth of a hull neighbourhood.
    Volume(Flags),
    /// Time decay of the heat shell integral.
    Heatdecay(Flags),
    /// Green's-function mass of a hull neighbourhood.
    Green(Flags),
    /// Barrier construction and subharmonicity probe.
    Phi(Flags),
    /// One Dirichlet solve on the largest ball of the radius grid.
    Solve(Flags),
    /// Harmonic solves on the whole radius grid.
    Sweep(Flags),
    /// Every stage enabled in the configuration.
    Run(Flags),
    /// Re-render a saved report.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Gen {
    Pair,
    RoundCircle,
    Cantor,
    Snowflake,
    BentPlane,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Auto,
    All,
    Stratified,
    Multiscale,
}

#[derive(Clone, Copy, ValueEnum)]
enum Boundary {
    Smoothed,
    Raw,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Fmt {
    Json,
    Csv,
    Svg,
}

#[derive(Args, Default)]
struct Flags {
    /// JSON configuration; its values take precedence over flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// A configuration shipped with the crate, e.g. thm13-cantor-h3.
    #[arg(long, conflicts_with = "config")]
    bundled: Option<String>,
    /// Output directory (default: out/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output formats.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Fmt::Json, Fmt::Csv, Fmt::Svg])]
    format: Vec<Fmt>,
    /// Print the merged configuration and exit.
    #[arg(long)]
    dry_run: bool,

    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dimension of the hyperbolic space (2 or 3).
    #[arg(long)]
    n: Option<usize>,
    /// Curvature is -a^2.
    #[arg(long)]
    a: Option<f64>,

    #[arg(long, value_enum)]
    generator: Option<Gen>,
    #[arg(long)]
    angle: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    roughness: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,

    #[arg(long, value_enum)]
    policy: Option<Policy>,
    #[arg(long)]
    budget: Option<usize>,

    /// Neighbourhood width for volume, heat and Green stages.
    #[arg(long)]
    d: Option<f64>,
    /// Monte Carlo samples for volume, heat and Green stages.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    rho_max: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,

    /// Net radius of the smoothing.
    #[arg(long)]
    r: Option<f64>,
    /// Region mesh spacing of the smoothing.
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long)]
    period: Option<f64>,

    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    probe_radius: Option<f64>,

    /// Ball radii of the harmonic sweep (Green evaluation radii for `green`).
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// Mesh spacing of the harmonic sweep.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    boundary: Option<Boundary>,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json written by an earlier run.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Fmt::Json, Fmt::Csv, Fmt::Svg])]
    format: Vec<Fmt>,
}

const SECTIONS: &[&str] = &["dimension", "lipschitz", "volume", "heat", "green", "mollifier", "barrier", "solver"];

fn put(obj: &mut Map<String, Value>, key: &str, v: Option<impl Into<Value>>) {
    if let Some(v) = v {
        obj.insert(key.into(), v.into());
    }
}

fn section<'a>(root: &'a mut Map<String, Value>, key: &str) -> &'a mut Map<String, Value> {
    root.entry(key).or_insert_with(|| json!({})).as_object_mut().expect("object")
}

impl Flags {
    /// The configuration spelled by the flags alone; only sections touched by
    /// some flag are present.
    fn to_value(&self, command: &str) -> Value {
        let mut root = Map::new();
        root.insert("schema".into(), json!(hyperharm::pipeline::SCHEMA_VERSION));
        put(&mut root, "name", self.name.clone());
        put(&mut root, "seed", self.seed);
        let mut space = Map::new();
        put(&mut space, "n", self.n);
        put(&mut space, "a", self.a);
        if !space.is_empty() {
            root.insert("space".into(), space.into());
        }
        if let Some(g) = self.generator {
            let mut gen = Map::new();
            let kind = match g {
                Gen::Pair => {
                    put(&mut gen, "angle", self.angle);
                    "pair"
                }
                Gen::RoundCircle => {
                    put(&mut gen, "m", self.m);
                    "round_circle"
                }
                Gen::Cantor => {
                    put(&mut gen, "ratio", self.ratio);
                    put(&mut gen, "depth", self.depth);
                    "cantor"
                }
                Gen::Snowflake => {
                    put(&mut gen, "roughness", self.roughness);
                    put(&mut gen, "depth", self.depth);
                    "snowflake"
                }
                Gen::BentPlane => {
                    put(&mut gen, "theta", self.theta);
                    put(&mut gen, "m", self.m);
                    "bent_plane"
                }
            };
            gen.insert("kind".into(), kind.into());
            root.insert("generator".into(), gen.into());
        }
        if let Some(p) = self.policy {
            let policy = match p {
                Policy::Auto => json!({ "kind": "auto", "budget": self.budget.unwrap_or(4096) }),
                Policy::All => json!({ "kind": "all" }),
                Policy::Stratified => json!({ "kind": "stratified", "budget": self.budget.unwrap_or(4096) }),
                Policy::Multiscale => json!({ "kind": "multiscale" }),
            };
            root.insert("hull".into(), json!({ "policy": policy }));
        }
        if self.trials.is_some() {
            put(section(&mut root, "dimension"), "trials", self.trials);
        }
        // shared names go to the stage the command is about
        let target = match command {
            "volume" => Some("volume"),
            "heatdecay" => Some("heat"),
            "green" => Some("green"),
            _ => None,
        };
        if let Some(t) = target {
            let s = section(&mut root, t);
            put(s, "d", self.d);
            put(s, "samples", self.samples);
            match t {
                "volume" => put(s, "rho_max", self.rho_max),
                "heat" => put(s, "times", self.times.clone()),
                _ => put(s, "radii", self.radii.clone()),
            }
        }
        if self.r.is_some() || self.spacing.is_some() || self.period.is_some() {
            let s = section(&mut root, "mollifier");
            put(s, "r", self.r);
            put(s, "h", self.spacing);
            put(s, "period", self.period);
        }
        if self.probes.is_some() || self.probe_radius.is_some() {
            let s = section(&mut root, "barrier");
            put(s, "probes", self.probes);
            put(s, "probe_radius", self.probe_radius);
        }
        if command != "green" && (self.radii.is_some() || self.h.is_some() || self.tol.is_some() || self.boundary.is_some()) {
            let s = section(&mut root, "solver");
            put(s, "radii", self.radii.clone());
            put(s, "h", self.h);
            put(s, "tol", self.tol);
            put(s, "boundary", self.boundary.map(|b| if matches!(b, Boundary::Raw) { "raw" } else { "smoothed" }));
        }
        root.into()
    }
}

/// Lays `top` over `base`. Tagged objects (with a `kind`) of different kinds
/// are replaced whole rather than merged.
fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            let retag = matches!((b.get("kind"), t.get("kind")), (Some(x), Some(y)) if x != y);
            if retag {
                *b = t;
                return;
            }
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Sections each subcommand keeps (inserted with defaults when absent).
fn sections_for(command: &str, cfg: &Value) -> (Vec<&'static str>, Vec<&'static str>) {
    let smoothed = cfg.pointer("/solver/boundary").and_then(Value::as_str).unwrap_or("smoothed") == "smoothed";
    match command {
        "gen" | "hull" => (vec![], vec![]),
        "dim" => (vec!["dimension"], vec!["dimension"]),
        "volume" => (vec!["volume"], vec!["volume"]),
        "heatdecay" => (vec!["heat"], vec!["heat"]),
        "green" => (vec!["green"], vec!["green"]),
        "smooth" => (vec!["mollifier"], vec!["mollifier"]),
        "phi" => (vec!["mollifier", "barrier"], vec!["mollifier", "barrier"]),
        "solve" | "sweep" if smoothed => (vec!["solver", "mollifier", "barrier"], vec!["solver", "mollifier"]),
        "solve" | "sweep" => (vec!["solver"], vec!["solver"]),
        _ => (SECTIONS.to_vec(), vec![]),
    }
}

fn load_config(flags: &Flags, command: &str) -> Result<ExperimentConfig> {
    let mut cfg = flags.to_value(command);
    if let Some(name) = &flags.bundled {
        overlay(&mut cfg, serde_json::to_value(bundled(name)?)?);
    }
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        overlay(&mut cfg, file);
    }
    if cfg.get("name").is_none() {
        cfg["name"] = json!(command);
    }
    let (keep, ensure) = sections_for(command, &cfg);
    let obj = cfg.as_object_mut().expect("object");
    obj.retain(|k, _| !SECTIONS.contains(&k.as_str()) || keep.contains(&k.as_str()));
    for s in ensure {
        obj.entry(s).or_insert_with(|| json!({}));
    }
    if command == "solve" {
        if let Some(radii) = cfg.pointer_mut("/solver/radii").and_then(Value::as_array_mut) {
            if let Some(last) = radii.pop() {
                *radii = vec![last];
            }
        }
    }
    Ok(ExperimentConfig::from_json(&cfg.to_string())?)
}

fn formats(f: &[Fmt]) -> Vec<Format> {
    f.iter()
        .map(|f| match f {
            Fmt::Json => Format::Json,
            Fmt::Csv => Format::Csv,
            Fmt::Svg => Format::Svg,
        })
        .collect()
}

fn write_artifact(report: &ExperimentReport, stage: &str, key: &str, path: &Path) -> Result<()> {
    if let Some(v) = report.stage(stage).and_then(|s| s.artifacts.get(key)) {
        std::fs::write(path, serde_json::to_string_pretty(v)?)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn run_command(command: &str, flags: &Flags) -> Result<bool> {
    let cfg = load_config(flags, command)?;
    if flags.dry_run {
        println!("{}", cfg.to_json()?);
        return Ok(true);
    }
    let report = run_observed(&cfg, |st, secs| eprintln!("[{}] {:?} ({secs:.1} s)", st.id, st.status))?;
    let out = flags.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    report.write(&out, &formats(&flags.format))?;
    match command {
        "gen" => write_artifact(&report, "gen", "boundary", &out.join("boundary.json"))?,
        "hull" => write_artifact(&report, "hull", "hull", &out.join("hull.json"))?,
        _ => {}
    }
    print!("{}", report.summary());
    eprintln!("report in {}", out.display());
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Report(args) => rerender(args),
        cmd => {
            let (name, flags) = match cmd {
                Command::Gen(f) => ("gen", f),
                Command::Hull(f) => ("hull", f),
                Command::Smooth(f) => ("smooth", f),
                Command::Dim(f) => ("dim", f),
                Command::Volume(f) => ("volume", f),
                Command::Heatdecay(f) => ("heatdecay", f),
                Command::Green(f) => ("green", f),
                Command::Phi(f) => ("phi", f),
                Command::Solve(f) => ("solve", f),
                Command::Sweep(f) => ("sweep", f),
                Command::Run(f) => ("run", f),
                Command::Report(_) => unreachable!(),
            };
            run_command(name, flags)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn rerender(args: &ReportArgs) -> Result<bool> {
    let text = std::fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let report = ExperimentReport::from_json(&text)?;
    if report.stages.is_empty() {
        bail!("{} has no stages", args.input.display());
    }
    for p in report.write(&args.out, &formats(&args.format))? {
        eprintln!("wrote {}", p.display());
    }
    print!("{}", report.summary());
    Ok(report.passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags() -> Flags {
        Flags { seed: Some(5), n: Some(2), generator: Some(Gen::Cantor), ratio: Some(0.25), depth: Some(3), ..Flags::default() }
    }

    #[test]
    fn flags_alone_make_a_config() {
        let cfg = load_config(&flags(), "heatdecay").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.name, "heatdecay");
        assert!(cfg.heat.is_some() && cfg.volume.is_none() && cfg.solver.is_none());
    }

    #[test]
    fn config_file_overrides_flags() {
        let dir = std::env::temp_dir().join(format!("hyperharm-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        std::fs::write(&path, r#"{ "seed": 9, "generator": { "kind": "pair", "angle": 3.0 }, "heat": { "samples": 50 } }"#).unwrap();
        let mut f = flags();
        f.config = Some(path);
        f.samples = Some(10);
        let cfg = load_config(&f, "heatdecay").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.heat.unwrap().samples, 50);
        assert!(matches!(cfg.generator, hyperharm::pipeline::GeneratorSpec::Pair { angle } if angle == 3.0));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn subcommands_keep_their_sections() {
        let mut f = flags();
        f.bundled = Some("thm13-cantor-h3".into());
        let gen = load_config(&f, "gen").unwrap();
        assert!(gen.heat.is_none() && gen.solver.is_none());
        let solve = load_config(&f, "solve").unwrap();
        assert_eq!(solve.solver.unwrap().radii, vec![3.0]);
        assert!(solve.barrier.is_none());
        let run = load_config(&f, "run").unwrap();
        assert!(run.heat.is_some() && run.barrier.is_some());
    }

    #[test]
    fn bad_ratio_is_a_config_error() {
        let mut f = flags();
        f.ratio = Some(0.6);
        let err = load_config(&f, "gen").unwrap_err().to_string();
        assert!(err.contains("generator.ratio"), "{err}");
    }

    #[test]
    fn cli_parses() {
        Cli::try_parse_from(["hyperharm", "heatdecay", "--generator", "cantor", "--ratio", "0.3", "--times", "1,2,3,4,5"]).unwrap();
        assert!(Cli::try_parse_from(["hyperharm", "run", "-s", "3"]).is_err());
    }
}
