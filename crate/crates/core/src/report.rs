//! Experiment reports: per-stage measures and band checks, CSV tables and
//! log-linear SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::Band;

/// How far a reported number may be trusted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uncertainty {
    /// Monte Carlo or regression standard error.
    Stderr(f64),
    /// Deterministic error budget (zero for exact counts).
    Tolerance(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub name: String,
    pub value: f64,
    pub uncertainty: Uncertainty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub band: Band,
    pub pass: bool,
}

/// Numeric table with a header row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Shortest round-trip decimal form of every value.
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(name: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Config("empty CSV".into()))?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = vec![];
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let row = line
                .split(',')
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Config(format!("CSV line {}: {e}", i + 2)))?;
            if row.len() != columns.len() {
                return Err(Error::Config(format!("CSV line {}: {} cells, expected {}", i + 2, row.len(), columns.len())));
            }
            rows.push(row);
        }
        Ok(Self { name: name.into(), columns, rows })
    }
}

/// `ln y = intercept + slope x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub intercept: f64,
    pub slope: f64,
}

/// Positive data on a logarithmic y axis with a fitted line and band edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPlot {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<[f64; 2]>,
    pub fit: Option<LogLine>,
    pub bands: Vec<LogLine>,
}

impl DecayPlot {
    /// Band lines with the given slopes, through the fitted line at the mean abscissa.
    pub fn band_slopes(&mut self, slopes: &[f64]) {
        let Some(fit) = self.fit else { return };
        if self.points.is_empty() {
            return;
        }
        let xm = self.points.iter().map(|p| p[0]).sum::<f64>() / self.points.len() as f64;
        let ym = fit.intercept + fit.slope * xm;
        self.bands = slopes.iter().filter(|s| s.is_finite()).map(|&s| LogLine { intercept: ym - s * xm, slope: s }).collect();
    }

    pub fn to_svg(&self, partial: bool) -> String {
        const W: f64 = 480.0;
        const H: f64 = 320.0;
        const M: f64 = 48.0;
        let pts: Vec<[f64; 2]> = self.points.iter().filter(|p| p[1] > 0.0 && p[0].is_finite() && p[1].is_finite()).copied().collect();
        let (mut x0, mut x1) = min_max(pts.iter().map(|p| p[0]));
        let (mut y0, mut y1) = min_max(pts.iter().map(|p| p[1].ln()));
        if pts.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        let (y0, y1) = (y0 - pad, y1 + pad);
        let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
        let sy = |ly: f64| H - M - (ly - y0) / (y1 - y0) * (H - 2.0 * M);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<path class="axes" d="M{M} {M} V{b} H{r}" stroke="black" fill="none"/>"#,
            b = H - M,
            r = W - M
        );
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(&self.name));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 12.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">log {}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.y_label)
        );
        for (v, anchor, x, y) in [(x0, "start", sx(x0), H - M + 16.0), (x1, "end", sx(x1), H - M + 16.0)] {
            let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{}</text>"#, fmt_tick(v));
        }
        for ly in [y0, y1] {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#, M - 4.0, sy(ly), fmt_tick(ly.exp()));
        }
        let seg = |l: &LogLine| (sx(x0), sy(l.intercept + l.slope * x0), sx(x1), sy(l.intercept + l.slope * x1));
        let _ = writeln!(s, r#"<clipPath id="plot"><rect x="{M}" y="{M}" width="{}" height="{}"/></clipPath>"#, W - 2.0 * M, H - 2.0 * M);
        for b in &self.bands {
            let (a, b_, c, d) = seg(b);
            let _ = writeln!(
                s,
                r#"<line class="band" x1="{a:.2}" y1="{b_:.2}" x2="{c:.2}" y2="{d:.2}" stroke="gray" stroke-dasharray="4 3" clip-path="url(#plot)"/>"#
            );
        }
        if let Some(f) = &self.fit {
            let (a, b_, c, d) = seg(f);
            let _ = writeln!(
                s,
                r#"<line class="fit" x1="{a:.2}" y1="{b_:.2}" x2="{c:.2}" y2="{d:.2}" stroke="steelblue" stroke-width="1.5" clip-path="url(#plot)"/>"#
            );
        }
        for p in &pts {
            let _ = writeln!(s, r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3" fill="black"/>"#, sx(p[0]), sy(p[1].ln()));
        }
        if partial {
            let _ = writeln!(s, r#"<text class="partial" x="{}" y="{}" text-anchor="end" font-size="14" fill="firebrick">partial</text>"#, W - M, M - 8.0);
        }
        s.push_str("</svg>\n");
        s
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed(String),
    /// An upstream stage failed.
    Skipped(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub id: String,
    pub status: StageStatus,
    pub measures: Vec<Measure>,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub plots: Vec<DecayPlot>,
    /// Stage outputs in their own serialized form (boundary set, hull).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub artifacts: BTreeMap<String, serde_json::Value>,
}

impl StageResult {
    pub fn new(id: &str) -> Self {
        Self {
            id: id.into(),
            status: StageStatus::Ok,
            measures: vec![],
            checks: vec![],
            tables: vec![],
            plots: vec![],
            artifacts: BTreeMap::new(),
        }
    }

    pub fn measure(&mut self, name: &str, value: f64, uncertainty: Uncertainty) {
        self.measures.push(Measure { name: name.into(), value, uncertainty });
    }

    pub fn exact(&mut self, name: &str, value: f64) {
        self.measure(name, value, Uncertainty::Tolerance(0.0));
    }

    pub fn check(&mut self, name: &str, value: f64, band: Band) -> bool {
        let pass = band.contains(value);
        self.checks.push(Check { name: name.into(), value, band, pass });
        pass
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.measures.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn passed(&self) -> bool {
        self.status == StageStatus::Ok && self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub schema: u32,
    pub config_hash: String,
    /// Hash of the stage results, timings excluded.
    pub result_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub stages: Vec<StageResult>,
    pub partial: bool,
    pub passed: bool,
    pub provenance: Provenance,
    /// Wall-clock seconds per stage; not hashed.
    pub timings: BTreeMap<String, f64>,
}

/// Output formats of [`ExperimentReport::write`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl ExperimentReport {
    pub fn stage(&self, id: &str) -> Option<&StageResult> {
        self.stages.iter().find(|s| s.id == id)
    }

    pub fn hash_stages(stages: &[StageResult]) -> Result<String> {
        Ok(hex(&Sha256::digest(serde_json::to_vec(stages)?)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One line per check, for terminals.
    pub fn summary(&self) -> String {
        let mut s = format!("{} (seed {}): {}\n", self.name, self.seed, if self.passed { "PASS" } else { "FAIL" });
        for st in &self.stages {
            let state = match &st.status {
                StageStatus::Ok => "ok".to_string(),
                StageStatus::Failed(e) => format!("failed: {e}"),
                StageStatus::Skipped(e) => format!("skipped: {e}"),
            };
            let _ = writeln!(s, "  [{}] {state}", st.id);
            for c in &st.checks {
                let _ = writeln!(
                    s,
                    "    {} {} = {:.6} in [{}, {}]",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.band.lo.map_or("-inf".into(), |v| format!("{v:.6}")),
                    c.band.hi.map_or("inf".into(), |v| format!("{v:.6}")),
                );
            }
        }
        let _ = writeln!(s, "  result hash {}", self.provenance.result_hash);
        s
    }

    /// Writes `report.json`, `<stage>-<table>.csv` and `<stage>-<plot>.svg`
    /// into `dir`, creating it. Returns the paths written.
    pub fn write(&self, dir: &Path, formats: &[Format]) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = vec![];
        let mut put = |name: String, body: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            out.push(p);
            Ok(())
        };
        if formats.contains(&Format::Json) {
            put("report.json".into(), self.to_json()?)?;
        }
        for st in &self.stages {
            if formats.contains(&Format::Csv) {
                for t in &st.tables {
                    put(format!("{}-{}.csv", st.id, t.name), t.to_csv())?;
                }
            }
            if formats.contains(&Format::Svg) {
                for p in &st.plots {
                    put(format!("{}-{}.svg", st.id, p.name), p.to_svg(self.partial))?;
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
