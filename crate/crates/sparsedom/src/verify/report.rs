//! Report rows, least-squares fits and the files written for a run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::Experiment;
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 8] = ["experiment", "param_json", "lhs", "rhs", "ratio", "slope", "stderr", "pass"];

/// One measured inequality or fitted slope.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub experiment: Experiment,
    pub params: Value,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs` when `rhs > 0`, otherwise NaN.
    pub ratio: f64,
    pub slope: Option<f64>,
    pub stderr: Option<f64>,
    /// `None` for rows that carry no acceptance decision.
    pub pass: Option<bool>,
}

impl ReportRow {
    pub fn new(experiment: Experiment, params: Value, lhs: f64, rhs: f64) -> Self {
        Self {
            experiment,
            params,
            lhs,
            rhs,
            ratio: if rhs > 0.0 { lhs / rhs } else { f64::NAN },
            slope: None,
            stderr: None,
            pass: None,
        }
    }

    /// A slope row; `lhs` and `rhs` are left empty.
    pub fn fit(experiment: Experiment, params: Value, (slope, stderr): (f64, f64)) -> Self {
        Self {
            slope: Some(slope),
            stderr: Some(stderr),
            ..Self::new(experiment, params, f64::NAN, f64::NAN)
        }
    }

    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = Some(pass);
        self
    }

    fn csv_record(&self) -> Vec<String> {
        let num = |v: f64| if v.is_nan() { String::new() } else { format!("{v:e}") };
        let opt = |v: Option<f64>| v.map_or(String::new(), num);
        vec![
            self.experiment.to_string(),
            self.params.to_string(),
            num(self.lhs),
            num(self.rhs),
            num(self.ratio),
            opt(self.slope),
            opt(self.stderr),
            self.pass.map_or(String::new(), |p| p.to_string()),
        ]
    }
}

/// A set of curves drawn on one SVG.
#[derive(Clone, Debug, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

/// The output of one experiment.
#[derive(Clone, Debug)]
pub struct Report {
    pub experiment: Experiment,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub plots: Vec<Plot>,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: String,
    seed: u64,
    rows: usize,
    checked: usize,
    passed: bool,
    failures: Vec<&'a Value>,
    checks: Vec<Value>,
}

impl Report {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        Self {
            experiment,
            seed,
            rows: Vec::new(),
            plots: Vec::new(),
        }
    }

    /// Rows carrying a pass/fail decision.
    pub fn checks(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.pass.is_some())
    }

    /// True when every decided row passed and at least one was decided.
    pub fn passed(&self) -> bool {
        self.checks().count() > 0 && self.checks().all(|r| r.pass == Some(true))
    }

    /// First decided row whose parameters contain every `(key, value)` pair.
    pub fn check(&self, pairs: &[(&str, Value)]) -> Option<&ReportRow> {
        self.checks()
            .find(|r| pairs.iter().all(|(k, v)| r.params.get(*k) == Some(v)))
    }

    pub fn csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(CSV_HEADER).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.csv_record()).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn summary_json(&self) -> String {
        let checks: Vec<Value> = self
            .checks()
            .map(|r| {
                json!({
                    "params": r.params,
                    "ratio": finite_or_null(r.ratio),
                    "slope": r.slope.map(finite_or_null),
                    "pass": r.pass,
                })
            })
            .collect();
        let summary = Summary {
            experiment: self.experiment.to_string(),
            seed: self.seed,
            rows: self.rows.len(),
            checked: checks.len(),
            passed: self.passed(),
            failures: self
                .checks()
                .filter(|r| r.pass == Some(false))
                .map(|r| &r.params)
                .collect(),
            checks,
        };
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    }

    /// Writes `report.csv`, `summary.json` and, with `plot`, one SVG per
    /// plot. Each file is written to a temporary name and renamed.
    pub fn write(&self, dir: &Path, plot: bool) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = vec![
            write_atomic(dir, "report.csv", &self.csv()?)?,
            write_atomic(dir, "summary.json", &self.summary_json())?,
        ];
        if plot {
            for (i, p) in self.plots.iter().enumerate() {
                let name = format!("{}_{}.svg", self.experiment.to_string().to_lowercase(), i + 1);
                files.push(write_atomic(dir, &name, &svg(p))?);
            }
        }
        Ok(files)
    }
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, &target)?;
    Ok(target)
}

/// Ordinary least squares `y = a + b x`; returns `(b, stderr(b))`. The
/// standard error is zero for two points or an exact fit.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!("fit needs 2 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("fit needs two distinct abscissae".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    if points.len() == 2 {
        return Ok((b, 0.0));
    }
    let ssr: f64 = points.iter().map(|p| (p.1 - my - b * (p.0 - mx)).powi(2)).sum();
    Ok((b, (ssr / (n - 2.0) / sxx).sqrt()))
}

/// Least squares on `(ln x, ln y)`; at least 3 strictly positive points.
pub fn slope_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!("slope_fit needs 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return Err(Error::InvalidArgument(format!("slope_fit needs positive points, got {p:?}")));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    linear_fit(&logs)
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// A line-and-marker SVG with linear or logarithmic axes.
pub fn svg(plot: &Plot) -> String {
    let tx = |v: f64| if plot.log_x { v.log10() } else { v };
    let ty = |v: f64| if plot.log_y { v.log10() } else { v };
    let pts: Vec<(f64, f64)> = plot
        .series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|&(x, y)| (tx(x), ty(y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let span = |f: fn(&(f64, f64)) -> f64| {
        let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi > lo) {
            (false, _) => (0.0, 1.0),
            (true, true) => (lo, hi),
            (true, false) => (lo - 0.5, lo + 0.5),
        }
    };
    let (x0, x1) = span(|p| p.0);
    let (y0, y1) = span(|p| p.1);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let label = |v: f64, log: bool| if log { format!("1e{v:.2}") } else { format!("{v:.3}") };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(&plot.title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} V{b} H{r}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for (v, anchor_x) in [(x0, MARGIN), (x1, W - MARGIN)] {
        let _ = writeln!(s, r#"<text x="{anchor_x}" y="{}" text-anchor="middle">{}</text>"#, H - MARGIN + 16.0, label(v, plot.log_x));
    }
    for (v, anchor_y) in [(y0, H - MARGIN), (y1, MARGIN)] {
        let _ = writeln!(s, r#"<text x="{}" y="{anchor_y}" text-anchor="end">{}</text>"#, MARGIN - 4.0, label(v, plot.log_y));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(&plot.x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(&plot.y_label)
    );
    for (i, (name, points)) in plot.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<(f64, f64)> = points
            .iter()
            .map(|&(x, y)| (tx(x), ty(y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| (sx(x), sy(y)))
            .collect();
        let path: Vec<String> = coords.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, path.join(" "));
        for (x, y) in &coords {
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#);
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, W - MARGIN - 150.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_power_laws() {
        let sq: Vec<(f64, f64)> = [1.0, 3.0, 10.0].iter().map(|&x| (x, x * x)).collect();
        let (b, e) = slope_fit(&sq).unwrap();
        assert!((b - 2.0).abs() < 1e-12 && e < 1e-12);
        let flat: Vec<(f64, f64)> = [1.0, 2.0, 4.0].iter().map(|&x| (x, 7.0)).collect();
        assert!(slope_fit(&flat).unwrap().0.abs() < 1e-12);
        assert!(slope_fit(&sq[..2]).is_err());
        assert!(slope_fit(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn noisy_power_law_within_three_stderr() {
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut hits = 0;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = (1..=8)
                .map(|i| {
                    let x = 2f64.powi(i);
                    (x, 3.0 * x.powf(-0.7) * f64::exp(noise.sample(&mut rng)))
                })
                .collect();
            let (b, e) = slope_fit(&pts).unwrap();
            if (b + 0.7).abs() <= 3.0 * e {
                hits += 1;
            }
        }
        // A 3σ interval misses with probability ~0.3% per draw.
        assert!(hits >= 48, "{hits}");
    }

    #[test]
    fn csv_and_summary_shape() {
        let mut r = Report::new(Experiment::E5, 1);
        r.rows.push(ReportRow::new(Experiment::E5, json!({"depth": 3}), 2.0, 1.0).with_pass(true));
        r.rows.push(ReportRow::fit(Experiment::E5, json!({"fit": "x"}), (0.5, 0.1)));
        let csv = r.csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), r#"E5,"{""depth"":3}",2e0,1e0,2e0,,,true"#);
        assert_eq!(lines.next().unwrap(), r#"E5,"{""fit"":""x""}",,,,5e-1,1e-1,"#);
        let s: Value = serde_json::from_str(&r.summary_json()).unwrap();
        assert_eq!(s["passed"], json!(true));
        assert_eq!(s["checked"], json!(1));
        assert!(svg(&Plot::default()).starts_with("<svg"));
    }
}
