//! CSV tables, SVG plots and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::fit_slope;
use crate::verifier::{Check, EstimateRow, LemmaId, LemmaReport, Verdict};

pub const ROWS_FILE: &str = "estimates.csv";
pub const CHECKS_FILE: &str = "checks.csv";
pub const VERDICT_FILE: &str = "verdict.json";
pub const PLOT_FILE: &str = "plot.svg";
pub const MANIFEST_FILE: &str = "manifest.json";

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

pub fn write_rows_csv<W: Write>(rows: &[EstimateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "lemma_id", "quantity", "m", "n", "q", "x", "estimate", "stderr", "samples", "slope",
            "verdict", "anchor",
        ])
        .map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: std::io::Read>(input: R) -> Result<Vec<EstimateRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

pub fn write_checks_csv<W: Write>(lemma_id: &str, checks: &[Check], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lemma_id", "name", "observed", "bound", "verdict", "detail"])
        .map_err(csv_err)?;
    for c in checks {
        w.write_record([
            lemma_id,
            &c.name,
            &c.observed.to_string(),
            &c.bound.to_string(),
            &c.verdict.to_string(),
            &c.detail,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `log₂ estimate` against the series abscissa, one polyline per quantity
/// with its least-squares line dashed. The data are repeated as comments.
pub fn svg_plot(report: &LemmaReport) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const PAD: f64 = 56.0;
    const COLORS: [&str; 8] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
    ];

    let mut series: Vec<(&str, Vec<(f64, f64)>)> = Vec::new();
    for r in &report.rows {
        if !(r.estimate > 0.0) || !r.estimate.is_finite() {
            continue;
        }
        let pt = (r.x, r.estimate.log2());
        match series.iter_mut().find(|(q, _)| *q == r.quantity) {
            Some((_, pts)) => pts.push(pt),
            None => series.push((&r.quantity, vec![pt])),
        }
    }
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<!-- lemma: {} verdict: {} -->", report.lemma_id, report.verdict);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{} ({})</text>"#,
        W / 2.0,
        xml_escape(&report.lemma_id),
        report.verdict
    );
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{} L{},{}  M{PAD},{} L{PAD},{PAD}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{fx:.2}</text><text x="{}" y="{:.1}" text-anchor="end">{fy:.2}</text>"#,
            sx(fx),
            H - PAD + 16.0,
            PAD - 6.0,
            sy(fy) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">index</text><text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">log2 estimate</text>"#,
        W / 2.0,
        H - 14.0,
        H / 2.0,
        H / 2.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(s, "<!-- series: {} -->", xml_comment(name));
        for (x, y) in pts {
            let _ = writeln!(s, "<!-- {x} {y} -->");
        }
        let poly: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" fill="none"/>"#,
            poly.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
        }
        let lin: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, y.exp2())).collect();
        if let Ok(fit) = fit_slope(&lin) {
            let (a, b) = (pts[0].0, pts[pts.len() - 1].0);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="4 3"/>"#,
                sx(a),
                sy(fit.intercept + fit.slope * a),
                sx(b),
                sy(fit.intercept + fit.slope * b)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            PAD + 8.0,
            PAD + 4.0 + 13.0 * i as f64,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn xml_comment(s: &str) -> String {
    s.replace("--", "- -")
}

/// Writes `estimates.csv`, `checks.csv`, `verdict.json` and `plot.svg` for
/// one lemma under `dir`.
pub fn write_lemma_report(report: &LemmaReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rows_csv(&report.rows, fs::File::create(dir.join(ROWS_FILE))?)?;
    write_checks_csv(&report.lemma_id, &report.checks, fs::File::create(dir.join(CHECKS_FILE))?)?;
    let summary = VerdictFile {
        lemma_id: report.lemma_id.clone(),
        verdict: report.verdict,
        anchor: report
            .lemma_id
            .parse::<LemmaId>()
            .map(|l| l.anchor().to_string())
            .unwrap_or_default(),
        checks: report.checks.clone(),
    };
    fs::write(dir.join(VERDICT_FILE), serde_json::to_string_pretty(&summary).map_err(json_err)?)?;
    fs::write(dir.join(PLOT_FILE), svg_plot(report))?;
    Ok(())
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Parse(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictFile {
    pub lemma_id: String,
    pub verdict: Verdict,
    pub anchor: String,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub build: String,
    pub command: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; the only field that differs between
    /// identical runs.
    pub timestamp: u64,
    pub config: serde_json::Value,
    pub files: Vec<String>,
}

/// Package version, profile and target, enough to tell builds apart.
pub fn build_id() -> String {
    format!(
        "{}-{}-{}-{}",
        env!("CARGO_PKG_VERSION"),
        if cfg!(debug_assertions) { "debug" } else { "release" },
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C, files: Vec<String>) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            build: build_id(),
            command: command.into(),
            seed,
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: serde_json::to_value(config).map_err(json_err)?,
            files,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self).map_err(json_err)?)?;
        Ok(())
    }
}

/// Every `verdict.json` directly under a subdirectory of `root`, sorted by path.
pub fn collect_verdicts(root: &Path) -> Result<Vec<(PathBuf, VerdictFile)>> {
    let mut out = Vec::new();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        let f = d.join(VERDICT_FILE);
        if f.is_file() {
            let v: VerdictFile = serde_json::from_str(&fs::read_to_string(&f)?).map_err(json_err)?;
            out.push((d, v));
        }
    }
    Ok(out)
}

/// Markdown summary of collected verdicts: one table row per lemma, then
/// every check, then the formula each lemma id stands for.
pub fn render_summary(verdicts: &[(PathBuf, VerdictFile)]) -> String {
    let mut s = String::from("# Verification summary\n\n| lemma | verdict | checks passed |\n|---|---|---|\n");
    for (_, v) in verdicts {
        let passed = v.checks.iter().filter(|c| c.verdict == Verdict::Pass).count();
        let _ = writeln!(s, "| {} | {} | {}/{} |", v.lemma_id, v.verdict, passed, v.checks.len());
    }
    s.push_str("\n## Checks\n\n| lemma | check | observed | bound | verdict | detail |\n|---|---|---|---|---|---|\n");
    for (_, v) in verdicts {
        for c in &v.checks {
            let _ = writeln!(
                s,
                "| {} | {} | {:.6} | {:.6} | {} | {} |",
                v.lemma_id,
                c.name.replace('|', "/"),
                c.observed,
                c.bound,
                c.verdict,
                c.detail.replace('|', "/")
            );
        }
    }
    s.push_str("\n## Formula map\n\n");
    for (_, v) in verdicts {
        let _ = writeln!(s, "- `{}`: {}", v.lemma_id, v.anchor);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::{verify_lemma, RateCheckSpec};

    fn sample_report() -> LemmaReport {
        let spec = RateCheckSpec {
            samples: 300,
            m_range: (2, 4),
            n_range: (1, 6),
            ..RateCheckSpec::default()
        };
        verify_lemma(LemmaId::Lem1a, &spec).unwrap()
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let report = sample_report();
        let mut buf = Vec::new();
        write_rows_csv(&report.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("lemma_id,quantity,m,n,q,x,estimate,stderr,samples,slope,verdict,anchor"));
        let back = read_rows_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), report.rows.len());
        for (a, b) in back.iter().zip(&report.rows) {
            assert_eq!(a.lemma_id, b.lemma_id);
            assert_eq!(a.estimate, b.estimate);
            assert_eq!(a.verdict, b.verdict);
            assert_eq!(a.anchor, b.anchor);
        }
    }

    #[test]
    fn plot_is_standalone_svg() {
        let svg = svg_plot(&sample_report());
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<!-- series:"));
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn summary_lists_each_lemma() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_report();
        write_lemma_report(&report, &dir.path().join("lem1a")).unwrap();
        let found = collect_verdicts(dir.path()).unwrap();
        assert_eq!(found.len(), 1);
        let md = render_summary(&found);
        assert!(md.contains("| lem1a |"));
        assert!(md.contains("Formula map"));
    }
}
