//! Plot-ready CSV and SVG emission from a trajectory CSV and its monitor JSONL.

use crate::audit::Monitor;
use crate::error::{Error, Result};
use crate::harness::{self, MonitorRow, MONITOR_FILE};
use crate::trainer::trajectory_columns;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// `log(‖w_sig‖/‖w_perp‖)` quantiles over steps.
    Ratio,
    /// `h_μ` for the four clusters.
    Margins,
    /// Lemma-monitor pass/fail raster.
    Monitors,
    All,
}

impl PlotKind {
    pub fn parse(s: &str) -> Option<PlotKind> {
        match s {
            "ratio" => Some(PlotKind::Ratio),
            "margins" => Some(PlotKind::Margins),
            "monitors" => Some(PlotKind::Monitors),
            "all" => Some(PlotKind::All),
            _ => None,
        }
    }

    fn expand(self) -> Vec<PlotKind> {
        match self {
            PlotKind::All => vec![PlotKind::Ratio, PlotKind::Margins, PlotKind::Monitors],
            k => vec![k],
        }
    }

    fn stem(self) -> &'static str {
        match self {
            PlotKind::Ratio => "ratio",
            PlotKind::Margins => "margins",
            PlotKind::Monitors => "monitors_raster",
            PlotKind::All => "all",
        }
    }
}

/// Margin legend order.
pub const MARGIN_SERIES: [(&str, &str); 4] = [("h_mu1", "μ1"), ("h_neg_mu1", "−μ1"), ("h_mu2", "μ2"), ("h_neg_mu2", "−μ2")];

const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

/// Parsed trajectory CSV: header checked against the trajectory schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn schema(path: &Path, reason: impl Into<String>) -> Error {
    Error::Schema { path: path.display().to_string(), reason: reason.into() }
}

/// Reads a trajectory CSV; a missing or mismatched header, a malformed row or zero rows is a
/// schema error.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(|e| schema(path, e.to_string()))?.iter().map(String::from).collect();
    let expected = trajectory_columns();
    if header.len() == 1 && header[0].is_empty() || header.is_empty() {
        return Err(schema(path, "empty file"));
    }
    if header != expected {
        return Err(schema(path, format!("header does not match the trajectory columns ({} found)", header.len())));
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| schema(path, e.to_string()))?;
        let row: std::result::Result<Vec<f64>, _> = rec.iter().map(|v| v.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|_| schema(path, format!("row {} is not numeric", n + 1)))?);
    }
    if rows.is_empty() {
        return Err(schema(path, "no data rows"));
    }
    Ok(Trajectory { columns: header, rows })
}

struct Series {
    name: String,
    color: &'static str,
    points: Vec<(f64, f64)>,
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn line_chart(title: &str, ylabel: &str, series: &[Series]) -> String {
    let (w, h, l, r, t, b) = (720.0, 420.0, 70.0, 150.0, 40.0, 50.0);
    let finite = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| l + (x - x0) / (x1 - x0) * (w - l - r);
    let py = |y: f64| h - b - (y - y0) / (y1 - y0) * (h - t - b);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - l - r,
        h - t - b
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, fmt(px(fx)), h - b + 18.0, fmt(fx));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 6.0, fmt(py(fy) + 4.0), format!("{fy:.3}"));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#, (l + w - r) / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(ylabel)
    );
    for (k, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{},{}", fmt(px(x)), fmt(py(y))))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, ser.color, pts.join(" "));
        }
        let ly = t + 16.0 + 20.0 * k as f64;
        let lx = w - r + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#, lx + 24.0, ser.color);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    w.write_record(header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn column(traj: &Trajectory, path: &Path, name: &str) -> Result<Vec<f64>> {
    traj.column(name).ok_or_else(|| schema(path, format!("missing column {name}")))
}

fn ratio_plot(traj: &Trajectory, path: &Path, csv_out: &Path) -> Result<String> {
    let steps = column(traj, path, "step")?;
    let names = [("log_ratio_q10", "10%"), ("log_ratio_q50", "median"), ("log_ratio_q90", "90%")];
    let cols: Vec<Vec<f64>> = names.iter().map(|(c, _)| column(traj, path, c)).collect::<Result<_>>()?;
    let rows: Vec<Vec<String>> =
        (0..steps.len()).map(|i| std::iter::once(steps[i]).chain(cols.iter().map(|c| c[i])).map(|v| v.to_string()).collect()).collect();
    write_table(csv_out, &["step", "q10", "q50", "q90"], &rows)?;
    let series: Vec<Series> = names
        .iter()
        .zip(&cols)
        .enumerate()
        .map(|(k, ((_, label), c))| Series {
            name: format!("{label} log(‖w_sig‖/‖w_perp‖)"),
            color: COLORS[k],
            points: steps.iter().copied().zip(c.iter().copied()).collect(),
        })
        .collect();
    Ok(line_chart("signal-to-noise ratio per neuron", "log ratio", &series))
}

fn margin_plot(traj: &Trajectory, path: &Path, csv_out: &Path) -> Result<String> {
    let steps = column(traj, path, "step")?;
    let cols: Vec<Vec<f64>> = MARGIN_SERIES.iter().map(|(c, _)| column(traj, path, c)).collect::<Result<_>>()?;
    let rows: Vec<Vec<String>> =
        (0..steps.len()).map(|i| std::iter::once(steps[i]).chain(cols.iter().map(|c| c[i])).map(|v| v.to_string()).collect()).collect();
    let mut header = vec!["step"];
    header.extend(MARGIN_SERIES.iter().map(|(c, _)| *c));
    write_table(csv_out, &header, &rows)?;
    let series: Vec<Series> = MARGIN_SERIES
        .iter()
        .zip(&cols)
        .enumerate()
        .map(|(k, ((_, label), c))| Series {
            name: format!("h {label}"),
            color: COLORS[k],
            points: steps.iter().copied().zip(c.iter().copied()).collect(),
        })
        .collect();
    Ok(line_chart("heavy-set margins", "h", &series))
}

fn monitor_plot(rows: &[MonitorRow], csv_out: &Path) -> Result<String> {
    let table: Vec<Vec<String>> =
        rows.iter().map(|r| vec![r.step.to_string(), r.monitor.clone(), (r.pass as u8).to_string()]).collect();
    write_table(csv_out, &["step", "monitor", "pass"], &table)?;
    let names: Vec<&str> = Monitor::ALL.iter().map(|m| m.name()).filter(|n| rows.iter().any(|r| r.monitor == *n)).collect();
    let steps: Vec<u64> = rows.iter().map(|r| r.step).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let cell: BTreeMap<(u64, &str), bool> = rows.iter().map(|r| ((r.step, r.monitor.as_str()), r.pass)).collect();
    let (l, t, cw, ch) = (150.0, 40.0, (600.0 / steps.len().max(1) as f64).clamp(1.0, 12.0), 16.0);
    let w = l + cw * steps.len() as f64 + 20.0;
    let h = t + ch * names.len() as f64 + 40.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#, w.max(320.0), h);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="10" y="22" font-size="14">lemma monitors (green pass, red fail)</text>"#);
    for (k, n) in names.iter().enumerate() {
        let y = t + ch * k as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 6.0, y + 12.0, n);
        for (i, st) in steps.iter().enumerate() {
            if let Some(&pass) = cell.get(&(*st, *n)) {
                let color = if pass { "#2ca02c" } else { "#d62728" };
                let _ = writeln!(s, r#"<rect x="{}" y="{y}" width="{cw}" height="{}" fill="{color}"/>"#, l + cw * i as f64, ch - 2.0);
            }
        }
    }
    if let (Some(a), Some(b)) = (steps.first(), steps.last()) {
        let _ = writeln!(s, r#"<text x="{l}" y="{}">step {a} … {b}</text>"#, h - 12.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Emits `<stem>.csv` and `<stem>.svg` per plot kind into `out_dir`; returns the SVG paths.
/// The monitor raster reads `monitors.jsonl` beside the trajectory CSV when present.
pub fn plot(csv_path: &Path, kind: PlotKind, out_dir: &Path, overwrite: bool) -> Result<Vec<PathBuf>> {
    let traj = read_trajectory(csv_path)?;
    let kinds = kind.expand();
    let names: Vec<String> = kinds.iter().flat_map(|k| [format!("{}.csv", k.stem()), format!("{}.svg", k.stem())]).collect();
    harness::prepare_output(out_dir, &names.iter().map(String::as_str).collect::<Vec<_>>(), overwrite)?;
    let mut out = Vec::new();
    for k in kinds {
        let csv_out = out_dir.join(format!("{}.csv", k.stem()));
        let svg = match k {
            PlotKind::Ratio => ratio_plot(&traj, csv_path, &csv_out)?,
            PlotKind::Margins => margin_plot(&traj, csv_path, &csv_out)?,
            PlotKind::Monitors => {
                let jsonl = csv_path.parent().unwrap_or(Path::new(".")).join(MONITOR_FILE);
                let rows = if jsonl.exists() { harness::read_monitors(&jsonl)? } else { Vec::new() };
                monitor_plot(&rows, &csv_out)?
            }
            PlotKind::All => unreachable!(),
        };
        let svg_path = out_dir.join(format!("{}.svg", k.stem()));
        std::fs::write(&svg_path, svg)?;
        out.push(svg_path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_traj(dir: &Path, rows: usize) -> PathBuf {
        let cols = trajectory_columns();
        let mut s = cols.join(",") + "\n";
        for i in 0..rows {
            let row: Vec<String> = (0..cols.len()).map(|c| if c == 0 { (10 * i).to_string() } else { (0.1 * (i + c) as f64).to_string() }).collect();
            s += &(row.join(",") + "\n");
        }
        let p = dir.join("trajectory.csv");
        std::fs::write(&p, s).unwrap();
        p
    }

    #[test]
    fn empty_and_mismatched_inputs_are_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(read_trajectory(&p), Err(Error::Schema { .. })));
        std::fs::write(&p, "step,foo\n1,2\n").unwrap();
        assert!(matches!(read_trajectory(&p), Err(Error::Schema { .. })));
        let ok = write_traj(dir.path(), 0);
        assert!(matches!(read_trajectory(&ok), Err(Error::Schema { .. })));
    }

    #[test]
    fn all_kinds_emit_three_svgs_and_margin_legend_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_traj(dir.path(), 5);
        let out = dir.path().join("plots");
        let svgs = plot(&p, PlotKind::All, &out, false).unwrap();
        assert_eq!(svgs.len(), 3);
        let m = std::fs::read_to_string(out.join("margins.svg")).unwrap();
        let pos: Vec<usize> = ["h μ1<", "h −μ1<", "h μ2<", "h −μ2<"].iter().map(|k| m.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        let csv = std::fs::read_to_string(out.join("margins.csv")).unwrap();
        assert!(csv.starts_with("step,h_mu1,h_neg_mu1,h_mu2,h_neg_mu2"));
        assert!(matches!(plot(&p, PlotKind::All, &out, false), Err(Error::WouldClobber(_))));
        plot(&p, PlotKind::Ratio, &out, true).unwrap();
    }
}
