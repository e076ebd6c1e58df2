//! Result tables, figure series and the run manifest.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::estimands::Estimand;
use crate::error::{Error, Result};
use crate::grid::GridResultRow;

pub const TABLE_HEADER: [&str; 13] = [
    "p",
    "phi",
    "estimand",
    "truth",
    "truth_mc_se",
    "mean_estimate",
    "bias",
    "sd_estimates",
    "mean_delta_se",
    "mean_delta_var",
    "replications",
    "dropped",
    "status",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// One row per `(p, phi, estimand)`. Floats use the shortest round-trip
/// representation, so reading the table back gives identical values.
pub fn emit_table(rows: &[GridResultRow], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(TABLE_HEADER)?;
    for r in rows {
        wtr.write_record([
            r.p.to_string(),
            r.phi.to_string(),
            r.estimand.to_string(),
            r.truth.to_string(),
            opt(r.truth_mc_se),
            r.mean_estimate.to_string(),
            r.bias.to_string(),
            r.sd_estimates.to_string(),
            opt(r.mean_delta_se),
            opt(r.mean_delta_var),
            r.replications.to_string(),
            r.dropped.to_string(),
            r.status.clone(),
        ])?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Vec<GridResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().ne(TABLE_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: "not a result table header".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Parse {
            line,
            message: format!("bad `{what}` value"),
        };
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(TABLE_HEADER[i]));
        let maybe = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let count = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(TABLE_HEADER[i]));
        rows.push(GridResultRow {
            p: num(0)?,
            phi: num(1)?,
            estimand: rec[2].parse::<Estimand>().map_err(|_| bad("estimand"))?,
            truth: num(3)?,
            truth_mc_se: maybe(4)?,
            mean_estimate: num(5)?,
            bias: num(6)?,
            sd_estimates: num(7)?,
            mean_delta_se: maybe(8)?,
            mean_delta_var: maybe(9)?,
            replications: count(10)?,
            dropped: count(11)?,
            status: rec[12].to_owned(),
        });
    }
    Ok(rows)
}

pub const DEFAULT_SERIES: [Estimand; 2] = [Estimand::Wcde, Estimand::Nde];

fn series_rows<'a>(rows: &'a [GridResultRow], series: &[Estimand]) -> Vec<&'a GridResultRow> {
    let mut out: Vec<&GridResultRow> = rows.iter().filter(|r| series.contains(&r.estimand)).collect();
    let pos = |e: Estimand| series.iter().position(|s| *s == e);
    out.sort_by(|a, b| {
        a.p.total_cmp(&b.p)
            .then(pos(a.estimand).cmp(&pos(b.estimand)))
            .then(a.phi.total_cmp(&b.phi))
    });
    out
}

/// Writes `p, estimand, phi, bias, sd` for each requested series.
pub fn emit_figure_data(rows: &[GridResultRow], path: &Path, series: &[Estimand]) -> Result<()> {
    let mut out = String::from("p,estimand,phi,bias,sd\n");
    for r in series_rows(rows, series) {
        let _ = writeln!(out, "{},{},{},{},{}", r.p, r.estimand, r.phi, r.bias, r.sd_estimates);
    }
    write_file(path, &out)
}

/// Bias against `phi` with one-sd error bars, one polyline per series.
pub fn render_svg(rows: &[GridResultRow], path: &Path, series: &[Estimand]) -> Result<()> {
    let rows: Vec<&GridResultRow> = series_rows(rows, series)
        .into_iter()
        .filter(|r| r.bias.is_finite() && r.sd_estimates.is_finite())
        .collect();
    let (w, h, margin) = (640.0, 420.0, 50.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for r in &rows {
        x0 = x0.min(r.phi);
        x1 = x1.max(r.phi);
        y0 = y0.min(r.bias - r.sd_estimates);
        y1 = y1.max(r.bias + r.sd_estimates);
    }
    if !x0.is_finite() || x1 <= x0 {
        x0 -= 1.0;
        x1 = x0 + 2.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| margin + (x - x0) / (x1 - x0) * (w - 2.0 * margin);
    let sy = |y: f64| h - margin - (y - y0) / (y1 - y0) * (h - 2.0 * margin);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4"/>"#,
        margin,
        sy(0.0),
        w - margin,
        sy(0.0)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">phi</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})">bias</text>"#,
        h / 2.0,
        h / 2.0
    );
    let mut legend_y = margin;
    for (k, est) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let mut pts: Vec<&&GridResultRow> = rows.iter().filter(|r| r.estimand == *est).collect();
        if pts.is_empty() {
            continue;
        }
        // Several p values would overlap; the first one wins.
        let p = pts[0].p;
        pts.retain(|r| r.p == p);
        let line: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.phi), sy(r.bias)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            line.join(" ")
        );
        for r in &pts {
            let x = sx(r.phi);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                sy(r.bias - r.sd_estimates),
                sy(r.bias + r.sd_estimates)
            );
            let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sy(r.bias));
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{legend_y}" fill="{color}" font-size="12">{est} (p={p})</text>"#,
            w - margin - 90.0
        );
        legend_y += 16.0;
    }
    svg.push_str("</svg>\n");
    write_file(path, &svg)
}

/// Everything needed to rerun a grid. Contains no timestamps so that two
/// runs with the same inputs produce identical bytes.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, S: Serialize, C: Serialize, O: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub spec: &'a S,
    pub config: &'a C,
    pub options: &'a O,
    pub outputs: Vec<String>,
}

pub fn write_manifest<S: Serialize, C: Serialize, O: Serialize>(
    path: &Path,
    spec: &S,
    config: &C,
    options: &O,
    outputs: Vec<String>,
) -> Result<()> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        spec,
        config,
        options,
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p: f64, phi: f64, estimand: Estimand, bias: f64) -> GridResultRow {
        GridResultRow {
            p,
            phi,
            estimand,
            truth: 0.7,
            truth_mc_se: Some(1e-4),
            mean_estimate: 0.7 + bias,
            bias,
            sd_estimates: 0.05,
            mean_delta_se: None,
            mean_delta_var: Some(0.0025),
            replications: 1000,
            dropped: 0,
            status: "ok".into(),
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        emit_table(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim_end(), TABLE_HEADER.join(","));
        assert!(read_table(&path).unwrap().is_empty());
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![row(0.5, -0.15, Estimand::Wcde, 0.1 + 0.2), row(0.5, 0.0, Estimand::Nde, -1e-17)];
        emit_table(&rows, &path).unwrap();
        assert_eq!(read_table(&path).unwrap(), rows);
    }

    #[test]
    fn single_row_figure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        emit_figure_data(&[row(0.5, 0.0, Estimand::Wcde, 0.01)], &path, &DEFAULT_SERIES).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "p,estimand,phi,bias,sd\n0.5,WCDE,0,0.01,0.05\n");
    }

    #[test]
    fn figure_filters_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let rows: Vec<GridResultRow> = [-0.1, 0.0, 0.1]
            .iter()
            .flat_map(|&phi| {
                [Estimand::Ate, Estimand::Wcde, Estimand::Nde]
                    .map(|e| row(0.5, phi, e, phi))
            })
            .collect();
        emit_figure_data(&rows, &path, &DEFAULT_SERIES).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(!text.contains("ATE"));
        let svg = dir.path().join("f.svg");
        render_svg(&rows, &svg, &DEFAULT_SERIES).unwrap();
        let svg = std::fs::read_to_string(svg).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let path = Path::new("/nonexistent-dir/x/t.csv");
        assert!(matches!(emit_table(&[], path), Err(Error::Io { .. })));
        assert!(matches!(emit_figure_data(&[], path, &DEFAULT_SERIES), Err(Error::Io { .. })));
    }
}
