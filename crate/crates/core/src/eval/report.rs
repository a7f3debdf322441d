use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{report_files, DistanceMap, EvalError, EvalReport, EvalResult, MetricSummary};
use crate::fitting::DISTANCE_CLIP_MM;
use crate::mesh::io::save_ply_with_attributes;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn write(path: &Path, bytes: &[u8]) -> EvalResult<()> {
    std::fs::write(path, bytes).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

/// `k,metric,mean,std,n`, one row per k.
fn metric_csv(name: &str, rows: &[MetricSummary]) -> String {
    let mut s = String::from("k,metric,mean,std,n\n");
    for r in rows {
        let _ = writeln!(s, "{},{name},{},{},{}", r.k, opt(r.mean), opt(r.std), r.n);
    }
    s
}

fn compactness_rows(report: &EvalReport) -> Vec<MetricSummary> {
    report
        .component_counts
        .iter()
        .zip(&report.compactness)
        .map(|(&k, &c)| MetricSummary::from_values(k, &[c], 0))
        .collect()
}

const PANEL_W: f64 = 300.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 45.0;

fn panel(
    svg: &mut String,
    index: usize,
    title: &str,
    unit: &str,
    points: &[(f64, f64)],
    kmin: f64,
    kmax: f64,
) {
    let x0 = index as f64 * (PANEL_W + MARGIN) + MARGIN;
    let y0 = MARGIN;
    let (w, h) = (PANEL_W, PANEL_H);
    let ymax = points.iter().map(|p| p.1).fold(0.0, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.05 } else { 1.0 };
    let kspan = if kmax > kmin { kmax - kmin } else { 1.0 };
    let sx = |k: f64| x0 + (k - kmin) / kspan * w;
    let sy = |v: f64| y0 + h - v / ymax * h;
    let _ = writeln!(svg, r#"  <g id="{title}">"#);
    let _ = writeln!(
        svg,
        r#"    <rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"    <text x="{}" y="{}" text-anchor="middle">{title}</text>"#,
        x0 + w / 2.0,
        y0 - 10.0
    );
    let _ = writeln!(
        svg,
        r#"    <text x="{}" y="{}" text-anchor="middle">k</text>"#,
        x0 + w / 2.0,
        y0 + h + 30.0
    );
    let _ = writeln!(
        svg,
        r#"    <text x="{}" y="{}">{ymax:.3} {unit}</text>"#,
        x0 + 4.0,
        y0 + 14.0
    );
    let _ = writeln!(
        svg,
        r#"    <text x="{x0}" y="{}">{kmin}</text>"#,
        y0 + h + 15.0
    );
    let _ = writeln!(
        svg,
        r#"    <text x="{}" y="{}" text-anchor="end">{kmax}</text>"#,
        x0 + w,
        y0 + h + 15.0
    );
    let pts: Vec<String> = points
        .iter()
        .map(|&(k, v)| format!("{:.2},{:.2}", sx(k), sy(v)))
        .collect();
    let _ = writeln!(
        svg,
        r#"    <polyline class="metric" points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    );
    let _ = writeln!(svg, "  </g>");
}

/// Three panels (compactness, generalization, specificity against k), one polyline each.
pub fn render_svg(report: &EvalReport) -> String {
    let ks: Vec<f64> = report.component_counts.iter().map(|&k| k as f64).collect();
    let kmin = ks.iter().cloned().fold(f64::INFINITY, f64::min);
    let kmax = ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let series = |rows: &[MetricSummary]| -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| r.mean.map(|m| (r.k as f64, m)))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let mut compact: Vec<(f64, f64)> = ks
        .iter()
        .cloned()
        .zip(report.compactness.iter().cloned())
        .collect();
    compact.sort_by(|a, b| a.0.total_cmp(&b.0));
    let width = 3.0 * (PANEL_W + MARGIN) + MARGIN;
    let height = PANEL_H + 2.5 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    panel(&mut svg, 0, "compactness", "", &compact, kmin, kmax);
    panel(
        &mut svg,
        1,
        "generalization",
        "mm",
        &series(&report.generalization),
        kmin,
        kmax,
    );
    panel(
        &mut svg,
        2,
        "specificity",
        "mm",
        &series(&report.specificity),
        kmin,
        kmax,
    );
    svg.push_str("</svg>\n");
    svg
}

/// Write report.json, one CSV per metric, report.svg and a binary PLY per
/// distance map under `maps/` carrying `distance` (clipped at 4 mm) and
/// `distance_normalized` (clipped / 4) vertex attributes. Returns the
/// written paths relative to `out_dir`.
pub fn emit_report(
    report: &EvalReport,
    maps: &[DistanceMap],
    out_dir: &Path,
) -> EvalResult<Vec<PathBuf>> {
    report.validate()?;
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p).map_err(|e| EvalError::Io {
            path: p.display().to_string(),
            source: e,
        })
    };
    mkdir(out_dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| EvalError::Report {
        path: "report.json".into(),
        message: e.to_string(),
    })?;
    write(&out_dir.join("report.json"), json.as_bytes())?;
    write(
        &out_dir.join("compactness.csv"),
        metric_csv("compactness", &compactness_rows(report)).as_bytes(),
    )?;
    write(
        &out_dir.join("generalization.csv"),
        metric_csv("generalization", &report.generalization).as_bytes(),
    )?;
    write(
        &out_dir.join("specificity.csv"),
        metric_csv("specificity", &report.specificity).as_bytes(),
    )?;
    write(&out_dir.join("report.svg"), render_svg(report).as_bytes())?;
    if !maps.is_empty() {
        mkdir(&out_dir.join("maps"))?;
    }
    for m in maps {
        let clipped: Vec<f64> = m
            .distances
            .iter()
            .map(|d| d.min(DISTANCE_CLIP_MM))
            .collect();
        let normalized: Vec<f64> = clipped.iter().map(|d| d / DISTANCE_CLIP_MM).collect();
        let path = out_dir
            .join("maps")
            .join(format!("{}.distance.ply", m.name));
        save_ply_with_attributes(
            &m.mesh,
            &path,
            &[("distance", &clipped), ("distance_normalized", &normalized)],
        )?;
    }
    Ok(report_files(maps))
}

/// Parse a report written by [`emit_report`].
pub fn load_report(path: &Path) -> EvalResult<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let r: EvalReport = serde_json::from_str(&text).map_err(|e| EvalError::Report {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if r.schema_version != REPORT_SCHEMA_VERSION {
        return Err(EvalError::Report {
            path: path.display().to_string(),
            message: format!(
                "schema version {} (expected {REPORT_SCHEMA_VERSION})",
                r.schema_version
            ),
        });
    }
    Ok(r)
}
