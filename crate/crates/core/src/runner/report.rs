use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MetricRecord;

use super::read_metric_log;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub split: String,
    pub feedback: Option<String>,
    pub count: usize,
    pub first: f64,
    pub last: f64,
    pub last_iteration: usize,
    pub max: f64,
}

/// One summary per `(metric, split, feedback)` series, sorted by key.
pub fn summarize_metrics(records: &[MetricRecord]) -> Vec<MetricSummary> {
    let mut series: BTreeMap<(String, String, Option<String>), Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        series
            .entry((r.metric.clone(), r.split.clone(), r.feedback.clone()))
            .or_default()
            .push(r);
    }
    series
        .into_iter()
        .map(|((metric, split, feedback), rs)| {
            let last = rs[rs.len() - 1];
            MetricSummary {
                metric,
                split,
                feedback,
                count: rs.len(),
                first: rs[0].value,
                last: last.value,
                last_iteration: last.iteration,
                max: rs.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// CTR-versus-iteration curves for every split that logged `ctr`.
pub fn ctr_curve_svg(records: &[MetricRecord]) -> Option<String> {
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.metric == "ctr") {
        series.entry(&r.split).or_default().push((r.iteration as f64, r.value));
    }
    if series.is_empty() {
        return None;
    }
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let max_x = series.values().flatten().map(|p| p.0).fold(1.0, f64::max);
    let max_y = series.values().flatten().map(|p| p.1).fold(0.0, f64::max).max(1e-9);
    let sx = |x: f64| pad + x / max_x * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - y / max_y * (h - 2.0 * pad);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {pad} V{} H{}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">iteration (0 to {max_x})</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(svg, r#"<text x="15" y="{pad}" >CTR (max {max_y:.3})</text>"#);
    for (i, (split, pts)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="2"/>"#, d.join(" "));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{split}</text>"#,
            w - pad - 60.0,
            pad + 15.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

/// Renders a summary table of a metric log and optionally writes the CTR plot.
pub fn command_report(metrics: &Path, plot: Option<&Path>) -> Result<String> {
    let records = read_metric_log(metrics)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!("{} holds no metric records", metrics.display())));
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<6} {:<9} {:>6} {:>10} {:>10} {:>10}",
        "metric", "split", "feedback", "count", "first", "last", "max"
    );
    for s in summarize_metrics(&records) {
        let _ = writeln!(
            out,
            "{:<16} {:<6} {:<9} {:>6} {:>10.4} {:>10.4} {:>10.4}",
            s.metric,
            s.split,
            s.feedback.as_deref().unwrap_or("-"),
            s.count,
            s.first,
            s.last,
            s.max
        );
    }
    if let Some(path) = plot {
        let svg = ctr_curve_svg(&records)
            .ok_or_else(|| Error::invalid("the metric log has no `ctr` records to plot"))?;
        std::fs::write(path, svg)?;
    }
    Ok(out)
}
