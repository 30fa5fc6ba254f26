//! Artifact emission: metrics JSON, training curves CSV and reward plots.
//!
//! Plots are plain hand-written SVG so the toolchain stays dependency-free;
//! one image per task shows the mean reward as episodes evolve.

use std::fs;
use std::path::{Path, PathBuf};

use crate::agent::TaskId;
use crate::error::{Error, Result};
use crate::learner::{write_curves, EpisodeCurve};

use super::evaluate::MetricsRecord;

/// What a report call produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub written: Vec<PathBuf>,
    pub notices: Vec<String>,
}

/// Writes `metrics.json`, `curves.csv` and one reward plot per task into
/// `out_dir` (created if missing). Plot generation is skipped with a notice
/// when a task has no curve points.
pub fn report(
    metrics: &MetricsRecord,
    curves: &[EpisodeCurve],
    out_dir: &Path,
) -> Result<ReportOutput> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut notices = Vec::new();

    let metrics_path = out_dir.join("metrics.json");
    let json = serde_json::to_string_pretty(metrics)
        .map_err(|e| Error::Data(format!("encode metrics: {e}")))?;
    fs::write(&metrics_path, json).map_err(|e| Error::io(&metrics_path, e))?;
    written.push(metrics_path);

    let curves_path = out_dir.join("curves.csv");
    write_curves(&curves_path, curves)?;
    written.push(curves_path);

    for (task, stem) in [
        (TaskId::Engagement, "reward_engagement"),
        (TaskId::Adoption, "reward_adoption"),
    ] {
        let points: Vec<(f64, f64)> = curves
            .iter()
            .filter(|c| c.task == task)
            .map(|c| (c.episode as f64, c.mean_reward))
            .collect();
        if points.is_empty() {
            notices.push(format!("no {task} curve points; plot skipped"));
            continue;
        }
        let title = format!("{task} reward per episode");
        let svg = line_plot_svg(&title, "episode", "mean reward", &points);
        let path = out_dir.join(format!("{stem}.svg"));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    Ok(ReportOutput { written, notices })
}

/// Reads metrics back; the round trip is exact for finite values.
pub fn read_metrics(path: &Path) -> Result<MetricsRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: parse metrics: {e}", path.display())))
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn line_plot_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let (x_min, x_max) = bounds(points.iter().map(|p| p.0));
    let (y_min, y_max) = bounds(points.iter().map(|p| p.1));
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let y_span = if y_max > y_min { y_max - y_min } else { 1.0 };
    let inner_w = PLOT_W - 2.0 * MARGIN;
    let inner_h = PLOT_H - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x_min) / x_span * inner_w;
    let py = |y: f64| PLOT_H - MARGIN - (y - y_min) / y_span * inner_h;

    let path: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
        .collect();

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        PLOT_W / 2.0,
        title
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = PLOT_H - MARGIN,
        r = PLOT_W - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        t = MARGIN,
        b = PLOT_H - MARGIN
    ));
    // extents
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN,
        PLOT_H - MARGIN + 20.0,
        trim_num(x_min)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        PLOT_W - MARGIN,
        PLOT_H - MARGIN + 20.0,
        trim_num(x_max)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
        MARGIN - 6.0,
        PLOT_H - MARGIN,
        trim_num(y_min)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
        MARGIN - 6.0,
        MARGIN + 4.0,
        trim_num(y_max)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        PLOT_W / 2.0,
        PLOT_H - 12.0,
        x_label
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        PLOT_H / 2.0,
        PLOT_H / 2.0,
        y_label
    ));
    if points.len() == 1 {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>\n",
            px(points[0].0),
            py(points[0].1)
        ));
    } else {
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

fn trim_num(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e9 {
        format!("{x:.0}")
    } else {
        format!("{x:.4}")
    }
}
