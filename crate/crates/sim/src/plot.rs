//! SVG plots of a telemetry file: distances against their safe values,
//! reflected force magnitudes and tip/target paths.

use std::ops::Range;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use thiserror::Error;

use crate::telemetry::Telemetry;

const SIZE: (u32, u32) = (1000, 600);
const MAX_POINTS: usize = 2000;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("{path}: {message}")]
    Draw { path: String, message: String },
    #[error("telemetry has no records")]
    Empty,
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
}

fn stride(n: usize) -> usize {
    n.div_ceil(MAX_POINTS).max(1)
}

fn series(t: &Telemetry, x: &[f64], column: &str, label: String, dashed: bool) -> Option<Series> {
    let y = t.column(column)?;
    let s = stride(x.len());
    Some(Series { label, points: x.iter().zip(&y).step_by(s).map(|(a, b)| (*a, *b)).collect(), dashed })
}

fn bounds(values: impl Iterator<Item = f64>) -> Range<f64> {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad)..(hi + pad)
}

fn draw(path: &Path, title: &str, x_label: &str, y_label: &str, lines: &[Series]) -> Result<(), PlotError> {
    let err = |e: &dyn std::fmt::Display| PlotError::Draw { path: path.display().to_string(), message: e.to_string() };
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let xs = bounds(lines.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let ys = bounds(lines.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(xs, ys)
        .map_err(|e| err(&e))?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| err(&e))?;
    for (i, s) in lines.iter().enumerate() {
        let color = Palette99::pick(if s.dashed { i.saturating_sub(1) } else { i }).to_rgba();
        let style = color.stroke_width(if s.dashed { 1 } else { 2 });
        let anno = if s.dashed {
            chart.draw_series(DashedLineSeries::new(s.points.iter().copied(), 6, 4, style))
        } else {
            chart.draw_series(LineSeries::new(s.points.iter().copied(), style))
        }
        .map_err(|e| err(&e))?;
        anno.label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Write `<stem>-distance.svg`, `<stem>-force.svg` and
/// `<stem>-trajectory.svg` into `dir` and return their paths.
pub fn render_all(t: &Telemetry, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, PlotError> {
    if t.records.is_empty() {
        return Err(PlotError::Empty);
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| PlotError::Draw { path: dir.display().to_string(), message: e.to_string() })?;
    let time = t.times();
    let mut written = Vec::new();

    let mut lines = Vec::new();
    for row in t.schema.rows() {
        lines.extend(series(t, &time, &format!("d.{row}"), row.clone(), false));
        lines.extend(series(t, &time, &format!("d_safe.{row}"), format!("{row} safe"), true));
    }
    let path = dir.join(format!("{stem}-distance.svg"));
    draw(&path, "Constraint distances", "time [s]", "distance", &lines)?;
    written.push(path);

    let s = stride(time.len());
    let mut lines = Vec::new();
    for id in t.schema.robots() {
        let cols = t.schema.robot_columns(&id).expect("robot columns");
        let points = t.records.iter().step_by(s).map(|r| (r.time, r.vec3(cols.force).norm())).collect();
        lines.push(Series { label: format!("|force| {id}"), points, dashed: false });
    }
    let path = dir.join(format!("{stem}-force.svg"));
    draw(&path, "Reflected force", "time [s]", "force [N]", &lines)?;
    written.push(path);

    let mut lines = Vec::new();
    for id in t.schema.robots() {
        let cols = t.schema.robot_columns(&id).expect("robot columns");
        let xy = |at: usize| t.records.iter().step_by(s).map(|r| (r.values[at], r.values[at + 1])).collect();
        lines.push(Series { label: format!("tip {id}"), points: xy(cols.tip), dashed: false });
        lines.push(Series { label: format!("target {id}"), points: xy(cols.target), dashed: true });
    }
    let path = dir.join(format!("{stem}-trajectory.svg"));
    draw(&path, "Tip and target, top view", "x [m]", "y [m]", &lines)?;
    written.push(path);

    Ok(written)
}
