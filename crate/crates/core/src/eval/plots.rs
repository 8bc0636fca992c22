use std::path::Path;

use plotters::prelude::*;

use super::report::Histogram;
use crate::error::{OpgError, Result};

fn plot_err(path: &Path, e: impl std::fmt::Display) -> OpgError {
    OpgError::Serde(format!("plot {}: {e}", path.display()))
}

/// Overlaid seen/unseen score histograms, counts normalized per origin.
pub fn plot_histogram(hist: &Histogram, title: &str, path: &Path) -> Result<()> {
    let norm = |v: &[u64]| -> Vec<f64> {
        let total = v.iter().sum::<u64>().max(1) as f64;
        v.iter().map(|&c| c as f64 / total).collect()
    };
    let seen = norm(&hist.seen);
    let unseen = norm(&hist.unseen);
    let ymax = seen.iter().chain(&unseen).copied().fold(0.0f64, f64::max).max(1e-3) * 1.1;
    let width = 1.0 / hist.bins as f64;

    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0.0f64..1.0, 0.0f64..ymax)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("score")
        .y_desc("fraction")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    for (values, color, label) in [(&seen, BLUE, "seen"), (&unseen, RED, "unseen")] {
        chart
            .draw_series(values.iter().enumerate().map(|(i, &v)| {
                let x0 = i as f64 * width;
                Rectangle::new([(x0, 0.0), (x0 + width, v)], color.mix(0.45).filled())
            }))
            .map_err(|e| plot_err(path, e))?
            .label(label)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.mix(0.45).filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

/// One line per named curve of `(epoch, value)` points.
pub fn plot_curves(curves: &[(String, Vec<(f64, f64)>)], title: &str, y_desc: &str, path: &Path) -> Result<()> {
    let xs = curves.iter().flat_map(|c| c.1.iter().map(|p| p.0));
    let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (xmin, xmax) = if xmin.is_finite() {
        (xmin, xmax.max(xmin + 1.0))
    } else {
        (0.0, 1.0)
    };

    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(xmin..xmax, 0.0f64..1.0)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc(y_desc)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    for (i, (name, points)) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(path, e))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    if !curves.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(path, e))?;
    }
    root.present().map_err(|e| plot_err(path, e))
}

/// Bar per cell; failed cells are left empty.
pub fn plot_bars(cells: &[(String, Option<f64>)], title: &str, y_desc: &str, path: &Path) -> Result<()> {
    let n = cells.len().max(1);
    let root = SVGBackend::new(path, (120 + 110 * n as u32, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d((0..n).into_segmented(), 0.0f64..1.0)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) | SegmentValue::Exact(i) => {
                cells.get(*i).map(|c| c.0.clone()).unwrap_or_default()
            }
            SegmentValue::Last => String::new(),
        })
        .y_desc(y_desc)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    chart
        .draw_series(cells.iter().enumerate().filter_map(|(i, (_, v))| {
            v.map(|v| {
                let mut bar = Rectangle::new(
                    [(SegmentValue::Exact(i), 0.0), (SegmentValue::Exact(i + 1), v)],
                    BLUE.mix(0.6).filled(),
                );
                bar.set_margin(0, 0, 12, 12);
                bar
            })
        }))
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}
