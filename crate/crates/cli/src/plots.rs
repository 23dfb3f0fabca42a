use std::path::Path;

use molfuse::training::AblationReport;
use plotters::prelude::*;

type PlotResult = Result<(), Box<dyn std::error::Error>>;

const GEOMETRY: RGBColor = RGBColor(76, 114, 176);
const MULTIMODAL: RGBColor = RGBColor(221, 132, 82);

/// Grouped bars: geometry-only and multimodal MAE per target, each target
/// scaled to its geometry-only MAE so targets with different units share
/// one axis.
pub fn mae_bars(path: &Path, report: &AblationReport) -> PlotResult {
    let n = report.rows.len().max(1);
    let top = report
        .rows
        .iter()
        .map(|r| (r.mae_multimodal / r.mae_geometry).max(1.0))
        .fold(1.0, f64::max)
        * 1.15;
    let root = SVGBackend::new(path, (160 + 120 * n as u32, 400)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("MAE relative to geometry-only", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0f64..n as f64, 0f64..top)?;
    let labels: Vec<&str> = report.rows.iter().map(|r| r.target.name()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            labels.get(i).map(|s| s.to_string()).unwrap_or_default()
        })
        .y_desc("MAE / geometry-only MAE")
        .draw()?;
    for (i, r) in report.rows.iter().enumerate() {
        let x = i as f64;
        chart.draw_series([
            Rectangle::new([(x + 0.15, 0.0), (x + 0.5, 1.0)], GEOMETRY.filled()),
            Rectangle::new(
                [(x + 0.5, 0.0), (x + 0.85, r.mae_multimodal / r.mae_geometry)],
                MULTIMODAL.filled(),
            ),
        ])?;
    }
    chart
        .draw_series(std::iter::once(Rectangle::new([(0.0, 0.0), (0.0, 0.0)], GEOMETRY.filled())))?
        .label("geometry-only")
        .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], GEOMETRY.filled()));
    chart
        .draw_series(std::iter::once(Rectangle::new([(0.0, 0.0), (0.0, 0.0)], MULTIMODAL.filled())))?
        .label("multimodal")
        .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], MULTIMODAL.filled()));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

/// Histogram of per-molecule mean gate values on [0, 1].
pub fn gate_histogram(path: &Path, gates: &[f64]) -> PlotResult {
    const BINS: usize = 20;
    let mut counts = [0u32; BINS];
    for &g in gates {
        let b = ((g.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1);
        counts[b] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) + 1;
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Mean gate value per held-out molecule", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0f64..1f64, 0u32..top)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_desc("mean gate (1 = geometry)")
        .y_desc("molecules")
        .draw()?;
    chart.draw_series(counts.iter().enumerate().map(|(b, &c)| {
        let lo = b as f64 / BINS as f64;
        Rectangle::new([(lo, 0), (lo + 1.0 / BINS as f64, c)], MULTIMODAL.filled())
    }))?;
    root.present()?;
    Ok(())
}
