//! SVG figures for the CSV artifacts.

use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;
use risnoma::experiment::{BeampatternTable, SweepTable};
use risnoma::linalg::RMat;

fn err<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow!("plot: {e}")
}

pub fn beampattern(table: &BeampatternTable, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Normalized beampattern", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(-90f64..90f64, 0f64..1.05f64)
        .map_err(err)?;
    chart.configure_mesh().x_desc("angle (deg)").y_desc("gain").draw().map_err(err)?;
    let deg: Vec<f64> = table.angles.iter().map(|a| a.to_degrees()).collect();
    chart
        .draw_series(LineSeries::new(deg.iter().cloned().zip(table.mask.iter().cloned()), BLACK.mix(0.4)))
        .map_err(err)?
        .label("desired")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], BLACK.mix(0.4)));
    for (i, (m, _, norm, _)) in table.curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(deg.iter().cloned().zip(norm.iter().cloned()), color))
            .map_err(err)?
            .label(format!("M = {m}"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
    }
    chart.configure_series_labels().border_style(BLACK).draw().map_err(err)?;
    root.present().map_err(err)
}

pub fn sweep(table: &SweepTable, path: &Path) -> Result<()> {
    let rows = &table.rows;
    let (lo, hi) = rows.iter().fold((f64::INFINITY, 0f64), |(lo, hi), r| {
        (lo.min(r.mean_noma.min(r.mean_baseline)), hi.max(r.mean_noma.max(r.mean_baseline)))
    });
    if !lo.is_finite() || rows.is_empty() {
        return Err(anyhow!("plot: no completed trials"));
    }
    let (m0, m1) = (rows[0].m as f64, rows[rows.len() - 1].m as f64);
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Min beampattern gain vs RIS size", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(70)
        .build_cartesian_2d(m0 - 1.0..m1 + 1.0, lo * 0.9..hi * 1.1)
        .map_err(err)?;
    chart.configure_mesh().x_desc("M").y_desc("gain (W)").draw().map_err(err)?;
    let series = [("NOMA", RED), ("orthogonal", BLUE)];
    for (idx, (name, color)) in series.into_iter().enumerate() {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.m as f64, if idx == 0 { r.mean_noma } else { r.mean_baseline }))
            .collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color))
            .map_err(err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
        chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled()))).map_err(err)?;
    }
    chart.configure_series_labels().border_style(BLACK).draw().map_err(err)?;
    root.present().map_err(err)
}

pub fn heatmap(xs: &[f64], ys: &[f64], map: &RMat, path: &Path) -> Result<()> {
    let (nx, ny) = (xs.len(), ys.len());
    if nx < 2 || ny < 2 {
        return Err(anyhow!("plot: heatmap needs at least 2x2 points"));
    }
    let (dx, dy) = (xs[1] - xs[0], ys[1] - ys[0]);
    let root = SVGBackend::new(path, (800, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Illumination", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(xs[0] - dx / 2.0..xs[nx - 1] + dx / 2.0, ys[0] - dy / 2.0..ys[ny - 1] + dy / 2.0)
        .map_err(err)?;
    chart.configure_mesh().disable_mesh().x_desc("x (m)").y_desc("y (m)").draw().map_err(err)?;
    let cells = (0..ny).flat_map(|i| (0..nx).map(move |j| (i, j))).map(|(i, j)| {
        let v = map[(i, j)].clamp(0.0, 1.0);
        let c = ViridisRGB::get_color(v);
        Rectangle::new(
            [(xs[j] - dx / 2.0, ys[i] - dy / 2.0), (xs[j] + dx / 2.0, ys[i] + dy / 2.0)],
            c.filled(),
        )
    });
    chart.draw_series(cells).map_err(err)?;
    root.present().map_err(err)
}
