use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

/// One named polyline.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Groups `(group, x, y)` triples into series, keeping first-seen order.
pub fn group(rows: impl IntoIterator<Item = (String, f64, f64)>) -> Vec<Series> {
    let mut order = Vec::new();
    let mut map: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (g, x, y) in rows {
        if !map.contains_key(&g) {
            order.push(g.clone());
        }
        map.entry(g).or_default().push((x, y));
    }
    order.into_iter().map(|name| Series { points: map.remove(&name).unwrap_or_default(), name }).collect()
}

/// Static line plot with a logarithmic y axis. Non-positive values are
/// clamped to the lower edge of the axis.
pub fn log_plot(path: &Path, title: &str, x_label: &str, series: &[Series]) -> Result<(), String> {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    if all.is_empty() {
        return Err("nothing to plot".into());
    }
    let (x0, x1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let positive = all.iter().map(|p| p.1).filter(|v| *v > 0.0);
    let y_min = positive.clone().fold(f64::INFINITY, f64::min).max(1e-9);
    let y_max = positive.fold(0.0, f64::max).max(y_min * 10.0);
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x0 + 1.0) };
    let err = |e: &dyn std::fmt::Display| e.to_string();

    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, (y_min / 2.0..y_max * 2.0).log_scale())
        .map_err(|e| err(&e))?;
    chart.configure_mesh().x_desc(x_label).y_desc("SER").draw().map_err(|e| err(&e))?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64)> = s.points.iter().map(|&(x, y)| (x, y.max(y_min / 2.0))).collect();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(s.name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}
