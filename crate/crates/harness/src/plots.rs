//! Minimal deterministic SVG rendering: time-series plots of the logged
//! quantities and the sweep heat map. Identical inputs produce identical
//! bytes.

use stride_core::sim::TrajectoryLog;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("empty log: nothing to plot")]
    EmptyLog,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 56.0;

fn axis_range(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Render one or more named series over a shared time axis.
pub fn line_plot(title: &str, ts: &[f64], series: &[(&str, Vec<f64>)]) -> Result<String, PlotError> {
    if ts.is_empty() || series.is_empty() || series.iter().any(|(_, v)| v.len() != ts.len()) {
        return Err(PlotError::EmptyLog);
    }
    let (t0, t1) = axis_range(ts);
    let mut all = Vec::new();
    for (_, v) in series {
        all.extend_from_slice(v);
    }
    let (y0, y1) = axis_range(&all);
    let sx = |t: f64| MARGIN + (t - t0) / (t1 - t0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let colors = ["#1f6fb2", "#c23b22", "#3a8c3f", "#7a4fa3"];
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        MARGIN, title
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    ));
    for k in 0..=4 {
        let ty = y0 + (y1 - y0) * k as f64 / 4.0;
        let yy = sy(ty);
        svg.push_str(&format!(
            "<text x=\"6\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>\n",
            yy + 4.0,
            ty
        ));
        let tx = t0 + (t1 - t0) * k as f64 / 4.0;
        let xx = sx(tx);
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>\n",
            xx - 10.0,
            HEIGHT - MARGIN + 18.0,
            tx
        ));
    }
    for (i, (name, values)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let mut points = String::new();
        for (t, v) in ts.iter().zip(values) {
            points.push_str(&format!("{:.2},{:.2} ", sx(*t), sy(*v)));
        }
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.trim_end()
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN - 120.0,
            MARGIN + 16.0 * (i + 1) as f64,
            name
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// The standard time-series set mirroring the quantities reported for the
/// closed-loop experiments: pitch, torso height, forward velocity.
pub fn scenario_plots(log: &TrajectoryLog) -> Result<Vec<(String, String)>, PlotError> {
    if log.rows.is_empty() {
        return Err(PlotError::EmptyLog);
    }
    let ts: Vec<f64> = log.rows.iter().map(|r| r.t).collect();
    let pitch: Vec<f64> = log.rows.iter().map(|r| r.state.rpy.y).collect();
    let height: Vec<f64> = log.rows.iter().map(|r| r.state.com_position.z).collect();
    let vx: Vec<f64> = log.rows.iter().map(|r| r.state.com_velocity.x).collect();
    Ok(vec![
        ("pitch.svg".to_string(), line_plot("torso pitch (rad)", &ts, &[("pitch", pitch)])?),
        ("height.svg".to_string(), line_plot("torso height (m)", &ts, &[("height", height)])?),
        (
            "velocity.svg".to_string(),
            line_plot("forward velocity (m/s)", &ts, &[("vx", vx)])?,
        ),
    ])
}

/// Sweep heat map: one colored cell per (F_x, tau_y) outcome.
pub fn heat_map(
    fx_values: &[f64],
    ty_values: &[f64],
    cell_color: impl Fn(usize, usize) -> &'static str,
) -> String {
    let nx = fx_values.len().max(1);
    let ny = ty_values.len().max(1);
    let cw = (WIDTH - 2.0 * MARGIN) / nx as f64;
    let ch = (HEIGHT - 2.0 * MARGIN) / ny as f64;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">disturbance survival (green = survived)</text>\n",
        MARGIN
    ));
    for (i, _fx) in fx_values.iter().enumerate() {
        for (j, _ty) in ty_values.iter().enumerate() {
            let x = MARGIN + i as f64 * cw;
            // Torque grows upward.
            let y = HEIGHT - MARGIN - (j + 1) as f64 * ch;
            svg.push_str(&format!(
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"{}\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n",
                cell_color(i, j)
            ));
        }
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">F_x: {:.0} .. {:.0} N</text>\n",
        MARGIN,
        HEIGHT - 18.0,
        fx_values.first().copied().unwrap_or(0.0),
        fx_values.last().copied().unwrap_or(0.0)
    ));
    svg.push_str(&format!(
        "<text x=\"8\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">tau_y: {:.0} .. {:.0} N m</text>\n",
        MARGIN - 8.0,
        ty_values.first().copied().unwrap_or(0.0),
        ty_values.last().copied().unwrap_or(0.0)
    ));
    svg.push_str("</svg>\n");
    svg
}
