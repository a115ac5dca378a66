//! Deterministic SVG line plots of metrics against NFE budgets, one line
//! per (sampler, transform, averaging) series.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::eval::CsvRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Metric columns that can be plotted.
pub const METRICS: [&str; 5] = ["mean_err", "cov_err", "spectrum_err", "sw_dist", "energy_dist"];

fn metric_value(row: &CsvRow, metric: &str) -> Result<f64> {
    Ok(match metric {
        "mean_err" => row.mean_err,
        "cov_err" => row.cov_err,
        "spectrum_err" => row.spectrum_err,
        "sw_dist" => row.sw_dist,
        "energy_dist" => row.energy_dist,
        other => return Err(Error::schema(format!("unknown metric '{other}'"))),
    })
}

fn series_key(row: &CsvRow) -> String {
    if row.transform == "none" && row.averaging == "none" {
        row.sampler.clone()
    } else {
        format!("{}/{}/{}", row.sampler, row.transform, row.averaging)
    }
}

/// Renders one metric as an SVG line plot (x: nfe, y: metric value,
/// averaged over seeds at equal nfe).
pub fn render_metric_svg(rows: &[CsvRow], metric: &str) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::schema("no rows to plot"));
    }
    // Group: series -> nfe -> values (across seeds).
    let mut series: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for row in rows {
        let v = metric_value(row, metric)?;
        series
            .entry(series_key(row))
            .or_default()
            .entry(row.nfe)
            .or_default()
            .push(v);
    }
    let points: BTreeMap<String, Vec<(f64, f64)>> = series
        .into_iter()
        .map(|(k, by_nfe)| {
            let pts = by_nfe
                .into_iter()
                .map(|(nfe, vs)| (nfe as f64, vs.iter().sum::<f64>() / vs.len() as f64))
                .collect();
            (k, pts)
        })
        .collect();

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for pts in points.values() {
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() || !y_min.is_finite() {
        return Err(Error::schema("non-finite values in plot data"));
    }
    // Degenerate extents (single point) get a unit pad.
    if x_max - x_min < 1e-12 {
        x_min -= 1.0;
        x_max += 1.0;
    }
    if y_max - y_min < 1e-12 {
        let pad = y_max.abs().max(1e-6) * 0.1;
        y_min -= pad;
        y_max += pad;
    }

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"20\" font-family=\"monospace\" font-size=\"14\">{metric} vs NFE</text>\n",
        MARGIN_L
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MARGIN_L,
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MARGIN_L, MARGIN_T, MARGIN_L,
        MARGIN_T + plot_h
    ));
    // Extent labels.
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\">{:.0}</text>\n",
        MARGIN_L,
        MARGIN_T + plot_h + 16.0,
        x_min
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{:.0}</text>\n",
        MARGIN_L + plot_w,
        MARGIN_T + plot_h + 16.0,
        x_max
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{y_max:.3e}</text>\n",
        MARGIN_L - 6.0,
        MARGIN_T + 4.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{y_min:.3e}</text>\n",
        MARGIN_L - 6.0,
        MARGIN_T + plot_h + 4.0
    ));

    for (idx, (name, pts)) in points.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in pts {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(x),
                sy(y)
            ));
        }
        let ly = MARGIN_T + 14.0 * idx as f64 + 10.0;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"3\" fill=\"{color}\"/>\n",
            MARGIN_L + plot_w + 10.0,
            ly - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\">{name}</text>\n",
            MARGIN_L + plot_w + 26.0,
            ly
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders every metric and returns `(file name, svg text)` pairs.
pub fn render_report(rows: &[CsvRow]) -> Result<Vec<(String, String)>> {
    METRICS
        .iter()
        .map(|m| Ok((format!("report_{m}.svg"), render_metric_svg(rows, m)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(sampler: &str, nfe: u64, val: f64, seed: u64) -> CsvRow {
        CsvRow {
            sampler: sampler.to_string(),
            transform: "none".to_string(),
            averaging: "none".to_string(),
            steps: (nfe / 2) as usize,
            nfe,
            mean_err: val,
            cov_err: val * 2.0,
            spectrum_err: val * 3.0,
            sw_dist: val * 4.0,
            energy_dist: val * 5.0,
            seed,
        }
    }

    #[test]
    fn single_row_gives_single_point_plot() {
        let rows = vec![row("ddim", 8, 0.5, 0)];
        let svg = render_metric_svg(&rows, "mean_err").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn two_samplers_three_budgets() {
        let mut rows = Vec::new();
        for (i, s) in ["ddim", "cov_aware"].iter().enumerate() {
            for (j, nfe) in [8u64, 16, 24].iter().enumerate() {
                rows.push(row(s, *nfe, 0.1 * (i + 1) as f64 / (j + 1) as f64, 0));
            }
        }
        let svg = render_metric_svg(&rows, "spectrum_err").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2, "two lines");
        assert_eq!(svg.matches("<circle").count(), 6, "three points each");
    }

    #[test]
    fn seeds_are_averaged_per_budget() {
        let rows = vec![row("ddim", 8, 0.2, 0), row("ddim", 8, 0.4, 1)];
        let svg = render_metric_svg(&rows, "mean_err").unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn unknown_metric_is_schema_error() {
        let rows = vec![row("ddim", 8, 0.5, 0)];
        assert!(render_metric_svg(&rows, "fid").is_err());
    }

    #[test]
    fn deterministic_output() {
        let rows = vec![row("ddim", 8, 0.5, 0), row("heun", 16, 0.25, 0)];
        let a = render_report(&rows).unwrap();
        let b = render_report(&rows).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }
}
