//! Minimal SVG charts of simulated rates against age.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::mc::SimulationSummary;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#c0392b", "#2471a3", "#229954", "#7d3c98", "#d68910", "#566573"];

/// Restricts a summary over (..., region) to one region level.
pub fn region_cells(summary: &SimulationSummary, dim: &str, level: &str) -> Result<SimulationSummary> {
    let d = summary
        .dims
        .iter()
        .position(|x| x.name() == dim)
        .ok_or_else(|| Error::InvalidSpec(format!("summary has no dimension `{dim}`")))?;
    let pos = summary.dims[d].require_position(level)?;
    let shape: Vec<usize> = summary.dims.iter().map(|x| x.len()).collect();
    let stride: usize = shape[d + 1..].iter().product();
    let cells = summary
        .cells
        .iter()
        .enumerate()
        .filter(|(i, _)| (i / stride) % shape[d] == pos)
        .map(|(_, c)| c.clone())
        .collect();
    let mut dims = summary.dims.clone();
    dims.remove(d);
    Ok(SimulationSummary {
        dims,
        cells,
        ci_levels: summary.ci_levels.clone(),
        replicates: summary.replicates,
        seed: summary.seed,
    })
}

struct Series {
    label: String,
    points: Vec<(f64, f64, f64, f64)>,
}

/// Log-scale rate-by-age chart: one panel per gender, one line per smoker
/// level with a ribbon for the first CI level. Expects dimensions age,
/// gender and smoker.
pub fn rate_plot(title: &str, summary: &SimulationSummary) -> Result<String> {
    let idx = |name: &str| {
        summary
            .dims
            .iter()
            .position(|d| d.name() == name)
            .ok_or_else(|| Error::InvalidSpec(format!("plot needs dimension `{name}`")))
    };
    let (ia, ig, is) = (idx("age")?, idx("gender")?, idx("smoker")?);
    if summary.dims.len() != 3 {
        return Err(Error::InvalidSpec("plot expects age x gender x smoker".into()));
    }
    let shape: Vec<usize> = summary.dims.iter().map(|d| d.len()).collect();
    let genders = summary.dims[ig].levels();
    let smokers = summary.dims[is].levels();
    let mut panels: Vec<Vec<Series>> = genders
        .iter()
        .map(|_| {
            smokers
                .iter()
                .map(|s| Series {
                    label: s.clone(),
                    points: Vec::new(),
                })
                .collect()
        })
        .collect();
    for (flat, c) in summary.cells.iter().enumerate() {
        let mut rem = flat;
        let mut ix = [0; 3];
        for k in (0..3).rev() {
            ix[k] = rem % shape[k];
            rem /= shape[k];
        }
        let age: f64 = summary.dims[ia].levels()[ix[ia]].parse().unwrap_or(ix[ia] as f64);
        let (Some(mean), Some(Some((lo, hi)))) = (c.mean_rate(), c.rate_bounds.first()) else {
            continue;
        };
        panels[ix[ig]][ix[is]].points.push((age, mean, *lo, *hi));
    }
    let positive = panels
        .iter()
        .flatten()
        .flat_map(|s| s.points.iter().flat_map(|p| [p.1, p.2, p.3]))
        .filter(|v| *v > 0.0);
    let (ymin, ymax) = positive.fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let ages = panels.iter().flatten().flat_map(|s| s.points.iter().map(|p| p.0));
    let (xmin, xmax) = ages.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));

    let width = MARGIN + genders.len() as f64 * (PANEL_W + MARGIN);
    let height = PANEL_H + 2.5 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">Simulated mortality rates: {}</text>"#,
        width / 2.0,
        escape(title)
    );
    if !(ymin.is_finite() && ymax > 0.0 && xmin.is_finite()) {
        svg.push_str("<text x=\"60\" y=\"80\">no positive rates</text>\n</svg>\n");
        return Ok(svg);
    }
    // simulated rates of tiny cells can exceed one; the axis stops there
    let ly1 = ymax.log10().ceil().min(0.0);
    let ly0 = ymin.log10().floor().min(ly1 - 1.0);
    let xspan = (xmax - xmin).max(1.0);

    for (g, series) in panels.iter().enumerate() {
        let x0 = MARGIN + g as f64 * (PANEL_W + MARGIN);
        let y0 = 1.5 * MARGIN;
        let sx = |a: f64| x0 + (a - xmin) / xspan * PANEL_W;
        let sy = |r: f64| {
            let r = r.clamp(10f64.powf(ly0), 10f64.powf(ly1));
            y0 + PANEL_H - (r.log10() - ly0) / (ly1 - ly0) * PANEL_H
        };
        let _ = writeln!(
            svg,
            r##"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">gender {}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 6.0,
            escape(&genders[g])
        );
        let mut e = ly0 as i32;
        while e as f64 <= ly1 {
            let y = sy(10f64.powi(e));
            let _ = writeln!(
                svg,
                r##"<line x1="{x0}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#eee"/><text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
                x0 + PANEL_W,
                x0 - 4.0,
                y + 4.0
            );
            e += 1;
        }
        let _ = writeln!(
            svg,
            r#"<text x="{x0}" y="{}">{xmin}</text><text x="{}" y="{}" text-anchor="end">{xmax}</text><text x="{}" y="{}" text-anchor="middle">age</text>"#,
            y0 + PANEL_H + 14.0,
            x0 + PANEL_W,
            y0 + PANEL_H + 14.0,
            x0 + PANEL_W / 2.0,
            y0 + PANEL_H + 28.0
        );
        for (k, s) in series.iter().enumerate() {
            if s.points.is_empty() {
                continue;
            }
            let color = COLORS[k % COLORS.len()];
            let mut ribbon = String::new();
            for p in &s.points {
                let _ = write!(ribbon, "{:.2},{:.2} ", sx(p.0), sy(p.3));
            }
            for p in s.points.iter().rev() {
                let _ = write!(ribbon, "{:.2},{:.2} ", sx(p.0), sy(p.2));
            }
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                ribbon.trim_end()
            );
            // cells whose simulated mean is zero break the line
            for run in s.points.split(|p| p.1 <= 0.0).filter(|r| !r.is_empty()) {
                let line: Vec<String> = run
                    .iter()
                    .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
                    .collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    line.join(" ")
                );
            }
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" fill="{color}">smoker {}</text>"#,
                x0 + 8.0,
                y0 + 14.0 + 14.0 * k as f64,
                escape(&s.label)
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
