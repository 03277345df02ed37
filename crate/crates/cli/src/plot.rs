//! Scatter-plot rendering to self-contained SVG.
//!
//! Two-column `x,y` files render as a single panel. Three-column
//! `slice,x,y` trajectory files render one panel per time slice, all sharing
//! axis limits so the marginals are visually comparable. No external assets
//! are referenced; the output is a single standalone `.svg` file.

use crate::csvio::{self, Table};
use crate::error::CliError;
use std::fmt::Write as _;
use std::path::Path;

const PANEL_SIZE: f64 = 200.0;
const MARGIN: f64 = 14.0;
const TITLE_H: f64 = 16.0;
const PANELS_PER_ROW: usize = 3;
const MARKER_R: f64 = 2.2;

/// Read a CSV file and write its scatter plot.
pub fn render_csv(input: &Path, out: &Path) -> Result<(), CliError> {
    let table = csvio::read_table(input)?;
    let svg = render_table(&table)?;
    std::fs::write(out, svg).map_err(|e| CliError::io(&format!("write {}", out.display()), e))
}

/// One named panel of points.
struct Panel {
    title: String,
    points: Vec<(f64, f64)>,
}

/// Render a parsed table to SVG text.
pub fn render_table(table: &Table) -> Result<String, CliError> {
    let panels = split_panels(table)?;
    Ok(render_panels(&panels))
}

fn split_panels(table: &Table) -> Result<Vec<Panel>, CliError> {
    let ncols = table.ncols();
    let is_trajectory = match &table.header {
        Some(h) => h.first().map(|c| c == "slice").unwrap_or(false),
        None => ncols == 3,
    };
    if is_trajectory && ncols != 3 {
        return Err(CliError::Config(format!(
            "trajectory plots need 3 columns (slice,x,y), got {ncols}"
        )));
    }
    if !is_trajectory && !(ncols == 2 || ncols == 0) {
        return Err(CliError::Config(format!(
            "point plots need 2 columns (x,y), got {ncols}"
        )));
    }

    if !is_trajectory {
        return Ok(vec![Panel {
            title: "points".into(),
            points: table.rows.iter().map(|r| (r[0], r[1])).collect(),
        }]);
    }

    // Group by integer slice index; panels appear in ascending slice order
    // and cover the full 0..=max range even if a slice happens to be empty.
    let mut max_slice = 0usize;
    for row in &table.rows {
        let s = row[0];
        if s < 0.0 || s.fract() != 0.0 || s > 1e6 {
            return Err(CliError::Config(format!(
                "slice indices must be small non-negative integers, got {s}"
            )));
        }
        max_slice = max_slice.max(s as usize);
    }
    let mut panels: Vec<Panel> = (0..=max_slice)
        .map(|s| Panel {
            title: format!("slice {s}"),
            points: Vec::new(),
        })
        .collect();
    for row in &table.rows {
        panels[row[0] as usize].points.push((row[1], row[2]));
    }
    Ok(panels)
}

/// Shared data bounds across panels, padded; defaults to [-1, 1]² when there
/// are no points or the extent degenerates.
fn bounds(panels: &[Panel]) -> (f64, f64, f64, f64) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in panels {
        for &(x, y) in &p.points {
            lo[0] = lo[0].min(x);
            hi[0] = hi[0].max(x);
            lo[1] = lo[1].min(y);
            hi[1] = hi[1].max(y);
        }
    }
    let mut out = (lo[0], hi[0], lo[1], hi[1]);
    if !out.0.is_finite() {
        return (-1.0, 1.0, -1.0, 1.0);
    }
    let pad = |l: &mut f64, h: &mut f64| {
        let extent = *h - *l;
        if extent <= 0.0 {
            *l -= 1.0;
            *h += 1.0;
        } else {
            *l -= 0.08 * extent;
            *h += 0.08 * extent;
        }
    };
    pad(&mut out.0, &mut out.1);
    pad(&mut out.2, &mut out.3);
    out
}

fn render_panels(panels: &[Panel]) -> String {
    let (x_lo, x_hi, y_lo, y_hi) = bounds(panels);
    let cols = panels.len().clamp(1, PANELS_PER_ROW);
    let rows = panels.len().div_ceil(PANELS_PER_ROW).max(1);
    let cell_w = PANEL_SIZE + 2.0 * MARGIN;
    let cell_h = PANEL_SIZE + TITLE_H + 2.0 * MARGIN;
    let width = cols as f64 * cell_w;
    let height = rows as f64 * cell_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    svg.push_str(
        "<style>\n\
         .frame { fill: #ffffff; stroke: #444444; stroke-width: 1; }\n\
         .title { font: 11px sans-serif; fill: #222222; }\n\
         .pt { fill: #3572a5; fill-opacity: 0.55; stroke: none; }\n\
         </style>\n",
    );
    let _ = writeln!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"#fafafa\"/>"
    );

    for (i, panel) in panels.iter().enumerate() {
        let gx = (i % PANELS_PER_ROW) as f64 * cell_w + MARGIN;
        let gy = (i / PANELS_PER_ROW) as f64 * cell_h + MARGIN;
        let _ = writeln!(svg, "<g class=\"panel\" transform=\"translate({gx:.1},{gy:.1})\">");
        let _ = writeln!(
            svg,
            "<text class=\"title\" x=\"0\" y=\"11\">{}</text>",
            panel.title
        );
        let _ = writeln!(
            svg,
            "<rect class=\"frame\" x=\"0\" y=\"{TITLE_H}\" width=\"{PANEL_SIZE}\" height=\"{PANEL_SIZE}\"/>"
        );
        for &(x, y) in &panel.points {
            let cx = (x - x_lo) / (x_hi - x_lo) * PANEL_SIZE;
            let cy = TITLE_H + (1.0 - (y - y_lo) / (y_hi - y_lo)) * PANEL_SIZE;
            let _ = writeln!(
                svg,
                "<circle class=\"pt\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{MARKER_R}\"/>"
            );
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}
