//! Standalone SVG emission for one sweep: solid polylines for the empirical
//! means (multi in green, single in orange) against the left axis, dashed
//! polylines for the theory bounds against a right axis, log-scaled where
//! the sweep axis is n or K.

use super::{Estimator, Strategy, SweepRow};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 70.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;

const MULTI_COLOR: &str = "#2ca02c";
const SINGLE_COLOR: &str = "#ff7f0e";

#[derive(Clone, Debug)]
pub struct SvgStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl Default for SvgStyle {
    fn default() -> Self {
        SvgStyle {
            title: "average TV error".into(),
            x_label: "axis".into(),
            y_label: "average TV error".into(),
        }
    }
}

struct Scale {
    lo: f64,
    hi: f64,
    log: bool,
    pixel_lo: f64,
    pixel_hi: f64,
}

impl Scale {
    fn new(values: &[f64], log: bool, pixel_lo: f64, pixel_hi: f64) -> Result<Scale> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in values {
            if log && v <= 0.0 {
                return Err(Error::invalid("log scale requires positive values"));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("no finite values to plot"));
        }
        if lo == hi {
            // Degenerate range: widen symmetrically.
            if log {
                lo /= 2.0;
                hi *= 2.0;
            } else {
                lo -= 0.5;
                hi += 0.5;
            }
        }
        Ok(Scale {
            lo,
            hi,
            log,
            pixel_lo,
            pixel_hi,
        })
    }

    fn project(&self, v: f64) -> f64 {
        let t = if self.log {
            (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        };
        self.pixel_lo + t * (self.pixel_hi - self.pixel_lo)
    }

    fn ticks(&self, count: usize) -> Vec<f64> {
        (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                if self.log {
                    (self.lo.ln() + t * (self.hi.ln() - self.lo.ln())).exp()
                } else {
                    self.lo + t * (self.hi - self.lo)
                }
            })
            .collect()
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn polyline(points: &[(f64, f64)], color: &str, dashed: bool) -> String {
    let pts: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    let dash = if dashed {
        " stroke-dasharray=\"7,4\""
    } else {
        ""
    };
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash} points=\"{}\" />\n",
        pts.join(" ")
    )
}

/// Render one sweep as a standalone SVG. Rows must come from a single sweep
/// (one axis); empty input is an error rather than an empty image.
pub fn svg_text(rows: &[SweepRow], style: &SvgStyle) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("no rows to plot"));
    }
    let axis_name = rows[0].axis_name.clone();
    if rows.iter().any(|r| r.axis_name != axis_name) {
        return Err(Error::invalid("rows span multiple sweep axes"));
    }
    // Plot the simulation-protocol estimator when present, the exact oracle
    // otherwise.
    let has_mc = rows.iter().any(|r| r.estimator == Estimator::MonteCarlo);
    let estimator = if has_mc {
        Estimator::MonteCarlo
    } else {
        Estimator::Exact
    };
    let log_axis = axis_name == "n" || axis_name == "K";

    let mut series: Vec<(Strategy, Vec<(f64, f64)>)> = Vec::new();
    let mut theory: Vec<(Strategy, Vec<(f64, f64)>)> = Vec::new();
    for strategy in [Strategy::Multi, Strategy::Single] {
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.strategy == strategy && r.estimator == estimator)
            .map(|r| (r.axis_value, r.mean_tv))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !pts.is_empty() {
            series.push((strategy, pts));
        }
        let mut tpts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.strategy == strategy && r.estimator == estimator)
            .filter_map(|r| r.theory_bound.map(|b| (r.axis_value, b)))
            .collect();
        tpts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !tpts.is_empty() {
            theory.push((strategy, tpts));
        }
    }

    let xs: Vec<f64> = series
        .iter()
        .chain(theory.iter())
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.1))
        .collect();
    let x_scale = Scale::new(&xs, log_axis, MARGIN_L, WIDTH - MARGIN_R)?;
    // Empirical TVs can hit exactly 0 (estimate == truth); keep the left
    // axis linear in that case even on n/K panels.
    let y_log = log_axis && ys.iter().all(|&v| v > 0.0);
    let y_scale = Scale::new(&ys, y_log, HEIGHT - MARGIN_B, MARGIN_T)?;

    let mut out = String::new();
    write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    )
    .unwrap();
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\" />\n");
    write!(
        out,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(&style.title)
    )
    .unwrap();

    // Axes.
    write!(
        out,
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" />\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    )
    .unwrap();
    write!(
        out,
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\" />\n",
        HEIGHT - MARGIN_B
    )
    .unwrap();

    // X ticks at the axis values themselves (they are few).
    let mut xticks: Vec<f64> = xs.clone();
    xticks.sort_by(f64::total_cmp);
    xticks.dedup();
    for v in &xticks {
        let px = x_scale.project(*v);
        write!(
            out,
            "<line x1=\"{px:.2}\" y1=\"{}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"black\" />\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        )
        .unwrap();
        write!(
            out,
            "<text x=\"{px:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            HEIGHT - MARGIN_B + 18.0,
            tick_label(*v)
        )
        .unwrap();
    }
    for v in y_scale.ticks(5) {
        let py = y_scale.project(v);
        write!(
            out,
            "<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{MARGIN_L}\" y2=\"{py:.2}\" stroke=\"black\" />\n",
            MARGIN_L - 5.0
        )
        .unwrap();
        write!(
            out,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            MARGIN_L - 8.0,
            py + 4.0,
            tick_label(v)
        )
        .unwrap();
    }

    // Axis labels.
    write!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 18.0,
        xml_escape(&style.x_label)
    )
    .unwrap();
    write!(
        out,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        xml_escape(&style.y_label)
    )
    .unwrap();

    // Empirical series (left axis, solid).
    for (strategy, pts) in &series {
        let color = match strategy {
            Strategy::Multi => MULTI_COLOR,
            Strategy::Single => SINGLE_COLOR,
        };
        let projected: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(x, y)| (x_scale.project(x), y_scale.project(y)))
            .collect();
        out.push_str(&polyline(&projected, color, false));
    }

    // Theory series (right axis, dashed).
    if !theory.is_empty() {
        let tys: Vec<f64> = theory
            .iter()
            .flat_map(|(_, pts)| pts.iter().map(|p| p.1))
            .collect();
        let t_scale = Scale::new(&tys, log_axis, HEIGHT - MARGIN_B, MARGIN_T)?;
        write!(
            out,
            "<line x1=\"{}\" y1=\"{MARGIN_T}\" x2=\"{}\" y2=\"{}\" stroke=\"gray\" />\n",
            WIDTH - MARGIN_R,
            WIDTH - MARGIN_R,
            HEIGHT - MARGIN_B
        )
        .unwrap();
        for v in t_scale.ticks(5) {
            let py = t_scale.project(v);
            write!(
                out,
                "<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{}\" y2=\"{py:.2}\" stroke=\"gray\" />\n",
                WIDTH - MARGIN_R,
                WIDTH - MARGIN_R + 5.0
            )
            .unwrap();
            write!(
                out,
                "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"start\" font-family=\"sans-serif\" font-size=\"11\" fill=\"gray\">{}</text>\n",
                WIDTH - MARGIN_R + 8.0,
                py + 4.0,
                tick_label(v)
            )
            .unwrap();
        }
        for (strategy, pts) in &theory {
            let color = match strategy {
                Strategy::Multi => MULTI_COLOR,
                Strategy::Single => SINGLE_COLOR,
            };
            let projected: Vec<(f64, f64)> = pts
                .iter()
                .map(|&(x, y)| (x_scale.project(x), t_scale.project(y)))
                .collect();
            out.push_str(&polyline(&projected, color, true));
        }
    }

    // Legend.
    let legend_x = MARGIN_L + 12.0;
    let mut legend_y = MARGIN_T + 8.0;
    let mut legend_entry = |out: &mut String, color: &str, dashed: bool, text: &str| {
        let dash = if dashed {
            " stroke-dasharray=\"7,4\""
        } else {
            ""
        };
        write!(
            out,
            "<line x1=\"{legend_x}\" y1=\"{legend_y}\" x2=\"{}\" y2=\"{legend_y}\" stroke=\"{color}\" stroke-width=\"2\"{dash} />\n",
            legend_x + 26.0
        )
        .unwrap();
        write!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            legend_x + 32.0,
            legend_y + 4.0,
            xml_escape(text)
        )
        .unwrap();
        legend_y += 18.0;
    };
    legend_entry(&mut out, MULTI_COLOR, false, "multi-source (empirical)");
    legend_entry(&mut out, SINGLE_COLOR, false, "single-source (empirical)");
    if !theory.is_empty() {
        legend_entry(&mut out, MULTI_COLOR, true, "multi-source (theory, right axis)");
        legend_entry(&mut out, SINGLE_COLOR, true, "single-source (theory, right axis)");
    }

    out.push_str("</svg>\n");
    Ok(out)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Write the sweep plot to `path`.
pub fn emit_svg(rows: &[SweepRow], path: &Path, style: &SvgStyle) -> Result<()> {
    std::fs::write(path, svg_text(rows, style)?)?;
    Ok(())
}
