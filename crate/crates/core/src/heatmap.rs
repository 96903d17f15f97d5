//! Meter × day heatmap documents and their SVG rendering.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::deviation::{Indicator, IndicatorMatrix};
use crate::error::{Error, Result};
use crate::ranking::{is_excluded, rank_candidates, severity_scores, ExclusionWindow, TerminalLookup};

pub const DEFAULT_CLAMP: f64 = 0.15;

/// Diverging scale: green for negative values, white at zero, red for
/// positive values, grey for missing cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorScale {
    pub kind: String,
    pub negative: String,
    pub zero: String,
    pub positive: String,
    pub missing: String,
    pub min: f64,
    pub max: f64,
}

const GREEN: [u8; 3] = [0x1a, 0x98, 0x50];
const WHITE: [u8; 3] = [0xff, 0xff, 0xff];
const RED: [u8; 3] = [0xd7, 0x30, 0x27];
const GREY: [u8; 3] = [0xbd, 0xbd, 0xbd];

fn hex([r, g, b]: [u8; 3]) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

impl ColorScale {
    pub fn diverging(clamp: f64) -> Self {
        ColorScale {
            kind: "diverging".into(),
            negative: hex(GREEN),
            zero: hex(WHITE),
            positive: hex(RED),
            missing: hex(GREY),
            min: -clamp,
            max: clamp,
        }
    }
}

/// Color of a cell for a given clamp. Values beyond the clamp take the
/// pole color.
pub fn cell_color(value: Option<f64>, clamp: f64) -> String {
    let Some(v) = value else { return hex(GREY) };
    let t = (v / clamp).clamp(-1.0, 1.0);
    let pole = if t < 0.0 { GREEN } else { RED };
    let a = t.abs();
    let mix = |i: usize| (WHITE[i] as f64 + (pole[i] as f64 - WHITE[i] as f64) * a).round() as u8;
    hex([mix(0), mix(1), mix(2)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapDocument {
    pub indicator: Indicator,
    pub meters: Vec<String>,
    pub days: Vec<NaiveDate>,
    /// Row per meter, raw p.u. values; `None` is missing or excluded.
    pub values: Vec<Vec<Option<f64>>>,
    pub scale: ColorScale,
    pub clamp: f64,
    pub exclusions: Vec<ExclusionWindow>,
}

/// Full matrix in model order, or with `top_k` the highest-ranked meters
/// under `exclusions` in rank order. Excluded days are blanked.
pub fn export_heatmap(
    matrix: &IndicatorMatrix,
    terminals: &impl TerminalLookup,
    indicator: Indicator,
    top_k: Option<usize>,
    exclusions: &[ExclusionWindow],
    clamp: f64,
) -> Result<HeatmapDocument> {
    if !(clamp > 0.0 && clamp.is_finite()) {
        return Err(Error::InvalidArgument(format!("clamp must be positive, got {clamp}")));
    }
    let rows: Vec<usize> = match top_k {
        None => (0..matrix.meters().len()).collect(),
        Some(k) => rank_candidates(&severity_scores(matrix, exclusions), terminals, k)?
            .iter()
            .map(|r| matrix.meter_index(&r.meter_id).expect("ranked meter is in matrix"))
            .collect(),
    };
    let excluded: Vec<bool> = matrix.days().iter().map(|&d| is_excluded(d, exclusions)).collect();
    Ok(HeatmapDocument {
        indicator,
        meters: rows.iter().map(|&m| matrix.meters()[m].clone()).collect(),
        days: matrix.days().to_vec(),
        values: rows
            .iter()
            .map(|&m| {
                matrix
                    .row(indicator, m)
                    .iter()
                    .zip(&excluded)
                    .map(|(v, &x)| if x { None } else { *v })
                    .collect()
            })
            .collect(),
        scale: ColorScale::diverging(clamp),
        clamp,
        exclusions: exclusions.to_vec(),
    })
}

const CELL: usize = 4;
const ROW: usize = 12;
const LABEL: usize = 110;
const HEADER: usize = 20;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl HeatmapDocument {
    pub fn to_svg(&self) -> String {
        let width = LABEL + self.days.len() * CELL + 10;
        let height = HEADER + self.meters.len() * ROW + 10;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{LABEL}" y="12">{} (clamp ±{} p.u.)</text>"#,
            self.indicator.name(),
            self.clamp
        );
        for (i, d) in self.days.iter().enumerate() {
            if i % 30 == 0 {
                let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="7">{d}</text>"#, LABEL + i * CELL, HEADER - 1);
            }
        }
        for (r, (meter, row)) in self.meters.iter().zip(&self.values).enumerate() {
            let y = HEADER + r * ROW;
            let _ = writeln!(s, r#"<text x="2" y="{}">{}</text>"#, y + ROW - 3, escape(meter));
            for (c, v) in row.iter().enumerate() {
                let title = match v {
                    Some(v) => format!("{meter} {} {v:.4}", self.days[c]),
                    None => format!("{meter} {} no data", self.days[c]),
                };
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{y}" width="{CELL}" height="{ROW}" fill="{}"><title>{}</title></rect>"#,
                    LABEL + c * CELL,
                    cell_color(*v, self.clamp),
                    escape(&title)
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}
