//! Per-video prediction curves as CSV and standalone SVG.

use std::fmt::Write;

use tmloc::datamodel::Modality;
use tmloc::model::PredictionTrace;

pub const CSV_HEADER: &str = "t,y,p_v,p_a,p_l,alpha_v,alpha_a,alpha_l";

/// One row per frame: fused probability, branch probabilities (empty when the
/// variant has no branch heads) and gates (1 when gating is off).
pub fn curve_csv(trace: &PredictionTrace) -> String {
    let gates = Modality::ALL.map(|m| trace.gate(m));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for t in 0..trace.frames() {
        write!(out, "{t},{}", trace.fused[t]).unwrap();
        for m in Modality::ALL {
            match trace.branch_prob(m) {
                Some(p) => write!(out, ",{}", p[t]).unwrap(),
                None => out.push(','),
            }
        }
        for g in &gates {
            write!(out, ",{}", g[t]).unwrap();
        }
        out.push('\n');
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 240.0;
const MARGIN: f64 = 30.0;

/// Probability polyline over time with frames above 0.5 shaded.
pub fn curve_svg(id: &str, fused: &[f64]) -> String {
    let n = fused.len().max(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let step = plot_w / n;
    let x = |t: f64| MARGIN + t * step;
    let y = |p: f64| MARGIN + (1.0 - p) * plot_h;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(svg, "<title>{}</title>", escape(id)).unwrap();
    writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    for (t, &p) in fused.iter().enumerate() {
        if p > 0.5 {
            writeln!(
                svg,
                r##"<rect x="{:.2}" y="{MARGIN}" width="{step:.2}" height="{plot_h}" fill="#f4b6b6"/>"##,
                x(t as f64)
            )
            .unwrap();
        }
    }
    writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        svg,
        r##"<line x1="{MARGIN}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
        y(0.5),
        WIDTH - MARGIN
    )
    .unwrap();
    let points: Vec<String> = fused
        .iter()
        .enumerate()
        .map(|(t, &p)| format!("{:.2},{:.2}", x(t as f64 + 0.5), y(p)))
        .collect();
    writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="1.5"/>"##,
        points.join(" ")
    )
    .unwrap();
    for (label, p) in [("1", 1.0), ("0.5", 0.5), ("0", 0.0)] {
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{label}</text>"#,
            MARGIN - 4.0,
            y(p) + 3.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">frame</text>"#,
        WIDTH / 2.0,
        HEIGHT - 8.0
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}
