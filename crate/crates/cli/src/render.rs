//! SVG drawings of grid layouts: unit squares on the lattice, straight
//! edges between cell centres, vertex indices as labels.

use std::fmt::Write;

use gpgl_core::{Graph, GridLayout};

const CELL: i64 = 24;
const MARGIN: i64 = 12;

pub fn svg(graph: &Graph, grid: &GridLayout, title: &str) -> String {
    let (w, h) = (grid.width() as i64, grid.height() as i64);
    let (pw, ph) = (w * CELL + 2 * MARGIN, h * CELL + 2 * MARGIN);
    let centre = |v: usize| {
        let [x, y] = grid.cells()[v];
        (MARGIN + x * CELL + CELL / 2, MARGIN + y * CELL + CELL / 2)
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{pw}" height="{ph}" viewBox="0 0 {pw} {ph}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, r##"<g stroke="#ddd" stroke-width="1">"##);
    for x in 0..=w {
        let px = MARGIN + x * CELL;
        let _ = writeln!(s, r#"<line x1="{px}" y1="{MARGIN}" x2="{px}" y2="{}"/>"#, MARGIN + h * CELL);
    }
    for y in 0..=h {
        let py = MARGIN + y * CELL;
        let _ = writeln!(s, r#"<line x1="{MARGIN}" y1="{py}" x2="{}" y2="{py}"/>"#, MARGIN + w * CELL);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g stroke="#555" stroke-width="1.5">"##);
    for &(a, b) in graph.edges() {
        let ((x1, y1), (x2, y2)) = (centre(a), centre(b));
        let _ = writeln!(s, r#"<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}"/>"#);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g fill="#4a90d9" fill-opacity="0.85" stroke="#1f4e79">"##);
    for (v, &[x, y]) in grid.cells().iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<rect data-vertex="{v}" data-x="{x}" data-y="{y}" x="{}" y="{}" width="{CELL}" height="{CELL}"/>"#,
            MARGIN + x * CELL,
            MARGIN + y * CELL
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g font-family="monospace" font-size="10" text-anchor="middle" fill="#fff">"##);
    for v in 0..grid.n() {
        let (cx, cy) = centre(v);
        let _ = writeln!(s, r#"<text x="{cx}" y="{}">{v}</text>"#, cy + 4);
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
