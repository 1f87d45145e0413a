//! Layout artifacts: neuron/edge CSVs and a top-down SVG scatter.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::split::Assignment;
use crate::{Error, Network, PositionMap, Result};

pub const DEFAULT_MIN_INWEIGHT: f64 = 0.1;
pub const DEFAULT_MIN_EDGE: f64 = 0.01;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronRow {
    pub layer: usize,
    pub neuron: usize,
    pub x: f64,
    pub y: f64,
    pub group: usize,
    pub abs_inweight_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRow {
    pub src_layer: usize,
    pub src: usize,
    pub dst: usize,
    pub abs_weight: f64,
}

/// Split-layer neurons whose summed absolute incoming weight exceeds `min_inweight`.
pub fn neuron_rows(
    net: &Network,
    positions: &PositionMap,
    assignment: &Assignment,
    min_inweight: f64,
) -> Result<Vec<NeuronRow>> {
    assignment.validate(net)?;
    positions.check_matches(net)?;
    let mut rows = Vec::new();
    for (&layer, groups) in assignment.split_layers.iter().zip(&assignment.group_ids) {
        let w = net.weights_into(layer).expect("split layers are non-input");
        for (neuron, &group) in groups.iter().enumerate() {
            let inweight: f64 = w.row(neuron).iter().map(|a| a.abs()).sum();
            if inweight > min_inweight {
                let [x, y] = positions.point(layer, neuron);
                rows.push(NeuronRow {
                    layer,
                    neuron,
                    x,
                    y,
                    group,
                    abs_inweight_sum: inweight,
                });
            }
        }
    }
    Ok(rows)
}

/// Connections between consecutive split layers with `|a| > min_edge`.
pub fn edge_rows(net: &Network, assignment: &Assignment, min_edge: f64) -> Result<Vec<EdgeRow>> {
    assignment.validate(net)?;
    let mut rows = Vec::new();
    for pair in assignment.split_layers.windows(2) {
        let w = &net.weights()[pair[0]];
        for ((dst, src), a) in w.indexed_iter() {
            if a.abs() > min_edge {
                rows.push(EdgeRow {
                    src_layer: pair[0],
                    src,
                    dst,
                    abs_weight: a.abs(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn positions_csv(rows: &[NeuronRow]) -> String {
    let mut out = String::from("layer,neuron,x,y,group,abs_inweight_sum\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.layer, r.neuron, r.x, r.y, r.group, r.abs_inweight_sum);
    }
    out
}

pub fn edges_csv(rows: &[EdgeRow]) -> String {
    let mut out = String::from("src_layer,src,dst,abs_weight\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.src_layer, r.src, r.dst, r.abs_weight);
    }
    out
}

/// Parses `positions.csv` back into rows.
pub fn parse_positions_csv(text: &str) -> Result<Vec<NeuronRow>> {
    let bad = |line: usize| Error::Data(format!("positions.csv line {}: malformed row", line + 1));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i));
            }
            Ok(NeuronRow {
                layer: f[0].parse().map_err(|_| bad(i))?,
                neuron: f[1].parse().map_err(|_| bad(i))?,
                x: f[2].parse().map_err(|_| bad(i))?,
                y: f[3].parse().map_err(|_| bad(i))?,
                group: f[4].parse().map_err(|_| bad(i))?,
                abs_inweight_sum: f[5].parse().map_err(|_| bad(i))?,
            })
        })
        .collect()
}

/// Top-down scatter of all given neurons, colored by group. Deeper layers
/// are drawn with larger markers.
pub fn render_topdown_svg(rows: &[NeuronRow]) -> String {
    const SIZE: f64 = 640.0;
    const MARGIN: f64 = 48.0;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in rows {
        xmin = xmin.min(r.x);
        xmax = xmax.max(r.x);
        ymin = ymin.min(r.y);
        ymax = ymax.max(r.y);
    }
    if rows.is_empty() {
        (xmin, xmax, ymin, ymax) = (-1.0, 1.0, -1.0, 1.0);
    }
    let span = (xmax - xmin).max(ymax - ymin).max(1e-9);
    let plot = SIZE - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - xmin) / span * plot;
    let sy = |y: f64| SIZE - MARGIN - (y - ymin) / span * plot;
    let min_layer = rows.iter().map(|r| r.layer).min().unwrap_or(0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{plot}" height="{plot}" fill="none" stroke="#999"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" font-family="sans-serif" font-size="16" text-anchor="middle">neuron positions, top-down ({} neurons)</text>"#,
        SIZE / 2.0,
        rows.len()
    );
    for r in rows {
        let radius = 3.0 + 1.5 * (r.layer - min_layer) as f64;
        let color = PALETTE[(r.group.max(1) - 1) % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{radius:.1}" fill="{color}" fill-opacity="0.7" data-layer="{}" data-neuron="{}" data-group="{}"/>"#,
            sx(r.x),
            sy(r.y),
            r.layer,
            r.neuron,
            r.group
        );
    }
    let mut groups: Vec<usize> = rows.iter().map(|r| r.group).collect();
    groups.sort_unstable();
    groups.dedup();
    for (i, g) in groups.iter().enumerate() {
        let y = MARGIN + 16.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<circle cx="{}" cy="{y}" r="5" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">group {g}</text>"#,
            MARGIN + 14.0,
            PALETTE[(g.max(&1) - 1) % PALETTE.len()],
            MARGIN + 24.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub neurons: usize,
    pub edges: usize,
}

/// Writes `positions.csv`, `edges.csv` and `topdown.svg` into `dir`.
pub fn export(
    dir: &Path,
    net: &Network,
    positions: &PositionMap,
    assignment: &Assignment,
    min_inweight: f64,
    min_edge: f64,
) -> Result<ExportSummary> {
    let neurons = neuron_rows(net, positions, assignment, min_inweight)?;
    let edges = edge_rows(net, assignment, min_edge)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("positions.csv", positions_csv(&neurons))?;
    write("edges.csv", edges_csv(&edges))?;
    write("topdown.svg", render_topdown_svg(&neurons))?;
    Ok(ExportSummary {
        neurons: neurons.len(),
        edges: edges.len(),
    })
}
