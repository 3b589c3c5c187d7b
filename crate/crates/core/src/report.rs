//! Report tables and static SVG figures.
//!
//! Curve tables use the panel layout `node_row,node_col,tau,value`; unlike
//! [`crate::preprocess::read_panel`] the reader here accepts any subset of
//! lattice nodes, which is what predictors on an evaluation sub-lattice
//! produce.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Curves keyed by `(node_row, node_col)`, each a list of `(tau, value)`.
pub type CurveTable = BTreeMap<(usize, usize), Vec<(f64, f64)>>;

#[derive(Debug, Deserialize)]
struct Row {
    node_row: usize,
    node_col: usize,
    tau: f64,
    value: f64,
}

pub fn read_curves<R: Read>(input: R) -> Result<CurveTable> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut table = CurveTable::new();
    for row in rdr.deserialize::<Row>() {
        let r = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        table
            .entry((r.node_row, r.node_col))
            .or_default()
            .push((r.tau, r.value));
    }
    for curve in table.values_mut() {
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(table)
}

pub fn write_curves<W: Write>(table: &CurveTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_row", "node_col", "tau", "value"])?;
    for ((r, c), curve) in table {
        for (tau, v) in curve {
            w.write_record([r.to_string(), c.to_string(), tau.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-node mean absolute difference between two tables over their shared
/// `(node, tau)` entries.
pub fn node_errors(
    observed: &CurveTable,
    predicted: &CurveTable,
) -> Result<BTreeMap<(usize, usize), f64>> {
    let mut out = BTreeMap::new();
    for (node, pred) in predicted {
        let obs = observed.get(node).ok_or_else(|| {
            Error::Data(format!("node {node:?} has a prediction but no observation"))
        })?;
        let lookup: BTreeMap<u64, f64> = obs.iter().map(|(t, v)| (t.to_bits(), *v)).collect();
        let mut sum = 0.0;
        for (t, v) in pred {
            let o = lookup.get(&t.to_bits()).ok_or_else(|| {
                Error::Data(format!("node {node:?} has no observation at tau = {t}"))
            })?;
            sum += (o - v).abs();
        }
        out.insert(*node, sum / pred.len().max(1) as f64);
    }
    Ok(out)
}

const PALETTE_OBS: &str = "#1f4e79";
const PALETTE_PRED: &str = "#c0392b";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn polyline(
    points: &[(f64, f64)],
    x: (f64, f64),
    y: (f64, f64),
    frame: (f64, f64, f64, f64),
    colour: &str,
    dash: bool,
) -> String {
    let (fx, fy, fw, fh) = frame;
    let mut path = String::new();
    for (i, (t, v)) in points.iter().enumerate() {
        let px = fx + (t - x.0) / (x.1 - x.0) * fw;
        let py = fy + fh - (v - y.0) / (y.1 - y.0) * fh;
        let _ = write!(path, "{}{:.2},{:.2}", if i == 0 { "" } else { " " }, px, py);
    }
    format!(
        "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.2\"{} points=\"{path}\"/>\n",
        if dash {
            " stroke-dasharray=\"4 2\""
        } else {
            ""
        }
    )
}

/// Small-multiple overlay of observed (solid) and predicted (dashed) curves
/// for up to `max_panels` nodes, chosen evenly across the predicted nodes.
pub fn overlay_svg(
    title: &str,
    observed: &CurveTable,
    predicted: &CurveTable,
    max_panels: usize,
) -> String {
    let nodes: Vec<&(usize, usize)> = predicted.keys().collect();
    let count = nodes.len().min(max_panels.max(1));
    let picked: Vec<(usize, usize)> = (0..count)
        .map(|i| *nodes[i * nodes.len() / count.max(1)])
        .collect();
    let ncols = (count as f64).sqrt().ceil().max(1.0) as usize;
    let nrows = count.div_ceil(ncols).max(1);
    let (pw, ph, pad, top) = (220.0, 150.0, 30.0, 40.0);
    let width = ncols as f64 * (pw + pad) + pad;
    let height = top + nrows as f64 * (ph + pad) + pad;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"22\" font-size=\"14\">{}</text>\n",
        escape(title)
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.0}\" y=\"22\" fill=\"{PALETTE_OBS}\">observed</text><text x=\"{:.0}\" y=\"22\" fill=\"{PALETTE_PRED}\">predicted</text>",
        width - 150.0,
        width - 80.0
    );
    for (i, node) in picked.iter().enumerate() {
        let fx = pad + (i % ncols) as f64 * (pw + pad);
        let fy = top + (i / ncols) as f64 * (ph + pad);
        let pred = &predicted[node];
        let obs: Vec<(f64, f64)> = observed.get(node).cloned().unwrap_or_default();
        let x = range(pred.iter().chain(&obs).map(|p| p.0));
        let y = range(pred.iter().chain(&obs).map(|p| p.1));
        let _ = writeln!(
            s,
            "<rect x=\"{fx}\" y=\"{fy}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#999\"/>\n\
             <text x=\"{fx}\" y=\"{:.0}\">node ({}, {})</text>",
            fy - 4.0,
            node.0,
            node.1
        );
        if !obs.is_empty() {
            s.push_str(&polyline(&obs, x, y, (fx, fy, pw, ph), PALETTE_OBS, false));
        }
        s.push_str(&polyline(pred, x, y, (fx, fy, pw, ph), PALETTE_PRED, true));
    }
    s.push_str("</svg>\n");
    s
}

/// One entry of a spectral density export.
#[derive(Debug, Clone, Deserialize)]
pub struct SpectralRow {
    pub omega_row: f64,
    pub omega_col: f64,
    pub k: usize,
    pub l: usize,
    pub re: f64,
    pub im: f64,
}

pub fn read_spectral<R: Read>(input: R) -> Result<Vec<SpectralRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize::<SpectralRow>()
        .map(|r| {
            r.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })
        })
        .collect()
}

fn heat(u: f64) -> String {
    // white → dark blue
    let u = u.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - 0.85 * u)) as u8;
    let g = (255.0 * (1.0 - 0.7 * u)) as u8;
    let b = (255.0 * (1.0 - 0.35 * u)) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heatmaps of `Re f_ω[k,k]` over the frequency lattice, one panel per
/// diagonal component.
pub fn spectral_diagonal_svg(title: &str, rows: &[SpectralRow]) -> String {
    let mut comps: BTreeMap<usize, Vec<&SpectralRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.k == r.l) {
        comps.entry(r.k).or_default().push(r);
    }
    let (cell, pad, top) = (14.0, 30.0, 40.0);
    let mut panels = String::new();
    let mut x0 = pad;
    let mut max_h: f64 = 0.0;
    for (k, entries) in &comps {
        let mut wr: Vec<f64> = entries.iter().map(|e| e.omega_row).collect();
        let mut wc: Vec<f64> = entries.iter().map(|e| e.omega_col).collect();
        for v in [&mut wr, &mut wc] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let (lo, hi) = range(entries.iter().map(|e| e.re));
        let _ = writeln!(
            panels,
            "<text x=\"{x0}\" y=\"{:.0}\">component {}</text>",
            top - 6.0,
            k
        );
        for e in entries {
            let i = wr.partition_point(|v| *v < e.omega_row);
            let j = wc.partition_point(|v| *v < e.omega_col);
            let _ = writeln!(
                panels,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\"><title>ω=({:.4}, {:.4}) f={:.6e}</title></rect>",
                x0 + j as f64 * cell,
                top + i as f64 * cell,
                heat((e.re - lo) / (hi - lo)),
                e.omega_row,
                e.omega_col,
                e.re
            );
        }
        x0 += wc.len() as f64 * cell + pad;
        max_h = max_h.max(wr.len() as f64 * cell);
    }
    let width = x0.max(200.0);
    let height = top + max_h + pad;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"20\" font-size=\"14\">{}</text>\n{panels}</svg>\n",
        escape(title)
    )
}

/// Names of the files a fit directory may contain.
pub const RESPONSE_CSV: &str = "response.csv";
pub const PREDICTOR_CSV: &str = "predictor.csv";
pub const SPECTRAL_CSV: &str = "spectral_density.csv";
pub const OVERLAY_SVG: &str = "overlay.svg";
pub const SPECTRAL_SVG: &str = "spectral_diagonal.svg";
pub const NODE_ERRORS_CSV: &str = "node_errors.csv";

/// Renders plots and the per-node error table from the CSVs in `input`
/// into `out`; returns the mean of the per-node errors.
pub fn render_directory(input: &Path, out: &Path) -> Result<f64> {
    let open = |name: &str| std::fs::File::open(input.join(name));
    let observed = read_curves(open(RESPONSE_CSV)?)?;
    let predicted = read_curves(open(PREDICTOR_CSV)?)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join(OVERLAY_SVG),
        overlay_svg("Observed and predicted curves", &observed, &predicted, 9),
    )?;
    if let Ok(f) = open(SPECTRAL_CSV) {
        let rows = read_spectral(f)?;
        std::fs::write(
            out.join(SPECTRAL_SVG),
            spectral_diagonal_svg("Spectral density diagonal", &rows),
        )?;
    }
    let errors = node_errors(&observed, &predicted)?;
    let mut table = String::from("node_row,node_col,mean_abs_error\n");
    for ((r, c), e) in &errors {
        let _ = writeln!(table, "{r},{c},{e:.10e}");
    }
    let mean = errors.values().sum::<f64>() / errors.len().max(1) as f64;
    let _ = writeln!(table, "mean,,{mean:.10e}");
    std::fs::write(out.join(NODE_ERRORS_CSV), table)?;
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(shift: f64) -> CurveTable {
        let mut t = CurveTable::new();
        for r in 0..2 {
            for c in 0..3 {
                t.insert(
                    (r, c),
                    (0..5)
                        .map(|g| (g as f64 / 4.0, (r + c) as f64 + g as f64 + shift))
                        .collect(),
                );
            }
        }
        t
    }

    #[test]
    fn curves_round_trip_and_errors() {
        let t = table(0.0);
        let mut buf = Vec::new();
        write_curves(&t, &mut buf).unwrap();
        let back = read_curves(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let errs = node_errors(&t, &table(0.25)).unwrap();
        assert!(errs.values().all(|e| (e - 0.25).abs() < 1e-12));
        let mut partial = CurveTable::new();
        partial.insert((5, 5), vec![(0.0, 1.0)]);
        assert!(node_errors(&t, &partial).is_err());
    }

    #[test]
    fn svgs_are_well_formed() {
        let svg = overlay_svg("a < b", &table(0.0), &table(0.1), 4);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 8);
        assert!(svg.contains("a &lt; b"));
        let rows: Vec<SpectralRow> = (0..9)
            .map(|i| SpectralRow {
                omega_row: (i / 3) as f64,
                omega_col: (i % 3) as f64,
                k: 0,
                l: 0,
                re: i as f64,
                im: 0.0,
            })
            .collect();
        let svg = spectral_diagonal_svg("f", &rows);
        assert_eq!(svg.matches("<rect x=").count(), 9);
    }
}
