//! Raw cumulative counts to lattice curve fields.
//!
//! The chain is: ingest → cubic B-spline smoothing → log-intensity →
//! inverse-distance interpolation onto a lattice → taper → detrend.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fnspace::{SampledFunction, TimeGrid};

/// One row of the raw input table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct StepCurveRecord {
    pub region_id: String,
    pub x: f64,
    pub y: f64,
    pub day: i64,
    pub cumulative: f64,
}

/// Parsed records plus the number of monotonicity repairs applied.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub records: Vec<StepCurveRecord>,
    pub repaired: usize,
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file)
}

pub fn ingest_reader<R: Read>(reader: R) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["region_id", "x", "y", "day", "cumulative"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut records = Vec::new();
    for row in rdr.deserialize::<StepCurveRecord>() {
        let rec = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        if !(rec.cumulative >= 0.0) || !rec.x.is_finite() || !rec.y.is_finite() {
            return Err(Error::Parse {
                line: records.len() as u64 + 2,
                message: "cumulative must be non-negative and coordinates finite".into(),
            });
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Data("no records".into()));
    }
    let repaired = repair_monotone(&mut records);
    Ok(IngestReport { records, repaired })
}

/// Clamps dips in each region's cumulative curve to the running maximum.
fn repair_monotone(records: &mut [StepCurveRecord]) -> usize {
    let mut by_region: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        by_region.entry(r.region_id.clone()).or_default().push(i);
    }
    let mut regions: Vec<_> = by_region.into_iter().collect();
    regions.sort_by(|a, b| a.0.cmp(&b.0));
    let mut repaired = 0;
    for (region, mut idx) in regions {
        idx.sort_by_key(|&i| (records[i].day, i));
        let mut running = f64::NEG_INFINITY;
        for i in idx {
            let rec = &mut records[i];
            if rec.cumulative < running {
                warn!(
                    "region {region}, day {}: cumulative {} below previous {}, clamped",
                    rec.day, rec.cumulative, running
                );
                rec.cumulative = running;
                repaired += 1;
            }
            running = running.max(rec.cumulative);
        }
    }
    repaired
}

/// Records of one region, ordered by day.
#[derive(Debug, Clone)]
pub struct RegionSeries {
    pub region_id: String,
    pub x: f64,
    pub y: f64,
    pub days: Vec<f64>,
    pub cumulative: Vec<f64>,
}

/// Groups records by region in order of first appearance.
pub fn group_regions(records: &[StepCurveRecord]) -> Vec<RegionSeries> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<&str, Vec<&StepCurveRecord>> = HashMap::new();
    for r in records {
        let entry = groups.entry(r.region_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(r.region_id.clone());
        }
        entry.push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let mut recs = groups.remove(id.as_str()).unwrap_or_default();
            recs.sort_by_key(|r| r.day);
            RegionSeries {
                x: recs[0].x,
                y: recs[0].y,
                days: recs.iter().map(|r| r.day as f64).collect(),
                cumulative: recs.iter().map(|r| r.cumulative).collect(),
                region_id: id,
            }
        })
        .collect()
}

/// Default number of interior knots: one per week of observations.
pub fn default_n_basis(n_days: usize) -> usize {
    n_days.div_ceil(7)
}

/// Clamped cubic knot vector with `n_interior` uniform interior knots on `[a, b]`.
fn cubic_knots(a: f64, b: f64, n_interior: usize) -> Vec<f64> {
    let mut knots = vec![a; 4];
    let step = (b - a) / (n_interior + 1) as f64;
    knots.extend((1..=n_interior).map(|i| a + step * i as f64));
    knots.extend([b; 4]);
    knots
}

/// Values and first derivatives of all cubic B-splines at `x`.
fn cubic_basis(knots: &[f64], x: f64) -> (Vec<f64>, Vec<f64>) {
    let nb = knots.len() - 4;
    let last = knots[knots.len() - 1];
    // degree-0 indicators; the right end point belongs to the last non-empty span
    let mut n: Vec<f64> = (0..knots.len() - 1)
        .map(|i| {
            let inside = knots[i] <= x && x < knots[i + 1];
            let at_end = x >= last && knots[i] < knots[i + 1] && knots[i + 1] >= last;
            if inside || at_end {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let mut quadratic = Vec::new();
    for d in 1..=3 {
        if d == 3 {
            quadratic = n.clone();
        }
        let next: Vec<f64> = (0..knots.len() - 1 - d)
            .map(|i| {
                ratio(x - knots[i], knots[i + d] - knots[i]) * n[i]
                    + ratio(knots[i + d + 1] - x, knots[i + d + 1] - knots[i + 1]) * n[i + 1]
            })
            .collect();
        n = next;
    }
    let deriv = (0..nb)
        .map(|i| {
            3.0 * (ratio(quadratic[i], knots[i + 3] - knots[i])
                - ratio(quadratic[i + 1], knots[i + 4] - knots[i + 1]))
        })
        .collect();
    (n, deriv)
}

/// Least-squares cubic B-spline fit of a cumulative curve; returns
/// `log(max(fit', floor))` on the grid.
pub fn smooth_log_intensity(
    region: &RegionSeries,
    grid: &Arc<TimeGrid>,
    n_basis: usize,
    floor: f64,
) -> Result<SampledFunction> {
    if !(floor > 0.0) {
        return Err(Error::invalid("log-intensity floor must be positive"));
    }
    let nb = n_basis + 4;
    let n_obs = region.days.len();
    if n_obs < nb {
        return Err(Error::invalid(format!(
            "region {}: {n_obs} observations cannot support {nb} spline coefficients",
            region.region_id
        )));
    }
    let (a, b) = (region.days[0], region.days[n_obs - 1]);
    let nodes = grid.nodes();
    if nodes[0] < a - 1e-9 || nodes[nodes.len() - 1] > b + 1e-9 {
        return Err(Error::invalid(format!(
            "time grid [{}, {}] leaves the observed range [{a}, {b}]",
            nodes[0],
            nodes[nodes.len() - 1]
        )));
    }
    let knots = cubic_knots(a, b, n_basis);
    let mut design = DMatrix::zeros(n_obs, nb);
    for (i, &d) in region.days.iter().enumerate() {
        let (vals, _) = cubic_basis(&knots, d);
        for (j, v) in vals.into_iter().enumerate() {
            design[(i, j)] = v;
        }
    }
    let qr = design.qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    let diag_min = r
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(diag_min > 1e-10 * diag_max) {
        return Err(Error::Numerical(format!(
            "region {}: spline design matrix is rank deficient",
            region.region_id
        )));
    }
    let rhs = qr.q().transpose() * DVector::from_column_slice(&region.cumulative);
    let coef = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let values = nodes
        .iter()
        .map(|&t| {
            let (_, deriv) = cubic_basis(&knots, t.clamp(a, b));
            let slope: f64 = deriv.iter().zip(coef.iter()).map(|(d, c)| d * c).sum();
            slope.max(floor).ln()
        })
        .collect();
    SampledFunction::new(grid.clone(), values)
}

/// A curve attached to a planar location.
#[derive(Debug, Clone)]
pub struct Site {
    pub x: f64,
    pub y: f64,
    pub curve: SampledFunction,
}

const COINCIDENCE_TOL: f64 = 1e-9;

/// Inverse-distance (power 2) weighted curve at `(x, y)`.
pub fn idw_at(sites: &[Site], x: f64, y: f64) -> Result<SampledFunction> {
    let first = sites
        .first()
        .ok_or_else(|| Error::invalid("interpolation needs at least one site"))?;
    let mut acc = DVector::zeros(first.curve.len());
    let mut total = 0.0;
    for s in sites {
        let d2 = (s.x - x).powi(2) + (s.y - y).powi(2);
        if d2.sqrt() < COINCIDENCE_TOL {
            return Ok(s.curve.clone());
        }
        let w = 1.0 / d2;
        acc += s.curve.values() * w;
        total += w;
    }
    SampledFunction::from_vector(first.curve.grid().clone(), acc / total)
}

/// Regular lattice of curves, stored node-major (`node = row * cols + col`).
#[derive(Debug, Clone)]
pub struct LatticeField {
    rows: usize,
    cols: usize,
    grid: Arc<TimeGrid>,
    /// G × (rows·cols); column `node` is that node's curve.
    data: DMatrix<f64>,
    taper_weights: Vec<f64>,
}

impl LatticeField {
    pub fn new(rows: usize, cols: usize, grid: Arc<TimeGrid>, data: DMatrix<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(
                "lattice must have at least one row and column",
            ));
        }
        if data.nrows() != grid.len() || data.ncols() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: grid.len() * rows * cols,
                got: data.nrows() * data.ncols(),
            });
        }
        Ok(Self {
            rows,
            cols,
            grid,
            data,
            taper_weights: vec![1.0; rows * cols],
        })
    }

    pub fn from_curves(rows: usize, cols: usize, curves: &[SampledFunction]) -> Result<Self> {
        let first = curves
            .first()
            .ok_or_else(|| Error::invalid("lattice needs curves"))?;
        if curves.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: curves.len(),
            });
        }
        let grid = first.grid().clone();
        let mut data = DMatrix::zeros(grid.len(), rows * cols);
        for (j, c) in curves.iter().enumerate() {
            if !crate::fnspace::same_grid(&grid, c.grid()) {
                return Err(Error::GridMismatch);
            }
            data.set_column(j, c.values());
        }
        Self::new(rows, cols, grid, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_nodes(&self) -> usize {
        self.rows * self.cols
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn taper_weights(&self) -> &[f64] {
        &self.taper_weights
    }

    pub fn node(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn curve(&self, row: usize, col: usize) -> SampledFunction {
        let v = self.data.column(self.node(row, col)).into_owned();
        SampledFunction::from_vector(self.grid.clone(), v).expect("column matches grid")
    }

    /// Sub-lattice of the given rows and columns (in the given order).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Result<Self> {
        if rows.iter().any(|&r| r >= self.rows) || cols.iter().any(|&c| c >= self.cols) {
            return Err(Error::invalid("selected row or column outside the lattice"));
        }
        let nodes: Vec<usize> = rows
            .iter()
            .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
            .map(|(r, c)| self.node(r, c))
            .collect();
        let data = self.data.select_columns(&nodes);
        let mut out = Self::new(rows.len(), cols.len(), self.grid.clone(), data)?;
        out.taper_weights = nodes.iter().map(|&n| self.taper_weights[n]).collect();
        Ok(out)
    }
}

/// Inverse-distance interpolation of site curves onto a `rows × cols`
/// lattice spanning the sites' bounding box.
pub fn spatial_interpolate(sites: &[Site], rows: usize, cols: usize) -> Result<LatticeField> {
    if sites.len() < 3 {
        return Err(Error::invalid(
            "spatial interpolation needs at least three sites",
        ));
    }
    if rows < 2 || cols < 2 {
        return Err(Error::invalid(
            "target lattice needs at least 2 nodes per side",
        ));
    }
    for (i, a) in sites.iter().enumerate() {
        for b in &sites[i + 1..] {
            if (a.x - b.x).hypot(a.y - b.y) < COINCIDENCE_TOL {
                return Err(Error::invalid(format!(
                    "duplicate site coordinates ({}, {})",
                    a.x, a.y
                )));
            }
        }
    }
    let (xmin, xmax) = min_max(sites.iter().map(|s| s.x));
    let (ymin, ymax) = min_max(sites.iter().map(|s| s.y));
    let mut curves = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let y = ymin + (ymax - ymin) * r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let x = xmin + (xmax - xmin) * c as f64 / (cols - 1) as f64;
            curves.push(idw_at(sites, x, y)?);
        }
    }
    LatticeField::from_curves(rows, cols, &curves)
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Tukey (split-cosine) weight at position `u ∈ [0, 1]`.
pub fn tukey(u: f64, fraction: f64) -> f64 {
    if fraction <= 0.0 {
        return 1.0;
    }
    let half = fraction / 2.0;
    let arg = if u < half {
        u - half
    } else if u > 1.0 - half {
        u - 1.0 + half
    } else {
        return 1.0;
    };
    0.5 * (1.0 + (2.0 * std::f64::consts::PI * arg / fraction).cos())
}

/// Multiplies every curve by a separable Tukey weight evaluated at the
/// node centres `(i + ½) / n`.
pub fn taper(field: &LatticeField, fraction: f64) -> Result<LatticeField> {
    if field.rows < 3 || field.cols < 3 {
        return Err(Error::invalid("tapering needs at least 3 nodes per side"));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("taper fraction must lie in [0, 1]"));
    }
    let wr: Vec<f64> = (0..field.rows)
        .map(|i| tukey((i as f64 + 0.5) / field.rows as f64, fraction))
        .collect();
    let wc: Vec<f64> = (0..field.cols)
        .map(|j| tukey((j as f64 + 0.5) / field.cols as f64, fraction))
        .collect();
    let mut out = field.clone();
    for r in 0..field.rows {
        for c in 0..field.cols {
            let node = field.node(r, c);
            let w = wr[r] * wc[c];
            out.data.column_mut(node).scale_mut(w);
            out.taper_weights[node] *= w;
        }
    }
    Ok(out)
}

/// Subtracts the node-average curve.
pub fn detrend(field: &LatticeField) -> (LatticeField, SampledFunction) {
    let mean = field.data.column_sum() / field.data.ncols() as f64;
    let mut out = field.clone();
    for mut col in out.data.column_iter_mut() {
        col -= &mean;
    }
    let mean = SampledFunction::from_vector(field.grid.clone(), mean).expect("mean matches grid");
    (out, mean)
}

/// Default number of edge nodes dropped from a raw series of length `n_raw`.
pub fn default_edge_trim(n_raw: usize) -> usize {
    (0.057 * n_raw as f64).ceil() as usize
}

/// Index range kept after dropping `count` edge nodes: `count / 2` at the
/// start and the remainder at the end.
pub fn trimmed_range(n_raw: usize, count: usize) -> Result<std::ops::Range<usize>> {
    if count >= n_raw {
        return Err(Error::invalid(format!(
            "cannot drop {count} edge nodes from a series of length {n_raw}"
        )));
    }
    let head = count / 2;
    Ok(head..n_raw - (count - head))
}

/// Writes `node_row,node_col,tau,value`.
pub fn write_panel<W: Write>(field: &LatticeField, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_row", "node_col", "tau", "value"])?;
    for r in 0..field.rows {
        for c in 0..field.cols {
            let col = field.data.column(field.node(r, c));
            for (tau, v) in field.grid.nodes().iter().zip(col.iter()) {
                w.write_record([r.to_string(), c.to_string(), tau.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PanelRow {
    node_row: usize,
    node_col: usize,
    tau: f64,
    value: f64,
}

/// Reads a complete panel; the time grid uses trapezoid weights on the
/// distinct `tau` values.
pub fn read_panel<R: Read>(input: R) -> Result<LatticeField> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows_in = Vec::new();
    for row in rdr.deserialize::<PanelRow>() {
        let r = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        rows_in.push(r);
    }
    if rows_in.is_empty() {
        return Err(Error::Data("no records".into()));
    }
    let rows = rows_in.iter().map(|r| r.node_row).max().unwrap_or(0) + 1;
    let cols = rows_in.iter().map(|r| r.node_col).max().unwrap_or(0) + 1;
    let mut taus: Vec<f64> = rows_in.iter().map(|r| r.tau).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let expected = rows * cols * taus.len();
    if rows_in.len() != expected {
        return Err(Error::Data(format!(
            "panel has {} rows but a complete {rows}×{cols} lattice on {} nodes needs {expected}",
            rows_in.len(),
            taus.len()
        )));
    }
    let mut data = DMatrix::from_element(taus.len(), rows * cols, f64::NAN);
    for r in &rows_in {
        let g = taus
            .binary_search_by(|t| t.total_cmp(&r.tau))
            .expect("tau present");
        data[(g, r.node_row * cols + r.node_col)] = r.value;
    }
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::Data(
            "panel has duplicate or missing (node, tau) entries".into(),
        ));
    }
    let grid = if taus.len() == 1 {
        TimeGrid::with_weights(taus, vec![1.0])?
    } else {
        TimeGrid::trapezoid(taus)?
    };
    LatticeField::new(rows, cols, grid, data)
}
