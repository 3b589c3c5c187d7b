//! Spatial kernel regressors and frequency-domain generalized least squares.

use log::info;
use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;

use super::covariance::ProjectedField;
use super::spectrum::{fft2, hermitian_eigenvalues, transform_columns, SpectralDensityEstimate};
use crate::error::{Error, Result};
use crate::fnspace::{EigenSystem, LowRankKernel, SampledFunction, TimeGrid};
use crate::preprocess::LatticeField;
use std::sync::Arc;

pub type Lag = [usize; 2];

pub const DEFAULT_LAGS: [Lag; 3] = [[1, 0], [0, 1], [1, 1]];
const PINV_TOL: f64 = 1e-12;
const SPECTRUM_CONDITION_LIMIT: f64 = 1e12;

/// Plug-in regressors `X_z^{ij} = u_{z−h_i} ⊗ u_{z−h_j}`, `i ≤ j`, with
/// `u = Y − μ̂`, on the nodes whose lagged neighbours all lie in the lattice.
#[derive(Debug, Clone)]
pub struct SpatialRegressors {
    rows: usize,
    cols: usize,
    grid: Arc<TimeGrid>,
    lags: Vec<Lag>,
    pairs: Vec<(usize, usize)>,
    u: DMatrix<f64>,
    mean: SampledFunction,
    row0: usize,
    col0: usize,
}

pub fn lag_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|i| (i..p).map(move |j| (i, j))).collect()
}

impl SpatialRegressors {
    /// Regressors from a centred field `u` and its removed mean.
    pub fn from_centred(u: &LatticeField, mean: SampledFunction, lags: &[Lag]) -> Result<Self> {
        if lags.is_empty() {
            return Err(Error::invalid("at least one spatial lag is required"));
        }
        if lags.iter().any(|h| *h == [0, 0]) {
            return Err(Error::invalid(
                "the zero lag would regress a node on itself",
            ));
        }
        let row0 = lags.iter().map(|h| h[0]).max().unwrap_or(0);
        let col0 = lags.iter().map(|h| h[1]).max().unwrap_or(0);
        if row0 >= u.rows() || col0 >= u.cols() {
            return Err(Error::invalid(format!(
                "lags leave no evaluation nodes on a {}×{} lattice",
                u.rows(),
                u.cols()
            )));
        }
        let excluded = u.n_nodes() - (u.rows() - row0) * (u.cols() - col0);
        if excluded > 0 {
            info!("{excluded} nodes have lagged neighbours outside the lattice and serve as initial conditions");
        }
        Ok(Self {
            rows: u.rows(),
            cols: u.cols(),
            grid: u.grid().clone(),
            lags: lags.to_vec(),
            pairs: lag_pairs(lags.len()),
            u: u.data().clone(),
            mean,
            row0,
            col0,
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn lags(&self) -> &[Lag] {
        &self.lags
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn mean(&self) -> &SampledFunction {
        &self.mean
    }

    pub fn centred(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Evaluation sub-lattice `[row0, rows) × [col0, cols)`.
    pub fn eval_dims(&self) -> (usize, usize) {
        (self.rows - self.row0, self.cols - self.col0)
    }

    pub fn eval_origin(&self) -> (usize, usize) {
        (self.row0, self.col0)
    }

    fn node(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    fn lagged(&self, r: usize, c: usize, h: Lag) -> usize {
        self.node(r - h[0], c - h[1])
    }

    /// Kernel of pair `q` at lattice node `(r, c)`.
    pub fn kernel(&self, r: usize, c: usize, q: usize) -> Result<LowRankKernel> {
        if r < self.row0 || c < self.col0 || r >= self.rows || c >= self.cols {
            return Err(Error::invalid(format!(
                "node ({r}, {c}) is not an evaluation node"
            )));
        }
        let (i, j) = self.pairs[q];
        let a = self.u.column(self.lagged(r, c, self.lags[i])).into_owned();
        let b = self.u.column(self.lagged(r, c, self.lags[j])).into_owned();
        let g = self.grid.len();
        LowRankKernel::new(
            self.grid.clone(),
            DMatrix::from_column_slice(g, 1, a.as_slice()),
            DMatrix::from_column_slice(g, 1, b.as_slice()),
        )
    }

    /// `Σ_{i≤j} X_z^{ij}(β_{ij})` at lattice node `(r, c)`.
    pub fn apply(&self, r: usize, c: usize, betas: &[SampledFunction]) -> Result<SampledFunction> {
        if betas.len() != self.pairs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.pairs.len(),
                got: betas.len(),
            });
        }
        let mut out = DVector::zeros(self.grid.len());
        for (q, beta) in betas.iter().enumerate() {
            out += self.kernel(r, c, q)?.apply(beta)?.values();
        }
        SampledFunction::from_vector(self.grid.clone(), out)
    }

    /// Projected design on the evaluation sub-lattice, with the centred
    /// field at each evaluation node as response.
    pub fn design(&self, basis: &EigenSystem) -> Result<SpatialDesign> {
        if !crate::fnspace::same_grid(basis.grid(), &self.grid) {
            return Err(Error::GridMismatch);
        }
        let scores = basis.weighted_basis().transpose() * &self.u;
        let m = basis.len();
        let (er, ec) = self.eval_dims();
        let mut z = Vec::with_capacity(er * ec);
        let mut y = DMatrix::zeros(er * ec, m);
        for r in self.row0..self.rows {
            for c in self.col0..self.cols {
                let mut zt = DMatrix::zeros(m, self.pairs.len() * m);
                for (q, &(i, j)) in self.pairs.iter().enumerate() {
                    let a = scores.column(self.lagged(r, c, self.lags[i]));
                    let b = scores.column(self.lagged(r, c, self.lags[j]));
                    zt.columns_mut(q * m, m).copy_from(&(a * b.transpose()));
                }
                z.push(zt);
                let e = (r - self.row0) * ec + c - self.col0;
                y.set_row(e, &scores.column(self.node(r, c)).transpose());
            }
        }
        Ok(SpatialDesign {
            rows: er,
            cols: ec,
            z,
            response: ProjectedField::new(er, ec, y, basis.clone())?,
        })
    }
}

/// Regressors from a raw field: the node-average curve is removed first.
pub fn build_spatial_regressors(field: &LatticeField, lags: &[Lag]) -> Result<SpatialRegressors> {
    let (u, mean) = crate::preprocess::detrend(field);
    SpatialRegressors::from_centred(&u, mean, lags)
}

/// Projected regression data on an evaluation lattice.
#[derive(Debug, Clone)]
pub struct SpatialDesign {
    rows: usize,
    cols: usize,
    /// Per evaluation node, `M × (P·M)`.
    z: Vec<DMatrix<f64>>,
    response: ProjectedField,
}

impl SpatialDesign {
    pub fn new(
        rows: usize,
        cols: usize,
        z: Vec<DMatrix<f64>>,
        response: ProjectedField,
    ) -> Result<Self> {
        if z.len() != rows * cols || response.rows() != rows || response.cols() != cols {
            return Err(Error::invalid("design and response lattices differ"));
        }
        if z.iter()
            .any(|zt| zt.nrows() != response.m() || zt.ncols() != z[0].ncols())
        {
            return Err(Error::invalid("design blocks have inconsistent shapes"));
        }
        Ok(Self {
            rows,
            cols,
            z,
            response,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn z(&self) -> &[DMatrix<f64>] {
        &self.z
    }

    pub fn response(&self) -> &ProjectedField {
        &self.response
    }

    pub fn m(&self) -> usize {
        self.response.m()
    }

    pub fn n_params(&self) -> usize {
        self.z[0].ncols()
    }

    /// Node-major `(rows·cols) × M` table of design column `q`.
    fn column_field(&self, q: usize) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.z.len(), self.m());
        for (node, zt) in self.z.iter().enumerate() {
            f.set_row(node, &zt.column(q).transpose());
        }
        f
    }

    /// Ordinary least squares in projected coordinates.
    pub fn ols(&self) -> Result<DVector<f64>> {
        let p = self.n_params();
        let mut a = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        for (node, zt) in self.z.iter().enumerate() {
            a += zt.transpose() * zt;
            b += zt.transpose() * self.response.coeffs().row(node).transpose();
        }
        pinv_solve(&a, &b)
    }
}

fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.amax() == 0.0 {
        return Ok(DVector::zeros(b.len()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(b, PINV_TOL * smax)
        .map_err(|e| Error::Numerical(format!("normal equations: {e}")))
}

/// Transformed design and response on the design's frequency lattice.
#[derive(Debug, Clone)]
pub struct FrequencyDesign {
    pub n1: usize,
    pub n2: usize,
    /// Per frequency, `M × (P·M)`.
    pub z: Vec<DMatrix<Complex64>>,
    pub y: Vec<DVector<Complex64>>,
}

pub fn transform_design(design: &SpatialDesign) -> FrequencyDesign {
    let (n1, n2) = design.dims();
    let m = design.m();
    let np = design.n_params();
    let scale = ((2.0 * std::f64::consts::PI).powi(2) * (n1 * n2) as f64).powf(-0.5);
    let mut z = vec![DMatrix::zeros(m, np); n1 * n2];
    for q in 0..np {
        let t = transform_columns(&design.column_field(q), n1, n2, n1, n2, scale);
        for (zw, v) in z.iter_mut().zip(&t.values) {
            zw.set_column(q, v);
        }
    }
    let y = transform_columns(design.response().coeffs(), n1, n2, n1, n2, scale).values;
    FrequencyDesign { n1, n2, z, y }
}

/// Result of the frequency-domain fit.
#[derive(Debug, Clone)]
pub struct SpectralGlsFit {
    pub theta: DVector<f64>,
    pub ridge: f64,
    /// Projected fitted values on the evaluation lattice, node-major.
    pub fitted: DMatrix<f64>,
    /// Per-frequency weights `((2π)^d f̂_ω + ridge I)^{−1}`.
    pub weights: Vec<DMatrix<Complex64>>,
}

/// `ridge = 1e-6 · max_ω ‖f̂_ω‖`.
pub fn default_ridge(est: &SpectralDensityEstimate) -> f64 {
    1e-6 * est.max_norm()
}

fn frequency_weight(f: &DMatrix<Complex64>, ridge: f64) -> Result<DMatrix<Complex64>> {
    let m = f.nrows();
    let scaled = f * Complex64::new((2.0 * std::f64::consts::PI).powi(2), 0.0)
        + DMatrix::<Complex64>::identity(m, m) * Complex64::new(ridge, 0.0);
    let h = (&scaled + scaled.adjoint()) * Complex64::new(0.5, 0.0);
    let ev = hermitian_eigenvalues(&h);
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !(min > max / SPECTRUM_CONDITION_LIMIT) {
        return Err(Error::Singular {
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
            context: "spectral density matrix is singular; pass a positive --ridge".into(),
        });
    }
    h.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular {
            condition: f64::INFINITY,
            context: "spectral density matrix is not positive definite; pass a positive --ridge"
                .into(),
        })
}

/// GLS with `Ĉ⁻¹` applied per frequency as `((2π)^d f̂_ω + ridge I)^{−1}`.
///
/// The estimate must live on the design's frequency lattice.
pub fn spectral_gls(
    design: &SpatialDesign,
    est: &SpectralDensityEstimate,
    ridge: f64,
) -> Result<SpectralGlsFit> {
    let (n1, n2) = design.dims();
    if (est.table.n1, est.table.n2) != (n1, n2) || est.table.m() != design.m() {
        return Err(Error::invalid(format!(
            "spectral estimate lattice {}×{} (M = {}) does not match the design {}×{} (M = {})",
            est.table.n1,
            est.table.n2,
            est.table.m(),
            n1,
            n2,
            design.m()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be non-negative"));
    }
    let fd = transform_design(design);
    let weights: Vec<DMatrix<Complex64>> = est
        .table
        .mats
        .iter()
        .map(|f| frequency_weight(f, ridge))
        .collect::<Result<_>>()?;
    let np = design.n_params();
    let mut a = DMatrix::<f64>::zeros(np, np);
    let mut b = DVector::<f64>::zeros(np);
    for ((z, y), q) in fd.z.iter().zip(&fd.y).zip(&weights) {
        let zq = z.adjoint() * q;
        a += (&zq * z).map(|v| v.re);
        b += (&zq * y).map(|v| v.re);
    }
    let theta = pinv_solve(&a, &b)?;
    let fitted = inverse_fitted(&fd, &theta, design.m());
    Ok(SpectralGlsFit {
        theta,
        ridge,
        fitted,
        weights,
    })
}

/// Inverse transform of `Z̃_ω θ` back to node-major projected values.
fn inverse_fitted(fd: &FrequencyDesign, theta: &DVector<f64>, m: usize) -> DMatrix<f64> {
    let (n1, n2) = (fd.n1, fd.n2);
    let ct = theta.map(|v| Complex64::new(v, 0.0));
    let spec: Vec<DVector<Complex64>> = fd.z.iter().map(|z| z * &ct).collect();
    let scale = ((2.0 * std::f64::consts::PI).powi(2) * (n1 * n2) as f64).sqrt() / (n1 * n2) as f64;
    let mut out = DMatrix::zeros(n1 * n2, m);
    let mut buf = vec![Complex64::new(0.0, 0.0); n1 * n2];
    for k in 0..m {
        for (dst, s) in buf.iter_mut().zip(&spec) {
            *dst = s[k];
        }
        fft2(&mut buf, n1, n2, true);
        for (node, v) in buf.iter().enumerate() {
            out[(node, k)] = v.re * scale;
        }
    }
    out
}

/// `β_{ij}` functions from stacked coefficients.
pub fn betas_from_theta(basis: &EigenSystem, theta: &DVector<f64>) -> Result<Vec<SampledFunction>> {
    let m = basis.len();
    if theta.len() % m != 0 {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: theta.len(),
        });
    }
    (0..theta.len() / m)
        .map(|q| basis.synthesize(&theta.rows(q * m, m).into_owned()))
        .collect()
}
