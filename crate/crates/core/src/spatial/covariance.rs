//! Empirical spatial covariance operators, the long-run covariance and its
//! singular-value projection basis.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fnspace::{EigenSystem, KernelOperator, LowRankKernel, SampledFunction};
use crate::preprocess::LatticeField;

/// Default cumulative singular-value share retained by the projection.
pub const DEFAULT_THRESHOLD: f64 = 0.99;
const SHARE_SLACK: f64 = 1e-12;
const NEGLIGIBLE_SINGULAR: f64 = 1e-12;

fn check_lag(field: &LatticeField, lag: [usize; 2]) -> Result<()> {
    if lag[0] >= field.rows() || lag[1] >= field.cols() {
        return Err(Error::invalid(format!(
            "lag ({}, {}) outside a {}×{} lattice",
            lag[0],
            lag[1],
            field.rows(),
            field.cols()
        )));
    }
    Ok(())
}

/// Weight matrix `A` with `A[y, y − z] = 1/Π(T_i − z_i)` for every lag in
/// `[0, max_lag]²`, so that `Σ_z R̂_z` has kernel `X A Xᵀ`.
fn lag_weights(rows: usize, cols: usize, lags: impl Iterator<Item = [usize; 2]>) -> DMatrix<f64> {
    let n = rows * cols;
    let mut a = DMatrix::zeros(n, n);
    for z in lags {
        let w = 1.0 / ((rows - z[0]) * (cols - z[1])) as f64;
        for r in z[0]..rows {
            for c in z[1]..cols {
                a[(r * cols + c, (r - z[0]) * cols + c - z[1])] += w;
            }
        }
    }
    a
}

/// `R̂_z = (1/Π(T_i − z_i)) Σ_{y ≥ z} X_y ⊗ X_{y−z}`.
pub fn empirical_spatial_cov(field: &LatticeField, lag: [usize; 2]) -> Result<KernelOperator> {
    check_lag(field, lag)?;
    let a = lag_weights(field.rows(), field.cols(), std::iter::once(lag));
    let x = field.data();
    KernelOperator::new(field.grid().clone(), x * a * x.transpose())
}

/// Long-run covariance `Σ_z R̂_z` with its singular system.
#[derive(Debug, Clone)]
pub struct LongRunCovariance {
    pub operator: LowRankKernel,
    pub right: EigenSystem,
    pub left: EigenSystem,
    pub singulars: Vec<f64>,
    pub m: usize,
}

impl LongRunCovariance {
    /// Leading `m` right singular functions.
    pub fn basis(&self) -> EigenSystem {
        self.right.truncated(self.m)
    }

    /// Cumulative singular-value share of the first `m` components.
    pub fn share(&self, m: usize) -> f64 {
        cumulative_share(&self.singulars, m)
    }
}

fn effective(singulars: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let lead = singulars.first().copied().unwrap_or(0.0);
    singulars.iter().map(move |&s| {
        if s > NEGLIGIBLE_SINGULAR * lead {
            s
        } else {
            0.0
        }
    })
}

pub fn cumulative_share(singulars: &[f64], m: usize) -> f64 {
    let total: f64 = effective(singulars).sum();
    if total <= 0.0 {
        return 0.0;
    }
    effective(singulars).take(m).sum::<f64>() / total
}

/// Smallest `M` whose cumulative share reaches `threshold`.
pub fn select_components(singulars: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "share threshold {threshold} must lie in (0, 1]"
        )));
    }
    let total: f64 = effective(singulars).sum();
    if !(total > 0.0) {
        return Err(Error::Data(
            "long-run covariance vanishes: the field is degenerate".into(),
        ));
    }
    let target = (threshold + SHARE_SLACK).min(1.0);
    let mut acc = 0.0;
    for (i, s) in effective(singulars).enumerate() {
        acc += s;
        if acc / total >= target {
            return Ok(i + 1);
        }
    }
    Ok(singulars.len())
}

/// Sums `R̂_z` over `z ∈ [0, max_lag]²` (clipped to the lattice) and keeps the
/// components needed for `threshold` of the singular-value mass.
pub fn long_run_cov(
    field: &LatticeField,
    max_lag: usize,
    threshold: f64,
) -> Result<LongRunCovariance> {
    if max_lag >= field.rows().max(field.cols()) {
        return Err(Error::invalid(format!(
            "maximum lag {max_lag} must be below the lattice side"
        )));
    }
    let (rows, cols) = (field.rows(), field.cols());
    let lags =
        (0..=max_lag.min(rows - 1)).flat_map(|a| (0..=max_lag.min(cols - 1)).map(move |b| [a, b]));
    let a = lag_weights(rows, cols, lags);
    let x = field.data();
    let operator = LowRankKernel::new(field.grid().clone(), x * a, x.clone())?;
    let svd = operator.svd()?;
    let m = select_components(&svd.singulars, threshold)?;
    Ok(LongRunCovariance {
        operator,
        right: svd.right,
        left: svd.left,
        singulars: svd.singulars,
        m,
    })
}

/// Basis scores `⟨X_z, ψ_k⟩` of every lattice node.
#[derive(Debug, Clone)]
pub struct ProjectedField {
    rows: usize,
    cols: usize,
    /// (rows·cols) × M, node-major.
    coeffs: DMatrix<f64>,
    basis: EigenSystem,
}

impl ProjectedField {
    pub fn new(rows: usize, cols: usize, coeffs: DMatrix<f64>, basis: EigenSystem) -> Result<Self> {
        if coeffs.nrows() != rows * cols || coeffs.ncols() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: rows * cols * basis.len(),
                got: coeffs.nrows() * coeffs.ncols(),
            });
        }
        Ok(Self {
            rows,
            cols,
            coeffs,
            basis,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn m(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn basis(&self) -> &EigenSystem {
        &self.basis
    }

    pub fn coeff(&self, row: usize, col: usize, k: usize) -> f64 {
        self.coeffs[(row * self.cols + col, k)]
    }

    /// `Σ_k coeffs(z, k) ψ_k` at node `z`.
    pub fn reconstruct(&self, row: usize, col: usize) -> Result<SampledFunction> {
        let c = self.coeffs.row(row * self.cols + col).transpose();
        self.basis.synthesize(&c)
    }
}

pub fn project_field(field: &LatticeField, basis: &EigenSystem) -> Result<ProjectedField> {
    if !crate::fnspace::same_grid(field.grid(), basis.grid()) {
        return Err(Error::GridMismatch);
    }
    let coeffs = field.data().transpose() * basis.weighted_basis();
    ProjectedField::new(field.rows(), field.cols(), coeffs, basis.clone())
}
