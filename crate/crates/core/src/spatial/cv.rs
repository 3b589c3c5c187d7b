//! Row-and-column deletion cross-validation on the lattice.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::gls::SpatialRegressors;
use super::{fit_spatial, SpatialConfig};
use crate::error::{Error, Result};
use crate::preprocess::LatticeField;

/// Per-node mean absolute errors on the `folds × folds` evaluation grid.
#[derive(Debug, Clone)]
pub struct SpatialCVReport {
    pub per_node: DMatrix<f64>,
    pub grand_mean: f64,
}

impl SpatialCVReport {
    pub fn n_nodes(&self) -> usize {
        self.per_node.len()
    }

    /// Table with rows `R1..`, columns `C1..` and a trailing grand mean.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for c in 0..self.per_node.ncols() {
            s.push_str(&format!(",C{}", c + 1));
        }
        s.push('\n');
        for r in 0..self.per_node.nrows() {
            s.push_str(&format!("R{}", r + 1));
            for c in 0..self.per_node.ncols() {
                s.push_str(&format!(",{:.9e}", self.per_node[(r, c)]));
            }
            s.push('\n');
        }
        s.push_str(&format!("grand_mean,{:.9e}\n", self.grand_mean));
        s
    }
}

/// Fold `n` (1-based) drops row `n` and column `n`, fits on the remaining
/// lattice, and predicts the dropped nodes of the evaluation grid
/// `[1, folds]²`; the first row and column are always kept as initial
/// conditions.
pub fn spatial_kfold_cv(
    field: &LatticeField,
    folds: usize,
    config: &SpatialConfig,
) -> Result<SpatialCVReport> {
    if folds == 0 {
        return Err(Error::invalid("at least one fold is required"));
    }
    if field.rows() < folds + 1 || field.cols() < folds + 1 {
        return Err(Error::invalid(format!(
            "{folds}-fold cross-validation needs at least a {0}×{0} lattice, got {1}×{2}",
            folds + 1,
            field.rows(),
            field.cols()
        )));
    }
    if config.lags.iter().any(|h| h[0] > 1 || h[1] > 1) {
        return Err(Error::invalid(
            "cross-validation predicts from the first row and column, so lags must be at most one node",
        ));
    }
    let fold_errors: Vec<Vec<((usize, usize), f64)>> = (1..=folds)
        .into_par_iter()
        .map(|n| run_fold(field, folds, n, config))
        .collect::<Result<_>>()?;

    let mut sum = DMatrix::zeros(folds, folds);
    let mut count = DMatrix::<f64>::zeros(folds, folds);
    for ((r, c), e) in fold_errors.into_iter().flatten() {
        sum[(r - 1, c - 1)] += e;
        count[(r - 1, c - 1)] += 1.0;
    }
    let per_node = sum.component_div(&count);
    let grand_mean = per_node.mean();
    Ok(SpatialCVReport {
        per_node,
        grand_mean,
    })
}

fn run_fold(
    field: &LatticeField,
    folds: usize,
    n: usize,
    config: &SpatialConfig,
) -> Result<Vec<((usize, usize), f64)>> {
    let rows: Vec<usize> = (0..field.rows()).filter(|&r| r != n).collect();
    let cols: Vec<usize> = (0..field.cols()).filter(|&c| c != n).collect();
    let train = field.select(&rows, &cols)?;
    let fit = fit_spatial(&train, config)?;
    let mean = fit.mean().values();
    let mut centred = field.data().clone();
    for mut col in centred.column_iter_mut() {
        col -= mean;
    }
    let centred = LatticeField::new(field.rows(), field.cols(), field.grid().clone(), centred)?;
    let regs = SpatialRegressors::from_centred(&centred, fit.mean().clone(), &config.lags)?;
    let g = field.grid().len() as f64;
    let targets = (1..=folds)
        .map(|c| (n, c))
        .chain((1..=folds).filter(|&r| r != n).map(|r| (r, n)));
    targets
        .map(|(r, c)| {
            let pred = regs.apply(r, c, &fit.betas)?.plus(regs.mean())?;
            let err = (field.data().column(field.node(r, c)) - pred.values())
                .abs()
                .sum()
                / g;
            Ok(((r, c), err))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnspace::{SampledFunction, TimeGrid};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_field(t: usize, seed: u64) -> LatticeField {
        let grid = TimeGrid::uniform(0.0, 1.0, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(20, t * t, |g, _| {
            (g as f64 * 0.3).cos() + rng.random_range(-1.0..1.0)
        });
        LatticeField::new(t, t, grid, data).unwrap()
    }

    #[test]
    fn ten_by_ten_reports_eighty_one_nodes() {
        let rep = spatial_kfold_cv(&noisy_field(10, 1), 9, &SpatialConfig::default()).unwrap();
        assert_eq!(rep.n_nodes(), 81);
        let avg = rep.per_node.iter().sum::<f64>() / 81.0;
        assert_abs_diff_eq!(rep.grand_mean, avg, epsilon = 1e-12);
        assert!(rep.grand_mean.is_finite() && rep.grand_mean > 0.0);
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.starts_with(",C1,C2"));
        assert!(csv.lines().nth(1).unwrap().starts_with("R1,"));
        assert!(csv.lines().last().unwrap().starts_with("grand_mean,"));
    }

    #[test]
    fn small_lattice_and_long_lags_are_rejected() {
        assert!(spatial_kfold_cv(&noisy_field(9, 2), 9, &SpatialConfig::default()).is_err());
        let cfg = SpatialConfig {
            lags: vec![[2, 0]],
            ..SpatialConfig::default()
        };
        assert!(spatial_kfold_cv(&noisy_field(10, 2), 9, &cfg).is_err());
    }

    /// Curves vary only on the first row and column, with values arranged so
    /// that every training lattice has the same node average.
    #[test]
    fn perfectly_predictable_field() {
        let grid = TimeGrid::uniform(0.0, 1.0, 15).unwrap();
        let mu = SampledFunction::from_fn(grid.clone(), |t| 1.0 + t);
        let f = SampledFunction::from_fn(grid.clone(), |t| (2.0 * t).sin());
        let g = SampledFunction::from_fn(grid.clone(), |t| t * t - 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut curves = vec![mu.clone(); 100];
        for n in 1..10 {
            let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let bump = f.scaled(a).plus(&g.scaled(b)).unwrap();
            curves[n] = mu.plus(&bump).unwrap();
            curves[n * 10] = mu.minus(&bump).unwrap();
        }
        let field = LatticeField::from_curves(10, 10, &curves).unwrap();
        let rep = spatial_kfold_cv(&field, 9, &SpatialConfig::default()).unwrap();
        assert!(rep.grand_mean <= 1e-6, "{}", rep.grand_mean);
    }
}
