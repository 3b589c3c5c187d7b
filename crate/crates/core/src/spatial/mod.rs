//! Frequency-domain GLS for curves on a regular two-dimensional lattice.
//!
//! Pipeline: detrend and taper the field, take the leading right singular
//! functions of the long-run spatial covariance as basis, transform the
//! projected field, smooth its periodograms into a spectral density
//! estimate, and solve the regression on kernel regressors built from
//! neighbouring nodes with the inverse spectrum as per-frequency weight.

pub mod covariance;
pub mod cv;
pub mod gls;
pub mod spectrum;

pub use covariance::{
    cumulative_share, empirical_spatial_cov, long_run_cov, project_field, select_components,
    LongRunCovariance, ProjectedField, DEFAULT_THRESHOLD,
};
pub use cv::{spatial_kfold_cv, SpatialCVReport};
pub use gls::{
    betas_from_theta, build_spatial_regressors, default_ridge, spectral_gls, Lag, SpatialDesign,
    SpatialRegressors, SpectralGlsFit, DEFAULT_LAGS,
};
pub use spectrum::{
    default_bandwidth, inverse_sfdft_cov, periodograms, periodograms_padded, sfdft,
    spectral_density_estimate, spectral_density_on_grid, Periodograms, SpectralDensityEstimate,
    Window,
};

use crate::error::{Error, Result};
use crate::fnspace::{EigenSystem, SampledFunction};
use crate::preprocess::{detrend, taper, LatticeField};

pub const DEFAULT_TAPER: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct SpatialConfig {
    pub lags: Vec<Lag>,
    pub threshold: f64,
    /// Overrides the share-based component count.
    pub m: Option<usize>,
    pub max_lag: Option<usize>,
    pub taper_fraction: f64,
    pub bandwidth: Option<f64>,
    pub window: Window,
    pub ridge: Option<f64>,
    pub include_axis: bool,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            lags: DEFAULT_LAGS.to_vec(),
            threshold: DEFAULT_THRESHOLD,
            m: None,
            max_lag: None,
            taper_fraction: DEFAULT_TAPER,
            bandwidth: None,
            window: Window::BartlettHann,
            ridge: None,
            include_axis: false,
        }
    }
}

/// Everything produced by one fit.
#[derive(Debug, Clone)]
pub struct SpatialFit {
    pub long_run: LongRunCovariance,
    pub basis: EigenSystem,
    pub periodograms: Periodograms,
    /// Estimate on the observation lattice.
    pub estimate: SpectralDensityEstimate,
    /// Estimate on the evaluation lattice, used as GLS weight.
    pub eval_estimate: SpectralDensityEstimate,
    pub regressors: SpatialRegressors,
    pub gls: SpectralGlsFit,
    pub betas: Vec<SampledFunction>,
    /// Predicted curves `μ̂ + Σ X_z(β̂)` on the evaluation lattice, node-major.
    pub predictions: Vec<SampledFunction>,
}

impl SpatialFit {
    pub fn mean(&self) -> &SampledFunction {
        self.regressors.mean()
    }

    pub fn eval_dims(&self) -> (usize, usize) {
        self.regressors.eval_dims()
    }

    pub fn eval_origin(&self) -> (usize, usize) {
        self.regressors.eval_origin()
    }
}

pub fn fit_spatial(field: &LatticeField, config: &SpatialConfig) -> Result<SpatialFit> {
    let (x, mean) = detrend(field);
    let tapered = taper(&x, config.taper_fraction)?;
    let side = field.rows().min(field.cols());
    let max_lag = config.max_lag.unwrap_or(side - 1);
    let long_run = long_run_cov(&tapered, max_lag, config.threshold)?;
    let m = match config.m {
        Some(0) => return Err(Error::invalid("component count M must be positive")),
        Some(m) if m > long_run.right.len() => {
            return Err(Error::invalid(format!(
                "M = {m} exceeds the {} available components",
                long_run.right.len()
            )))
        }
        Some(m) => m,
        None => long_run.m,
    };
    let basis = long_run.right.truncated(m);
    let pg = periodograms(&project_field(&tapered, &basis)?);
    let bandwidth = config
        .bandwidth
        .unwrap_or_else(|| default_bandwidth(field.rows().max(field.cols())));
    let estimate = spectral_density_estimate(&pg, bandwidth, config.window, config.include_axis)?;

    let regressors = gls::SpatialRegressors::from_centred(&x, mean, &config.lags)?;
    let design = regressors.design(&basis)?;
    let (er, ec) = design.dims();
    let eval_estimate =
        spectral_density_on_grid(&pg, er, ec, bandwidth, config.window, config.include_axis)?;
    let ridge = config
        .ridge
        .unwrap_or_else(|| default_ridge(&eval_estimate));
    let gls = spectral_gls(&design, &eval_estimate, ridge)?;
    let betas = betas_from_theta(&basis, &gls.theta)?;
    let (r0, c0) = regressors.eval_origin();
    let mut predictions = Vec::with_capacity(er * ec);
    for r in r0..r0 + er {
        for c in c0..c0 + ec {
            predictions.push(regressors.apply(r, c, &betas)?.plus(regressors.mean())?);
        }
    }
    Ok(SpatialFit {
        long_run,
        basis,
        periodograms: pg,
        estimate,
        eval_estimate,
        regressors,
        gls,
        betas,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnspace::TimeGrid;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pipeline_runs_on_random_field() {
        let grid = TimeGrid::uniform(0.0, 1.0, 25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = DMatrix::from_fn(25, 100, |g, _| {
            (g as f64 * 0.2).sin() + rng.random_range(-1.0..1.0)
        });
        let field = LatticeField::new(10, 10, grid, data).unwrap();
        let fit = fit_spatial(&field, &SpatialConfig::default()).unwrap();
        assert_eq!(fit.eval_dims(), (9, 9));
        assert_eq!(fit.predictions.len(), 81);
        assert_eq!(fit.betas.len(), 6);
        assert!(fit.basis.len() >= 1);
        let cfg = SpatialConfig {
            m: Some(3),
            window: Window::BlackmanHarris,
            ..SpatialConfig::default()
        };
        assert_eq!(fit_spatial(&field, &cfg).unwrap().basis.len(), 3);
    }
}
