//! ARH(1) processes: simulation, empirical covariance operators and the
//! lagged kernel regressors of the surface regression model.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fnspace::{
    eigh, polynomial_projector, same_grid, svd_op, KernelOperator, LowRankKernel, SampledFunction,
    TimeGrid,
};
use crate::preprocess::LatticeField;

/// Time-ordered sequence `Y_1..Y_N` of elements of H.
#[derive(Debug, Clone)]
pub struct SurfaceSeries {
    grid: Arc<TimeGrid>,
    /// G × N; column `t` is `Y_{t+1}`.
    data: DMatrix<f64>,
}

impl SurfaceSeries {
    pub fn new(grid: Arc<TimeGrid>, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: data.nrows(),
            });
        }
        if data.ncols() < 2 {
            return Err(Error::invalid(
                "a surface series needs at least two elements",
            ));
        }
        Ok(Self { grid, data })
    }

    pub fn from_elements(elements: &[SampledFunction]) -> Result<Self> {
        let first = elements
            .first()
            .ok_or_else(|| Error::invalid("empty series"))?;
        let grid = first.grid().clone();
        let mut data = DMatrix::zeros(grid.len(), elements.len());
        for (t, e) in elements.iter().enumerate() {
            if !same_grid(&grid, e.grid()) {
                return Err(Error::GridMismatch);
            }
            data.set_column(t, e.values());
        }
        Self::new(grid, data)
    }

    /// Reads a lattice of curves as a series of surfaces: the element at
    /// time node `g` is the lattice snapshot at `τ_g`, flattened row-major
    /// onto a unit-weight raster.
    pub fn from_lattice(field: &LatticeField) -> Result<Self> {
        let grid = TimeGrid::raster(field.n_nodes())?;
        Self::new(grid, field.data().transpose())
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn element(&self, t: usize) -> SampledFunction {
        SampledFunction::from_vector(self.grid.clone(), self.data.column(t).into_owned())
            .expect("column matches grid")
    }

    pub fn mean(&self) -> SampledFunction {
        SampledFunction::from_vector(
            self.grid.clone(),
            self.data.column_sum() / self.data.ncols() as f64,
        )
        .expect("mean matches grid")
    }
}

/// `ε_n = ρ(ε_{n−1}) + ϵ_n`, `Y_n = μ + ε_n`.
#[derive(Debug, Clone)]
pub struct ARH1Model {
    pub rho: KernelOperator,
    pub noise_cov: KernelOperator,
    pub mean: SampledFunction,
}

pub const DEFAULT_BURN_IN: usize = 50;

pub fn simulate_arh1(
    model: &ARH1Model,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SurfaceSeries> {
    let grid = model.rho.grid().clone();
    if !same_grid(&grid, model.noise_cov.grid()) || !same_grid(&grid, model.mean.grid()) {
        return Err(Error::GridMismatch);
    }
    let radius = svd_op(&model.rho)?
        .singulars
        .first()
        .copied()
        .unwrap_or(0.0);
    if radius >= 1.0 {
        return Err(Error::invalid(format!(
            "autocorrelation operator norm {radius:.4} must be below 1"
        )));
    }
    let noise = eigh(&model.noise_cov)?;
    if noise
        .values()
        .iter()
        .any(|&v| v < -1e-10 * noise.values()[0].abs().max(1.0))
    {
        return Err(Error::invalid(
            "noise covariance must be positive semidefinite",
        ));
    }
    // innovation = Σ_k √λ_k z_k φ_k
    let mut factor = noise.basis_matrix();
    for (mut col, &v) in factor.column_iter_mut().zip(noise.values()) {
        col *= v.max(0.0).sqrt();
    }
    let transition = {
        let mut m = model.rho.kernel().clone();
        for (mut col, w) in m.column_iter_mut().zip(grid.weights()) {
            col *= *w;
        }
        m
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = grid.len();
    let mut state = DVector::zeros(g);
    let mut data = DMatrix::zeros(g, n);
    for step in 0..burn_in + n {
        let z = DVector::from_iterator(g, (0..g).map(|_| StandardNormal.sample(&mut rng)));
        state = &transition * &state + &factor * z;
        if step >= burn_in {
            data.set_column(step - burn_in, &(&state + model.mean.values()));
        }
    }
    SurfaceSeries::new(grid, data)
}

/// `(1/N) Σ_t Y_t ⊗ Y_t`.
pub fn empirical_autocov(series: &SurfaceSeries) -> KernelOperator {
    let d = &series.data;
    let k = d * d.transpose() / series.len() as f64;
    KernelOperator::new(series.grid.clone(), k).expect("square kernel")
}

/// `(1/(N−1)) Σ_t Y_{t+1} ⊗ Y_t`.
pub fn empirical_crosscov(series: &SurfaceSeries) -> KernelOperator {
    let n = series.len();
    let next = series.data.columns(1, n - 1);
    let prev = series.data.columns(0, n - 1);
    let k = next * prev.transpose() / (n - 1) as f64;
    KernelOperator::new(series.grid.clone(), k).expect("square kernel")
}

/// `max(1, round(ln N))`.
pub fn truncation_level(n: usize) -> usize {
    ((n.max(1) as f64).ln().round() as usize).max(1)
}

/// Lagged regressors `X_t^i = u_{t−i} ⊗ u_{t−i−1}`, `i = 1..p`, where `u_s`
/// is `Y_s − μ̂` (optionally polynomial-smoothed).
#[derive(Debug, Clone)]
pub struct KernelRegressors {
    grid: Arc<TimeGrid>,
    p: usize,
    u: DMatrix<f64>,
    mean: SampledFunction,
}

impl KernelRegressors {
    /// Regressors built directly from factor columns `u_0..u_{N−1}`, with
    /// the given mean used when predicting levels.
    pub fn from_factors(
        grid: Arc<TimeGrid>,
        u: DMatrix<f64>,
        p: usize,
        mean: SampledFunction,
    ) -> Result<Self> {
        if u.nrows() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: u.nrows(),
            });
        }
        if p == 0 || p + 2 > u.ncols() {
            return Err(Error::invalid(format!(
                "lag order p = {p} needs 1 <= p <= N - 2 (N = {})",
                u.ncols()
            )));
        }
        Ok(Self { grid, p, u, mean })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.u.ncols() == 0
    }

    pub fn factors(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn mean(&self) -> &SampledFunction {
        &self.mean
    }

    /// First time index (0-based) whose regressors all exist.
    pub fn first_target(&self) -> usize {
        self.p + 1
    }

    /// `X_t^i`, `1 ≤ i ≤ p`.
    pub fn kernel(&self, t: usize, i: usize) -> Result<LowRankKernel> {
        if i == 0 || i > self.p || t < self.first_target() || t >= self.len() {
            return Err(Error::invalid(format!("no regressor X_{t}^{i}")));
        }
        LowRankKernel::new(
            self.grid.clone(),
            self.u.columns(t - i, 1).into_owned(),
            self.u.columns(t - i - 1, 1).into_owned(),
        )
    }

    /// `Σ_i X_t^i(β_i)`.
    pub fn apply(&self, t: usize, betas: &[SampledFunction]) -> Result<SampledFunction> {
        if betas.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: betas.len(),
            });
        }
        let mut out = DVector::zeros(self.grid.len());
        for (i, beta) in betas.iter().enumerate() {
            let k = self.kernel(t, i + 1)?;
            out += k.apply(beta)?.values();
        }
        SampledFunction::from_vector(self.grid.clone(), out)
    }
}

/// Plug-in regressors from a series: `u_s = Π(Y_s − μ̂)` with `Π` the
/// degree-`d` polynomial projector when `poly_degree` is set.
pub fn build_kernel_regressors(
    series: &SurfaceSeries,
    p: usize,
    poly_degree: Option<usize>,
) -> Result<KernelRegressors> {
    let n = series.len();
    if p == 0 || p >= n.saturating_sub(2) {
        return Err(Error::invalid(format!(
            "lag order p = {p} must satisfy 1 <= p < N - 2 (N = {n})"
        )));
    }
    let mean = series.mean();
    let mut u = series.data.clone();
    for mut col in u.column_iter_mut() {
        col -= mean.values();
    }
    if let Some(d) = poly_degree {
        if d > 5 {
            return Err(Error::invalid("polynomial degree must be at most 5"));
        }
        u = polynomial_projector(&series.grid, d)? * u;
    }
    KernelRegressors::from_factors(series.grid.clone(), u, p, mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnspace::{inner_product, poly_smooth_kernel, tensor_product};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn unit_fn(grid: &Arc<TimeGrid>) -> SampledFunction {
        let f = SampledFunction::from_fn(grid.clone(), |t| (std::f64::consts::PI * t).sin() + 0.3);
        f.scaled(1.0 / f.norm())
    }

    fn diagonal_model(grid: &Arc<TimeGrid>, lambda: f64) -> (ARH1Model, SampledFunction) {
        let psi = unit_fn(grid);
        let rho = tensor_product(&psi, &psi).unwrap().scaled(lambda);
        let noise_cov = KernelOperator::identity(grid.clone()).scaled(0.05);
        let model = ARH1Model {
            rho,
            noise_cov,
            mean: SampledFunction::zeros(grid.clone()),
        };
        (model, psi)
    }

    fn exp_cov(grid: &Arc<TimeGrid>) -> KernelOperator {
        let t = grid.nodes();
        let k = DMatrix::from_fn(t.len(), t.len(), |i, j| (-(t[i] - t[j]).abs() / 0.3).exp());
        KernelOperator::new(grid.clone(), k).unwrap()
    }

    fn projected(series: &SurfaceSeries, psi: &SampledFunction) -> Vec<f64> {
        (0..series.len())
            .map(|t| inner_product(&series.element(t), psi).unwrap())
            .collect()
    }

    #[test]
    fn zero_rho_gives_white_noise() {
        let grid = TimeGrid::uniform(0.0, 1.0, 12).unwrap();
        let model = ARH1Model {
            rho: KernelOperator::zeros(grid.clone()),
            noise_cov: exp_cov(&grid),
            mean: SampledFunction::zeros(grid.clone()),
        };
        let s = simulate_arh1(&model, 2000, 50, 7).unwrap();
        let r0 = empirical_autocov(&s).hs_norm();
        let r1 = empirical_crosscov(&s).hs_norm();
        assert!(r1 <= 3.0 / (2000f64).sqrt() * r0, "{r1} vs {r0}");
    }

    #[test]
    fn zero_noise_gives_zero_series() {
        let grid = TimeGrid::uniform(0.0, 1.0, 6).unwrap();
        let model = ARH1Model {
            rho: KernelOperator::zeros(grid.clone()),
            noise_cov: KernelOperator::zeros(grid.clone()),
            mean: SampledFunction::zeros(grid.clone()),
        };
        let s = simulate_arh1(&model, 20, 50, 1).unwrap();
        assert_eq!(s.data().amax(), 0.0);
    }

    #[test]
    fn diagonal_model_lag_one_autocorrelation() {
        let grid = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
        let (model, psi) = diagonal_model(&grid, 0.8);
        let s = simulate_arh1(&model, 2000, 50, 11).unwrap();
        let x = projected(&s, &psi);
        let num: f64 = x.windows(2).map(|w| w[0] * w[1]).sum();
        let den: f64 = x.iter().map(|v| v * v).sum();
        assert!((num / den - 0.8).abs() <= 0.1, "{}", num / den);
    }

    #[test]
    fn simulation_rejects_explosive_and_is_deterministic() {
        let grid = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
        let (mut model, _) = diagonal_model(&grid, 0.5);
        let a = simulate_arh1(&model, 30, 50, 3).unwrap();
        let b = simulate_arh1(&model, 30, 50, 3).unwrap();
        assert_eq!(a.data(), b.data());
        model.rho = model.rho.scaled(2.5);
        assert!(simulate_arh1(&model, 30, 50, 3).is_err());
    }

    #[test]
    fn autocov_examples() {
        let grid = TimeGrid::uniform(0.0, 1.0, 9).unwrap();
        let f = SampledFunction::from_fn(grid.clone(), |t| 1.0 + t);
        let ff = tensor_product(&f, &f).unwrap();
        let constant = SurfaceSeries::from_elements(&vec![f.clone(); 5]).unwrap();
        assert!(empirical_autocov(&constant).minus(&ff).unwrap().hs_norm() < 1e-12);
        assert!(empirical_crosscov(&constant).minus(&ff).unwrap().hs_norm() < 1e-12);
        let pm = SurfaceSeries::from_elements(&[f.clone(), f.scaled(-1.0)]).unwrap();
        assert!(empirical_autocov(&pm).minus(&ff).unwrap().hs_norm() < 1e-12);
        let alt: Vec<_> = (0..6)
            .map(|t| f.scaled(if t % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        let alt = SurfaceSeries::from_elements(&alt).unwrap();
        assert!(empirical_crosscov(&alt).plus(&ff).unwrap().hs_norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = DMatrix::from_fn(9, 50, |_, _| rng.random_range(-1.0..1.0));
        let s = SurfaceSeries::new(grid, data).unwrap();
        let mean_sq: f64 = (0..50).map(|t| s.element(t).norm_sq()).sum::<f64>() / 50.0;
        assert_abs_diff_eq!(empirical_autocov(&s).trace(), mean_sq, epsilon = 1e-10);
    }

    #[test]
    fn crosscov_yule_walker_scalar() {
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let (model, psi) = diagonal_model(&grid, 0.5);
        let s = simulate_arh1(&model, 5000, 50, 17).unwrap();
        let r0 = empirical_autocov(&s).bilinear(&psi, &psi).unwrap();
        let r1 = empirical_crosscov(&s).bilinear(&psi, &psi).unwrap();
        assert!((r1 / r0 - 0.5).abs() <= 0.08, "{}", r1 / r0);
    }

    #[test]
    fn yule_walker_consistency_improves_with_n() {
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let (model, _) = diagonal_model(&grid, 0.6);
        let gap = |n| {
            let s = simulate_arh1(&model, n, 50, 23).unwrap();
            let r0 = empirical_autocov(&s);
            let r1 = empirical_crosscov(&s);
            r1.minus(&model.rho.compose(&r0).unwrap())
                .unwrap()
                .hs_norm()
                / r0.hs_norm()
        };
        assert!(gap(2000) < gap(200));
    }

    #[test]
    fn truncation_level_examples() {
        assert_eq!(truncation_level(1061), 7);
        assert_eq!(truncation_level(3), 1);
        assert_eq!(truncation_level(55), 4);
        let mut prev = 0;
        for n in (3..1_000_000).step_by(997) {
            let k = truncation_level(n);
            assert!(k >= prev && k < n && (k as f64) <= (n as f64).ln() + 1.0);
            prev = k;
        }
    }

    #[test]
    fn regressor_examples() {
        let grid = TimeGrid::uniform(0.0, 1.0, 7).unwrap();
        let f = SampledFunction::from_fn(grid.clone(), |t| t);
        let g = SampledFunction::from_fn(grid.clone(), |t| 1.0 - t * t);
        // u_0 = g, u_1 = f, u_2 = 0
        let mut u = DMatrix::zeros(7, 3);
        u.set_column(0, g.values());
        u.set_column(1, f.values());
        let x = KernelRegressors::from_factors(
            grid.clone(),
            u,
            1,
            SampledFunction::zeros(grid.clone()),
        )
        .unwrap();
        let k = x.kernel(2, 1).unwrap().to_dense();
        assert_eq!(k.kernel(), tensor_product(&f, &g).unwrap().kernel());

        let mut u0 = DMatrix::zeros(7, 4);
        u0.set_column(0, f.values());
        let x = KernelRegressors::from_factors(
            grid.clone(),
            u0,
            1,
            SampledFunction::zeros(grid.clone()),
        )
        .unwrap();
        assert_eq!(x.kernel(2, 1).unwrap().to_dense().kernel().amax(), 0.0);
    }

    #[test]
    fn regressors_reject_long_lags_and_support_smoothing() {
        let grid = TimeGrid::uniform(0.0, 1.0, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = SurfaceSeries::new(
            grid.clone(),
            DMatrix::from_fn(12, 6, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        assert!(build_kernel_regressors(&s, 4, None).is_err());
        assert!(build_kernel_regressors(&s, 3, None).is_ok());
        let raw = build_kernel_regressors(&s, 2, None).unwrap();
        let smooth = build_kernel_regressors(&s, 2, Some(2)).unwrap();
        let (oracle, _) = poly_smooth_kernel(&raw.kernel(4, 1).unwrap().to_dense(), 2).unwrap();
        let got = smooth.kernel(4, 1).unwrap().to_dense();
        assert!((got.kernel() - oracle.kernel()).amax() < 1e-10);
    }

    proptest::proptest! {
        #[test]
        fn autocov_is_psd(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
            let s = SurfaceSeries::new(grid, DMatrix::from_fn(8, 5, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            let eig = eigh(&empirical_autocov(&s)).unwrap();
            proptest::prop_assert!(*eig.values().last().unwrap() >= -1e-10);
        }

        #[test]
        fn regressor_adjoint_swaps_factors(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = TimeGrid::uniform(0.0, 1.0, 6).unwrap();
            let s = SurfaceSeries::new(grid, DMatrix::from_fn(6, 8, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            let x = build_kernel_regressors(&s, 2, None).unwrap();
            let k = x.kernel(5, 2).unwrap();
            let mu = s.mean();
            let a = s.element(3).minus(&mu).unwrap();
            let b = s.element(2).minus(&mu).unwrap();
            let expected = tensor_product(&b, &a).unwrap();
            let adj = k.adjoint().to_dense();
            proptest::prop_assert_eq!(adj.kernel(), expected.kernel());
        }
    }
}
