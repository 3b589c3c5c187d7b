//! Spatial functional DFT, periodogram operators, window-smoothed spectral
//! density estimates and the inverse transform back to lag covariances.
//!
//! Frequencies live on the lattice `ω = 2π (a/n₁, b/n₂)`, `a ∈ [0, n₁)`,
//! `b ∈ [0, n₂)`, stored row-major (`a · n₂ + b`). All operators are
//! represented by their `M × M` matrices in the projection basis.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::covariance::ProjectedField;
use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;
const D: i32 = 2;

/// Smoothing window on `[−1, 1]`, normalized to unit integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    BartlettHann,
    BlackmanHarris,
    /// Flat window on `[−1, 1)`; its 2π-periodization is exactly constant.
    Uniform,
}

const BLACKMAN_HARRIS: [f64; 4] = [0.35875, 0.48829, 0.14128, 0.01168];

impl Window {
    pub fn id(self) -> &'static str {
        match self {
            Window::BartlettHann => "bartlett-hann",
            Window::BlackmanHarris => "blackman-harris",
            Window::Uniform => "uniform",
        }
    }

    /// One-dimensional profile.
    pub fn value_1d(self, u: f64) -> f64 {
        match self {
            Window::BartlettHann => {
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    0.62 - 0.24 * u.abs() + 0.38 * (PI * u).cos()
                }
            }
            Window::BlackmanHarris => {
                if u.abs() >= 1.0 {
                    return 0.0;
                }
                let [a0, a1, a2, a3] = BLACKMAN_HARRIS;
                (a0 + a1 * (PI * u).cos() + a2 * (2.0 * PI * u).cos() + a3 * (3.0 * PI * u).cos())
                    / (2.0 * a0)
            }
            Window::Uniform => {
                if (-1.0..1.0).contains(&u) {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }

    /// Separable two-dimensional window.
    pub fn value(self, x: [f64; 2]) -> f64 {
        self.value_1d(x[0]) * self.value_1d(x[1])
    }

    /// One factor of `W^{(N)}(x) = B^{−d} Σ_j W((x + 2πj)/B)`.
    pub fn periodized_1d(self, x: f64, bandwidth: f64) -> f64 {
        [-1.0, 0.0, 1.0]
            .iter()
            .map(|j| self.value_1d((x + TWO_PI * j) / bandwidth))
            .sum::<f64>()
            / bandwidth
    }

    pub fn periodized(self, x: [f64; 2], bandwidth: f64) -> f64 {
        self.periodized_1d(x[0], bandwidth) * self.periodized_1d(x[1], bandwidth)
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bartlett-hann" => Ok(Window::BartlettHann),
            "blackman-harris" | "blackman-harris-like" => Ok(Window::BlackmanHarris),
            "uniform" => Ok(Window::Uniform),
            other => Err(Error::invalid(format!(
                "unknown window '{other}' (expected bartlett-hann or blackman-harris)"
            ))),
        }
    }
}

pub fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if !(bandwidth > 0.0 && bandwidth <= TWO_PI) {
        return Err(Error::invalid(format!(
            "bandwidth {bandwidth} must lie in (0, 2π]"
        )));
    }
    Ok(())
}

/// `2π · T^{−1/5}`.
pub fn default_bandwidth(side: usize) -> f64 {
    TWO_PI * (side.max(1) as f64).powf(-0.2)
}

/// Complex vectors indexed by a frequency lattice.
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    pub n1: usize,
    pub n2: usize,
    pub values: Vec<DVector<Complex64>>,
}

impl FrequencyTable {
    pub fn at(&self, a: usize, b: usize) -> &DVector<Complex64> {
        &self.values[a * self.n2 + b]
    }

    pub fn omega(&self, a: usize, b: usize) -> [f64; 2] {
        [
            TWO_PI * a as f64 / self.n1 as f64,
            TWO_PI * b as f64 / self.n2 as f64,
        ]
    }
}

/// In-place 2-D FFT of a row-major `n1 × n2` array.
pub(crate) fn fft2(data: &mut [Complex64], n1: usize, n2: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (f1, f2) = if inverse {
        (planner.plan_fft_inverse(n1), planner.plan_fft_inverse(n2))
    } else {
        (planner.plan_fft_forward(n1), planner.plan_fft_forward(n2))
    };
    for row in data.chunks_mut(n2) {
        f2.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); n1];
    for b in 0..n2 {
        for a in 0..n1 {
            column[a] = data[a * n2 + b];
        }
        f1.process(&mut column);
        for a in 0..n1 {
            data[a * n2 + b] = column[a];
        }
    }
}

/// Transforms each column of a node-major `(rows·cols) × m` table on a
/// zero-padded `n1 × n2` lattice, scaled by `scale`.
pub(crate) fn transform_columns(
    coeffs: &DMatrix<f64>,
    rows: usize,
    cols: usize,
    n1: usize,
    n2: usize,
    scale: f64,
) -> FrequencyTable {
    let m = coeffs.ncols();
    let mut values = vec![DVector::zeros(m); n1 * n2];
    let mut buf = vec![Complex64::new(0.0, 0.0); n1 * n2];
    for k in 0..m {
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for r in 0..rows {
            for c in 0..cols {
                buf[r * n2 + c] = Complex64::new(coeffs[(r * cols + c, k)], 0.0);
            }
        }
        fft2(&mut buf, n1, n2, false);
        for (v, x) in values.iter_mut().zip(&buf) {
            v[k] = x * scale;
        }
    }
    FrequencyTable { n1, n2, values }
}

fn sfdft_scale(n_obs: usize) -> f64 {
    (TWO_PI.powi(D) * n_obs as f64).powf(-0.5)
}

/// `X̃_ω = ((2π)^d N)^{−1/2} Σ_z coeffs(z) e^{−i⟨ω, z⟩}` on the field's own lattice.
pub fn sfdft(proj: &ProjectedField) -> FrequencyTable {
    sfdft_padded(proj, proj.rows(), proj.cols()).expect("unpadded lattice")
}

/// Same transform on a zero-padded `n1 × n2` frequency lattice.
pub fn sfdft_padded(proj: &ProjectedField, n1: usize, n2: usize) -> Result<FrequencyTable> {
    if n1 < proj.rows() || n2 < proj.cols() {
        return Err(Error::invalid("padded lattice is smaller than the field"));
    }
    let n_obs = proj.rows() * proj.cols();
    Ok(transform_columns(
        proj.coeffs(),
        proj.rows(),
        proj.cols(),
        n1,
        n2,
        sfdft_scale(n_obs),
    ))
}

/// `I_ω = X̃_ω X̃_ωᴴ`.
pub fn periodogram(x: &DVector<Complex64>) -> DMatrix<Complex64> {
    x * x.adjoint()
}

/// Complex matrices indexed by a frequency lattice.
#[derive(Debug, Clone)]
pub struct FrequencyMatrices {
    pub n1: usize,
    pub n2: usize,
    pub mats: Vec<DMatrix<Complex64>>,
}

impl FrequencyMatrices {
    pub fn at(&self, a: usize, b: usize) -> &DMatrix<Complex64> {
        &self.mats[a * self.n2 + b]
    }

    pub fn m(&self) -> usize {
        self.mats.first().map_or(0, |m| m.nrows())
    }

    pub fn omega(&self, a: usize, b: usize) -> [f64; 2] {
        [
            TWO_PI * a as f64 / self.n1 as f64,
            TWO_PI * b as f64 / self.n2 as f64,
        ]
    }
}

/// Periodogram operators of an observed `t1 × t2` lattice.
#[derive(Debug, Clone)]
pub struct Periodograms {
    pub table: FrequencyMatrices,
    pub obs_dims: (usize, usize),
}

impl Periodograms {
    pub fn n_obs(&self) -> usize {
        self.obs_dims.0 * self.obs_dims.1
    }

    pub fn is_padded(&self) -> bool {
        (self.table.n1, self.table.n2) != self.obs_dims
    }
}

pub fn periodograms(proj: &ProjectedField) -> Periodograms {
    let table = sfdft(proj);
    Periodograms {
        table: FrequencyMatrices {
            n1: table.n1,
            n2: table.n2,
            mats: table.values.iter().map(periodogram).collect(),
        },
        obs_dims: (proj.rows(), proj.cols()),
    }
}

/// Periodograms on a `2T₁ × 2T₂` lattice, whose inverse transform gives the
/// non-circular lag covariances.
pub fn periodograms_padded(proj: &ProjectedField) -> Periodograms {
    let table = sfdft_padded(proj, 2 * proj.rows(), 2 * proj.cols()).expect("padding is larger");
    Periodograms {
        table: FrequencyMatrices {
            n1: table.n1,
            n2: table.n2,
            mats: table.values.iter().map(periodogram).collect(),
        },
        obs_dims: (proj.rows(), proj.cols()),
    }
}

/// Window-smoothed spectral density operator on a frequency lattice.
#[derive(Debug, Clone)]
pub struct SpectralDensityEstimate {
    pub table: FrequencyMatrices,
    pub bandwidth: f64,
    pub window: Window,
    pub include_axis: bool,
}

impl SpectralDensityEstimate {
    /// Frequencies with both indices nonzero unless axis frequencies are included.
    pub fn reported(&self, a: usize, b: usize) -> bool {
        self.include_axis || (a != 0 && b != 0)
    }

    /// Largest operator norm over the lattice.
    pub fn max_norm(&self) -> f64 {
        self.table
            .mats
            .iter()
            .map(|m| {
                hermitian_eigenvalues(m)
                    .iter()
                    .fold(0.0f64, |acc, v| acc.max(v.abs()))
            })
            .fold(0.0, f64::max)
    }

    /// `omega_row,omega_col,k,l,re,im` rows over the reported frequencies.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("omega_row,omega_col,k,l,re,im\n");
        for a in 0..self.table.n1 {
            for b in 0..self.table.n2 {
                if !self.reported(a, b) {
                    continue;
                }
                let [w1, w2] = self.table.omega(a, b);
                let mat = self.table.at(a, b);
                for k in 0..mat.nrows() {
                    for l in 0..mat.ncols() {
                        let v = mat[(k, l)];
                        s.push_str(&format!(
                            "{:.10e},{:.10e},{},{},{:.10e},{:.10e}\n",
                            w1,
                            w2,
                            k + 1,
                            l + 1,
                            v.re,
                            v.im
                        ));
                    }
                }
            }
        }
        s
    }
}

pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    SymmetricEigen::new(h).eigenvalues.iter().copied().collect()
}

/// `f̂_ω = ((2π)^d / N) Σ_{z} W^{(N)}(ω − 2πz/T) I_{2πz/T}` on the
/// periodogram lattice, with `z` ranging over `[1, T−1]²` (or the full
/// lattice with `include_axis`).
pub fn spectral_density_estimate(
    pg: &Periodograms,
    bandwidth: f64,
    window: Window,
    include_axis: bool,
) -> Result<SpectralDensityEstimate> {
    spectral_density_on_grid(
        pg,
        pg.table.n1,
        pg.table.n2,
        bandwidth,
        window,
        include_axis,
    )
}

/// The same estimator evaluated at the frequencies of an `n1 × n2` lattice.
pub fn spectral_density_on_grid(
    pg: &Periodograms,
    n1: usize,
    n2: usize,
    bandwidth: f64,
    window: Window,
    include_axis: bool,
) -> Result<SpectralDensityEstimate> {
    check_bandwidth(bandwidth)?;
    if pg.is_padded() {
        return Err(Error::invalid(
            "smoothing needs periodograms on the observation lattice",
        ));
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid("empty target frequency lattice"));
    }
    let (t1, t2) = (pg.table.n1, pg.table.n2);
    let m = pg.table.m();
    let src1: Vec<usize> = (0..t1).filter(|&z| include_axis || z != 0).collect();
    let src2: Vec<usize> = (0..t2).filter(|&z| include_axis || z != 0).collect();
    let weights = |n: usize, t: usize, src: &[usize]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|a| {
                let w = TWO_PI * a as f64 / n as f64;
                src.iter()
                    .map(|&z| window.periodized_1d(w - TWO_PI * z as f64 / t as f64, bandwidth))
                    .collect()
            })
            .collect()
    };
    let w1 = weights(n1, t1, &src1);
    let w2 = weights(n2, t2, &src2);
    let scale = TWO_PI.powi(D) / pg.n_obs() as f64;
    let mut mats = Vec::with_capacity(n1 * n2);
    let mut fallbacks = 0;
    for a in 0..n1 {
        for b in 0..n2 {
            let mut acc = DMatrix::<Complex64>::zeros(m, m);
            let mut total = 0.0;
            for (i, &z1) in src1.iter().enumerate() {
                let wa = w1[a][i];
                if wa == 0.0 {
                    continue;
                }
                for (j, &z2) in src2.iter().enumerate() {
                    let w = wa * w2[b][j];
                    if w != 0.0 {
                        acc += pg.table.at(z1, z2) * Complex64::new(scale * w, 0.0);
                        total += w;
                    }
                }
            }
            if total == 0.0 {
                fallbacks += 1;
                let z1 = (a * t1 + n1 / 2) / n1 % t1;
                let z2 = (b * t2 + n2 / 2) / n2 % t2;
                acc = pg.table.at(z1, z2).clone();
            }
            mats.push(acc);
        }
    }
    if fallbacks > 0 {
        warn!("bandwidth {bandwidth:.4} leaves {fallbacks} frequencies without neighbours; using raw periodograms there");
    }
    Ok(SpectralDensityEstimate {
        table: FrequencyMatrices { n1, n2, mats },
        bandwidth,
        window,
        include_axis,
    })
}

/// Real lag covariances indexed by lag modulo the frequency lattice.
#[derive(Debug, Clone)]
pub struct LagCovariances {
    pub n1: usize,
    pub n2: usize,
    pub mats: Vec<DMatrix<f64>>,
}

impl LagCovariances {
    /// Lag `(x₁, x₂)`, negative components wrapping around the lattice.
    pub fn lag(&self, x1: isize, x2: isize) -> &DMatrix<f64> {
        let a = x1.rem_euclid(self.n1 as isize) as usize;
        let b = x2.rem_euclid(self.n2 as isize) as usize;
        &self.mats[a * self.n2 + b]
    }
}

const IMAG_DISCARD: f64 = 1e-10;
const IMAG_REJECT: f64 = 1e-6;

/// `r̂_x = ((2π)^d / n_ω) Σ_ω f_ω e^{i⟨ω, x⟩}`.
///
/// The `(2π)^d / n_ω` factor is the frequency-cell volume, so raw padded
/// periodograms return the biased empirical lag covariances exactly.
pub fn inverse_sfdft_cov(table: &FrequencyMatrices) -> Result<LagCovariances> {
    let (n1, n2) = (table.n1, table.n2);
    let m = table.m();
    let count = n1 * n2;
    let scale = TWO_PI.powi(D) / count as f64;
    let mut mats = vec![DMatrix::zeros(m, m); count];
    let mut buf = vec![Complex64::new(0.0, 0.0); count];
    let mut worst = 0.0f64;
    let mut peak = 0.0f64;
    for k in 0..m {
        for l in 0..m {
            for (dst, src) in buf.iter_mut().zip(&table.mats) {
                *dst = src[(k, l)];
            }
            fft2(&mut buf, n1, n2, true);
            for (out, v) in mats.iter_mut().zip(&buf) {
                let v = v * scale;
                worst = worst.max(v.im.abs());
                peak = peak.max(v.re.abs());
                out[(k, l)] = v.re;
            }
        }
    }
    let tol = |t: f64| t * peak.max(1.0);
    if worst > tol(IMAG_REJECT) {
        return Err(Error::Numerical(format!(
            "inverse transform left an imaginary residue of {worst:.3e}; the spectral table is not conjugate symmetric"
        )));
    }
    if worst > tol(IMAG_DISCARD) {
        warn!("discarding an imaginary residue of {worst:.3e} in the inverse transform");
    }
    Ok(LagCovariances { n1, n2, mats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnspace::{EigenSystem, SampledFunction, TimeGrid};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn basis(m: usize) -> EigenSystem {
        let grid = TimeGrid::raster(m).unwrap();
        let fs = (0..m)
            .map(|k| {
                let mut v = vec![0.0; m];
                v[k] = 1.0;
                SampledFunction::new(grid.clone(), v).unwrap()
            })
            .collect();
        EigenSystem::new(grid, vec![1.0; m], fs).unwrap()
    }

    fn random_proj(rows: usize, cols: usize, m: usize, seed: u64) -> ProjectedField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = DMatrix::from_fn(rows * cols, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        ProjectedField::new(rows, cols, c, basis(m)).unwrap()
    }

    fn direct_dft(proj: &ProjectedField, a: usize, b: usize, k: usize) -> Complex64 {
        let (t1, t2) = (proj.rows(), proj.cols());
        let mut s = Complex64::new(0.0, 0.0);
        for r in 0..t1 {
            for c in 0..t2 {
                let phase =
                    -TWO_PI * (a as f64 * r as f64 / t1 as f64 + b as f64 * c as f64 / t2 as f64);
                s += Complex64::from_polar(proj.coeff(r, c, k), phase);
            }
        }
        s * sfdft_scale(t1 * t2)
    }

    #[test]
    fn windows_are_even_supported_and_normalized() {
        for w in [Window::BartlettHann, Window::BlackmanHarris] {
            let n = 10_000;
            let h = 2.0 / n as f64;
            let integral: f64 = (0..n)
                .map(|i| w.value_1d(-1.0 + (i as f64 + 0.5) * h) * h)
                .sum();
            assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-4);
            for u in [0.0, 0.1, 0.37, 0.8, 0.999] {
                assert_eq!(w.value_1d(u), w.value_1d(-u));
                assert!(w.value_1d(u) >= 0.0);
            }
            for u in [1.0, 1.5, -1.0, -3.0] {
                assert_eq!(w.value_1d(u), 0.0);
            }
            assert_eq!(w.value([1.0, 0.2]), 0.0);
        }
        assert!(
            check_bandwidth(0.0).is_err()
                && check_bandwidth(7.0).is_err()
                && check_bandwidth(TWO_PI).is_ok()
        );
        assert_eq!(
            "blackman-harris".parse::<Window>().unwrap(),
            Window::BlackmanHarris
        );
        assert!("hamming".parse::<Window>().is_err());
    }

    #[test]
    fn sfdft_matches_direct_sum_and_examples() {
        let proj = random_proj(5, 4, 2, 1);
        let t = sfdft(&proj);
        for (a, b) in [(0, 0), (1, 3), (4, 2)] {
            for k in 0..2 {
                assert!((t.at(a, b)[k] - direct_dft(&proj, a, b, k)).norm() < 1e-12);
            }
        }
        // constant field: zero away from the origin
        let c = ProjectedField::new(4, 4, DMatrix::from_element(16, 1, 2.5), basis(1)).unwrap();
        let t = sfdft(&c);
        for a in 0..4 {
            for b in 0..4 {
                if (a, b) != (0, 0) {
                    assert!(t.at(a, b)[0].norm() < 1e-12);
                }
            }
        }
        // impulse: flat modulus
        let mut imp = DMatrix::zeros(20, 1);
        imp[(7, 0)] = 1.0;
        let t = sfdft(&ProjectedField::new(5, 4, imp, basis(1)).unwrap());
        for v in &t.values {
            assert_abs_diff_eq!(v[0].norm(), sfdft_scale(20), epsilon = 1e-14);
        }
    }

    #[test]
    fn parseval_and_conjugate_symmetry() {
        let proj = random_proj(6, 7, 3, 2);
        let t = sfdft(&proj);
        for k in 0..3 {
            let lhs: f64 = t.values.iter().map(|v| v[k].norm_sqr()).sum();
            let rhs: f64 = proj.coeffs().column(k).norm_squared() / TWO_PI.powi(2);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
        }
        for a in 0..6 {
            for b in 0..7 {
                let mirror = t.at((6 - a) % 6, (7 - b) % 7);
                assert!((t.at(a, b) - mirror.map(|z| z.conj())).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn periodogram_is_rank_one_hermitian_psd() {
        let proj = random_proj(4, 4, 3, 3);
        let t = sfdft(&proj);
        for v in &t.values {
            let p = periodogram(v);
            assert!((&p - p.adjoint()).norm() < 1e-14);
            let tr: f64 = (0..3).map(|i| p[(i, i)].re).sum();
            assert_abs_diff_eq!(tr, v.norm_squared(), epsilon = 1e-12);
            let mut ev = hermitian_eigenvalues(&p);
            ev.sort_by(|a, b| b.total_cmp(a));
            assert!(ev[1].abs() <= 1e-12 * ev[0].max(1e-300));
            assert!(ev[2] >= -1e-14);
        }
        let c = ProjectedField::new(3, 3, DMatrix::from_element(9, 2, 1.0), basis(2)).unwrap();
        let pg = periodograms(&c);
        for a in 0..3 {
            for b in 0..3 {
                if (a, b) != (0, 0) {
                    assert!(pg.table.at(a, b).norm() < 1e-12);
                }
            }
        }
    }

    /// Biased lag covariance `(1/N) Σ_y c_{y+x} c_yᵀ`.
    fn biased_lag(proj: &ProjectedField, x1: isize, x2: isize) -> DMatrix<f64> {
        let (t1, t2) = (proj.rows() as isize, proj.cols() as isize);
        let m = proj.m();
        let mut acc = DMatrix::zeros(m, m);
        for r in 0..t1 {
            for c in 0..t2 {
                let (r2, c2) = (r + x1, c + x2);
                if (0..t1).contains(&r2) && (0..t2).contains(&c2) {
                    let a = proj.coeffs().row((r2 * t2 + c2) as usize).transpose();
                    let b = proj.coeffs().row((r * t2 + c) as usize);
                    acc += a * b;
                }
            }
        }
        acc / (t1 * t2) as f64
    }

    #[test]
    fn padded_round_trip_reproduces_lag_covariances() {
        let proj = random_proj(8, 8, 3, 4);
        let lags = inverse_sfdft_cov(&periodograms_padded(&proj).table).unwrap();
        for x1 in -7..=7 {
            for x2 in -7..=7 {
                assert!((lags.lag(x1, x2) - biased_lag(&proj, x1, x2)).amax() < 1e-10);
            }
        }
        // zero lag from the unpadded table is the Parseval corollary
        let pg = periodograms(&proj);
        let r0 = inverse_sfdft_cov(&pg.table).unwrap();
        for k in 0..3 {
            let energy = proj.coeffs().column(k).norm_squared();
            let raw_sum: f64 = pg.table.mats.iter().map(|p| p[(k, k)].re).sum();
            assert_abs_diff_eq!(raw_sum, energy / TWO_PI.powi(2), epsilon = 1e-10);
            assert_abs_diff_eq!(r0.lag(0, 0)[(k, k)], energy / 64.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn asymmetric_table_is_rejected() {
        let mut mats = vec![DMatrix::<Complex64>::zeros(1, 1); 9];
        mats[1][(0, 0)] = Complex64::new(1.0, 0.0);
        let t = FrequencyMatrices { n1: 3, n2: 3, mats };
        assert!(matches!(inverse_sfdft_cov(&t), Err(Error::Numerical(_))));
    }

    #[test]
    fn flat_spectrum_has_no_lagged_covariance() {
        let mats = vec![DMatrix::<Complex64>::identity(2, 2); 36];
        let lags = inverse_sfdft_cov(&FrequencyMatrices { n1: 6, n2: 6, mats }).unwrap();
        for x1 in 0..6 {
            for x2 in 0..6 {
                if (x1, x2) != (0, 0) {
                    assert!(lags.lag(x1, x2).amax() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn uniform_window_at_full_bandwidth_is_flat() {
        let pg = periodograms(&random_proj(6, 6, 2, 5));
        let est = spectral_density_estimate(&pg, TWO_PI, Window::Uniform, false).unwrap();
        let first = est.table.mats[0].clone();
        for m in &est.table.mats {
            assert!((m - &first).norm() < 1e-8);
        }
        let mut mean = DMatrix::<Complex64>::zeros(2, 2);
        for a in 1..6 {
            for b in 1..6 {
                mean += pg.table.at(a, b);
            }
        }
        let mean = mean * Complex64::new(1.0 / 36.0, 0.0);
        assert!((first - mean).norm() < 1e-10);
    }

    fn white_noise_pg(t: usize, seed: u64) -> Periodograms {
        periodograms(&random_proj(t, t, 1, seed))
    }

    #[test]
    fn white_noise_estimate_is_nearly_flat() {
        let pg = white_noise_pg(16, 6);
        let est =
            spectral_density_estimate(&pg, default_bandwidth(16), Window::BartlettHann, false)
                .unwrap();
        let vals: Vec<f64> = (1..16)
            .flat_map(|a| (1..16).map(move |b| (a, b)))
            .map(|(a, b)| est.table.at(a, b)[(0, 0)].re)
            .collect();
        let ratio = vals.iter().cloned().fold(0.0, f64::max)
            / vals.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(ratio <= 3.0, "{ratio}");
    }

    #[test]
    fn smoothing_reduces_variance() {
        let t = 12;
        let reps: Vec<(Vec<f64>, Vec<f64>)> = (0..20)
            .map(|s| {
                let pg = white_noise_pg(t, 100 + s);
                let est = spectral_density_estimate(
                    &pg,
                    default_bandwidth(t),
                    Window::BartlettHann,
                    false,
                )
                .unwrap();
                let raw = pg.table.mats.iter().map(|m| m[(0, 0)].re).collect();
                let smooth = est.table.mats.iter().map(|m| m[(0, 0)].re).collect();
                (raw, smooth)
            })
            .collect();
        let var = |xs: Vec<f64>| {
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
        };
        let mut wins = 0;
        let mut total = 0;
        for a in 1..t {
            for b in 1..t {
                let i = a * t + b;
                total += 1;
                let vr = var(reps.iter().map(|r| r.0[i]).collect());
                let vs = var(reps.iter().map(|r| r.1[i]).collect());
                if vs < vr {
                    wins += 1;
                }
            }
        }
        assert!(wins as f64 >= 0.9 * total as f64);
    }

    #[test]
    fn tiny_bandwidth_falls_back_to_raw_periodogram() {
        let pg = white_noise_pg(6, 7);
        let est = spectral_density_estimate(&pg, 1e-3, Window::BartlettHann, false).unwrap();
        // ω on the lattice still sees its own periodogram with a positive weight
        assert!(est.table.at(2, 3).norm() > 0.0);
        let est = spectral_density_on_grid(&pg, 5, 5, 1e-3, Window::BartlettHann, false).unwrap();
        assert_eq!(est.table.at(1, 1), pg.table.at(1, 1));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn estimates_are_hermitian_psd_and_symmetric(
            t in 4usize..=10, m in 1usize..=4, seed in 0u64..500, bw in 0.3f64..6.28, bh in proptest::bool::ANY, axis in proptest::bool::ANY,
        ) {
            let pg = periodograms(&random_proj(t, t, m, seed));
            let w = if bh { Window::BlackmanHarris } else { Window::BartlettHann };
            let est = spectral_density_estimate(&pg, bw, w, axis).unwrap();
            for a in 0..t {
                for b in 0..t {
                    let f = est.table.at(a, b);
                    proptest::prop_assert!((f - f.adjoint()).camax() <= 1e-12 * f.camax().max(1.0));
                    let min = hermitian_eigenvalues(f).into_iter().fold(f64::INFINITY, f64::min);
                    proptest::prop_assert!(min >= -1e-10);
                    let mirror = est.table.at((t - a) % t, (t - b) % t);
                    proptest::prop_assert!((f - mirror.map(|z| z.conj())).camax() <= 1e-12 * f.camax().max(1.0));
                }
            }
        }

        #[test]
        fn padded_round_trip_is_exact(t1 in 2usize..=16, t2 in 2usize..=16, m in 1usize..=5, seed in 0u64..500) {
            let proj = random_proj(t1, t2, m, seed);
            let lags = inverse_sfdft_cov(&periodograms_padded(&proj).table).unwrap();
            for x1 in [0isize, 1, -1, t1 as isize - 1] {
                for x2 in [0isize, 1, -(t2 as isize) + 1] {
                    proptest::prop_assert!((lags.lag(x1, x2) - biased_lag(&proj, x1, x2)).amax() < 1e-10);
                }
            }
        }
    }
}
