//! Bayesian plug-in GLS for surface regression with ARH(1) errors.
//!
//! The errors are projected onto a truncated orthonormal basis `ψ_1..ψ_K`.
//! On that basis the inverse of the block covariance of `(ε_1, …, ε_N)` is a
//! block tridiagonal matrix: every diagonal block is `C` except the two
//! corners, which are `A`, and every off-diagonal block is `B`, with
//!
//! ```text
//! A[l,k] = S[l,k] / (1 − λ_k²),   B[l,k] = −λ_k A[l,k],   C[l,k] = (1 + λ_k²) A[l,k]
//! ```
//!
//! where `S[l,k] = R₀⁻¹(ψ_k)(ψ_l)` and `λ_k` are the eigenvalues of the
//! autocorrelation operator. The `λ_k` are estimated one at a time by
//! maximizing a beta-prior posterior; GLS normal equations are assembled from
//! Gram sufficient statistics so that leave-one-out refits are cheap.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::arh::{build_kernel_regressors, truncation_level, KernelRegressors, SurfaceSeries};
use crate::error::{Error, Result};
use crate::fnspace::{eigh_gram, EigenSystem, SampledFunction};
use crate::preprocess::{default_edge_trim, trimmed_range};

pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1.0 - 1e-6;
const GOLDEN_WIDTH: f64 = 1e-8;
const PRESCAN_POINTS: usize = 400;
const CONDITION_LIMIT: f64 = 1e12;
const REPLICATE_CLIP: (f64, f64) = (0.01, 0.99);

/// Beta prior shapes per component.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaHyper {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl BetaHyper {
    pub fn flat(k: usize) -> Self {
        Self {
            a: vec![1.0; k],
            b: vec![1.0; k],
        }
    }
}

/// Residual scores `⟨ε̂_t, ψ_k⟩` (one row per time, one column per `k`).
#[derive(Debug, Clone)]
pub struct ProjectedResiduals {
    coeffs: DMatrix<f64>,
    sigma: Vec<f64>,
    basis: EigenSystem,
}

impl ProjectedResiduals {
    pub fn new(coeffs: DMatrix<f64>, basis: EigenSystem) -> Result<Self> {
        if coeffs.ncols() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: coeffs.ncols(),
            });
        }
        let n = coeffs.nrows().max(1) as f64;
        let sigma = coeffs
            .column_iter()
            .map(|c| (c.norm_squared() / n).sqrt().max(f64::MIN_POSITIVE))
            .collect();
        Ok(Self {
            coeffs,
            sigma,
            basis,
        })
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn basis(&self) -> &EigenSystem {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.nrows() == 0
    }

    pub fn k(&self) -> usize {
        self.coeffs.ncols()
    }
}

/// Result of moment matching a set of replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentMatch {
    pub a: f64,
    pub b: f64,
    pub flat_fallback: bool,
}

/// Beta shapes whose mean and variance match the replicates; both floored at 1.
pub fn moment_match_beta(replicates: &[f64]) -> MomentMatch {
    let n = replicates.len().max(1) as f64;
    let m = replicates.iter().sum::<f64>() / n;
    let v = (replicates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n).max(1e-12);
    let spread = m * (1.0 - m);
    if !(v < spread) || !(m > 0.0 && m < 1.0) {
        return MomentMatch {
            a: 1.0,
            b: 1.0,
            flat_fallback: true,
        };
    }
    let common = spread / v - 1.0;
    MomentMatch {
        a: (m * common).max(1.0),
        b: ((1.0 - m) * common).max(1.0),
        flat_fallback: false,
    }
}

pub fn default_block_len(n: usize) -> usize {
    ((n as f64).cbrt().ceil() as usize).max(1)
}

/// Moving-block bootstrap of one column's lag-one autocorrelation.
fn bootstrap_lag1(x: &[f64], n_boot: usize, block_len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = x.len();
    let block_len = block_len.clamp(1, n);
    // prefix sums: sq[t] = Σ_{s<t} x_s², lag[t] = Σ_{1≤s<t} x_s x_{s−1}
    let mut sq = vec![0.0; n + 1];
    let mut lag = vec![0.0; n + 1];
    for t in 0..n {
        sq[t + 1] = sq[t] + x[t] * x[t];
        lag[t + 1] = lag[t] + if t > 0 { x[t] * x[t - 1] } else { 0.0 };
    }
    let n_starts = n - block_len + 1;
    (0..n_boot)
        .map(|_| {
            let (mut num, mut den) = (0.0, 0.0);
            let mut filled = 0;
            let mut prev_last: Option<f64> = None;
            while filled < n {
                let s = rng.random_range(0..n_starts);
                let len = block_len.min(n - filled);
                den += sq[s + len] - sq[s];
                num += lag[s + len] - lag[s + 1];
                if let Some(p) = prev_last {
                    num += p * x[s];
                }
                prev_last = Some(x[s + len - 1]);
                filled += len;
            }
            let r = if den > 0.0 { num / den } else { 0.0 };
            r.clamp(REPLICATE_CLIP.0, REPLICATE_CLIP.1)
        })
        .collect()
}

/// Beta hyperparameters from block-bootstrap replicates of each column's
/// lag-one autocorrelation.
pub fn fit_beta_hyper(
    residuals: &ProjectedResiduals,
    n_boot: usize,
    block_len: usize,
    seed: u64,
) -> Result<BetaHyper> {
    if residuals.len() < 20 {
        return Err(Error::invalid(format!(
            "hyperparameter fitting needs at least 20 residual rows, got {}",
            residuals.len()
        )));
    }
    if n_boot < 2 {
        return Err(Error::invalid("bootstrap needs at least two replicates"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hyper = BetaHyper {
        a: Vec::new(),
        b: Vec::new(),
    };
    for (k, col) in residuals.coeffs.column_iter().enumerate() {
        let x: Vec<f64> = col.iter().copied().collect();
        let reps = bootstrap_lag1(&x, n_boot, block_len, &mut rng);
        let mm = moment_match_beta(&reps);
        if mm.flat_fallback {
            warn!(
                "component {}: bootstrap replicates overdispersed, using a flat prior",
                k + 1
            );
        }
        hyper.a.push(mm.a);
        hyper.b.push(mm.b);
    }
    Ok(hyper)
}

/// Sufficient statistics of one residual column for the conditional likelihood.
#[derive(Debug, Clone, Copy)]
struct LagStats {
    syy: f64,
    sxy: f64,
    sxx: f64,
    n: usize,
}

impl LagStats {
    fn from_column(col: &[f64]) -> Self {
        let mut s = Self {
            syy: 0.0,
            sxy: 0.0,
            sxx: 0.0,
            n: col.len(),
        };
        for w in col.windows(2) {
            s.syy += w[1] * w[1];
            s.sxy += w[1] * w[0];
            s.sxx += w[0] * w[0];
        }
        s
    }

    fn is_empty(&self) -> bool {
        self.syy == 0.0 && self.sxx == 0.0
    }
}

#[derive(Debug, Clone, Copy)]
struct Posterior {
    stats: LagStats,
    a: f64,
    b: f64,
}

impl Posterior {
    fn data_weight(&self) -> f64 {
        if self.stats.is_empty() {
            0.0
        } else {
            (self.stats.n as f64 - 1.0) / 2.0
        }
    }

    fn q(&self, l: f64) -> f64 {
        let s = &self.stats;
        (s.syy - 2.0 * l * s.sxy + l * l * s.sxx).max(f64::MIN_POSITIVE)
    }

    fn value(&self, l: f64) -> f64 {
        if !(l > 0.0 && l < 1.0) {
            return f64::NEG_INFINITY;
        }
        let data = if self.data_weight() > 0.0 {
            let n1 = self.stats.n as f64 - 1.0;
            -self.data_weight() * (self.q(l) / n1).ln()
        } else {
            0.0
        };
        data + (self.a - 1.0) * l.ln() + (self.b - 1.0) * (1.0 - l).ln()
    }

    fn derivatives(&self, l: f64) -> (f64, f64) {
        let s = &self.stats;
        let c = self.data_weight();
        let q = self.q(l);
        let dq = 2.0 * (l * s.sxx - s.sxy);
        let d2q = 2.0 * s.sxx;
        let d1 = -c * dq / q + (self.a - 1.0) / l - (self.b - 1.0) / (1.0 - l);
        let d2 = -c * (d2q * q - dq * dq) / (q * q)
            - (self.a - 1.0) / (l * l)
            - (self.b - 1.0) / ((1.0 - l) * (1.0 - l));
        (d1, d2)
    }

    fn maximize(&self) -> Result<f64> {
        let step = (LAMBDA_MAX - LAMBDA_MIN) / (PRESCAN_POINTS - 1) as f64;
        let at = |i: usize| LAMBDA_MIN + step * i as f64;
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in 0..PRESCAN_POINTS {
            let v = self.value(at(i));
            if v > best.0 {
                best = (v, i);
            }
        }
        if best.1 == usize::MAX {
            return Err(Error::Numerical(
                "posterior is not finite anywhere on (0, 1)".into(),
            ));
        }
        let mut lo = at(best.1.saturating_sub(1));
        let mut hi = at((best.1 + 1).min(PRESCAN_POINTS - 1));
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - ratio * (hi - lo);
        let mut x2 = lo + ratio * (hi - lo);
        let (mut f1, mut f2) = (self.value(x1), self.value(x2));
        while hi - lo > GOLDEN_WIDTH {
            if f1 >= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - ratio * (hi - lo);
                f1 = self.value(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + ratio * (hi - lo);
                f2 = self.value(x2);
            }
        }
        let mut x = 0.5 * (lo + hi);
        let (d1, d2) = self.derivatives(x);
        if d2 < 0.0 && d1.is_finite() {
            let cand = x - d1 / d2;
            if (lo - GOLDEN_WIDTH..=hi + GOLDEN_WIDTH).contains(&cand)
                && (LAMBDA_MIN..=LAMBDA_MAX).contains(&cand)
                && self.value(cand) >= self.value(x)
            {
                x = cand;
            }
        }
        Ok(x)
    }
}

/// `−((N−1)/2) log σ̂²(λ) + (a−1) log λ + (b−1) log(1−λ)`, with the profiled
/// innovation variance `σ̂²(λ) = (1/(N−1)) Σ_{t≥2} (ε_t − λ ε_{t−1})²`.
/// An all-zero column contributes no data term.
pub fn log_posterior(lambda: f64, col: &[f64], a: f64, b: f64) -> f64 {
    Posterior {
        stats: LagStats::from_column(col),
        a,
        b,
    }
    .value(lambda)
}

/// Per-component posterior mode of `λ_k`.
pub fn map_lambda(residuals: &ProjectedResiduals, hyper: &BetaHyper) -> Result<Vec<f64>> {
    if hyper.a.len() != residuals.k() || hyper.b.len() != residuals.k() {
        return Err(Error::DimensionMismatch {
            expected: residuals.k(),
            got: hyper.a.len().min(hyper.b.len()),
        });
    }
    if residuals.len() < 3 {
        return Err(Error::invalid(
            "posterior needs at least three residual rows",
        ));
    }
    residuals
        .coeffs
        .column_iter()
        .enumerate()
        .map(|(k, col)| {
            let x: Vec<f64> = col.iter().copied().collect();
            let lam = map_lambda_column(&x, hyper.a[k], hyper.b[k])?;
            if lam > 0.999 {
                warn!("component {}: λ̂ = {lam:.6} is close to a unit root", k + 1);
            }
            Ok(lam)
        })
        .collect()
}

pub fn map_lambda_column(col: &[f64], a: f64, b: f64) -> Result<f64> {
    Posterior {
        stats: LagStats::from_column(col),
        a,
        b,
    }
    .maximize()
}

/// Blocks of the band inverse on a fixed basis.
#[derive(Debug, Clone)]
pub struct CInvCoefficients {
    basis: EigenSystem,
    r0_inv: DMatrix<f64>,
    lambda_hat: Vec<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl CInvCoefficients {
    /// General form from `S[l,k] = R₀⁻¹(ψ_k)(ψ_l)`.
    pub fn new(basis: EigenSystem, r0_inv: DMatrix<f64>, lambda_hat: Vec<f64>) -> Result<Self> {
        let k = basis.len();
        if r0_inv.nrows() != k || r0_inv.ncols() != k || lambda_hat.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: lambda_hat.len(),
            });
        }
        if let Some(bad) = lambda_hat.iter().find(|l| !(**l >= 0.0 && **l < 1.0)) {
            return Err(Error::invalid(format!(
                "autocorrelation eigenvalue {bad} outside [0, 1)"
            )));
        }
        let mut a = r0_inv.clone();
        for (mut col, l) in a.column_iter_mut().zip(&lambda_hat) {
            col /= 1.0 - l * l;
        }
        let mut b = a.clone();
        let mut c = a.clone();
        for (kk, l) in lambda_hat.iter().enumerate() {
            b.column_mut(kk).scale_mut(-l);
            c.column_mut(kk).scale_mut(1.0 + l * l);
        }
        Ok(Self {
            basis,
            r0_inv,
            lambda_hat,
            a,
            b,
            c,
        })
    }

    /// Identity weighting (`S = I`, `λ = 0`): GLS reduces to OLS.
    pub fn identity(basis: EigenSystem) -> Self {
        let k = basis.len();
        Self::new(basis, DMatrix::identity(k, k), vec![0.0; k]).expect("valid identity weighting")
    }

    pub fn basis(&self) -> &EigenSystem {
        &self.basis
    }

    pub fn r0_inv(&self) -> &DMatrix<f64> {
        &self.r0_inv
    }

    pub fn lambda_hat(&self) -> &[f64] {
        &self.lambda_hat
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn k(&self) -> usize {
        self.basis.len()
    }

    /// Block `(t, s)` of the band matrix for a series of length `n`.
    pub fn block(&self, t: usize, s: usize, n: usize) -> DMatrix<f64> {
        let k = self.k();
        if t == s {
            if t == 0 || t + 1 == n {
                self.a.clone()
            } else {
                self.c.clone()
            }
        } else if t.abs_diff(s) == 1 {
            self.b.clone()
        } else {
            DMatrix::zeros(k, k)
        }
    }
}

/// Coefficients on a co-diagonal basis: `S = diag(1/λ_k(R₀))`.
pub fn cinv_coefficients(r0: &EigenSystem, lambda_hat: &[f64]) -> Result<CInvCoefficients> {
    if let Some(bad) = r0.values().iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid(format!(
            "covariance eigenvalue {bad} is not positive; raise the floor or lower K"
        )));
    }
    if let Some(bad) = lambda_hat.iter().find(|l| **l >= 1.0) {
        return Err(Error::invalid(format!(
            "autocorrelation eigenvalue {bad} sits on the 1/(1 − λ²) pole"
        )));
    }
    let s = DMatrix::from_diagonal(&DVector::from_iterator(
        r0.len(),
        r0.values().iter().map(|v| 1.0 / v),
    ));
    CInvCoefficients::new(r0.clone(), s, lambda_hat.to_vec())
}

/// Applies the band inverse across time to the series `F_1..F_N`.
pub fn apply_cinv(
    coeffs: &CInvCoefficients,
    f: &[SampledFunction],
) -> Result<Vec<SampledFunction>> {
    let n = f.len();
    if n < 2 {
        return Err(Error::invalid(
            "band inverse needs a series of length at least 2",
        ));
    }
    let proj: Vec<DVector<f64>> = f
        .iter()
        .map(|ft| coeffs.basis.project(ft))
        .collect::<Result<_>>()?;
    (0..n)
        .map(|t| {
            let corner = t == 0 || t + 1 == n;
            let mut h = if corner { &coeffs.a } else { &coeffs.c } * &proj[t];
            if t > 0 {
                h += &coeffs.b * &proj[t - 1];
            }
            if t + 1 < n {
                h += &coeffs.b * &proj[t + 1];
            }
            coeffs.basis.synthesize(&h)
        })
        .collect()
}

/// Regression `Y_t = Σ_i X_t^i(β_i) + ε_t` on the rows `rows` of a centred
/// response series.
#[derive(Debug, Clone)]
pub struct SurfaceProblem {
    pub regressors: KernelRegressors,
    pub response: SurfaceSeries,
    pub rows: Vec<usize>,
}

impl SurfaceProblem {
    pub fn new(
        regressors: KernelRegressors,
        response: SurfaceSeries,
        rows: Vec<usize>,
    ) -> Result<Self> {
        if response.len() != regressors.len() {
            return Err(Error::DimensionMismatch {
                expected: regressors.len(),
                got: response.len(),
            });
        }
        if !crate::fnspace::same_grid(response.grid(), regressors.grid()) {
            return Err(Error::GridMismatch);
        }
        if rows.len() < 2 {
            return Err(Error::invalid("regression needs at least two rows"));
        }
        if rows.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "regression rows must be strictly increasing",
            ));
        }
        if rows[0] < regressors.first_target() || *rows.last().unwrap() >= regressors.len() {
            return Err(Error::invalid(format!(
                "rows must lie in {}..{}",
                regressors.first_target(),
                regressors.len()
            )));
        }
        Ok(Self {
            regressors,
            response,
            rows,
        })
    }

    /// Projected design: per row `Z_t` (K × pK) with `Z_t[l, iK+m] = ⟨X_t^{i+1} ψ_m, ψ_l⟩`,
    /// and responses `y_t[l] = ⟨Y_t, ψ_l⟩`.
    pub fn project(&self, basis: &EigenSystem) -> Result<ProjectedDesign> {
        if !crate::fnspace::same_grid(basis.grid(), self.regressors.grid()) {
            return Err(Error::GridMismatch);
        }
        let wpsi = basis.weighted_basis();
        let scores = wpsi.transpose() * self.regressors.factors();
        let resp = wpsi.transpose() * self.response.data();
        let k = basis.len();
        let p = self.regressors.p();
        let mut z = Vec::with_capacity(self.rows.len());
        let mut y = Vec::with_capacity(self.rows.len());
        for &t in &self.rows {
            let mut zt = DMatrix::zeros(k, p * k);
            for i in 1..=p {
                let lead = scores.column(t - i);
                let trail = scores.column(t - i - 1);
                zt.columns_mut((i - 1) * k, k)
                    .copy_from(&(lead * trail.transpose()));
            }
            z.push(zt);
            y.push(resp.column(t).into_owned());
        }
        Ok(ProjectedDesign { k, p, scores, z, y })
    }
}

/// Projected regression data.
#[derive(Debug, Clone)]
pub struct ProjectedDesign {
    k: usize,
    p: usize,
    /// K × N basis scores of the regressor factors.
    scores: DMatrix<f64>,
    z: Vec<DMatrix<f64>>,
    y: Vec<DVector<f64>>,
}

impl ProjectedDesign {
    pub fn z(&self) -> &[DMatrix<f64>] {
        &self.z
    }

    pub fn y(&self) -> &[DVector<f64>] {
        &self.y
    }

    fn augmented(&self, j: usize) -> DMatrix<f64> {
        let q = self.p * self.k + 1;
        let mut w = DMatrix::zeros(self.k, q);
        w.columns_mut(0, q - 1).copy_from(&self.z[j]);
        w.set_column(q - 1, &self.y[j]);
        w
    }

    fn residual(&self, j: usize, theta: &DVector<f64>) -> DVector<f64> {
        &self.y[j] - &self.z[j] * theta
    }
}

/// Gram statistics of the augmented rows `w_t = [Z_t | y_t]` over a
/// gap-closed sequence of rows.
#[derive(Debug, Clone)]
struct GramStats {
    k: usize,
    q: usize,
    s0: Vec<DMatrix<f64>>,
    s1: Vec<DMatrix<f64>>,
    first: DMatrix<f64>,
    last: DMatrix<f64>,
    len: usize,
}

fn add_pair(
    target: &mut [DMatrix<f64>],
    left: &DMatrix<f64>,
    right: &DMatrix<f64>,
    k: usize,
    sign: f64,
) {
    for l in 0..k {
        let wl = left.row(l).transpose();
        for kk in 0..k {
            target[l * k + kk].ger(sign, &wl, &right.row(kk).transpose(), 1.0);
        }
    }
}

impl GramStats {
    fn build(rows: &[DMatrix<f64>]) -> Self {
        let k = rows[0].nrows();
        let q = rows[0].ncols();
        let mut s0 = vec![DMatrix::zeros(q, q); k * k];
        let mut s1 = vec![DMatrix::zeros(q, q); k * k];
        for (j, w) in rows.iter().enumerate() {
            add_pair(&mut s0, w, w, k, 1.0);
            if j + 1 < rows.len() {
                add_pair(&mut s1, w, &rows[j + 1], k, 1.0);
            }
        }
        Self {
            k,
            q,
            s0,
            s1,
            first: rows[0].clone(),
            last: rows[rows.len() - 1].clone(),
            len: rows.len(),
        }
    }

    /// Statistics with row `j` removed and its neighbours joined.
    fn without(&self, rows: &[DMatrix<f64>], j: usize) -> Self {
        let mut out = self.clone();
        let k = self.k;
        let w = &rows[j];
        add_pair(&mut out.s0, w, w, k, -1.0);
        if j > 0 {
            add_pair(&mut out.s1, &rows[j - 1], w, k, -1.0);
        }
        if j + 1 < rows.len() {
            add_pair(&mut out.s1, w, &rows[j + 1], k, -1.0);
        }
        if j > 0 && j + 1 < rows.len() {
            add_pair(&mut out.s1, &rows[j - 1], &rows[j + 1], k, 1.0);
        }
        if j == 0 {
            out.first = rows[1].clone();
        }
        if j + 1 == rows.len() {
            out.last = rows[rows.len() - 2].clone();
        }
        out.len -= 1;
        out
    }

    /// `Σ_{t,s} w_tᵀ H_{ts} w_s`.
    fn quadratic(&self, coeffs: &CInvCoefficients) -> DMatrix<f64> {
        let k = self.k;
        let mut m = DMatrix::zeros(self.q, self.q);
        let corner = coeffs.a() - coeffs.c();
        for l in 0..k {
            for kk in 0..k {
                let c = coeffs.c()[(l, kk)];
                if c != 0.0 {
                    m += &self.s0[l * k + kk] * c;
                }
                let b = coeffs.b()[(l, kk)];
                if b != 0.0 {
                    m += (&self.s1[l * k + kk] + self.s1[kk * k + l].transpose()) * b;
                }
                let d = corner[(l, kk)];
                if d != 0.0 {
                    for end in [&self.first, &self.last] {
                        m.ger(d, &end.row(l).transpose(), &end.row(kk).transpose(), 1.0);
                    }
                }
            }
        }
        m
    }

    fn solve(&self, coeffs: &CInvCoefficients) -> Result<(DVector<f64>, f64)> {
        if self.len < 2 {
            return Err(Error::invalid("regression needs at least two rows"));
        }
        let m = self.quadratic(coeffs);
        let n = self.q - 1;
        let normal = m.view((0, 0), (n, n)).into_owned();
        let rhs = m.view((0, n), (n, 1)).column(0).into_owned();
        let theta = solve_normal(&normal, &rhs)?;
        // (y − Zθ)ᵀ H (y − Zθ) with the augmented vector [−θ; 1]
        let mut v = -theta.clone();
        v = v.insert_row(n, 1.0);
        let objective = v.dot(&(&m * &v));
        Ok((theta, objective))
    }
}

fn solve_normal(normal: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if normal.amax() == 0.0 {
        return Ok(DVector::zeros(rhs.len()));
    }
    let sv = normal.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::Singular {
            condition,
            context: "GLS normal equations; check for duplicated or vanishing regressors".into(),
        });
    }
    normal
        .clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular {
            condition,
            context: "GLS normal equations".into(),
        })
}

/// Fitted regression.
#[derive(Debug, Clone)]
pub struct GLSFit {
    /// Coefficients of `β_i` on the basis, stacked `[β_1; …; β_p]`.
    pub theta: DVector<f64>,
    pub beta: Vec<SampledFunction>,
    pub rows: Vec<usize>,
    pub fitted: Vec<SampledFunction>,
    pub residuals: Vec<SampledFunction>,
    pub objective: f64,
}

fn betas_from_theta(
    basis: &EigenSystem,
    theta: &DVector<f64>,
    p: usize,
) -> Result<Vec<SampledFunction>> {
    let k = basis.len();
    (0..p)
        .map(|i| basis.synthesize(&theta.rows(i * k, k).into_owned()))
        .collect()
}

/// `Σ_i X_t^i(β_i)` at every row.
pub fn predict(
    regressors: &KernelRegressors,
    beta: &[SampledFunction],
    rows: &[usize],
) -> Result<Vec<SampledFunction>> {
    rows.iter().map(|&t| regressors.apply(t, beta)).collect()
}

/// GLS in the basis of `coeffs`.
pub fn gls_solve(problem: &SurfaceProblem, coeffs: &CInvCoefficients) -> Result<GLSFit> {
    let design = problem.project(coeffs.basis())?;
    let aug: Vec<DMatrix<f64>> = (0..problem.rows.len())
        .map(|j| design.augmented(j))
        .collect();
    let stats = GramStats::build(&aug);
    let (theta, objective) = stats.solve(coeffs)?;
    finish_fit(problem, coeffs.basis(), theta, objective)
}

fn finish_fit(
    problem: &SurfaceProblem,
    basis: &EigenSystem,
    theta: DVector<f64>,
    objective: f64,
) -> Result<GLSFit> {
    let beta = betas_from_theta(basis, &theta, problem.regressors.p())?;
    let fitted = predict(&problem.regressors, &beta, &problem.rows)?;
    let residuals = problem
        .rows
        .iter()
        .zip(&fitted)
        .map(|(&t, f)| problem.response.element(t).minus(f))
        .collect::<Result<_>>()?;
    Ok(GLSFit {
        theta,
        beta,
        rows: problem.rows.clone(),
        fitted,
        residuals,
        objective,
    })
}

/// OLS on the given basis.
pub fn ols_fit(problem: &SurfaceProblem, basis: &EigenSystem) -> Result<GLSFit> {
    gls_solve(problem, &CInvCoefficients::identity(basis.clone()))
}

/// Settings of the surface pipeline.
#[derive(Debug, Clone)]
pub struct BayesConfig {
    pub p: usize,
    pub k: Option<usize>,
    pub poly_degree: Option<usize>,
    pub edge_trim: Option<usize>,
    pub n_boot: usize,
    pub block_len: Option<usize>,
    pub seed: u64,
    pub reuse_correlation: bool,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            p: 7,
            k: None,
            poly_degree: None,
            edge_trim: None,
            n_boot: 500,
            block_len: None,
            seed: 0,
            reuse_correlation: false,
        }
    }
}

/// Everything produced by a full fit.
#[derive(Debug, Clone)]
pub struct BayesSurfaceFit {
    pub problem: SurfaceProblem,
    pub basis: EigenSystem,
    pub hyper: BetaHyper,
    pub lambda_hat: Vec<f64>,
    pub coeffs: CInvCoefficients,
    pub ols: GLSFit,
    pub fit: GLSFit,
}

impl BayesSurfaceFit {
    pub fn mean(&self) -> &SampledFunction {
        self.problem.regressors.mean()
    }

    /// Predicted levels `μ̂ + Σ_i X_t^i(β̂_i)` at the fitted rows.
    pub fn predicted_levels(&self) -> Result<Vec<SampledFunction>> {
        self.fit
            .fitted
            .iter()
            .map(|f| f.plus(self.mean()))
            .collect()
    }
}

/// Rows kept for estimation: the edge-trimmed range without the first `p`
/// indices, which serve as initial conditions.
pub fn estimation_rows(n: usize, p: usize, edge_trim: usize) -> Result<Vec<usize>> {
    let range = trimmed_range(n, edge_trim)?;
    let start = (range.start + p).max(p + 1);
    if start >= range.end {
        return Err(Error::invalid(
            "no rows left after trimming and lag reservation",
        ));
    }
    Ok((start..range.end).collect())
}

fn centred(series: &SurfaceSeries, mean: &SampledFunction) -> Result<SurfaceSeries> {
    let mut data = series.data().clone();
    for mut col in data.column_iter_mut() {
        col -= mean.values();
    }
    SurfaceSeries::new(series.grid().clone(), data)
}

/// Leading `k` eigenfunctions of `(1/n) Σ_j v_j ⊗ v_j` over the given columns.
fn leading_basis(
    series_cols: &DMatrix<f64>,
    grid: &std::sync::Arc<crate::fnspace::TimeGrid>,
    k: usize,
) -> Result<EigenSystem> {
    let n = series_cols.ncols().max(1) as f64;
    let eig = eigh_gram(grid, series_cols, 1.0 / n)?;
    if eig.len() < k {
        return Err(Error::invalid(format!(
            "truncation level {k} exceeds the {} available components",
            eig.len()
        )));
    }
    Ok(eig.truncated(k))
}

fn floor_eigenvalues(basis: EigenSystem) -> Result<EigenSystem> {
    let lead = basis.values().first().copied().unwrap_or(0.0);
    let values = if lead > 0.0 {
        basis.values().iter().map(|v| v.max(1e-10 * lead)).collect()
    } else {
        vec![1.0; basis.len()]
    };
    basis.with_values(values)
}

/// Projected residual scores of a fit.
fn residual_scores(fit: &GLSFit, basis: &EigenSystem) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(fit.residuals.len(), basis.len());
    for (j, r) in fit.residuals.iter().enumerate() {
        m.set_row(j, &basis.project(r)?.transpose());
    }
    Ok(m)
}

/// Full pipeline: regressors, OLS, residual basis, beta priors, MAP `λ̂`,
/// band inverse and GLS.
pub fn fit_bayes_surface(series: &SurfaceSeries, config: &BayesConfig) -> Result<BayesSurfaceFit> {
    let n = series.len();
    let regressors = build_kernel_regressors(series, config.p, config.poly_degree)?;
    let response = centred(series, regressors.mean())?;
    let trim = config.edge_trim.unwrap_or_else(|| default_edge_trim(n));
    let rows = estimation_rows(n, config.p, trim)?;
    let k = config
        .k
        .unwrap_or_else(|| truncation_level(n))
        .min(series.grid().len());
    if k == 0 {
        return Err(Error::invalid("truncation level must be positive"));
    }
    let problem = SurfaceProblem::new(regressors, response, rows)?;

    let stage_a = leading_basis(
        &problem.response.data().select_columns(&problem.rows),
        series.grid(),
        k,
    )?;
    let ols_a = ols_fit(&problem, &stage_a)?;
    let mut resid_cols = DMatrix::zeros(series.grid().len(), ols_a.residuals.len());
    for (j, r) in ols_a.residuals.iter().enumerate() {
        resid_cols.set_column(j, r.values());
    }
    let basis = floor_eigenvalues(leading_basis(&resid_cols, series.grid(), k)?)?;

    let scores = residual_scores(&ols_a, &basis)?;
    let resid = ProjectedResiduals::new(scores, basis.clone())?;
    let block = config
        .block_len
        .unwrap_or_else(|| default_block_len(resid.len()));
    let hyper = fit_beta_hyper(&resid, config.n_boot, block, config.seed)?;
    let lambda_hat = map_lambda(&resid, &hyper)?;
    let coeffs = cinv_coefficients(&basis, &lambda_hat)?;
    let fit = gls_solve(&problem, &coeffs)?;
    Ok(BayesSurfaceFit {
        problem,
        basis,
        hyper,
        lambda_hat,
        coeffs,
        ols: ols_a,
        fit,
    })
}

/// Per-index leave-one-out errors.
#[derive(Debug, Clone)]
pub struct LoocvReport {
    /// 0-based time indices of the held-out elements.
    pub indices: Vec<usize>,
    pub errors: Vec<f64>,
    pub mean: f64,
}

impl LoocvReport {
    pub fn iterations(&self) -> usize {
        self.errors.len()
    }

    /// `index,l1_error` rows (1-based index) and a trailing `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,l1_error\n");
        for (i, e) in self.indices.iter().zip(&self.errors) {
            s.push_str(&format!("{},{:.10e}\n", i + 1, e));
        }
        s.push_str(&format!("mean,{:.10e}\n", self.mean));
        s
    }
}

/// Pseudo-inverse of a symmetric PSD matrix with eigenvalues floored
/// relative to the largest.
fn psd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lead = eig.eigenvalues.max();
    if !(lead > 0.0) {
        return DMatrix::identity(k, k);
    }
    let inv = eig.eigenvalues.map(|v| 1.0 / v.max(1e-10 * lead));
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Leave-one-out cross-validation over the estimation rows.
///
/// Regressors, the sample mean and the basis come from the full fit. Each
/// fold removes one row, joins its neighbours, and re-estimates OLS, the
/// projected residual covariance, the beta priors, `λ̂` and the GLS
/// coefficients (or, with `reuse_correlation`, only the GLS coefficients).
pub fn loocv(series: &SurfaceSeries, config: &BayesConfig) -> Result<LoocvReport> {
    let full = fit_bayes_surface(series, config)?;
    let problem = &full.problem;
    let m = problem.rows.len();
    if m < 21 {
        return Err(Error::invalid(format!(
            "cross-validation needs at least 21 estimation rows, got {m}"
        )));
    }
    let basis = &full.basis;
    let k = basis.len();
    let p = problem.regressors.p();
    let design = problem.project(basis)?;
    let aug: Vec<DMatrix<f64>> = (0..m).map(|j| design.augmented(j)).collect();
    let stats = GramStats::build(&aug);
    let identity = CInvCoefficients::identity(basis.clone());
    let u = problem.regressors.factors();
    let weights = series.grid().weight_vector();

    let errors: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let fold = stats.without(&aug, j);
            let coeffs = if config.reuse_correlation {
                full.coeffs.clone()
            } else {
                let (theta_ols, _) = fold.solve(&identity)?;
                let mut scores = DMatrix::zeros(m - 1, k);
                for (r, jj) in (0..m).filter(|&jj| jj != j).enumerate() {
                    scores.set_row(r, &design.residual(jj, &theta_ols).transpose());
                }
                let r0 = scores.transpose() * &scores / (m - 1) as f64;
                let resid = ProjectedResiduals::new(scores, basis.clone())?;
                let block = config.block_len.unwrap_or_else(|| default_block_len(m - 1));
                let hyper = fit_beta_hyper(
                    &resid,
                    config.n_boot,
                    block,
                    config.seed.wrapping_add(j as u64 + 1),
                )?;
                let lambda = map_lambda(&resid, &hyper)?;
                CInvCoefficients::new(basis.clone(), psd_inverse(&r0), lambda)?
            };
            let (theta, _) = fold.solve(&coeffs)?;
            let t = problem.rows[j];
            let mut pred = problem.regressors.mean().values().clone();
            for i in 1..=p {
                let inner = theta
                    .rows((i - 1) * k, k)
                    .dot(&design.scores.column(t - i - 1));
                pred += u.column(t - i) * inner;
            }
            let diff = series.data().column(t) - pred;
            Ok(diff.abs().dot(&weights))
        })
        .collect::<Result<_>>()?;
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(LoocvReport {
        indices: problem.rows.clone(),
        errors,
        mean,
    })
}
