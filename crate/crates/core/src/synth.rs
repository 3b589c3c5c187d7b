//! Synthetic panels with known ground truth.
//!
//! Both generators return a [`LatticeField`] (the same panel layout read by
//! the command-line front end) together with a serializable description of
//! the generating model.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::arh::{simulate_arh1, ARH1Model, SurfaceSeries, DEFAULT_BURN_IN};
use crate::error::{Error, Result};
use crate::fnspace::{KernelOperator, SampledFunction, TimeGrid};
use crate::preprocess::LatticeField;

/// Diagonal ARH(1) surface series on an `side × side` raster.
#[derive(Debug, Clone, Serialize)]
pub struct Arh1Spec {
    pub n: usize,
    pub side: usize,
    pub lambda: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub nugget: f64,
    pub seed: u64,
}

impl Default for Arh1Spec {
    fn default() -> Self {
        Self {
            n: 500,
            side: 9,
            lambda: vec![0.8, 0.5, 0.3],
            noise_var: vec![1.44, 1.5, 0.91],
            nugget: 0.01,
            seed: 0,
        }
    }
}

/// Lattice of curves whose basis scores follow the spatial recursion
/// `c_z = a·c_{z−(1,0)} + b·c_{z−(0,1)} + e_z`, one recursion per component.
#[derive(Debug, Clone, Serialize)]
pub struct LatticeSpec {
    pub side: usize,
    pub n_tau: usize,
    pub a: f64,
    pub b: f64,
    pub innovation_var: Vec<f64>,
    pub nugget_sd: f64,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            side: 10,
            n_tau: 60,
            a: 0.45,
            b: 0.35,
            innovation_var: vec![1.0, 0.5, 0.25],
            nugget_sd: 0.02,
            burn_in: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Arh1Truth {
    pub kind: &'static str,
    pub spec: Arh1Spec,
    /// Eigenvalues of the autocorrelation operator, largest stationary
    /// variance first.
    pub lambda: Vec<f64>,
    /// `noise_var / (1 − λ²)` per component.
    pub stationary_var: Vec<f64>,
    /// Raster eigenfunctions, row-major over the nodes.
    pub eigenfunctions: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumEntry {
    pub omega_row: f64,
    pub omega_col: f64,
    /// Diagonal of the spectral density in the generating basis.
    pub diagonal: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeTruth {
    pub kind: &'static str,
    pub spec: LatticeSpec,
    pub basis: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub spectrum: Vec<SpectrumEntry>,
}

/// Ground truth written next to a simulated panel.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Truth {
    Arh1(Arh1Truth),
    Lattice(LatticeTruth),
}

/// Orthonormal (unit weights) separable cosine surfaces, lowest frequencies
/// first: `(0,0), (1,0), (0,1), (1,1), (2,0), …`.
pub fn raster_basis(side: usize, count: usize) -> Result<Vec<DVector<f64>>> {
    if count > side * side {
        return Err(Error::invalid(format!(
            "{count} raster components requested on a {side}×{side} raster"
        )));
    }
    let mut freqs: Vec<(usize, usize)> = (0..side)
        .flat_map(|a| (0..side).map(move |b| (a, b)))
        .collect();
    freqs.sort_by_key(|&(a, b)| (a + b, b, a));
    let cosine = |k: usize, i: usize| (PI * k as f64 * (i as f64 + 0.5) / side as f64).cos();
    Ok(freqs
        .into_iter()
        .take(count)
        .map(|(a, b)| {
            let v = DVector::from_fn(side * side, |n, _| {
                cosine(a, n / side) * cosine(b, n % side)
            });
            let norm = v.norm();
            v / norm
        })
        .collect())
}

fn check_unit_interval(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|l| !(0.0..1.0).contains(&l.abs())) {
        return Err(Error::invalid(format!("{what} must lie in (−1, 1)")));
    }
    Ok(())
}

pub fn simulate_arh1_panel(spec: &Arh1Spec) -> Result<(LatticeField, Arh1Truth)> {
    if spec.lambda.is_empty() || spec.lambda.len() != spec.noise_var.len() {
        return Err(Error::invalid(
            "lambda and noise variances must be non-empty and of equal length",
        ));
    }
    check_unit_interval(&spec.lambda, "autocorrelation eigenvalues")?;
    if spec.noise_var.iter().any(|v| !(*v > 0.0)) || !(spec.nugget >= 0.0) {
        return Err(Error::invalid(
            "noise variances must be positive and the nugget non-negative",
        ));
    }
    if spec.side == 0 || spec.n < 2 {
        return Err(Error::invalid(
            "need a non-empty raster and at least two surfaces",
        ));
    }
    let g = spec.side * spec.side;
    let grid = TimeGrid::raster(g)?;
    let psi = raster_basis(spec.side, spec.lambda.len())?;
    let mut rho = DMatrix::zeros(g, g);
    let mut noise = DMatrix::identity(g, g) * spec.nugget;
    for ((f, &l), &v) in psi.iter().zip(&spec.lambda).zip(&spec.noise_var) {
        let outer = f * f.transpose();
        rho += &outer * l;
        noise += outer * v;
    }
    let side = spec.side as f64;
    let mean = SampledFunction::new(
        grid.clone(),
        (0..g)
            .map(|n| {
                let (r, c) = ((n / spec.side) as f64 / side, (n % spec.side) as f64 / side);
                1.0 + 0.5 * (PI * r).sin() * (PI * c).cos()
            })
            .collect(),
    )?;
    let model = ARH1Model {
        rho: KernelOperator::new(grid.clone(), rho)?,
        noise_cov: KernelOperator::new(grid.clone(), noise)?,
        mean: mean.clone(),
    };
    let series = simulate_arh1(&model, spec.n, DEFAULT_BURN_IN, spec.seed)?;
    let field = series_to_lattice(&series, spec.side, spec.side)?;

    let stationary: Vec<f64> = spec
        .lambda
        .iter()
        .zip(&spec.noise_var)
        .map(|(l, v)| v / (1.0 - l * l))
        .collect();
    let mut order: Vec<usize> = (0..stationary.len()).collect();
    order.sort_by(|&i, &j| stationary[j].total_cmp(&stationary[i]));
    let truth = Arh1Truth {
        kind: "arh1",
        spec: spec.clone(),
        lambda: order.iter().map(|&i| spec.lambda[i]).collect(),
        stationary_var: order.iter().map(|&i| stationary[i]).collect(),
        eigenfunctions: order.iter().map(|&i| psi[i].as_slice().to_vec()).collect(),
        mean: mean.values().as_slice().to_vec(),
    };
    Ok((field, truth))
}

/// Surfaces over a `rows × cols` raster become node curves over the unit
/// interval, one time node per surface.
pub fn series_to_lattice(series: &SurfaceSeries, rows: usize, cols: usize) -> Result<LatticeField> {
    if series.grid().len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            got: series.grid().len(),
        });
    }
    let tau = TimeGrid::uniform(0.0, 1.0, series.len())?;
    LatticeField::new(rows, cols, tau, series.data().transpose())
}

/// `√2 sin(π k τ)`, `k = 1..m`, on the given grid.
pub fn sine_basis(grid: &TimeGrid, m: usize) -> Vec<DVector<f64>> {
    (1..=m)
        .map(|k| {
            DVector::from_iterator(
                grid.len(),
                grid.nodes()
                    .iter()
                    .map(|t| 2f64.sqrt() * (PI * k as f64 * t).sin()),
            )
        })
        .collect()
}

/// Spectral density diagonal of the scalar recursion with innovation
/// variance `s`: `s / ((2π)² |1 − a e^{−iω₁} − b e^{−iω₂}|²)`.
pub fn lattice_spectrum(a: f64, b: f64, s: f64, omega: [f64; 2]) -> f64 {
    let re = 1.0 - a * omega[0].cos() - b * omega[1].cos();
    let im = a * omega[0].sin() + b * omega[1].sin();
    s / ((2.0 * PI).powi(2) * (re * re + im * im))
}

pub fn simulate_lattice_panel(spec: &LatticeSpec) -> Result<(LatticeField, LatticeTruth)> {
    if spec.side < 2 || spec.n_tau < 2 {
        return Err(Error::invalid(
            "need at least a 2×2 lattice and two time nodes",
        ));
    }
    if spec.a.abs() + spec.b.abs() >= 1.0 {
        return Err(Error::invalid(
            "|a| + |b| must be below 1 for a stationary field",
        ));
    }
    if spec.innovation_var.is_empty() || spec.innovation_var.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("innovation variances must be positive"));
    }
    if !(spec.nugget_sd >= 0.0) {
        return Err(Error::invalid(
            "nugget standard deviation must be non-negative",
        ));
    }
    let m = spec.innovation_var.len();
    if m > spec.n_tau {
        return Err(Error::invalid("more basis components than time nodes"));
    }
    let grid = TimeGrid::uniform(0.0, 1.0, spec.n_tau)?;
    let basis = sine_basis(&grid, m);
    let mean = DVector::from_iterator(
        grid.len(),
        grid.nodes()
            .iter()
            .map(|t| 1.0 + 0.5 * t + 0.3 * (2.0 * PI * t).cos()),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let full = spec.side + spec.burn_in;
    let mut scores = vec![DVector::<f64>::zeros(m); full * full];
    for r in 0..full {
        for c in 0..full {
            let mut s = DVector::from_iterator(
                m,
                spec.innovation_var.iter().map(|v| {
                    v.sqrt()
                        * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                }),
            );
            if r > 0 {
                s += &scores[(r - 1) * full + c] * spec.a;
            }
            if c > 0 {
                s += &scores[r * full + c - 1] * spec.b;
            }
            scores[r * full + c] = s;
        }
    }
    let mut data = DMatrix::zeros(grid.len(), spec.side * spec.side);
    for r in 0..spec.side {
        for c in 0..spec.side {
            let sc = &scores[(r + spec.burn_in) * full + c + spec.burn_in];
            let mut curve = mean.clone();
            for (k, f) in basis.iter().enumerate() {
                curve += f * sc[k];
            }
            for v in curve.iter_mut() {
                *v += spec.nugget_sd
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            }
            data.set_column(r * spec.side + c, &curve);
        }
    }
    let field = LatticeField::new(spec.side, spec.side, grid, data)?;

    let t = spec.side as f64;
    let spectrum = (0..spec.side)
        .flat_map(|z1| (0..spec.side).map(move |z2| (z1, z2)))
        .map(|(z1, z2)| {
            let omega = [2.0 * PI * z1 as f64 / t, 2.0 * PI * z2 as f64 / t];
            SpectrumEntry {
                omega_row: omega[0],
                omega_col: omega[1],
                diagonal: spec
                    .innovation_var
                    .iter()
                    .map(|&s| lattice_spectrum(spec.a, spec.b, s, omega))
                    .collect(),
            }
        })
        .collect();
    let truth = LatticeTruth {
        kind: "lattice",
        spec: spec.clone(),
        basis: basis.iter().map(|f| f.as_slice().to_vec()).collect(),
        mean: mean.as_slice().to_vec(),
        spectrum,
    };
    Ok((field, truth))
}
