//! Discretized L² primitives.
//!
//! Every element of H is stored as its values on a shared [`TimeGrid`]; the
//! grid carries quadrature weights so that inner products, operator actions
//! and Hilbert–Schmidt norms approximate their continuous counterparts:
//!
//! - `⟨f, g⟩ = Σ_g w_g f(τ_g) g(τ_g)`
//! - `(K f)(τ_g) = Σ_h K(g, h) w_h f(τ_h)`
//!
//! Spectral problems are solved in the weight-transformed coordinates
//! `v_g = √w_g f(τ_g)`, where the quadrature inner product becomes the
//! Euclidean one and self-adjoint operators become symmetric matrices.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative rank tolerance used when truncating spectral inverses.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

const SELF_ADJOINT_TOL: f64 = 1e-8;

/// Ordered evaluation nodes with positive quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeGrid {
    /// Grid with explicit weights.
    pub fn with_weights(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Arc<Self>> {
        if nodes.is_empty() {
            return Err(Error::invalid("time grid needs at least one node"));
        }
        if nodes.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: nodes.len(),
                got: weights.len(),
            });
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "time grid nodes must be strictly increasing",
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid(
                "quadrature weights must be positive and finite",
            ));
        }
        Ok(Arc::new(Self { nodes, weights }))
    }

    /// Trapezoid rule on the given nodes.
    pub fn trapezoid(nodes: Vec<f64>) -> Result<Arc<Self>> {
        if nodes.len() < 2 {
            return Err(Error::invalid("trapezoid grid needs at least two nodes"));
        }
        let n = nodes.len();
        let mut weights = vec![0.0; n];
        for g in 0..n - 1 {
            let half = 0.5 * (nodes[g + 1] - nodes[g]);
            weights[g] += half;
            weights[g + 1] += half;
        }
        Self::with_weights(nodes, weights)
    }

    /// `n` equispaced nodes on `[start, end]` with trapezoid weights.
    pub fn uniform(start: f64, end: f64, n: usize) -> Result<Arc<Self>> {
        if n < 2 || !(end > start) {
            return Err(Error::invalid("uniform grid needs n >= 2 and end > start"));
        }
        let step = (end - start) / (n - 1) as f64;
        let nodes = (0..n).map(|i| start + step * i as f64).collect();
        Self::trapezoid(nodes)
    }

    /// `n` cells with unit weight, indexed `0..n`. Used for flattened rasters,
    /// where each node stands for one cell of a spatial domain.
    pub fn raster(n: usize) -> Result<Arc<Self>> {
        Self::with_weights((0..n).map(|i| i as f64).collect(), vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total measure `Σ w_g`.
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn weight_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    fn sqrt_weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.weights.iter().map(|w| w.sqrt()))
    }
}

pub(crate) fn same_grid(a: &Arc<TimeGrid>, b: &Arc<TimeGrid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

fn check_grid(a: &Arc<TimeGrid>, b: &Arc<TimeGrid>) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// An element of H sampled on a grid.
#[derive(Debug, Clone)]
pub struct SampledFunction {
    grid: Arc<TimeGrid>,
    values: DVector<f64>,
}

impl SampledFunction {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self> {
        Self::from_vector(grid, DVector::from_vec(values))
    }

    pub fn from_vector(grid: Arc<TimeGrid>, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<TimeGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = DVector::from_iterator(grid.len(), grid.nodes().iter().map(|&t| f(t)));
        Self { grid, values }
    }

    pub fn zeros(grid: Arc<TimeGrid>) -> Self {
        let values = DVector::zeros(grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| w * v * v)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Quadrature L¹ norm `Σ w_g |f(τ_g)|`.
    pub fn l1_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| w * v.abs())
            .sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.amax()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: &self.values * a,
        }
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: &self.values + &other.values,
        })
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: &self.values - &other.values,
        })
    }

    /// Quadrature-weighted values `w_g f(τ_g)`.
    pub(crate) fn weighted(&self) -> DVector<f64> {
        self.values.component_mul(&self.grid.weight_vector())
    }
}

/// `⟨f, g⟩ = Σ w_g f(τ_g) g(τ_g)`.
pub fn inner_product(f: &SampledFunction, g: &SampledFunction) -> Result<f64> {
    check_grid(&f.grid, &g.grid)?;
    Ok(f.values
        .iter()
        .zip(g.values.iter())
        .zip(f.grid.weights())
        .map(|((a, b), w)| w * a * b)
        .sum())
}

/// Rank-one operator `f ⊗ g : h ↦ ⟨h, g⟩ f`.
pub fn tensor_product(f: &SampledFunction, g: &SampledFunction) -> Result<KernelOperator> {
    check_grid(&f.grid, &g.grid)?;
    Ok(KernelOperator {
        grid: f.grid.clone(),
        kernel: &f.values * g.values.transpose(),
    })
}

/// Integral operator represented by its kernel table on the grid.
#[derive(Debug, Clone)]
pub struct KernelOperator {
    grid: Arc<TimeGrid>,
    kernel: DMatrix<f64>,
}

impl KernelOperator {
    pub fn new(grid: Arc<TimeGrid>, kernel: DMatrix<f64>) -> Result<Self> {
        let g = grid.len();
        if kernel.nrows() != g || kernel.ncols() != g {
            return Err(Error::DimensionMismatch {
                expected: g,
                got: kernel.nrows().max(kernel.ncols()),
            });
        }
        Ok(Self { grid, kernel })
    }

    pub fn zeros(grid: Arc<TimeGrid>) -> Self {
        let g = grid.len();
        Self {
            grid,
            kernel: DMatrix::zeros(g, g),
        }
    }

    /// Kernel `δ_{gh} / w_h`, whose action is the identity.
    pub fn identity(grid: Arc<TimeGrid>) -> Self {
        let kernel = DMatrix::from_diagonal(&DVector::from_iterator(
            grid.len(),
            grid.weights().iter().map(|w| 1.0 / w),
        ));
        Self { grid, kernel }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn into_kernel(self) -> DMatrix<f64> {
        self.kernel
    }

    pub fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        check_grid(&self.grid, &f.grid)?;
        Ok(SampledFunction {
            grid: self.grid.clone(),
            values: &self.kernel * f.weighted(),
        })
    }

    /// Adjoint under the quadrature inner product.
    pub fn adjoint(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            kernel: self.kernel.transpose(),
        }
    }

    /// Kernel of `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        let w = self.grid.weight_vector();
        let mut scaled = other.kernel.clone();
        for (mut row, wg) in scaled.row_iter_mut().zip(w.iter()) {
            row *= *wg;
        }
        Ok(Self {
            grid: self.grid.clone(),
            kernel: &self.kernel * scaled,
        })
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            kernel: &self.kernel * a,
        }
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            kernel: &self.kernel + &other.kernel,
        })
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            kernel: &self.kernel - &other.kernel,
        })
    }

    /// Hilbert–Schmidt norm `(Σ w_g w_h K(g,h)²)^{1/2}`.
    pub fn hs_norm(&self) -> f64 {
        self.weighted_matrix().norm()
    }

    /// `Σ_g K(g, g) w_g`.
    pub fn trace(&self) -> f64 {
        self.kernel
            .diagonal()
            .iter()
            .zip(self.grid.weights())
            .map(|(k, w)| k * w)
            .sum()
    }

    /// `⟨K f, g⟩`.
    pub fn bilinear(&self, f: &SampledFunction, g: &SampledFunction) -> Result<f64> {
        inner_product(&self.apply(f)?, g)
    }

    pub fn is_self_adjoint(&self, tol: f64) -> bool {
        let scale = self.kernel.amax().max(f64::MIN_POSITIVE);
        let asym = (&self.kernel - self.kernel.transpose()).amax();
        asym <= tol * scale.max(1.0)
    }

    /// Matrix of the operator in the weight-transformed coordinates,
    /// `W^{1/2} K W^{1/2}`.
    pub fn weighted_matrix(&self) -> DMatrix<f64> {
        let s = self.grid.sqrt_weights();
        let mut m = self.kernel.clone();
        for ((g, h), v) in indices(&mut m) {
            *v *= s[g] * s[h];
        }
        m
    }
}

fn indices(m: &mut DMatrix<f64>) -> impl Iterator<Item = ((usize, usize), &mut f64)> {
    let nrows = m.nrows();
    m.iter_mut()
        .enumerate()
        .map(move |(idx, v)| ((idx % nrows, idx / nrows), v))
}

/// Orthonormal system with associated non-increasing values.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
    functions: Vec<SampledFunction>,
}

impl EigenSystem {
    /// Builds a system from functions assumed orthonormal.
    pub fn new(
        grid: Arc<TimeGrid>,
        values: Vec<f64>,
        functions: Vec<SampledFunction>,
    ) -> Result<Self> {
        if values.len() != functions.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                got: functions.len(),
            });
        }
        for f in &functions {
            check_grid(&grid, f.grid())?;
        }
        Ok(Self {
            grid,
            values,
            functions,
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn functions(&self) -> &[SampledFunction] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Leading `m` pairs.
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.min(self.len());
        Self {
            grid: self.grid.clone(),
            values: self.values[..m].to_vec(),
            functions: self.functions[..m].to_vec(),
        }
    }

    /// Same functions with replaced values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.grid.clone(), values, self.functions.clone())
    }

    /// `Ψ`, one function per column.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let g = self.grid.len();
        let mut m = DMatrix::zeros(g, self.len());
        for (k, f) in self.functions.iter().enumerate() {
            m.set_column(k, f.values());
        }
        m
    }

    /// `W Ψ`; `(W Ψ)ᵀ f` gives the coefficients `⟨f, ψ_k⟩`.
    pub fn weighted_basis(&self) -> DMatrix<f64> {
        let mut m = self.basis_matrix();
        for (mut row, w) in m.row_iter_mut().zip(self.grid.weights()) {
            row *= *w;
        }
        m
    }

    /// Coefficients `⟨f, ψ_k⟩`.
    pub fn project(&self, f: &SampledFunction) -> Result<DVector<f64>> {
        check_grid(&self.grid, f.grid())?;
        let wf = f.weighted();
        Ok(DVector::from_iterator(
            self.len(),
            self.functions.iter().map(|psi| psi.values().dot(&wf)),
        ))
    }

    /// `Σ_k c_k ψ_k`.
    pub fn synthesize(&self, coeffs: &DVector<f64>) -> Result<SampledFunction> {
        if coeffs.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: coeffs.len(),
            });
        }
        Ok(SampledFunction {
            grid: self.grid.clone(),
            values: self.basis_matrix() * coeffs,
        })
    }

    /// `Σ_k λ_k φ_k ⊗ φ_k`.
    pub fn reconstruct(&self) -> KernelOperator {
        let psi = self.basis_matrix();
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&self.values));
        KernelOperator {
            grid: self.grid.clone(),
            kernel: &psi * lam * psi.transpose(),
        }
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.basis_matrix().transpose() * self.weighted_basis();
        (gram - DMatrix::identity(self.len(), self.len())).amax()
    }
}

/// Makes the largest-magnitude coordinate positive; returns the applied sign.
/// `v` is in weighted coordinates and `sqrt_w` holds the square-root weights,
/// so the test is made on the function values `v / sqrt_w`.
fn fix_sign(v: &mut DVector<f64>, sqrt_w: &DVector<f64>) -> f64 {
    let idx = v.component_div(sqrt_w).iamax();
    if v[idx] < 0.0 {
        v.neg_mut();
        -1.0
    } else {
        1.0
    }
}

fn to_functions(grid: &Arc<TimeGrid>, vectors: Vec<DVector<f64>>) -> Vec<SampledFunction> {
    let s = grid.sqrt_weights();
    vectors
        .into_iter()
        .map(|v| SampledFunction {
            grid: grid.clone(),
            values: v.component_div(&s),
        })
        .collect()
}

/// Descending order, ties kept in original order.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Eigendecomposition of a self-adjoint operator.
pub fn eigh(op: &KernelOperator) -> Result<EigenSystem> {
    if !op.is_self_adjoint(SELF_ADJOINT_TOL) {
        return Err(Error::invalid(
            "eigendecomposition requires a self-adjoint operator",
        ));
    }
    let a = op.weighted_matrix();
    let a = (&a + a.transpose()) * 0.5;
    eigh_weighted(&op.grid, a)
}

fn eigh_weighted(grid: &Arc<TimeGrid>, a: DMatrix<f64>) -> Result<EigenSystem> {
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
    let order = descending_order(eig.eigenvalues.as_slice());
    let mut values = Vec::with_capacity(order.len());
    let mut vectors = Vec::with_capacity(order.len());
    for &k in &order {
        let mut v = eig.eigenvectors.column(k).into_owned();
        fix_sign(&mut v, &grid.sqrt_weights());
        values.push(eig.eigenvalues[k]);
        vectors.push(v);
    }
    let functions = to_functions(grid, vectors);
    Ok(EigenSystem {
        grid: grid.clone(),
        values,
        functions,
    })
}

/// Singular value decomposition `K ψ_k = σ_k φ_k`.
#[derive(Debug, Clone)]
pub struct OperatorSvd {
    /// Right system `{ψ_k}`; values are the singular values.
    pub right: EigenSystem,
    /// Left system `{φ_k}`; values are the singular values.
    pub left: EigenSystem,
    pub singulars: Vec<f64>,
}

/// SVD of a general kernel operator.
pub fn svd_op(op: &KernelOperator) -> Result<OperatorSvd> {
    let a = op.weighted_matrix();
    svd_weighted(&op.grid, a)
}

fn svd_weighted(grid: &Arc<TimeGrid>, a: DMatrix<f64>) -> Result<OperatorSvd> {
    let svd = a
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("singular value decomposition did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    assemble_svd(grid, &u, &v_t.transpose(), svd.singular_values.as_slice())
}

/// `u`, `v` hold left and right singular vectors (weighted coordinates) by column.
fn assemble_svd(
    grid: &Arc<TimeGrid>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    singulars: &[f64],
) -> Result<OperatorSvd> {
    let sqrt_w = grid.sqrt_weights();
    let order = descending_order(singulars);
    let mut sing = Vec::with_capacity(order.len());
    let mut lefts = Vec::with_capacity(order.len());
    let mut rights = Vec::with_capacity(order.len());
    for &k in &order {
        let mut r = v.column(k).into_owned();
        let mut l = u.column(k).into_owned();
        if fix_sign(&mut r, &sqrt_w) < 0.0 {
            l.neg_mut();
        }
        sing.push(singulars[k].max(0.0));
        rights.push(r);
        lefts.push(l);
    }
    Ok(OperatorSvd {
        right: EigenSystem {
            grid: grid.clone(),
            values: sing.clone(),
            functions: to_functions(grid, rights),
        },
        left: EigenSystem {
            grid: grid.clone(),
            values: sing.clone(),
            functions: to_functions(grid, lefts),
        },
        singulars: sing,
    })
}

/// Number of eigenvalues above `tol · λ₁`.
pub fn numerical_rank(values: &[f64], tol: f64) -> usize {
    let lead = values.first().copied().unwrap_or(0.0);
    if lead <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&v| v > tol * lead).count()
}

/// `Σ_{k ≤ m} (λ_k + ridge)^{-1} φ_k ⊗ φ_k` for a self-adjoint PSD operator.
pub fn truncated_spectral_inverse(
    op: &KernelOperator,
    m: usize,
    ridge: f64,
) -> Result<KernelOperator> {
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be non-negative"));
    }
    let eig = eigh(op)?;
    if m > eig.len() {
        return Err(Error::invalid(format!(
            "requested {m} components but the operator has only {}",
            eig.len()
        )));
    }
    if ridge == 0.0 {
        let rank = numerical_rank(eig.values(), DEFAULT_RANK_TOL);
        if m > rank {
            return Err(Error::invalid(format!(
                "truncation level {m} exceeds the numerically stable rank {rank}; use m <= {rank} or a positive ridge"
            )));
        }
    }
    let inv: Vec<f64> = eig.values[..m].iter().map(|l| 1.0 / (l + ridge)).collect();
    Ok(eig.truncated(m).with_values(inv)?.reconstruct())
}

/// Legendre design matrix on the grid nodes mapped affinely to `[-1, 1]`.
pub fn legendre_design(grid: &TimeGrid, degree: usize) -> DMatrix<f64> {
    let nodes = grid.nodes();
    let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let mut p = DMatrix::zeros(nodes.len(), degree + 1);
    for (g, &t) in nodes.iter().enumerate() {
        let x = if nodes.len() == 1 {
            0.0
        } else {
            2.0 * (t - lo) / span - 1.0
        };
        let (mut prev, mut cur) = (1.0, x);
        p[(g, 0)] = 1.0;
        if degree >= 1 {
            p[(g, 1)] = x;
        }
        for n in 1..degree {
            let nf = n as f64;
            let next = ((2.0 * nf + 1.0) * x * cur - nf * prev) / (nf + 1.0);
            prev = cur;
            cur = next;
            p[(g, n + 1)] = cur;
        }
    }
    p
}

/// Weighted least-squares projector onto polynomials of the given degree,
/// `Π = P (Pᵀ W P)^{-1} Pᵀ W`.
pub(crate) fn polynomial_projector(grid: &TimeGrid, degree: usize) -> Result<DMatrix<f64>> {
    if degree + 1 > grid.len() {
        return Err(Error::invalid(format!(
            "polynomial degree {degree} needs at least {} grid nodes",
            degree + 1
        )));
    }
    let p = legendre_design(grid, degree);
    let mut wp = p.clone();
    for (mut row, w) in wp.row_iter_mut().zip(grid.weights()) {
        row *= *w;
    }
    let gram = p.transpose() * &wp;
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Numerical("polynomial Gram matrix is singular".into()))?;
    Ok(p * inv * wp.transpose())
}

/// Least-squares tensor-product polynomial fit of a kernel, in the quadrature
/// measure `w_g w_h`. Returns the fitted kernel and its weighted residual sum
/// of squares.
pub fn poly_smooth_kernel(op: &KernelOperator, degree: usize) -> Result<(KernelOperator, f64)> {
    let proj = polynomial_projector(&op.grid, degree)?;
    let fitted = &proj * &op.kernel * proj.transpose();
    let resid = KernelOperator {
        grid: op.grid.clone(),
        kernel: &op.kernel - &fitted,
    };
    let rss = resid.hs_norm().powi(2);
    Ok((
        KernelOperator {
            grid: op.grid.clone(),
            kernel: fitted,
        },
        rss,
    ))
}

/// Degree in `1..=max_degree` minimizing `n ln(RSS/n) + 2 (d+1)²` for a
/// tensor-product polynomial fit of the kernel.
pub fn select_poly_degree_aic(op: &KernelOperator, max_degree: usize) -> Result<usize> {
    let n = (op.grid.len() * op.grid.len()) as f64;
    let mut best = (f64::INFINITY, 1);
    for d in 1..=max_degree.min(op.grid.len().saturating_sub(1)).max(1) {
        let (_, rss) = poly_smooth_kernel(op, d)?;
        let aic = n * (rss.max(1e-300) / n).ln() + 2.0 * ((d + 1) * (d + 1)) as f64;
        if aic < best.0 {
            best = (aic, d);
        }
    }
    Ok(best.1)
}

/// Kernel stored in factored form `K = L Rᵀ` (`L`, `R` are G×r).
///
/// Empirical regressors are rank one and stay rank one under tensor-product
/// polynomial smoothing, so projections and actions cost O(G r) instead of O(G²).
#[derive(Debug, Clone)]
pub struct LowRankKernel {
    grid: Arc<TimeGrid>,
    left: DMatrix<f64>,
    right: DMatrix<f64>,
}

impl LowRankKernel {
    pub fn new(grid: Arc<TimeGrid>, left: DMatrix<f64>, right: DMatrix<f64>) -> Result<Self> {
        let g = grid.len();
        if left.nrows() != g || right.nrows() != g || left.ncols() != right.ncols() {
            return Err(Error::invalid("factor shapes must be G×r and G×r"));
        }
        Ok(Self { grid, left, right })
    }

    /// `f ⊗ g`.
    pub fn rank_one(f: &SampledFunction, g: &SampledFunction) -> Result<Self> {
        check_grid(f.grid(), g.grid())?;
        Ok(Self {
            grid: f.grid.clone(),
            left: DMatrix::from_column_slice(f.len(), 1, f.values().as_slice()),
            right: DMatrix::from_column_slice(g.len(), 1, g.values().as_slice()),
        })
    }

    pub fn from_dense(op: &KernelOperator) -> Self {
        let g = op.grid.len();
        Self {
            grid: op.grid.clone(),
            left: op.kernel.clone(),
            right: DMatrix::identity(g, g),
        }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.left.ncols()
    }

    pub fn left(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn right(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn to_dense(&self) -> KernelOperator {
        KernelOperator {
            grid: self.grid.clone(),
            kernel: &self.left * self.right.transpose(),
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }

    pub fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        check_grid(&self.grid, f.grid())?;
        let inner = self.right.transpose() * f.weighted();
        Ok(SampledFunction {
            grid: self.grid.clone(),
            values: &self.left * inner,
        })
    }

    /// Matrix `[⟨K ψ_m, ψ_l⟩]_{l,m}` given `WΨ` (see [`EigenSystem::weighted_basis`]).
    pub fn project(&self, weighted_basis: &DMatrix<f64>) -> DMatrix<f64> {
        let bl = weighted_basis.transpose() * &self.left;
        let br = weighted_basis.transpose() * &self.right;
        bl * br.transpose()
    }

    /// Tensor-product polynomial smoothing of the kernel.
    pub fn poly_smooth(&self, degree: usize) -> Result<Self> {
        let proj = polynomial_projector(&self.grid, degree)?;
        Ok(Self {
            grid: self.grid.clone(),
            left: &proj * &self.left,
            right: &proj * &self.right,
        })
    }

    /// SVD through thin QR factorizations of the weighted factors.
    pub fn svd(&self) -> Result<OperatorSvd> {
        let s = self.grid.sqrt_weights();
        let mut wl = self.left.clone();
        let mut wr = self.right.clone();
        for ((mut l, mut r), sg) in wl.row_iter_mut().zip(wr.row_iter_mut()).zip(s.iter()) {
            l *= *sg;
            r *= *sg;
        }
        let ql = wl.qr();
        let qr = wr.qr();
        let core = ql.r() * qr.r().transpose();
        let svd = core
            .try_svd(true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("core SVD did not converge".into()))?;
        let u = ql.q() * svd.u.expect("requested U");
        let v = qr.q() * svd.v_t.expect("requested V^T").transpose();
        assemble_svd(&self.grid, &u, &v, svd.singular_values.as_slice())
    }
}

/// Symmetric eigensolver for `K = F Fᵀ / n`-type PSD operators given in factored form.
/// Used where G is large and the rank is small.
pub fn eigh_gram(grid: &Arc<TimeGrid>, factor: &DMatrix<f64>, scale: f64) -> Result<EigenSystem> {
    if factor.nrows() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: factor.nrows(),
        });
    }
    let s = grid.sqrt_weights();
    let mut wf = factor.clone();
    for (mut row, sg) in wf.row_iter_mut().zip(s.iter()) {
        row *= *sg;
    }
    if wf.nrows() <= wf.ncols() {
        let a = &wf * wf.transpose() * scale;
        return eigh_weighted(grid, a);
    }
    let qr = wf.qr();
    let r = qr.r();
    let core = &r * r.transpose() * scale;
    let core = (&core + core.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(core, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
    let q = qr.q();
    let order = descending_order(eig.eigenvalues.as_slice());
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for &k in &order {
        let mut v = &q * eig.eigenvectors.column(k);
        fix_sign(&mut v, &grid.sqrt_weights());
        values.push(eig.eigenvalues[k]);
        vectors.push(v);
    }
    Ok(EigenSystem {
        grid: grid.clone(),
        values,
        functions: to_functions(grid, vectors),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fn(grid: &Arc<TimeGrid>, rng: &mut ChaCha8Rng) -> SampledFunction {
        let v = (0..grid.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        SampledFunction::new(grid.clone(), v).unwrap()
    }

    fn random_symmetric(grid: &Arc<TimeGrid>, rng: &mut ChaCha8Rng) -> KernelOperator {
        let g = grid.len();
        let a = DMatrix::from_fn(g, g, |_, _| rng.random_range(-1.0..1.0));
        KernelOperator::new(grid.clone(), &a + a.transpose()).unwrap()
    }

    fn random_psd(grid: &Arc<TimeGrid>, rng: &mut ChaCha8Rng) -> KernelOperator {
        let g = grid.len();
        let a = DMatrix::from_fn(g, g, |_, _| rng.random_range(-1.0..1.0));
        KernelOperator::new(grid.clone(), &a * a.transpose()).unwrap()
    }

    #[test]
    fn trapezoid_weights_sum_to_span() {
        let grid = TimeGrid::trapezoid(vec![0.0, 0.1, 0.35, 0.7, 1.3, 2.0]).unwrap();
        assert_abs_diff_eq!(grid.measure(), 2.0, epsilon = 1e-10);
        let uni = TimeGrid::uniform(-1.0, 3.0, 57).unwrap();
        assert_abs_diff_eq!(uni.measure(), 4.0, epsilon = 1e-10);
    }

    #[test]
    fn grid_rejects_bad_nodes() {
        assert!(TimeGrid::trapezoid(vec![0.0, 0.0, 1.0]).is_err());
        assert!(TimeGrid::with_weights(vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let grid = TimeGrid::uniform(0.0, 1.0, 101).unwrap();
        let one = SampledFunction::from_fn(grid.clone(), |_| 1.0);
        assert_abs_diff_eq!(inner_product(&one, &one).unwrap(), 1.0, epsilon = 1e-14);
        let t = SampledFunction::from_fn(grid.clone(), |t| t);
        assert_abs_diff_eq!(inner_product(&t, &one).unwrap(), 0.5, epsilon = 1e-4);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_fn(&grid, &mut rng);
        let b = random_fn(&grid, &mut rng);
        let a = a.scaled(1.0 / a.norm());
        let proj = inner_product(&b, &a).unwrap();
        let b_perp = b.minus(&a.scaled(proj)).unwrap();
        assert_abs_diff_eq!(inner_product(&a, &b_perp).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn inner_product_rejects_grid_mismatch() {
        let g1 = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        let g2 = TimeGrid::uniform(0.0, 2.0, 11).unwrap();
        let f = SampledFunction::zeros(g1);
        let g = SampledFunction::zeros(g2);
        assert!(matches!(inner_product(&f, &g), Err(Error::GridMismatch)));
        assert!(tensor_product(&f, &g).is_err());
    }

    #[test]
    fn tensor_product_action() {
        let grid = TimeGrid::uniform(0.0, 1.0, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_fn(&grid, &mut rng);
        let g = random_fn(&grid, &mut rng);
        let h = random_fn(&grid, &mut rng);

        let ff = tensor_product(&f, &f).unwrap();
        let out = ff.apply(&f).unwrap();
        let expected = f.scaled(f.norm_sq());
        assert!((out.values() - expected.values()).amax() < 1e-12);

        let fg = tensor_product(&f, &g).unwrap();
        let out = fg.apply(&h).unwrap();
        // direct quadrature evaluation
        let hg: f64 = (0..grid.len())
            .map(|i| grid.weights()[i] * h.values()[i] * g.values()[i])
            .sum();
        for i in 0..grid.len() {
            assert_abs_diff_eq!(out.values()[i], hg * f.values()[i], epsilon = 1e-12);
        }

        let eig = eigh(&ff).unwrap();
        assert_abs_diff_eq!(eig.values()[0], f.norm_sq(), epsilon = 1e-10);
        assert!(eig.values()[1..].iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn eigh_identity_and_trace() {
        let grid = TimeGrid::trapezoid(vec![0.0, 0.2, 0.5, 0.6, 1.0, 1.7]).unwrap();
        let eig = eigh(&KernelOperator::identity(grid.clone())).unwrap();
        for v in eig.values() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }

        let grid = TimeGrid::uniform(0.0, 1.0, 15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = random_symmetric(&grid, &mut rng);
        let eig = eigh(&k).unwrap();
        let trace: f64 = (0..15)
            .map(|g| k.kernel()[(g, g)] * grid.weights()[g])
            .sum();
        assert_abs_diff_eq!(eig.values().iter().sum::<f64>(), trace, epsilon = 1e-10);
        assert!(eig.values().windows(2).all(|w| w[0] >= w[1]));
        assert!(eig.orthonormality_error() < 1e-8);
        let rec = eig.reconstruct();
        assert!(rec.minus(&k).unwrap().hs_norm() < 1e-8);
    }

    #[test]
    fn eigh_rejects_non_self_adjoint() {
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let mut m = DMatrix::identity(4, 4);
        m[(0, 1)] = 1.0;
        let k = KernelOperator::new(grid, m).unwrap();
        assert!(matches!(eigh(&k), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn eigenfunction_sign_convention() {
        let grid = TimeGrid::uniform(0.0, 1.0, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let eig = eigh(&random_symmetric(&grid, &mut rng)).unwrap();
        for f in eig.functions() {
            let v = f.values();
            assert!(v[v.iamax()] > 0.0);
        }
    }

    #[test]
    fn svd_examples() {
        let grid = TimeGrid::uniform(0.0, 1.0, 14).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = random_psd(&grid, &mut rng);
        let svd = svd_op(&k).unwrap();
        let eig = eigh(&k).unwrap();
        for (s, l) in svd.singulars.iter().zip(eig.values()) {
            assert_abs_diff_eq!(*s, *l, epsilon = 1e-10 * eig.values()[0]);
        }
        for (r, l) in svd
            .right
            .functions()
            .iter()
            .zip(svd.left.functions())
            .take(5)
        {
            let d = inner_product(r, l).unwrap().abs();
            assert_abs_diff_eq!(d, 1.0, epsilon = 1e-8);
        }

        let f = random_fn(&grid, &mut rng);
        let g = random_fn(&grid, &mut rng);
        let svd = svd_op(&tensor_product(&f, &g).unwrap()).unwrap();
        assert_abs_diff_eq!(svd.singulars[0], f.norm() * g.norm(), epsilon = 1e-10);
        assert!(svd.singulars[1] < 1e-10);

        let svd = svd_op(&KernelOperator::zeros(grid)).unwrap();
        assert!(svd.singulars.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn svd_satisfies_defining_relation_and_adjoint_swap() {
        let grid = TimeGrid::trapezoid(vec![0.0, 0.3, 0.4, 0.9, 1.0, 1.6, 2.0, 2.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let k = KernelOperator::new(grid.clone(), m).unwrap();
        let svd = svd_op(&k).unwrap();
        for ((psi, phi), s) in svd
            .right
            .functions()
            .iter()
            .zip(svd.left.functions())
            .zip(&svd.singulars)
        {
            let lhs = k.apply(psi).unwrap();
            assert!((lhs.values() - phi.values() * *s).amax() < 1e-10);
        }
        assert!(svd.right.orthonormality_error() < 1e-8);
        assert!(svd.left.orthonormality_error() < 1e-8);
        let adj = svd_op(&k.adjoint()).unwrap();
        for (a, b) in svd.singulars.iter().zip(&adj.singulars) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
        for (a, b) in svd.left.functions().iter().zip(adj.right.functions()) {
            assert_abs_diff_eq!(inner_product(a, b).unwrap().abs(), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn low_rank_svd_matches_dense() {
        let grid = TimeGrid::uniform(0.0, 3.0, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = DMatrix::from_fn(40, 3, |_, _| rng.random_range(-1.0..1.0));
        let r = DMatrix::from_fn(40, 3, |_, _| rng.random_range(-1.0..1.0));
        let lr = LowRankKernel::new(grid.clone(), l, r).unwrap();
        let dense = svd_op(&lr.to_dense()).unwrap();
        let fast = lr.svd().unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(dense.singulars[k], fast.singulars[k], epsilon = 1e-10);
            let c = inner_product(&dense.right.functions()[k], &fast.right.functions()[k]).unwrap();
            assert_abs_diff_eq!(c, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn eigh_gram_matches_dense() {
        let grid = TimeGrid::uniform(0.0, 1.0, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let f = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let dense =
            eigh(&KernelOperator::new(grid.clone(), &f * f.transpose() * 0.25).unwrap()).unwrap();
        let fast = eigh_gram(&grid, &f, 0.25).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(dense.values()[k], fast.values()[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn spectral_inverse_examples() {
        let grid = TimeGrid::uniform(0.0, 1.0, 21).unwrap();
        let f = SampledFunction::from_fn(grid.clone(), |t| (std::f64::consts::PI * t).sin());
        let f = f.scaled(1.0 / f.norm());
        let k = tensor_product(&f, &f).unwrap().scaled(2.0);
        let inv = truncated_spectral_inverse(&k, 1, 0.0).unwrap();
        let out = inv.apply(&f).unwrap();
        assert!((out.values() - f.values() * 0.5).amax() < 1e-10);

        let inv_ridge = truncated_spectral_inverse(&k, 1, 2.0).unwrap();
        let a = inner_product(&inv.apply(&f).unwrap(), &f).unwrap();
        let b = inner_product(&inv_ridge.apply(&f).unwrap(), &f).unwrap();
        assert_abs_diff_eq!(b, 0.5 * a, epsilon = 1e-12);

        let err = truncated_spectral_inverse(&k, 2, 0.0).unwrap_err();
        assert!(err.to_string().contains("rank 1"), "{err}");
    }

    #[test]
    fn spectral_inverse_full_rank_matches_dense_solve() {
        let grid = TimeGrid::uniform(0.0, 1.0, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let k = random_psd(&grid, &mut rng);
        let inv = truncated_spectral_inverse(&k, 12, 0.0).unwrap();
        let comp = inv.compose(&k).unwrap();
        // identity action in weighted coordinates
        let w = comp.weighted_matrix();
        assert!((w - DMatrix::<f64>::identity(12, 12)).amax() < 1e-8);
        // dense oracle: solve K x = f directly in weighted coordinates
        let f = random_fn(&grid, &mut rng);
        let a = k.weighted_matrix();
        let s: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
        let rhs = DVector::from_iterator(12, (0..12).map(|i| f.values()[i] * s[i]));
        let sol = a.lu().solve(&rhs).unwrap();
        let via_inv = inv.apply(&f).unwrap();
        for i in 0..12 {
            assert_abs_diff_eq!(
                via_inv.values()[i] * s[i],
                sol[i],
                epsilon = 1e-6 * sol.amax()
            );
        }
    }

    #[test]
    fn polynomial_fit_reproduces_polynomial_kernel() {
        let grid = TimeGrid::uniform(0.0, 2.0, 25).unwrap();
        let g = grid.len();
        let nodes = grid.nodes().to_vec();
        let kern = DMatrix::from_fn(g, g, |i, j| {
            let (t, s) = (nodes[i], nodes[j]);
            1.0 - 0.5 * t + 2.0 * t * s - 0.3 * s * s + 0.7 * t * t * s * s
        });
        let op = KernelOperator::new(grid.clone(), kern).unwrap();
        let (fit, rss) = poly_smooth_kernel(&op, 2).unwrap();
        assert!((fit.kernel() - op.kernel()).amax() < 1e-8);
        assert!(rss < 1e-16);
        assert_eq!(select_poly_degree_aic(&op, 5).unwrap(), 2);
    }

    #[test]
    fn low_rank_poly_smooth_matches_dense() {
        let grid = TimeGrid::uniform(0.0, 1.0, 18).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_fn(&grid, &mut rng);
        let b = random_fn(&grid, &mut rng);
        let lr = LowRankKernel::rank_one(&a, &b)
            .unwrap()
            .poly_smooth(3)
            .unwrap();
        let (dense, _) = poly_smooth_kernel(&tensor_product(&a, &b).unwrap(), 3).unwrap();
        assert!((lr.to_dense().kernel() - dense.kernel()).amax() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn parseval_over_complete_system(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
            let eig = eigh(&random_symmetric(&grid, &mut rng)).unwrap();
            let f = random_fn(&grid, &mut rng);
            let coeffs = eig.project(&f).unwrap();
            proptest::prop_assert!((coeffs.norm_squared() - f.norm_sq()).abs() < 1e-8);
        }

        #[test]
        fn rank_one_action_matches_inner_product(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = TimeGrid::uniform(0.0, 1.0, 9).unwrap();
            let (f, g, h) = (random_fn(&grid, &mut rng), random_fn(&grid, &mut rng), random_fn(&grid, &mut rng));
            let lhs = tensor_product(&f, &g).unwrap().apply(&h).unwrap();
            let rhs = f.scaled(inner_product(&h, &g).unwrap());
            proptest::prop_assert!((lhs.values() - rhs.values()).amax() < 1e-12);
            let lr = LowRankKernel::rank_one(&f, &g).unwrap().apply(&h).unwrap();
            proptest::prop_assert!((lr.values() - rhs.values()).amax() < 1e-12);
        }

        #[test]
        fn eigh_reconstructs(seed in 0u64..200, g in 2usize..64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = TimeGrid::uniform(0.0, 1.0, g).unwrap();
            let k = random_symmetric(&grid, &mut rng);
            let rec = eigh(&k).unwrap().reconstruct();
            proptest::prop_assert!(rec.minus(&k).unwrap().hs_norm() <= 1e-8);
        }
    }
}
