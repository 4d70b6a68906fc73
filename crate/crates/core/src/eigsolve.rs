//! Symmetric eigenvalue backends over matrix-free operators.
//!
//! Two routes are provided: a dense decomposition (materializes the operator,
//! exact up to LAPACK-style rounding) and the randomized range-finder scheme
//! for the `k` eigenvalues of largest magnitude, which only needs block
//! applies of the operator.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngSpec;

/// A real symmetric linear map on `R^dim`.
pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;

    /// `A * V` for an `dim x m` block.
    fn apply_block(&self, v: &DMatrix<f64>) -> DMatrix<f64>;

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let block = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        self.apply_block(&block).column(0).into_owned()
    }

    /// Explicit matrix, when the operator can produce one more accurately or
    /// cheaper than `dim` applies.
    fn to_dense(&self) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct DenseOperator(pub DMatrix<f64>);

impl SymmetricOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply_block(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.0 * v
    }

    fn to_dense(&self) -> Option<DMatrix<f64>> {
        Some(self.0.clone())
    }
}

/// Counts vector applies (one per block column) made through it.
pub struct CountingOperator<'a, O: SymmetricOperator + ?Sized> {
    inner: &'a O,
    applies: AtomicUsize,
}

impl<'a, O: SymmetricOperator + ?Sized> CountingOperator<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            applies: AtomicUsize::new(0),
        }
    }

    pub fn applies(&self) -> usize {
        self.applies.load(Ordering::Relaxed)
    }
}

impl<O: SymmetricOperator + ?Sized> SymmetricOperator for CountingOperator<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply_block(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.applies.fetch_add(v.ncols(), Ordering::Relaxed);
        self.inner.apply_block(v)
    }
}

/// Dense matrix of the operator, via `to_dense` or `dim` basis applies.
pub fn materialize<O: SymmetricOperator + ?Sized>(op: &O) -> DMatrix<f64> {
    op.to_dense()
        .unwrap_or_else(|| op.apply_block(&DMatrix::identity(op.dim(), op.dim())))
}

const SYMMETRY_TOL: f64 = 1e-10;

fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for j in 0..a.ncols() {
        for i in (j + 1)..a.nrows() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Largest relative violation of `u'Av = v'Au` over random probe pairs.
pub fn symmetry_defect<O: SymmetricOperator + ?Sized>(op: &O, rng: RngSpec, probes: usize) -> f64 {
    let mut gen = rng.rng();
    let n = op.dim();
    let u = DMatrix::from_fn(n, probes, |_, _| StandardNormal.sample(&mut gen));
    let v = DMatrix::from_fn(n, probes, |_, _| StandardNormal.sample(&mut gen));
    let au = op.apply_block(&u);
    let av = op.apply_block(&v);
    (0..probes)
        .map(|j| {
            let a = u.column(j).dot(&av.column(j));
            let b = v.column(j).dot(&au.column(j));
            let scale = (u.column(j).norm() * av.column(j).norm())
                .max(v.column(j).norm() * au.column(j).norm())
                .max(f64::MIN_POSITIVE);
            (a - b).abs() / scale
        })
        .fold(0.0, f64::max)
}

fn checked_dense<O: SymmetricOperator + ?Sized>(op: &O) -> Result<DMatrix<f64>> {
    let a = materialize(op);
    let asymmetry = relative_asymmetry(&a);
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::NonSymmetric { asymmetry });
    }
    Ok((&a + a.transpose()) * 0.5)
}

fn abs_descending_order(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].abs().total_cmp(&values[i].abs()));
    order
}

/// Full eigendecomposition, eigenpairs sorted by decreasing `|lambda|`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn dense_eigs<O: SymmetricOperator + ?Sized>(op: &O) -> Result<EigenDecomposition> {
    let a = checked_dense(op)?;
    let eig = SymmetricEigen::new(a);
    let order = abs_descending_order(&eig.eigenvalues);
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok(EigenDecomposition { values, vectors })
}

/// All eigenvalues sorted by decreasing `|lambda|`, without eigenvectors.
pub fn dense_eigenvalues<O: SymmetricOperator + ?Sized>(op: &O) -> Result<Vec<f64>> {
    let a = checked_dense(op)?;
    let values = a.symmetric_eigenvalues();
    Ok(abs_descending_order(&values)
        .into_iter()
        .map(|i| values[i])
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub struct RandEigConfig {
    pub k: usize,
    pub oversampling: usize,
    /// `None` uses `ceil(ln dim)`.
    pub power_depth: Option<usize>,
    pub rng: RngSpec,
}

impl RandEigConfig {
    pub fn new(k: usize, rng: RngSpec) -> Self {
        Self {
            k,
            oversampling: 10,
            power_depth: None,
            rng,
        }
    }

    pub fn power_depth_for(&self, dim: usize) -> usize {
        self.power_depth
            .unwrap_or_else(|| (dim.max(1) as f64).ln().ceil() as usize)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.oversampling == 0 {
            return Err(Error::InvalidParameter(
                "oversampling must be at least 1".into(),
            ));
        }
        if self.k + self.oversampling > dim {
            return Err(Error::InvalidParameter(format!(
                "k + oversampling = {} exceeds operator dimension {dim}",
                self.k + self.oversampling
            )));
        }
        Ok(())
    }
}

const RETRY_TAG: u64 = 0xD1CE;

fn orthonormal_basis(y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let q = y.clone().qr().q();
    let gram = q.transpose() * &q;
    let defect = (gram - DMatrix::identity(q.ncols(), q.ncols())).amax();
    (defect <= 1e-8).then_some(q)
}

/// Orthonormal basis for `range(A^{q+1} Omega)`, re-orthonormalized after
/// every apply.
fn sketch_range<O: SymmetricOperator + ?Sized>(
    op: &O,
    width: usize,
    depth: usize,
    rng: RngSpec,
) -> Option<DMatrix<f64>> {
    let mut gen = rng.rng();
    let omega = DMatrix::from_fn(op.dim(), width, |_, _| StandardNormal.sample(&mut gen));
    let mut q = orthonormal_basis(&op.apply_block(&omega))?;
    for _ in 0..depth {
        q = orthonormal_basis(&op.apply_block(&q))?;
    }
    Some(q)
}

/// Estimates of the `k` eigenvalues of largest magnitude, with signs, sorted
/// by decreasing `|lambda|`.
///
/// Uses `(k + p) * (q + 3)` vector applies: `q + 1` for the powered sketch,
/// one for `B = Q'A` and one for the sign test `s'As`. Magnitudes are the
/// singular values of `B`.
pub fn randomized_topk_abs_eigs<O: SymmetricOperator + ?Sized>(
    op: &O,
    cfg: &RandEigConfig,
) -> Result<Vec<f64>> {
    let n = op.dim();
    cfg.validate(n)?;
    let width = cfg.k + cfg.oversampling;
    let depth = cfg.power_depth_for(n);

    let q = match sketch_range(op, width, depth, cfg.rng) {
        Some(q) => q,
        None => sketch_range(op, width, depth, cfg.rng.derive(RETRY_TAG))
            .ok_or(Error::DegenerateSketch)?,
    };

    // B' = A Q by symmetry of A.
    let bt = op.apply_block(&q);
    let bbt = bt.transpose() * &bt;
    let small = SymmetricEigen::new(bbt);
    let s = &bt * &small.eigenvectors;
    let as_ = op.apply_block(&s);

    // Directions whose squared singular value is at rounding level carry no
    // signal; their Ritz vectors are noise and would give arbitrary ratios.
    let sigma2_max = small.eigenvalues.max().max(0.0);
    let null_cut = sigma2_max * f64::EPSILON * (n * width) as f64;
    let mut estimates: Vec<f64> = (0..width)
        .map(|j| {
            let sigma2 = small.eigenvalues[j];
            if sigma2 <= null_cut {
                return 0.0;
            }
            let magnitude = sigma2.sqrt();
            if s.column(j).dot(&as_.column(j)) < 0.0 {
                -magnitude
            } else {
                magnitude
            }
        })
        .collect();
    estimates.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    estimates.truncate(cfg.k);
    Ok(estimates)
}

/// How eigenvalues of largest magnitude are computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigBackend {
    Dense,
    Randomized {
        oversampling: usize,
        power_depth: Option<usize>,
    },
    /// Dense up to `dense_max_dim`, randomized above.
    Auto {
        dense_max_dim: usize,
        oversampling: usize,
        power_depth: Option<usize>,
    },
}

impl Default for EigBackend {
    fn default() -> Self {
        EigBackend::Auto {
            dense_max_dim: 512,
            oversampling: 10,
            power_depth: None,
        }
    }
}

impl EigBackend {
    pub fn randomized() -> Self {
        EigBackend::Randomized {
            oversampling: 10,
            power_depth: None,
        }
    }

    /// Randomized settings to use for an operator of this size, or `None`
    /// for the dense route.
    fn randomized_params(&self, dim: usize) -> Option<(usize, Option<usize>)> {
        match *self {
            EigBackend::Dense => None,
            EigBackend::Randomized {
                oversampling,
                power_depth,
            } => Some((oversampling, power_depth)),
            EigBackend::Auto {
                dense_max_dim,
                oversampling,
                power_depth,
            } => (dim > dense_max_dim).then_some((oversampling, power_depth)),
        }
    }
}

/// The `k` eigenvalues of largest magnitude through the selected backend.
///
/// The randomized route shrinks the oversampling when `k + p` would exceed
/// the dimension, and falls back to the dense route when `k` equals it.
pub fn top_k_abs_eigenvalues<O: SymmetricOperator + ?Sized>(
    op: &O,
    k: usize,
    backend: EigBackend,
    rng: RngSpec,
) -> Result<Vec<f64>> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "cannot take {k} eigenvalues of a {n}-dimensional operator"
        )));
    }
    match backend.randomized_params(n) {
        Some((oversampling, power_depth)) if k < n => {
            let cfg = RandEigConfig {
                k,
                oversampling: oversampling.min(n - k),
                power_depth,
                rng,
            };
            randomized_topk_abs_eigs(op, &cfg)
        }
        _ => {
            let mut values = dense_eigenvalues(op)?;
            values.truncate(k);
            Ok(values)
        }
    }
}
