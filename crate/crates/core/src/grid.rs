//! Periodic unit-torus grids, sampled fields and finite-difference stencils.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, MAX_DIM};
use crate::scalar::{pairwise_sum, Real};

/// Smallest eigenvalue a metric may have at any node.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// Uniform periodic grid on the unit torus `[0, 1)^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::BadGrid(format!("dimension {dim} outside 2..=4")));
        }
        if n < 8 {
            return Err(Error::BadGrid(format!("resolution {n} below 8")));
        }
        Ok(Self { dim, n })
    }

    pub fn nodes(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn spacing<S: Real>(&self) -> S {
        S::one() / S::from_usize_lossy(self.n)
    }

    /// Cell volume `dx^n`.
    pub fn cell_volume<S: Real>(&self) -> S {
        self.spacing::<S>().powi(self.dim as i32)
    }

    /// Stride of `axis` in the lexicographic node order (axis 0 slowest).
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    #[inline]
    pub fn index_along(&self, node: usize, axis: usize) -> usize {
        (node / self.stride(axis)) % self.n
    }

    /// Periodic neighbour of `node` shifted by `offset` cells along `axis`.
    #[inline]
    pub fn shift(&self, node: usize, axis: usize, offset: isize) -> usize {
        let stride = self.stride(axis);
        let i = (node / stride) % self.n;
        let j = (i as isize + offset).rem_euclid(self.n as isize) as usize;
        node + j * stride - i * stride
    }

    pub fn coords<S: Real>(&self, node: usize) -> [S; MAX_DIM] {
        let dx = self.spacing::<S>();
        let mut x = [S::zero(); MAX_DIM];
        for (axis, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = S::from_usize_lossy(self.index_along(node, axis)) * dx;
        }
        x
    }

    fn check(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Number of independent components of a symmetric n×n tensor.
pub fn sym_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Position of `(i, j)` in the packed upper-triangular storage.
#[inline]
pub fn sym_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * i.saturating_sub(1) / 2 + (j - i)
}

pub fn check_same_grid(a: &GridSpec, b: &GridSpec) -> Result<()> {
    a.check(b)
}

// ---------------------------------------------------------------------------
// Stencils

/// Applies `op(f[i-1], f[i], f[i+1])` along `axis` with periodic wrap.
fn sweep<S: Real>(grid: &GridSpec, f: &[S], axis: usize, op: impl Fn(S, S, S) -> S) -> Vec<S> {
    let n = grid.n;
    let stride = grid.stride(axis);
    let block = n * stride;
    let mut out = vec![S::zero(); f.len()];
    for base in (0..f.len()).step_by(block) {
        for i in 0..n {
            let c = base + i * stride;
            let p = base + if i + 1 == n { 0 } else { i + 1 } * stride;
            let m = base + if i == 0 { n - 1 } else { i - 1 } * stride;
            for k in 0..stride {
                out[c + k] = op(f[m + k], f[c + k], f[p + k]);
            }
        }
    }
    out
}

/// Centered first difference `(f[i+1] - f[i-1]) / 2dx`.
pub fn d_central<S: Real>(grid: &GridSpec, f: &[S], axis: usize) -> Vec<S> {
    let inv = S::lit(0.5) / grid.spacing::<S>();
    sweep(grid, f, axis, |m, _, p| (p - m) * inv)
}

/// Forward difference `(f[i+1] - f[i]) / dx`.
pub fn d_forward<S: Real>(grid: &GridSpec, f: &[S], axis: usize) -> Vec<S> {
    let inv = S::one() / grid.spacing::<S>();
    sweep(grid, f, axis, |_, c, p| (p - c) * inv)
}

/// Backward difference `(f[i] - f[i-1]) / dx`.
pub fn d_backward<S: Real>(grid: &GridSpec, f: &[S], axis: usize) -> Vec<S> {
    let inv = S::one() / grid.spacing::<S>();
    sweep(grid, f, axis, |m, c, _| (c - m) * inv)
}

/// Second derivative as a backward difference of forward differences
/// (the compact three-point stencil).
pub fn d2_compact<S: Real>(grid: &GridSpec, f: &[S], axis: usize) -> Vec<S> {
    let dx = grid.spacing::<S>();
    let inv = S::one() / (dx * dx);
    let two = S::lit(2.0);
    sweep(grid, f, axis, |m, c, p| (p - two * c + m) * inv)
}

/// Second derivative along `a` then `b`: compact stencil on the diagonal,
/// product of centered differences off it.
pub fn d2<S: Real>(grid: &GridSpec, f: &[S], a: usize, b: usize) -> Vec<S> {
    if a == b {
        d2_compact(grid, f, a)
    } else {
        let db = d_central(grid, f, b);
        d_central(grid, &db, a)
    }
}

// ---------------------------------------------------------------------------
// Fields

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<S> {
    pub grid: GridSpec,
    pub values: Vec<S>,
}

impl<S: Real> ScalarField<S> {
    pub fn new(grid: GridSpec, values: Vec<S>) -> Result<Self> {
        if values.len() != grid.nodes() {
            return Err(Error::GridMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar field"));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, c: S) -> Self {
        Self { grid, values: vec![c; grid.nodes()] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[S]) -> S) -> Self {
        let values = (0..grid.nodes())
            .map(|node| {
                let x = grid.coords::<S>(node);
                f(&x[..grid.dim])
            })
            .collect();
        Self { grid, values }
    }

    pub fn min(&self) -> S {
        self.values.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn max(&self) -> S {
        self.values.iter().copied().fold(S::neg_infinity(), S::max)
    }

    pub fn max_abs(&self) -> S {
        self.values.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    /// Plain coordinate sum `Σ f dx^n` (flat measure).
    pub fn flat_integral(&self) -> S {
        pairwise_sum(&self.values) * self.grid.cell_volume::<S>()
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        check_same_grid(&self.grid, &other.grid)?;
        Ok(Self { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn scaled(&self, c: S) -> Self {
        self.map(|v| v * c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<S> {
    pub grid: GridSpec,
    /// `comps[k][node]`
    pub comps: Vec<Vec<S>>,
}

impl<S: Real> VectorField<S> {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, comps: vec![vec![S::zero(); grid.nodes()]; grid.dim] }
    }

    pub fn max_abs(&self) -> S {
        self.comps.iter().flatten().fold(S::zero(), |m, v| m.max(v.abs()))
    }
}

/// Symmetric covariant 2-tensor field in packed storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField<S> {
    pub grid: GridSpec,
    /// `comps[sym_index(i, j)][node]`
    pub comps: Vec<Vec<S>>,
}

impl<S: Real> SymTensorField<S> {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, comps: vec![vec![S::zero(); grid.nodes()]; sym_len(grid.dim)] }
    }

    /// `c` times the identity at every node.
    pub fn scalar_identity(grid: GridSpec, c: S) -> Self {
        let mut t = Self::zeros(grid);
        for i in 0..grid.dim {
            t.comps[sym_index(grid.dim, i, i)].iter_mut().for_each(|v| *v = c);
        }
        t
    }

    /// Builds the field nodewise from a closure returning the full matrix.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[S]) -> Mat<S>) -> Self {
        let mut t = Self::zeros(grid);
        let n = grid.dim;
        for node in 0..grid.nodes() {
            let x = grid.coords::<S>(node);
            let m = f(&x[..n]);
            for i in 0..n {
                for j in i..n {
                    t.comps[sym_index(n, i, j)][node] = m[i][j];
                }
            }
        }
        t
    }

    #[inline]
    pub fn get(&self, node: usize, i: usize, j: usize) -> S {
        self.comps[sym_index(self.grid.dim, i, j)][node]
    }

    #[inline]
    pub fn matrix(&self, node: usize) -> Mat<S> {
        let n = self.grid.dim;
        let mut m = linalg::zeros();
        for i in 0..n {
            for j in i..n {
                let v = self.comps[sym_index(n, i, j)][node];
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        m
    }

    pub fn set_matrix(&mut self, node: usize, m: &Mat<S>) {
        let n = self.grid.dim;
        for i in 0..n {
            for j in i..n {
                self.comps[sym_index(n, i, j)][node] = m[i][j];
            }
        }
    }

    pub fn axpy(&self, c: S, other: &Self) -> Result<Self> {
        check_same_grid(&self.grid, &other.grid)?;
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x + c * y).collect())
            .collect();
        Ok(Self { grid: self.grid, comps })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-S::one(), other)
    }

    pub fn scaled(&self, c: S) -> Self {
        Self { grid: self.grid, comps: self.comps.iter().map(|v| v.iter().map(|&x| x * c).collect()).collect() }
    }

    /// Componentwise sup-norm.
    pub fn max_abs(&self) -> S {
        self.comps.iter().flatten().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }

    /// Relabels coordinate axes: output axis `k` is input axis `perm[k]`,
    /// and node positions move accordingly.
    pub fn permute_axes(&self, perm: &[usize]) -> Self {
        let grid = self.grid;
        let n = grid.dim;
        let mut out = Self::zeros(grid);
        for node in 0..grid.nodes() {
            let target = permuted_node(&grid, node, perm);
            for i in 0..n {
                for j in i..n {
                    out.comps[sym_index(n, i, j)][target] = self.get(node, perm[i], perm[j]);
                }
            }
        }
        out
    }
}

/// Node whose index along output axis `k` equals the input index along `perm[k]`.
pub fn permuted_node(grid: &GridSpec, node: usize, perm: &[usize]) -> usize {
    let mut target = 0;
    for (k, &src) in perm.iter().enumerate().take(grid.dim) {
        target += grid.index_along(node, src) * grid.stride(k);
    }
    target
}

pub fn permute_scalar<S: Real>(f: &ScalarField<S>, perm: &[usize]) -> ScalarField<S> {
    let mut values = vec![S::zero(); f.values.len()];
    for node in 0..f.values.len() {
        values[permuted_node(&f.grid, node, perm)] = f.values[node];
    }
    ScalarField { grid: f.grid, values }
}

/// Symmetric positive-definite metric field.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField<S>(SymTensorField<S>);

impl<S: Real> MetricField<S> {
    /// Validates positivity against [`LAMBDA_FLOOR`].
    pub fn new(t: SymTensorField<S>) -> Result<Self> {
        Self::with_floor(t, S::lit(LAMBDA_FLOOR))
    }

    pub fn with_floor(t: SymTensorField<S>, floor: S) -> Result<Self> {
        if !t.is_finite() {
            return Err(Error::NonFinite("metric field"));
        }
        let n = t.grid.dim;
        for node in 0..t.grid.nodes() {
            let ev = linalg::sym_eigenvalues(&t.matrix(node), n);
            if !(ev[0] >= floor) {
                return Err(Error::SingularMetric { node, min_eigenvalue: ev[0].to_f64_lossy() });
            }
        }
        Ok(Self(t))
    }

    pub fn flat(grid: GridSpec) -> Self {
        Self(SymTensorField::scalar_identity(grid, S::one()))
    }

    pub fn constant(grid: GridSpec, m: &Mat<S>) -> Result<Self> {
        Self::new(SymTensorField::from_fn(grid, |_| *m))
    }

    pub fn grid(&self) -> GridSpec {
        self.0.grid
    }

    pub fn tensor(&self) -> &SymTensorField<S> {
        &self.0
    }

    pub fn into_tensor(self) -> SymTensorField<S> {
        self.0
    }

    /// `c·g` for `c > 0` keeps positivity without re-validation.
    pub fn scaled(&self, c: S) -> Result<Self> {
        if !(c > S::zero()) {
            return Err(Error::BadParameter("metric scale must be positive".into()));
        }
        Self::new(self.0.scaled(c))
    }

    /// Smallest eigenvalue over all nodes.
    pub fn min_eigenvalue(&self) -> S {
        let n = self.grid().dim;
        (0..self.grid().nodes())
            .map(|node| linalg::sym_eigenvalues(&self.0.matrix(node), n)[0])
            .fold(S::infinity(), S::min)
    }

    pub fn max_eigenvalue(&self) -> S {
        let n = self.grid().dim;
        (0..self.grid().nodes())
            .map(|node| linalg::sym_eigenvalues(&self.0.matrix(node), n)[n - 1])
            .fold(S::neg_infinity(), S::max)
    }
}

impl<S> std::ops::Deref for MetricField<S> {
    type Target = SymTensorField<S>;
    fn deref(&self) -> &SymTensorField<S> {
        &self.0
    }
}

/// General covariant tensor field of any rank with full (unpacked) storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CovTensorField<S> {
    pub grid: GridSpec,
    pub rank: usize,
    /// `comps[multi_index][node]` with the first index slowest.
    pub comps: Vec<Vec<S>>,
}

impl<S: Real> CovTensorField<S> {
    pub fn zeros(grid: GridSpec, rank: usize) -> Self {
        Self { grid, rank, comps: vec![vec![S::zero(); grid.nodes()]; grid.dim.pow(rank as u32)] }
    }

    pub fn from_scalar(f: &ScalarField<S>) -> Self {
        Self { grid: f.grid, rank: 0, comps: vec![f.values.clone()] }
    }

    pub fn from_sym(t: &SymTensorField<S>) -> Self {
        let n = t.grid.dim;
        let mut out = Self::zeros(t.grid, 2);
        for i in 0..n {
            for j in 0..n {
                out.comps[i * n + j] = t.comps[sym_index(n, i, j)].clone();
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().flatten().all(|v| *v == S::zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_index_is_a_bijection() {
        for dim in 2..=4 {
            let mut seen = vec![false; sym_len(dim)];
            for i in 0..dim {
                for j in i..dim {
                    let k = sym_index(dim, i, j);
                    assert!(!seen[k]);
                    seen[k] = true;
                    assert_eq!(k, sym_index(dim, j, i));
                }
            }
            assert!(seen.iter().all(|s| *s));
        }
    }

    #[test]
    fn spacing_times_resolution_is_one() {
        for n in [8usize, 16, 32, 64, 128, 256] {
            let g = GridSpec::new(2, n).unwrap();
            assert_eq!(g.spacing::<f64>() * n as f64, 1.0);
            assert_eq!(g.spacing::<f32>() * n as f32, 1.0);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(1, 16).is_err());
        assert!(GridSpec::new(5, 16).is_err());
        assert!(GridSpec::new(2, 4).is_err());
    }

    #[test]
    fn shift_wraps_periodically() {
        let g = GridSpec::new(3, 8).unwrap();
        let node = 7 * 64 + 0 * 8 + 3;
        assert_eq!(g.index_along(g.shift(node, 0, 1), 0), 0);
        assert_eq!(g.index_along(g.shift(node, 1, -1), 1), 7);
        assert_eq!(g.index_along(g.shift(node, 2, 2), 2), 5);
    }

    #[test]
    fn centered_difference_of_sine_is_second_order() {
        let mut errs = vec![];
        for n in [32usize, 64] {
            let g = GridSpec::new(2, n).unwrap();
            let tau = std::f64::consts::TAU;
            let f = ScalarField::from_fn(g, |x: &[f64]| (tau * x[0]).sin());
            let d = d_central(&g, &f.values, 0);
            let err = (0..g.nodes())
                .map(|k| (d[k] - tau * (tau * g.coords::<f64>(k)[0]).cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 2.0).abs() < 0.1, "order {order}");
    }

    #[test]
    fn metric_rejects_indefinite_data() {
        let g = GridSpec::new(2, 8).unwrap();
        let mut m = linalg::identity::<f64>(2);
        m[0][1] = 2.0;
        m[1][0] = 2.0;
        assert!(matches!(MetricField::constant(g, &m), Err(Error::SingularMetric { .. })));
    }

    #[test]
    fn permutation_round_trip() {
        let g = GridSpec::new(3, 8).unwrap();
        let t = SymTensorField::from_fn(g, |x: &[f64]| {
            let mut m = linalg::identity(3);
            m[0][1] = x[0] * 0.1 + x[2] * 0.01;
            m[1][0] = m[0][1];
            m[2][2] = 1.0 + x[1];
            m
        });
        let perm = [2, 0, 1];
        let inv = [1, 2, 0];
        assert_eq!(t.permute_axes(&perm).permute_axes(&inv), t);
    }
}
