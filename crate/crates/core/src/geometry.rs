//! Tensor calculus on periodic grids: inverse metrics, connections,
//! curvature, quadrature, Sobolev norms, fairness and the pointwise
//! curvature inequalities.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{check_same_grid, d_backward, d_central, d_forward, sym_index, sym_len, CovTensorField, GridSpec, MetricField, ScalarField, SymTensorField};
use crate::jet::{norm_sq_2, zeros3, zeros4, FieldJet, LocalGeometry, Tensor3, Tensor4};
use crate::linalg::{self, Mat};
use crate::scalar::{pairwise_sum, Real};

/// Difference tensor field `Γ^k_ij`, stored symmetric in the lower indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelField<S> {
    pub grid: GridSpec,
    /// `comps[k * sym_len + sym_index(i, j)][node]`
    pub comps: Vec<Vec<S>>,
}

impl<S: Real> ChristoffelField<S> {
    pub fn get(&self, node: usize, k: usize, i: usize, j: usize) -> S {
        let n = self.grid.dim;
        self.comps[k * sym_len(n) + sym_index(n, i, j)][node]
    }

    pub fn max_abs(&self) -> S {
        self.comps.iter().flatten().fold(S::zero(), |m, v| m.max(v.abs()))
    }
}

/// Ricci tensor, scalar curvature and the derived norms of a metric.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureBundle<S> {
    pub ricci: SymTensorField<S>,
    pub scalar: ScalarField<S>,
    /// `|Ric|²_g`
    pub ricci_norm_sq: ScalarField<S>,
    /// `|Ric − (R/n)g|²_g`
    pub traceless_norm_sq: ScalarField<S>,
    /// Coordinate Frobenius norm of the Riemann tensor.
    pub curv_proxy: ScalarField<S>,
}

/// Nodal geometry of a metric, computed once and shared by later operators.
#[derive(Debug, Clone)]
pub struct MetricGeometry<S> {
    pub grid: GridSpec,
    pub nodes: Vec<LocalGeometry<S>>,
}

impl<S: Real> MetricGeometry<S> {
    pub fn new(g: &MetricField<S>) -> Result<Self> {
        let jet = FieldJet::new(g.tensor());
        let nodes: Vec<Option<LocalGeometry<S>>> =
            (0..g.grid().nodes()).into_par_iter().map(|node| LocalGeometry::from_jet(&jet.local(g.tensor(), node))).collect();
        let mut out = Vec::with_capacity(nodes.len());
        for (node, geo) in nodes.into_iter().enumerate() {
            out.push(geo.ok_or(Error::SingularMetric { node, min_eigenvalue: 0.0 })?);
        }
        Ok(Self { grid: g.grid(), nodes: out })
    }

    pub fn scalar(&self) -> ScalarField<S> {
        ScalarField { grid: self.grid, values: self.nodes.iter().map(|l| l.scalar).collect() }
    }

    pub fn bundle(&self) -> CurvatureBundle<S> {
        let grid = self.grid;
        let n = grid.dim;
        let mut ricci = SymTensorField::zeros(grid);
        for (node, l) in self.nodes.iter().enumerate() {
            for i in 0..n {
                for j in i..n {
                    ricci.comps[sym_index(n, i, j)][node] = l.ricci[i][j];
                }
            }
        }
        let field = |f: &dyn Fn(&LocalGeometry<S>) -> S| ScalarField { grid, values: self.nodes.iter().map(f).collect() };
        CurvatureBundle {
            ricci,
            scalar: field(&|l| l.scalar),
            ricci_norm_sq: field(&|l| l.ricci_norm_sq()),
            traceless_norm_sq: field(&|l| l.traceless_ricci_norm_sq()),
            curv_proxy: field(&|l| l.riemann_frobenius()),
        }
    }
}

/// Precomputed connection data of a smooth background metric `h`.
#[derive(Debug, Clone)]
pub struct Background<S> {
    pub metric: MetricField<S>,
    pub flat: bool,
    /// `Γ̃^k_ij` per node (a single zero entry when flat)
    pub gamma: Vec<Tensor3<S>>,
    /// `∂_m Γ̃^k_ij` per node (a single zero entry when flat)
    pub dgamma: Vec<Tensor4<S>>,
    pub ricci: Vec<Mat<S>>,
    pub inverse: Vec<Mat<S>>,
    pub sqrt_det: Vec<S>,
    /// `L⁻¹` with `h = L Lᵀ`, per node (absent when `h` is the identity).
    pub frames: Vec<Mat<S>>,
}

impl<S: Real> Background<S> {
    pub fn new(h: &MetricField<S>) -> Result<Self> {
        let grid = h.grid();
        let n = grid.dim;
        let nodes = grid.nodes();
        let constant = h.comps.iter().all(|c| c.iter().all(|v| *v == c[0]));
        let sqrt_det: Vec<S> = (0..nodes).map(|k| linalg::det(&h.matrix(k), n).sqrt()).collect();
        let frames = if (0..nodes).all(|k| is_identity(&h.matrix(k), n)) {
            Vec::new()
        } else {
            (0..nodes)
                .map(|k| {
                    let l = linalg::cholesky(&h.matrix(k), n).ok_or(Error::SingularMetric { node: k, min_eigenvalue: 0.0 })?;
                    Ok(linalg::lower_inverse(&l, n))
                })
                .collect::<Result<Vec<_>>>()?
        };
        if constant {
            let inv = linalg::inverse(&h.matrix(0), n).ok_or(Error::SingularMetric { node: 0, min_eigenvalue: 0.0 })?;
            return Ok(Self {
                metric: h.clone(),
                flat: true,
                gamma: vec![zeros3()],
                dgamma: vec![zeros4()],
                ricci: vec![linalg::zeros(); nodes],
                inverse: vec![inv; nodes],
                sqrt_det,
                frames,
            });
        }
        let geo = MetricGeometry::new(h)?;
        Ok(Self {
            metric: h.clone(),
            flat: false,
            gamma: geo.nodes.iter().map(|l| l.gamma).collect(),
            dgamma: geo.nodes.iter().map(|l| l.dgamma).collect(),
            ricci: geo.nodes.iter().map(|l| l.ricci).collect(),
            inverse: geo.nodes.iter().map(|l| l.ginv).collect(),
            sqrt_det,
            frames,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.metric.grid()
    }

    #[inline]
    pub fn gamma_at(&self, node: usize) -> &Tensor3<S> {
        &self.gamma[if self.flat { 0 } else { node }]
    }

    #[inline]
    pub fn dgamma_at(&self, node: usize) -> &Tensor4<S> {
        &self.dgamma[if self.flat { 0 } else { node }]
    }
}

/// Nodewise inverse `g^{ij}`.
pub fn invert_metric<S: Real>(g: &MetricField<S>) -> Result<SymTensorField<S>> {
    let grid = g.grid();
    let mut out = SymTensorField::zeros(grid);
    for node in 0..grid.nodes() {
        let inv = linalg::inverse(&g.matrix(node), grid.dim).ok_or(Error::SingularMetric { node, min_eigenvalue: 0.0 })?;
        out.set_matrix(node, &inv);
    }
    Ok(out)
}

/// `∇̃_k g_ij` at one node from the jet of `g` and the background connection.
pub(crate) fn background_gradient<S: Real>(g: &Mat<S>, dg: &Tensor3<S>, gt: &Tensor3<S>, n: usize, flat: bool) -> Tensor3<S> {
    if flat {
        return *dg;
    }
    let mut out = zeros3();
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let mut s = dg[k][i][j];
                for m in 0..n {
                    s = s - gt[m][k][i] * g[m][j] - gt[m][k][j] * g[i][m];
                }
                out[k][i][j] = s;
                out[k][j][i] = s;
            }
        }
    }
    out
}

/// `Γ^k_ij = ½ g^{kl}(∇̃_i g_jl + ∇̃_j g_il − ∇̃_l g_ij)` from `∇̃g`.
pub(crate) fn difference_tensor<S: Real>(ginv: &Mat<S>, nabla: &Tensor3<S>, n: usize) -> Tensor3<S> {
    let half = S::lit(0.5);
    let mut out = zeros3();
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let mut s = S::zero();
                for l in 0..n {
                    s = s + ginv[k][l] * (nabla[i][j][l] + nabla[j][i][l] - nabla[l][i][j]);
                }
                out[k][i][j] = half * s;
                out[k][j][i] = half * s;
            }
        }
    }
    out
}

/// Nodal centered first derivatives of every packed component.
pub(crate) fn first_derivatives<S: Real>(t: &SymTensorField<S>) -> Vec<Vec<S>> {
    let grid = t.grid;
    let m = sym_len(grid.dim);
    (0..grid.dim * m).into_par_iter().map(|task| d_central(&grid, &t.comps[task % m], task / m)).collect()
}

pub(crate) fn local_gradient<S: Real>(d1: &[Vec<S>], n: usize, node: usize) -> Tensor3<S> {
    let m = sym_len(n);
    let mut dg = zeros3();
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let v = d1[k * m + sym_index(n, i, j)][node];
                dg[k][i][j] = v;
                dg[k][j][i] = v;
            }
        }
    }
    dg
}

/// Difference tensor between the connections of `g` and the background `h`.
pub fn christoffel<S: Real>(g: &MetricField<S>, h: &Background<S>) -> Result<ChristoffelField<S>> {
    check_same_grid(&g.grid(), &h.grid())?;
    let grid = g.grid();
    let n = grid.dim;
    let m = sym_len(n);
    let d1 = first_derivatives(g.tensor());
    let mut comps = vec![vec![S::zero(); grid.nodes()]; n * m];
    for node in 0..grid.nodes() {
        let gm = g.matrix(node);
        let ginv = linalg::inverse(&gm, n).ok_or(Error::SingularMetric { node, min_eigenvalue: 0.0 })?;
        let nabla = background_gradient(&gm, &local_gradient(&d1, n, node), h.gamma_at(node), n, h.flat);
        let gamma = difference_tensor(&ginv, &nabla, n);
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    comps[k * m + sym_index(n, i, j)][node] = gamma[k][i][j];
                }
            }
        }
    }
    Ok(ChristoffelField { grid, comps })
}

/// Ricci, scalar curvature and curvature norms of `g` in torus coordinates.
pub fn curvature<S: Real>(g: &MetricField<S>) -> Result<CurvatureBundle<S>> {
    let grid = g.grid();
    let n = grid.dim;
    let jet = FieldJet::new(g.tensor());
    let per_node: Vec<Option<(Mat<S>, [S; 4])>> = (0..grid.nodes())
        .into_par_iter()
        .map(|node| {
            let l = LocalGeometry::from_jet(&jet.local(g.tensor(), node))?;
            Some((l.ricci, [l.scalar, l.ricci_norm_sq(), l.traceless_ricci_norm_sq(), l.riemann_frobenius()]))
        })
        .collect();
    let mut ricci = SymTensorField::zeros(grid);
    let mut cols: [Vec<S>; 4] = Default::default();
    for (node, entry) in per_node.into_iter().enumerate() {
        let (ric, vals) = entry.ok_or(Error::SingularMetric { node, min_eigenvalue: 0.0 })?;
        for i in 0..n {
            for j in i..n {
                ricci.comps[sym_index(n, i, j)][node] = ric[i][j];
            }
        }
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    let [scalar, ricci_norm_sq, traceless_norm_sq, curv_proxy] = cols.map(|values| ScalarField { grid, values });
    Ok(CurvatureBundle { ricci, scalar, ricci_norm_sq, traceless_norm_sq, curv_proxy })
}

/// Density `dμ_g/dμ_h = sqrt(det g / det h)`.
pub fn volume_element<S: Real>(g: &MetricField<S>, h: &MetricField<S>) -> Result<ScalarField<S>> {
    check_same_grid(&g.grid(), &h.grid())?;
    let n = g.grid().dim;
    let values = (0..g.grid().nodes())
        .map(|node| (linalg::det(&g.matrix(node), n) / linalg::det(&h.matrix(node), n)).sqrt())
        .collect();
    ScalarField::new(g.grid(), values)
}

/// `sqrt(det g)` per node.
pub fn sqrt_det<S: Real>(g: &SymTensorField<S>) -> Vec<S> {
    let n = g.grid.dim;
    (0..g.grid.nodes()).map(|node| linalg::det(&g.matrix(node), n).sqrt()).collect()
}

/// `∫ f dμ_g` by the periodic trapezoid rule.
pub fn integrate<S: Real>(f: &ScalarField<S>, g: &MetricField<S>) -> Result<S> {
    check_same_grid(&f.grid, &g.grid())?;
    Ok(integrate_with_density(&f.values, &sqrt_det(g.tensor()), &f.grid))
}

pub(crate) fn integrate_with_density<S: Real>(f: &[S], density: &[S], grid: &GridSpec) -> S {
    let prod: Vec<S> = f.iter().zip(density).map(|(&a, &b)| a * b).collect();
    pairwise_sum(&prod) * grid.cell_volume::<S>()
}

/// Riemannian volume of the torus under `g`.
pub fn volume<S: Real>(g: &MetricField<S>) -> S {
    let d = sqrt_det(g.tensor());
    pairwise_sum(&d) * g.grid().cell_volume::<S>()
}

/// Integrability exponent of a Sobolev norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

/// Options for [`sobolev_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevSpec {
    pub k: usize,
    pub p: Exponent,
    /// Permit `p ≤ n` (needed for the dual norms of test functions).
    pub allow_subcritical: bool,
}

impl SobolevSpec {
    pub fn new(k: usize, p: f64) -> Self {
        Self { k, p: if p.is_infinite() { Exponent::Infinity } else { Exponent::Finite(p) }, allow_subcritical: false }
    }

    pub fn dual(k: usize, q: f64) -> Self {
        Self { allow_subcritical: true, ..Self::new(k, q) }
    }
}

/// `∇̃T` with the new index placed first.
pub fn covariant_gradient<S: Real>(t: &CovTensorField<S>, h: &Background<S>) -> Result<CovTensorField<S>> {
    check_same_grid(&t.grid, &h.grid())?;
    let grid = t.grid;
    let n = grid.dim;
    let r = t.rank;
    let block = n.pow(r as u32);
    let mut out = CovTensorField::zeros(grid, r + 1);
    let partials: Vec<Vec<S>> = (0..n * block).into_par_iter().map(|task| d_central(&grid, &t.comps[task % block], task / block)).collect();
    for k in 0..n {
        for idx in 0..block {
            out.comps[k * block + idx] = partials[k * block + idx].clone();
        }
    }
    if !h.flat && r > 0 {
        for node in 0..grid.nodes() {
            let gt = &h.gamma[node];
            for k in 0..n {
                for idx in 0..block {
                    let mut corr = S::zero();
                    for s in 0..r {
                        let stride = n.pow((r - 1 - s) as u32);
                        let is = (idx / stride) % n;
                        let base = idx - is * stride;
                        for m in 0..n {
                            corr = corr + gt[m][k][is] * t.comps[base + m * stride][node];
                        }
                    }
                    out.comps[k * block + idx][node] = out.comps[k * block + idx][node] - corr;
                }
            }
        }
    }
    Ok(out)
}

/// Pointwise `|T|_h` of a covariant tensor field.
pub fn pointwise_norm<S: Real>(t: &CovTensorField<S>, h: &Background<S>) -> Vec<S> {
    let grid = t.grid;
    let n = grid.dim;
    let r = t.rank;
    let block = n.pow(r as u32);
    (0..grid.nodes())
        .into_par_iter()
        .map(|node| {
            if h.frames.is_empty() {
                return (0..block).fold(S::zero(), |acc, idx| acc + t.comps[idx][node] * t.comps[idx][node]).sqrt();
            }
            let li = &h.frames[node];
            let mut vals: Vec<S> = (0..block).map(|idx| t.comps[idx][node]).collect();
            let mut next = vec![S::zero(); block];
            for s in 0..r {
                let stride = n.pow((r - 1 - s) as u32);
                for (idx, slot) in next.iter_mut().enumerate() {
                    let alpha = (idx / stride) % n;
                    let base = idx - alpha * stride;
                    let mut acc = S::zero();
                    for a in 0..n {
                        acc = acc + li[alpha][a] * vals[base + a * stride];
                    }
                    *slot = acc;
                }
                std::mem::swap(&mut vals, &mut next);
            }
            vals.iter().fold(S::zero(), |acc, v| acc + *v * *v).sqrt()
        })
        .collect()
}

fn is_identity<S: Real>(m: &Mat<S>, n: usize) -> bool {
    (0..n).all(|i| (0..n).all(|j| m[i][j] == if i == j { S::one() } else { S::zero() }))
}

fn lp_norm<S: Real>(values: &[S], density: &[S], grid: &GridSpec, p: Exponent) -> S {
    match p {
        Exponent::Infinity => values.iter().fold(S::zero(), |m, v| m.max(v.abs())),
        Exponent::Finite(p) => {
            let ps = S::lit(p);
            let powered: Vec<S> = values.iter().map(|v| v.abs().powf(ps)).collect();
            integrate_with_density(&powered, density, grid).powf(S::one() / ps)
        }
    }
}

/// `Σ_{s ≤ k} (∫ |∇̃^s T|_h^p dμ_h)^{1/p}`; `p = ∞` takes nodewise maxima.
pub fn sobolev_norm<S: Real>(t: &CovTensorField<S>, h: &Background<S>, spec: SobolevSpec) -> Result<S> {
    check_same_grid(&t.grid, &h.grid())?;
    let n = t.grid.dim;
    if let Exponent::Finite(p) = spec.p {
        if !(p >= 1.0) || (!spec.allow_subcritical && p <= n as f64) {
            return Err(Error::BadExponent { p, n });
        }
    }
    let mut total = lp_norm(&pointwise_norm(t, h), &h.sqrt_det, &t.grid, spec.p);
    let mut current = t.clone();
    for _ in 0..spec.k {
        current = covariant_gradient(&current, h)?;
        total = total + lp_norm(&pointwise_norm(&current, h), &h.sqrt_det, &t.grid, spec.p);
    }
    Ok(total)
}

/// Smallest `1 + δ` with `(1+δ)⁻¹h ≤ g ≤ (1+δ)h` at every node.
pub fn fairness<S: Real>(g: &MetricField<S>, h: &MetricField<S>) -> Result<S> {
    check_same_grid(&g.grid(), &h.grid())?;
    let n = g.grid().dim;
    let mut worst = S::one();
    for node in 0..g.grid().nodes() {
        let ev = linalg::relative_eigenvalues(&g.matrix(node), &h.matrix(node), n)
            .ok_or(Error::SingularMetric { node, min_eigenvalue: 0.0 })?;
        if !(ev[0] > S::zero()) {
            return Err(Error::SingularMetric { node, min_eigenvalue: ev[0].to_f64_lossy() });
        }
        worst = worst.max(ev[n - 1]).max(S::one() / ev[0]);
    }
    Ok(worst)
}

/// Sup over nodes of `|Ric − (R/n)g|_g`.
pub fn einstein_defect<S: Real>(g: &MetricField<S>) -> Result<S> {
    let geo = MetricGeometry::new(g)?;
    Ok(geo.nodes.iter().fold(S::zero(), |m, l| m.max(l.traceless_ricci_norm_sq().max(S::zero()).sqrt())))
}

/// `2|Ric|²_g − (2/n)R²` per node, evaluated as `2|Ric − (R/n)g|²_g`.
pub fn cauchy_defect<S: Real>(g: &MetricField<S>) -> Result<ScalarField<S>> {
    Ok(cauchy_defect_from(&curvature(g)?))
}

/// `2|Ric|² − (2/n)R²` from a discrete Ricci/scalar pair.
pub fn cauchy_defect_from<S: Real>(bundle: &CurvatureBundle<S>) -> ScalarField<S> {
    let two = S::lit(2.0);
    let c = two / S::from_usize_lossy(bundle.ricci.grid.dim);
    ScalarField {
        grid: bundle.scalar.grid,
        values: bundle.ricci_norm_sq.values.iter().zip(&bundle.scalar.values).map(|(&q, &r)| two * q - c * r * r).collect(),
    }
}

/// Cauchy defect of a single Ricci sample against its metric.
pub fn cauchy_defect_nodal<S: Real>(ricci: &Mat<S>, g: &Mat<S>, n: usize) -> Option<S> {
    let ginv = linalg::inverse(g, n)?;
    let mut r = S::zero();
    for i in 0..n {
        for j in 0..n {
            r = r + ginv[i][j] * ricci[i][j];
        }
    }
    Some(S::lit(2.0) * norm_sq_2(ricci, &ginv, n) - S::lit(2.0) / S::from_usize_lossy(n) * r * r)
}

/// Divergence-form Laplace–Beltrami operator of a fixed metric.
///
/// `√g Δf = Σ_i D⁻_i(A^{ii}_{i+½} D⁺_i f) + Σ_{i≠j} D⁰_i(A^{ij} D⁰_j f)` with
/// `A = √g g⁻¹`. The operator is symmetric in the `√g`-weighted inner
/// product and annihilates constants, exactly on the periodic grid.
#[derive(Debug, Clone)]
pub struct LaplaceBeltrami<S> {
    pub grid: GridSpec,
    pub sqrt_det: Vec<S>,
    /// `A^{ij}` packed, with the diagonal already averaged to `i+½` faces.
    coeff: Vec<Vec<S>>,
}

impl<S: Real> LaplaceBeltrami<S> {
    pub fn new(g: &SymTensorField<S>) -> Result<Self> {
        let grid = g.grid;
        let n = grid.dim;
        let sd = sqrt_det(g);
        let mut coeff = vec![vec![S::zero(); grid.nodes()]; sym_len(n)];
        for node in 0..grid.nodes() {
            let inv = linalg::inverse(&g.matrix(node), n).ok_or(Error::SingularMetric { node, min_eigenvalue: 0.0 })?;
            for i in 0..n {
                for j in i..n {
                    coeff[sym_index(n, i, j)][node] = sd[node] * inv[i][j];
                }
            }
        }
        let half = S::lit(0.5);
        for i in 0..n {
            let c = sym_index(n, i, i);
            let centre = coeff[c].clone();
            for node in 0..grid.nodes() {
                coeff[c][node] = half * (centre[node] + centre[grid.shift(node, i, 1)]);
            }
        }
        Ok(Self { grid, sqrt_det: sd, coeff })
    }

    /// `√g Δf` (the weighted form, convenient for summation by parts).
    pub fn weighted_apply(&self, f: &[S]) -> Vec<S> {
        let grid = self.grid;
        let n = grid.dim;
        let mut out = vec![S::zero(); f.len()];
        for i in 0..n {
            let c = &self.coeff[sym_index(n, i, i)];
            let flux: Vec<S> = d_forward(&grid, f, i).iter().zip(c).map(|(&d, &a)| d * a).collect();
            for (o, v) in out.iter_mut().zip(d_backward(&grid, &flux, i)) {
                *o = *o + v;
            }
        }
        if n > 1 {
            let grads: Vec<Vec<S>> = (0..n).map(|j| d_central(&grid, f, j)).collect();
            for i in 0..n {
                let mut flux = vec![S::zero(); f.len()];
                for (j, grad) in grads.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let c = &self.coeff[sym_index(n, i, j)];
                    for node in 0..f.len() {
                        flux[node] = flux[node] + c[node] * grad[node];
                    }
                }
                for (o, v) in out.iter_mut().zip(d_central(&grid, &flux, i)) {
                    *o = *o + v;
                }
            }
        }
        out
    }

    pub fn apply(&self, f: &[S]) -> Vec<S> {
        self.weighted_apply(f).iter().zip(&self.sqrt_det).map(|(&v, &d)| v / d).collect()
    }

    /// Discrete Dirichlet energy `−∫ f Δf dμ = ∫ |∇f|² dμ`.
    pub fn dirichlet_energy(&self, f: &[S]) -> S {
        let w = self.weighted_apply(f);
        let prod: Vec<S> = f.iter().zip(&w).map(|(&a, &b)| -(a * b)).collect();
        pairwise_sum(&prod) * self.grid.cell_volume::<S>()
    }
}

/// `Δ_g f` for a metric field.
pub fn laplace_beltrami<S: Real>(g: &MetricField<S>, f: &ScalarField<S>) -> Result<ScalarField<S>> {
    check_same_grid(&g.grid(), &f.grid)?;
    let op = LaplaceBeltrami::new(g.tensor())?;
    Ok(ScalarField { grid: f.grid, values: op.apply(&f.values) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn grid(n: usize, dim: usize) -> GridSpec {
        GridSpec::new(dim, n).unwrap()
    }

    fn conformal(grid: GridSpec, amp: f64) -> MetricField<f64> {
        let t = SymTensorField::from_fn(grid, |x: &[f64]| {
            let e = (2.0 * amp * (TAU * x[0]).sin()).exp();
            let mut m = linalg::identity(grid.dim);
            for i in 0..grid.dim {
                m[i][i] = e;
            }
            m
        });
        MetricField::new(t).unwrap()
    }

    #[test]
    fn inverse_of_flat_and_scaled_metrics() {
        let g = grid(16, 2);
        let inv = invert_metric(&MetricField::<f64>::flat(g)).unwrap();
        assert_eq!(inv, SymTensorField::scalar_identity(g, 1.0));
        let four = MetricField::new(SymTensorField::scalar_identity(g, 4.0)).unwrap();
        assert_eq!(invert_metric(&four).unwrap(), SymTensorField::scalar_identity(g, 0.25));
    }

    #[test]
    fn inverse_of_oscillating_metric_multiplies_to_identity() {
        let g = grid(32, 2);
        let t = SymTensorField::from_fn(g, |x: &[f64]| {
            let mut m = linalg::zeros();
            m[0][0] = 2.0;
            m[1][1] = 1.0;
            m[0][1] = 0.1 * (TAU * x[0]).sin();
            m[1][0] = m[0][1];
            m
        });
        let metric = MetricField::new(t).unwrap();
        let inv = invert_metric(&metric).unwrap();
        for node in 0..g.nodes() {
            let p = linalg::matmul(&metric.matrix(node), &inv.matrix(node), 2);
            for i in 0..2 {
                for j in 0..2 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((p[i][j] - e).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn christoffel_vanishes_against_own_background() {
        let g = grid(32, 2);
        let m = conformal(g, 0.1);
        let bg = Background::new(&m).unwrap();
        assert!(christoffel(&m, &bg).unwrap().max_abs() < 1e-12);
        let flat = MetricField::<f64>::flat(g);
        let bgf = Background::new(&flat).unwrap();
        assert_eq!(christoffel(&flat, &bgf).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn christoffel_matches_conformal_closed_form() {
        // g = e^{2u}δ: Γ^k_ij = δ_ik ∂_j u + δ_jk ∂_i u − δ_ij ∂_k u
        let mut errs = vec![];
        for n in [32usize, 64] {
            let g = grid(n, 2);
            let m = conformal(g, 0.1);
            let bg = Background::new(&MetricField::flat(g)).unwrap();
            let gamma = christoffel(&m, &bg).unwrap();
            let mut err: f64 = 0.0;
            for node in 0..g.nodes() {
                let x = g.coords::<f64>(node);
                let du = [0.1 * TAU * (TAU * x[0]).cos(), 0.0];
                for k in 0..2 {
                    for i in 0..2 {
                        for j in 0..2 {
                            let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                            let exact = d(i, k) * du[j] + d(j, k) * du[i] - d(i, j) * du[k];
                            err = err.max((gamma.get(node, k, i, j) - exact).abs());
                            assert_eq!(gamma.get(node, k, i, j), gamma.get(node, k, j, i));
                        }
                    }
                }
            }
            errs.push(err);
        }
        assert!(errs[0] < 5e-3);
        assert!((errs[0] / errs[1]).log2() > 1.8);
    }

    #[test]
    fn flat_and_constant_metrics_have_zero_curvature() {
        let g = grid(16, 3);
        for c in [1.0, 3.0] {
            let m = MetricField::new(SymTensorField::scalar_identity(g, c)).unwrap();
            let b = curvature(&m).unwrap();
            assert_eq!(b.scalar.max_abs(), 0.0);
            assert_eq!(b.ricci.max_abs(), 0.0);
        }
    }

    #[test]
    fn bundle_scalar_is_trace_of_ricci() {
        let g = grid(32, 3);
        let m = conformal(g, 0.1);
        let b = curvature(&m).unwrap();
        let inv = invert_metric(&m).unwrap();
        for node in 0..g.nodes() {
            let mut r = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    r += inv.get(node, i, j) * b.ricci.get(node, i, j);
                }
            }
            assert!((r - b.scalar.values[node]).abs() < 1e-12 * (1.0 + r.abs()));
            assert!(b.ricci_norm_sq.values[node] >= 0.0);
        }
    }

    #[test]
    fn volume_element_examples() {
        let g = grid(16, 2);
        let flat = MetricField::<f64>::flat(g);
        let four = MetricField::new(SymTensorField::scalar_identity(g, 4.0)).unwrap();
        assert!(volume_element(&flat, &flat).unwrap().values.iter().all(|v| *v == 1.0));
        assert!(volume_element(&four, &flat).unwrap().values.iter().all(|v| *v == 4.0));
        let m = conformal(g, 0.1);
        let ve = volume_element(&m, &flat).unwrap();
        for node in 0..g.nodes() {
            let x = g.coords::<f64>(node);
            let exact = (0.2 * (TAU * x[0]).sin()).exp();
            assert!((ve.values[node] - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn integrate_examples() {
        let g = grid(32, 2);
        let flat = MetricField::<f64>::flat(g);
        assert!((integrate(&ScalarField::constant(g, 1.0), &flat).unwrap() - 1.0).abs() < 1e-15);
        let s = ScalarField::from_fn(g, |x: &[f64]| (TAU * x[0]).sin());
        assert!(integrate(&s, &flat).unwrap().abs() <= 1e-12);
        let four = MetricField::new(SymTensorField::scalar_identity(g, 4.0)).unwrap();
        assert!((integrate(&ScalarField::constant(g, 1.0f64), &four).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn integrate_is_exact_on_trig_polynomials_below_nyquist() {
        let g = grid(16, 2);
        let flat = MetricField::<f64>::flat(g);
        for k in 1..8 {
            let f = ScalarField::from_fn(g, |x: &[f64]| (TAU * k as f64 * x[0]).cos() * (TAU * (k % 3) as f64 * x[1]).sin() + 0.5);
            assert!((integrate(&f, &flat).unwrap() - 0.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn sobolev_norm_examples() {
        let g = grid(16, 2);
        let bg = Background::new(&MetricField::<f64>::flat(g)).unwrap();
        let zero = CovTensorField::zeros(g, 2);
        assert_eq!(sobolev_norm(&zero, &bg, SobolevSpec::new(1, 4.0)).unwrap(), 0.0);
        let c = 1.7;
        let t = CovTensorField::from_sym(&SymTensorField::scalar_identity(g, c));
        let v = sobolev_norm(&t, &bg, SobolevSpec::dual(0, 2.0)).unwrap();
        assert!((v - c * 2f64.sqrt()).abs() < 1e-14);
        let flat = CovTensorField::from_sym(&SymTensorField::scalar_identity(g, 1.0));
        let k0 = sobolev_norm(&flat, &bg, SobolevSpec::new(0, 4.0)).unwrap();
        let k1 = sobolev_norm(&flat, &bg, SobolevSpec::new(1, 4.0)).unwrap();
        assert_eq!(k0, k1);
        assert!(matches!(sobolev_norm(&flat, &bg, SobolevSpec::new(0, 2.0)), Err(Error::BadExponent { .. })));
        let inf = sobolev_norm(&t, &bg, SobolevSpec::new(1, f64::INFINITY)).unwrap();
        assert!((inf - c * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn fairness_examples() {
        let g = grid(8, 2);
        let flat = MetricField::<f64>::flat(g);
        assert_eq!(fairness(&flat, &flat).unwrap(), 1.0);
        let scaled = flat.scaled(1.5).unwrap();
        assert!((fairness(&scaled, &flat).unwrap() - 1.5).abs() < 1e-15);
        let mut m = linalg::zeros();
        m[0][0] = 2.0;
        m[1][1] = 0.8;
        let d = MetricField::constant(g, &m).unwrap();
        assert!((fairness(&d, &flat).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn einstein_defect_examples() {
        let flat = MetricField::<f64>::flat(grid(16, 3));
        assert!(einstein_defect(&flat).unwrap() <= 1e-12);
        let mut m = linalg::identity(3);
        m[0][1] = 0.3;
        m[1][0] = 0.3;
        m[2][2] = 2.0;
        let c = MetricField::constant(grid(16, 3), &m).unwrap();
        assert!(einstein_defect(&c).unwrap() <= 1e-12);
        let bump = conformal(grid(32, 3), 0.1);
        assert!(einstein_defect(&bump).unwrap() > 1.0);
    }

    #[test]
    fn cauchy_defect_single_node_einstein() {
        // Ric = (R/n) g with R = -2, n = 2 and g = δ
        let mut ric = linalg::zeros();
        ric[0][0] = -1.0;
        ric[1][1] = -1.0;
        let d: f64 = cauchy_defect_nodal(&ric, &linalg::identity(2), 2).unwrap();
        assert!(d.abs() < 1e-15);
    }

    #[test]
    fn cauchy_defect_nonnegative_on_conformal_bump() {
        let bump = conformal(grid(32, 3), 0.1);
        assert!(cauchy_defect(&bump).unwrap().min() >= -1e-12);
        let flat = MetricField::<f64>::flat(grid(16, 2));
        assert!(cauchy_defect(&flat).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn laplacian_is_self_adjoint_and_kills_constants() {
        let g = grid(32, 2);
        let t = SymTensorField::from_fn(g, |x: &[f64]| {
            let mut m = linalg::identity(2);
            m[0][0] = 1.0 + 0.2 * (TAU * x[1]).sin();
            m[0][1] = 0.1 * (TAU * x[0]).cos();
            m[1][0] = m[0][1];
            m
        });
        let op = LaplaceBeltrami::new(&t).unwrap();
        let ones = vec![1.0; g.nodes()];
        assert!(op.apply(&ones).iter().all(|v| v.abs() < 1e-12));
        let a = ScalarField::from_fn(g, |x: &[f64]| (TAU * x[0]).sin() + x[1] * (1.0 - x[1]));
        let b = ScalarField::from_fn(g, |x: &[f64]| (TAU * (x[0] + 2.0 * x[1])).cos());
        let la = op.weighted_apply(&a.values);
        let lb = op.weighted_apply(&b.values);
        let s1: f64 = la.iter().zip(&b.values).map(|(x, y)| x * y).sum();
        let s2: f64 = lb.iter().zip(&a.values).map(|(x, y)| x * y).sum();
        assert!((s1 - s2).abs() < 1e-9 * s1.abs().max(1.0));
    }
}
