//! Discrete 2-jets of symmetric tensor fields and the pointwise curvature
//! algebra built on them.
//!
//! First derivatives are centered differences. Pure second derivatives use
//! the compact `D⁺D⁻` stencil and mixed ones the product of centered
//! differences. Every curvature quantity is then assembled nodewise from the
//! jet `(g, ∂g, ∂²g)` with the exact product rule, so algebraically equivalent
//! formulas stay equivalent on the grid.

use rayon::prelude::*;

use crate::grid::{d2, d_central, sym_index, sym_len, GridSpec, SymTensorField};
use crate::linalg::{self, Mat, MAX_DIM};
use crate::scalar::Real;

pub type Tensor3<S> = [Mat<S>; MAX_DIM];
pub type Tensor4<S> = [[Mat<S>; MAX_DIM]; MAX_DIM];

pub fn zeros3<S: Real>() -> Tensor3<S> {
    [linalg::zeros(); MAX_DIM]
}

pub fn zeros4<S: Real>() -> Tensor4<S> {
    [[linalg::zeros(); MAX_DIM]; MAX_DIM]
}

/// Nodal first and second differences of every component of a symmetric field.
#[derive(Debug, Clone)]
pub struct FieldJet<S> {
    pub grid: GridSpec,
    /// `d1[k * m + c]`: ∂_k of packed component `c` (`m` = packed length).
    pub d1: Vec<Vec<S>>,
    /// `d2[sym_index(a, b) * m + c]`: ∂_a∂_b of packed component `c`.
    pub d2: Vec<Vec<S>>,
}

impl<S: Real> FieldJet<S> {
    pub fn new(field: &SymTensorField<S>) -> Self {
        let grid = field.grid;
        let n = grid.dim;
        let m = sym_len(n);
        let d1 = (0..n * m)
            .into_par_iter()
            .map(|task| d_central(&grid, &field.comps[task % m], task / m))
            .collect();
        let d2 = (0..m * m)
            .into_par_iter()
            .map(|task| {
                let (pair, c) = (task / m, task % m);
                let (a, b) = unpack_pair(n, pair);
                d2(&grid, &field.comps[c], a, b)
            })
            .collect();
        Self { grid, d1, d2 }
    }

    /// Gathers the jet at `node` into dense arrays.
    pub fn local(&self, field: &SymTensorField<S>, node: usize) -> LocalJet<S> {
        let n = self.grid.dim;
        let m = sym_len(n);
        let mut jet = LocalJet { n, g: field.matrix(node), dg: zeros3(), ddg: zeros4() };
        for i in 0..n {
            for j in i..n {
                let c = sym_index(n, i, j);
                for k in 0..n {
                    let v = self.d1[k * m + c][node];
                    jet.dg[k][i][j] = v;
                    jet.dg[k][j][i] = v;
                }
                for a in 0..n {
                    for b in a..n {
                        let v = self.d2[sym_index(n, a, b) * m + c][node];
                        jet.ddg[a][b][i][j] = v;
                        jet.ddg[a][b][j][i] = v;
                        jet.ddg[b][a][i][j] = v;
                        jet.ddg[b][a][j][i] = v;
                    }
                }
            }
        }
        jet
    }
}

fn unpack_pair(n: usize, pair: usize) -> (usize, usize) {
    for a in 0..n {
        for b in a..n {
            if sym_index(n, a, b) == pair {
                return (a, b);
            }
        }
    }
    unreachable!("pair index out of range")
}

/// Metric 2-jet at one node.
#[derive(Debug, Clone, Copy)]
pub struct LocalJet<S> {
    pub n: usize,
    pub g: Mat<S>,
    /// `dg[k][i][j] = ∂_k g_ij`
    pub dg: Tensor3<S>,
    /// `ddg[a][b][i][j] = ∂_a∂_b g_ij`
    pub ddg: Tensor4<S>,
}

/// Coordinate connection and curvature of a metric at one node.
#[derive(Debug, Clone, Copy)]
pub struct LocalGeometry<S> {
    pub n: usize,
    pub g: Mat<S>,
    pub ginv: Mat<S>,
    pub dg: Tensor3<S>,
    /// `dginv[m][i][j] = ∂_m g^{ij}`
    pub dginv: Tensor3<S>,
    /// `gamma[k][i][j] = Γ^k_ij`
    pub gamma: Tensor3<S>,
    /// `dgamma[m][k][i][j] = ∂_m Γ^k_ij`
    pub dgamma: Tensor4<S>,
    pub ricci: Mat<S>,
    pub scalar: S,
}

impl<S: Real> LocalGeometry<S> {
    /// Returns `None` when the nodal metric is singular.
    pub fn from_jet(jet: &LocalJet<S>) -> Option<Self> {
        let n = jet.n;
        let half = S::lit(0.5);
        let ginv = linalg::inverse(&jet.g, n)?;
        let dg = &jet.dg;
        let ddg = &jet.ddg;

        // first kind: Γ_{l,ij}
        let mut first = zeros3::<S>();
        for l in 0..n {
            for i in 0..n {
                for j in i..n {
                    let v = half * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
                    first[l][i][j] = v;
                    first[l][j][i] = v;
                }
            }
        }
        let mut gamma = zeros3::<S>();
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let mut s = S::zero();
                    for l in 0..n {
                        s = s + ginv[k][l] * first[l][i][j];
                    }
                    gamma[k][i][j] = s;
                    gamma[k][j][i] = s;
                }
            }
        }
        let mut dginv = zeros3::<S>();
        for m in 0..n {
            let mut tmp = linalg::zeros::<S>();
            for a in 0..n {
                for l in 0..n {
                    let mut s = S::zero();
                    for b in 0..n {
                        s = s + dg[m][a][b] * ginv[b][l];
                    }
                    tmp[a][l] = s;
                }
            }
            for k in 0..n {
                for l in k..n {
                    let mut s = S::zero();
                    for a in 0..n {
                        s = s + ginv[k][a] * tmp[a][l];
                    }
                    dginv[m][k][l] = -s;
                    dginv[m][l][k] = -s;
                }
            }
        }
        let mut dgamma = zeros4::<S>();
        for m in 0..n {
            let mut dfirst = zeros3::<S>();
            for l in 0..n {
                for i in 0..n {
                    for j in i..n {
                        let v = half * (ddg[m][i][j][l] + ddg[m][j][i][l] - ddg[m][l][i][j]);
                        dfirst[l][i][j] = v;
                        dfirst[l][j][i] = v;
                    }
                }
            }
            for k in 0..n {
                for i in 0..n {
                    for j in i..n {
                        let mut s = S::zero();
                        for l in 0..n {
                            s = s + dginv[m][k][l] * first[l][i][j] + ginv[k][l] * dfirst[l][i][j];
                        }
                        dgamma[m][k][i][j] = s;
                        dgamma[m][k][j][i] = s;
                    }
                }
            }
        }
        let mut ricci = linalg::zeros::<S>();
        for i in 0..n {
            for j in i..n {
                let mut s = S::zero();
                for k in 0..n {
                    s = s + dgamma[k][k][i][j] - half * (dgamma[j][k][k][i] + dgamma[i][k][k][j]);
                    for l in 0..n {
                        s = s + gamma[k][k][l] * gamma[l][i][j]
                            - half * (gamma[k][j][l] * gamma[l][i][k] + gamma[k][i][l] * gamma[l][j][k]);
                    }
                }
                ricci[i][j] = s;
                ricci[j][i] = s;
            }
        }
        let mut scalar = S::zero();
        for i in 0..n {
            for j in 0..n {
                scalar = scalar + ginv[i][j] * ricci[i][j];
            }
        }
        Some(Self { n, g: jet.g, ginv, dg: jet.dg, dginv, gamma, dgamma, ricci, scalar })
    }

    /// `|Ric|²_g`.
    pub fn ricci_norm_sq(&self) -> S {
        norm_sq_2(&self.ricci, &self.ginv, self.n)
    }

    /// `|Ric − (R/n) g|²_g`; equals `|Ric|² − R²/n` without the cancellation.
    pub fn traceless_ricci_norm_sq(&self) -> S {
        let n = self.n;
        let mut t = self.ricci;
        let c = self.scalar / S::from_usize_lossy(n);
        for i in 0..n {
            for j in 0..n {
                t[i][j] = t[i][j] - c * self.g[i][j];
            }
        }
        norm_sq_2(&t, &self.ginv, n)
    }

    /// Coordinate Frobenius norm of `R^l_{ijk}`.
    pub fn riemann_frobenius(&self) -> S {
        let n = self.n;
        let mut acc = S::zero();
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut r = self.dgamma[i][l][j][k] - self.dgamma[j][l][i][k];
                        for m in 0..n {
                            r = r + self.gamma[l][i][m] * self.gamma[m][j][k] - self.gamma[l][j][m] * self.gamma[m][i][k];
                        }
                        acc = acc + r * r;
                    }
                }
            }
        }
        acc.sqrt()
    }
}

/// `A^{ij} B_ij` style contraction `|T|²_g = g^{ia} g^{jb} T_ij T_ab` for symmetric `T`.
pub fn norm_sq_2<S: Real>(t: &Mat<S>, ginv: &Mat<S>, n: usize) -> S {
    // M = g⁻¹ T ; |T|² = tr(M M)
    let m = linalg::matmul(ginv, t, n);
    let mut s = S::zero();
    for i in 0..n {
        for j in 0..n {
            s = s + m[i][j] * m[j][i];
        }
    }
    s
}
