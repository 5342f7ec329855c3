//! Distributional scalar curvature `⟨R_g, φ⟩` of metrics with only first
//! derivatives, evaluated against a smooth background, plus lower-bound
//! certificates over a fixed family of nonnegative test functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{background_gradient, difference_tensor, first_derivatives, integrate, local_gradient, sobolev_norm, Background, MetricGeometry, SobolevSpec};
use crate::grid::{check_same_grid, d_central, CovTensorField, GridSpec, MetricField, ScalarField, VectorField};
use crate::linalg;
use crate::scalar::{pairwise_sum, Real};

/// Version tag of the default test family; bump when its construction changes.
pub const FAMILY_VERSION: u32 = 1;
/// Default seed of the test family, shared by certificates and continuity probes.
pub const DEFAULT_FAMILY_SEED: u64 = 0x5EED_C0DE;
/// Absolute tolerance on the normalized certificate defect.
pub const TOL_CERT: f64 = 1e-6;
/// Sobolev exponent used for the secondary dual norm `W^{1, p/(p−1)}`.
pub const DEFAULT_P: f64 = 4.0;

/// Smooth scalar against which distributional curvature is paired.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction<S> {
    pub field: ScalarField<S>,
    pub nonnegative: bool,
}

impl<S: Real> TestFunction<S> {
    pub fn new(field: ScalarField<S>) -> Self {
        let nonnegative = field.min() >= S::zero();
        Self { field, nonnegative }
    }

    /// Rejects fields with negative values.
    pub fn nonnegative(field: ScalarField<S>) -> Result<Self> {
        let min = field.min();
        if min < S::zero() {
            return Err(Error::NegativeTestFunction { min: min.to_f64_lossy() });
        }
        Ok(Self { field, nonnegative: true })
    }
}

/// Raised-cosine bump `Π_j ((1 + cos 2π(x_j − c_j)) / 2)^m`.
pub fn bump<S: Real>(grid: GridSpec, centre: &[f64], power: i32) -> ScalarField<S> {
    let tau = S::TAU();
    let half = S::lit(0.5);
    ScalarField::from_fn(grid, |x: &[S]| {
        x.iter().zip(centre).fold(S::one(), |acc, (&xi, &c)| acc * (half * (S::one() + (tau * (xi - S::lit(c))).cos())).powi(power))
    })
}

/// Largest frequency per axis a family member may carry on this grid.
pub fn max_family_frequency(grid: GridSpec) -> usize {
    (grid.n / 4).clamp(1, 4)
}

/// Default family: the constant, `2n` translated bumps and seeded random
/// nonnegative trigonometric polynomials, 16 members in total.
pub fn default_family<S: Real>(grid: GridSpec, seed: u64) -> Vec<TestFunction<S>> {
    let n = grid.dim;
    let kmax = max_family_frequency(grid);
    let mut family = vec![TestFunction { field: ScalarField::constant(grid, S::one()), nonnegative: true }];
    for axis in 0..n {
        for c in [0.25, 0.75] {
            let mut centre = vec![0.5; n];
            centre[axis] = c;
            family.push(TestFunction::new(bump(grid, &centre, kmax as i32)));
        }
    }
    let randoms = 16usize.saturating_sub(family.len()).max(4);
    for r in 0..randoms {
        family.push(random_nonnegative(grid, seed.wrapping_add(r as u64)));
    }
    family
}

/// Seeded nonnegative trigonometric polynomial `1 + Σ a_j cos(2πk_j·x + θ_j)`
/// with `Σ a_j = 1` and `|k_j|_∞` bounded by [`max_family_frequency`].
pub fn random_nonnegative<S: Real>(grid: GridSpec, seed: u64) -> TestFunction<S> {
    let n = grid.dim;
    let kmax = max_family_frequency(grid) as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(FAMILY_VERSION) << 56));
    let terms = 6;
    let mut amps: Vec<f64> = (0..terms).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = amps.iter().sum();
    amps.iter_mut().for_each(|a| *a /= total);
    let modes: Vec<(Vec<i64>, f64)> = (0..terms)
        .map(|_| {
            let mut k: Vec<i64> = (0..n).map(|_| rng.gen_range(-kmax..=kmax)).collect();
            if k.iter().all(|v| *v == 0) {
                k[rng.gen_range(0..n)] = 1;
            }
            (k, rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let field = ScalarField::from_fn(grid, |x: &[S]| {
        let mut v = S::one();
        for (a, (k, theta)) in amps.iter().zip(&modes) {
            let phase = k.iter().zip(x).fold(S::lit(*theta), |acc, (&kk, &xi)| acc + S::TAU() * S::lit(kk as f64) * xi);
            v = v + S::lit(*a) * phase.cos();
        }
        v.max(S::zero())
    });
    TestFunction::new(field)
}

/// Result of one pairing evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairingReport {
    pub value: f64,
    pub v_term: f64,
    pub f_term: f64,
    /// `‖φ‖_{W^{1, n/(n−1)}}` against the background.
    pub test_norm: f64,
    /// `‖φ‖_{W^{1, p/(p−1)}}` against the background.
    pub test_norm_dual: f64,
}

/// Precomputed `V`, `F` and density for one `(g, h)` pair.
#[derive(Debug, Clone)]
pub struct Pairing<'a, S> {
    pub metric: &'a MetricField<S>,
    pub background: &'a Background<S>,
    pub v: VectorField<S>,
    /// Second printed form of `V`, kept for the internal cross-check.
    pub v_alt: VectorField<S>,
    pub f: ScalarField<S>,
    /// `dμ_g/dμ_h`
    pub density: Vec<S>,
    /// Exponent `p` of the dual norm `W^{1, p/(p−1)}`.
    pub p: f64,
}

impl<'a, S: Real> Pairing<'a, S> {
    pub fn new(g: &'a MetricField<S>, h: &'a Background<S>) -> Result<Self> {
        check_same_grid(&g.grid(), &h.grid())?;
        let grid = g.grid();
        let n = grid.dim;
        let d1 = first_derivatives(g.tensor());
        let mut v = VectorField::zeros(grid);
        let mut v_alt = VectorField::zeros(grid);
        let mut f = vec![S::zero(); grid.nodes()];
        let mut density = vec![S::zero(); grid.nodes()];
        for node in 0..grid.nodes() {
            let gm = g.matrix(node);
            let ginv = linalg::inverse(&gm, n).ok_or(Error::SingularMetric { node, min_eigenvalue: 0.0 })?;
            let nabla = background_gradient(&gm, &local_gradient(&d1, n, node), h.gamma_at(node), n, h.flat);
            let gamma = difference_tensor(&ginv, &nabla, n);
            // V^k = g^{ij} g^{kl} (∇̃_j g_il − ∇̃_l g_ij)
            for k in 0..n {
                let mut s = S::zero();
                for i in 0..n {
                    for j in 0..n {
                        for l in 0..n {
                            s = s + ginv[i][j] * ginv[k][l] * (nabla[j][i][l] - nabla[l][i][j]);
                        }
                    }
                }
                v.comps[k][node] = s;
                // V^k = g^{ij} Γ^k_ij − g^{ik} Γ^j_ji
                let mut a = S::zero();
                for i in 0..n {
                    for j in 0..n {
                        a = a + ginv[i][j] * gamma[k][i][j] - ginv[i][k] * gamma[j][j][i];
                    }
                }
                v_alt.comps[k][node] = a;
            }
            // ∇̃_k g^{ij} = −g^{ia} g^{jb} ∇̃_k g_ab
            let mut dinv = crate::jet::zeros3::<S>();
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let mut s = S::zero();
                        for a in 0..n {
                            for b in 0..n {
                                s = s + ginv[i][a] * ginv[j][b] * nabla[k][a][b];
                            }
                        }
                        dinv[k][i][j] = -s;
                    }
                }
            }
            let ric_h = h.ricci[node];
            let mut fv = S::zero();
            for i in 0..n {
                for j in 0..n {
                    fv = fv + ginv[i][j] * ric_h[i][j];
                }
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        fv = fv - dinv[k][i][j] * gamma[k][i][j];
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        fv = fv + dinv[k][i][k] * gamma[j][j][i];
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let mut q = S::zero();
                    for k in 0..n {
                        for l in 0..n {
                            q = q + gamma[k][k][l] * gamma[l][i][j] - gamma[k][j][l] * gamma[l][i][k];
                        }
                    }
                    fv = fv + ginv[i][j] * q;
                }
            }
            f[node] = fv;
            density[node] = (linalg::det(&gm, n)).sqrt() / h.sqrt_det[node];
        }
        Ok(Self { metric: g, background: h, v, v_alt, f: ScalarField { grid, values: f }, density, p: DEFAULT_P })
    }

    pub fn grid(&self) -> GridSpec {
        self.metric.grid()
    }

    /// Largest nodal disagreement between the two printed forms of `V`.
    pub fn v_form_gap(&self) -> S {
        self.v
            .comps
            .iter()
            .zip(&self.v_alt.comps)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (*x - *y).abs()))
            .fold(S::zero(), S::max)
    }

    /// `(v_term, f_term)` of the pairing with `φ`.
    pub fn terms(&self, phi: &ScalarField<S>) -> Result<(S, S)> {
        check_same_grid(&self.grid(), &phi.grid)?;
        let grid = self.grid();
        let w: Vec<S> = phi.values.iter().zip(&self.density).map(|(&a, &b)| a * b).collect();
        let mut vt = vec![S::zero(); w.len()];
        for k in 0..grid.dim {
            let dw = d_central(&grid, &w, k);
            for ((acc, &vk), &d) in vt.iter_mut().zip(&self.v.comps[k]).zip(&dw) {
                *acc = *acc - vk * d;
            }
        }
        let sh = &self.background.sqrt_det;
        let cell = grid.cell_volume::<S>();
        let vt: Vec<S> = vt.iter().zip(sh).map(|(&a, &b)| a * b).collect();
        let ft: Vec<S> = self.f.values.iter().zip(&w).zip(sh).map(|((&f, &w), &s)| f * w * s).collect();
        Ok((pairwise_sum(&vt) * cell, pairwise_sum(&ft) * cell))
    }

    pub fn value(&self, phi: &ScalarField<S>) -> Result<S> {
        let (a, b) = self.terms(phi)?;
        Ok(a + b)
    }

    pub fn report(&self, phi: &TestFunction<S>) -> Result<PairingReport> {
        let (vt, ft) = self.terms(&phi.field)?;
        Ok(PairingReport {
            value: (vt + ft).to_f64_lossy(),
            v_term: vt.to_f64_lossy(),
            f_term: ft.to_f64_lossy(),
            test_norm: test_norm(&phi.field, self.background)?.to_f64_lossy(),
            test_norm_dual: test_norm_with(&phi.field, self.background, self.p / (self.p - 1.0))?.to_f64_lossy(),
        })
    }

    /// Nodal representative `(1/√h) ∂_k(√h V^k) + F` of the pairing, so that
    /// `⟨R_g, φ⟩ = Σ density_R φ dμ_g` exactly on the grid.
    pub fn curvature_density(&self) -> ScalarField<S> {
        let grid = self.grid();
        let sh = &self.background.sqrt_det;
        let mut out = self.f.values.clone();
        for k in 0..grid.dim {
            let flux: Vec<S> = self.v.comps[k].iter().zip(sh).map(|(&v, &s)| v * s).collect();
            let div = d_central(&grid, &flux, k);
            for ((o, &d), &s) in out.iter_mut().zip(&div).zip(sh) {
                *o = *o + d / s;
            }
        }
        ScalarField { grid, values: out }
    }
}

/// `‖φ‖_{W^{1, n/(n−1)}}` against the background.
pub fn test_norm<S: Real>(phi: &ScalarField<S>, h: &Background<S>) -> Result<S> {
    let n = phi.grid.dim as f64;
    test_norm_with(phi, h, n / (n - 1.0))
}

pub fn test_norm_with<S: Real>(phi: &ScalarField<S>, h: &Background<S>, q: f64) -> Result<S> {
    sobolev_norm(&CovTensorField::from_scalar(phi), h, SobolevSpec::dual(1, q))
}

/// `V^k` of the pairing.
pub fn v_field<S: Real>(g: &MetricField<S>, h: &Background<S>) -> Result<VectorField<S>> {
    Ok(Pairing::new(g, h)?.v)
}

/// `F` of the pairing.
pub fn f_scalar<S: Real>(g: &MetricField<S>, h: &Background<S>) -> Result<ScalarField<S>> {
    Ok(Pairing::new(g, h)?.f)
}

/// `⟨R_g, φ⟩ = ∫ (−V·∇̃(φ dμ_g/dμ_h) + F φ dμ_g/dμ_h) dμ_h`.
pub fn pair_scalar_curvature<S: Real>(g: &MetricField<S>, h: &Background<S>, phi: &TestFunction<S>) -> Result<PairingReport> {
    Pairing::new(g, h)?.report(phi)
}

/// `|⟨R_g, φ⟩ − ∫ R_g φ dμ_g|` for smooth `g`.
pub fn smooth_consistency_gap<S: Real>(g: &MetricField<S>, h: &Background<S>, phi: &ScalarField<S>) -> Result<S> {
    let pairing = Pairing::new(g, h)?.value(phi)?;
    let r = MetricGeometry::new(g)?.scalar();
    let prod = r.zip_map(phi, |a, b| a * b)?;
    Ok((pairing - integrate(&prod, g)?).abs())
}

/// `|⟨R_g, φ⟩_{h₁} − ⟨R_g, φ⟩_{h₂}|`.
pub fn background_gap<S: Real>(g: &MetricField<S>, h1: &Background<S>, h2: &Background<S>, phi: &ScalarField<S>) -> Result<S> {
    let a = Pairing::new(g, h1)?.value(phi)?;
    let b = Pairing::new(g, h2)?.value(phi)?;
    Ok((a - b).abs())
}

/// Outcome of a distributional lower-bound test over a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBoundCertificate {
    pub bound: f64,
    /// `min_φ ⟨R_g − a, φ⟩ / ‖φ‖_{W^{1, n/(n−1)}}`
    pub worst_defect: f64,
    pub worst_index: usize,
    pub family_size: usize,
    pub tolerance: f64,
    pub passes: bool,
}

/// Evaluates `⟨R_g − a, φ⟩ = ⟨R_g, φ⟩ − a ∫ φ dμ_g` over the family.
pub fn lower_bound_certificate<S: Real>(g: &MetricField<S>, h: &Background<S>, a: S, family: &[TestFunction<S>]) -> Result<LowerBoundCertificate> {
    let pairing = Pairing::new(g, h)?;
    certificate_with(&pairing, a, family)
}

pub fn certificate_with<S: Real>(pairing: &Pairing<'_, S>, a: S, family: &[TestFunction<S>]) -> Result<LowerBoundCertificate> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let mut worst = S::infinity();
    let mut worst_index = 0;
    for (idx, phi) in family.iter().enumerate() {
        if !phi.nonnegative {
            return Err(Error::NegativeTestFunction { min: phi.field.min().to_f64_lossy() });
        }
        let value = pairing.value(&phi.field)?;
        let mass = integrate(&phi.field, pairing.metric)?;
        let defect = (value - a * mass) / test_norm(&phi.field, pairing.background)?;
        if defect < worst {
            worst = defect;
            worst_index = idx;
        }
    }
    let worst_defect = worst.to_f64_lossy();
    Ok(LowerBoundCertificate {
        bound: a.to_f64_lossy(),
        worst_defect,
        worst_index,
        family_size: family.len(),
        tolerance: TOL_CERT,
        passes: worst_defect >= -TOL_CERT,
    })
}

/// Largest `a` with `⟨R_g − a, φ⟩ ≥ 0` for every nonnegative grid function:
/// the minimum of the nodal curvature density.
pub fn certified_bound<S: Real>(g: &MetricField<S>, h: &Background<S>) -> Result<S> {
    Ok(Pairing::new(g, h)?.curvature_density().min())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SymTensorField;
    use std::f64::consts::TAU;

    fn conformal(grid: GridSpec, amp: f64) -> MetricField<f64> {
        MetricField::new(SymTensorField::from_fn(grid, |x: &[f64]| {
            let mut m = linalg::identity(grid.dim);
            for i in 0..grid.dim {
                m[i][i] = (2.0 * amp * (TAU * x[0]).sin()).exp();
            }
            m
        }))
        .unwrap()
    }

    fn flat_bg(grid: GridSpec) -> Background<f64> {
        Background::new(&MetricField::flat(grid)).unwrap()
    }

    #[test]
    fn family_is_nonnegative_seeded_and_large_enough() {
        for dim in 2..=3 {
            let grid = GridSpec::new(dim, 16).unwrap();
            let fam = default_family::<f64>(grid, 7);
            assert!(fam.len() >= 16);
            assert!(fam.iter().all(|f| f.nonnegative && f.field.min() >= 0.0));
            assert_eq!(fam, default_family::<f64>(grid, 7));
            assert_ne!(fam, default_family::<f64>(grid, 8));
        }
    }

    #[test]
    fn v_and_f_vanish_for_constant_multiples_of_background() {
        let grid = GridSpec::new(2, 16).unwrap();
        let bg = flat_bg(grid);
        for c in [1.0, 4.0] {
            let g = MetricField::new(SymTensorField::scalar_identity(grid, c)).unwrap();
            assert_eq!(v_field(&g, &bg).unwrap().max_abs(), 0.0);
            assert_eq!(f_scalar(&g, &bg).unwrap().max_abs(), 0.0);
        }
        let h = conformal(grid, 0.1);
        let bh = Background::new(&h).unwrap();
        let scaled = h.scaled(2.5).unwrap();
        assert!(v_field(&scaled, &bh).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn v_matches_conformal_closed_form() {
        // g = e^{2u}δ in 2D: V^k = −2 e^{−2u} ∂_k u ... from g^{ij}g^{kl}(∂_j g_il − ∂_l g_ij)
        // = e^{−4u}(∂_i g_ik − n ∂_k g) with g_ij = e^{2u}δ_ij → e^{−2u}(2 − 2n)∂_k u.
        let mut errs = vec![];
        for n in [32usize, 64] {
            let grid = GridSpec::new(2, n).unwrap();
            let v = v_field(&conformal(grid, 0.1), &flat_bg(grid)).unwrap();
            let mut err: f64 = 0.0;
            for node in 0..grid.nodes() {
                let x = grid.coords::<f64>(node)[0];
                let u = 0.1 * (TAU * x).sin();
                let du = 0.1 * TAU * (TAU * x).cos();
                let exact = (-2.0 * u).exp() * (2.0 - 4.0) * du;
                err = err.max((v.comps[0][node] - exact).abs());
                assert!(v.comps[1][node].abs() < 1e-15);
            }
            errs.push(err);
        }
        assert!((errs[0] / errs[1]).log2() > 1.8, "{errs:?}");
    }

    #[test]
    fn both_v_forms_agree() {
        let grid = GridSpec::new(2, 32).unwrap();
        let g = MetricField::new(SymTensorField::from_fn(grid, |x: &[f64]| {
            let mut m = linalg::identity(2);
            m[0][0] = 1.0 + 0.2 * (TAU * x[1]).sin();
            m[0][1] = 0.1 * (TAU * (x[0] + x[1])).cos();
            m[1][0] = m[0][1];
            m
        }))
        .unwrap();
        let h = MetricField::new(SymTensorField::from_fn(grid, |x: &[f64]| {
            let mut m = linalg::identity(2);
            m[1][1] = 1.0 + 0.1 * (TAU * x[0]).sin();
            m
        }))
        .unwrap();
        let bh = Background::new(&h).unwrap();
        let p = Pairing::new(&g, &bh).unwrap();
        assert!(p.v_form_gap() <= 1e-10);
    }

    #[test]
    fn flat_pairing_is_zero() {
        let grid = GridSpec::new(2, 16).unwrap();
        let flat = MetricField::flat(grid);
        let bg = flat_bg(grid);
        for phi in default_family::<f64>(grid, 1) {
            let r = pair_scalar_curvature(&flat, &bg, &phi).unwrap();
            assert!(r.value.abs() <= 1e-12);
            assert_eq!(r.value, r.v_term + r.f_term);
        }
    }

    #[test]
    fn flat_certificate_examples() {
        let grid = GridSpec::new(2, 16).unwrap();
        let flat = MetricField::flat(grid);
        let bg = flat_bg(grid);
        let fam = default_family::<f64>(grid, 1);
        let c0 = lower_bound_certificate(&flat, &bg, 0.0, &fam).unwrap();
        assert!(c0.worst_defect.abs() <= 1e-10 && c0.passes);
        let c1 = lower_bound_certificate(&flat, &bg, -1.0, &fam[..1]).unwrap();
        // φ ≡ 1: defect = +1·Vol / ‖1‖_{W^{1,2}} = 1
        assert!((c1.worst_defect - 1.0).abs() < 1e-12 && c1.passes);
        assert_eq!(lower_bound_certificate(&flat, &bg, 0.0, &[]).unwrap_err(), Error::EmptyFamily);
    }

    #[test]
    fn density_reproduces_the_pairing() {
        let grid = GridSpec::new(2, 32).unwrap();
        let g = conformal(grid, 0.1);
        let h = MetricField::new(SymTensorField::from_fn(grid, |x: &[f64]| {
            let mut m = linalg::identity(2);
            m[0][0] = 1.0 + 0.1 * (TAU * x[1]).sin();
            m[1][1] = m[0][0];
            m
        }))
        .unwrap();
        let bh = Background::new(&h).unwrap();
        let p = Pairing::new(&g, &bh).unwrap();
        let dens = p.curvature_density();
        for phi in default_family::<f64>(grid, 3) {
            let prod = dens.zip_map(&phi.field, |a, b| a * b).unwrap();
            let direct = integrate(&prod, &g).unwrap();
            let value = p.value(&phi.field).unwrap();
            assert!((direct - value).abs() < 1e-12 * (1.0 + value.abs()));
        }
        let a = certified_bound(&g, &bh).unwrap();
        let cert = lower_bound_certificate(&g, &bh, a, &default_family(grid, 3)).unwrap();
        assert!(cert.passes, "{cert:?}");
    }

    #[test]
    fn background_gap_with_itself_is_exactly_zero() {
        let grid = GridSpec::new(2, 16).unwrap();
        let g = conformal(grid, 0.1);
        let bg = flat_bg(grid);
        let phi = bump(grid, &[0.5, 0.5], 4);
        assert_eq!(background_gap(&g, &bg, &bg, &phi).unwrap(), 0.0);
    }
}
