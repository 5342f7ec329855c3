//! Periodic Gaussian mollification, fair smooth backgrounds and the empirical
//! continuity modulus of the curvature pairing.

use serde::Serialize;

use crate::distributional::{test_norm, Pairing, TestFunction};
use crate::error::{Error, Result};
use crate::geometry::{fairness, sobolev_norm, Background, SobolevSpec};
use crate::grid::{CovTensorField, GridSpec, MetricField, SymTensorField};
use crate::scalar::Real;

/// Kernel width, in torus lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MollifyParams {
    pub delta: f64,
}

impl MollifyParams {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::BadParameter(format!("mollifier width must be positive, got {delta}")));
        }
        if delta >= 0.125 {
            return Err(Error::KernelTooWide { delta });
        }
        Ok(Self { delta })
    }
}

/// One-dimensional weights `w[m]` for offsets `−M..=M`, unit mass.
pub fn kernel_weights<S: Real>(grid: &GridSpec, delta: f64) -> Vec<S> {
    let dx = 1.0 / grid.n as f64;
    let reach = (4.0 * delta / dx).floor() as i64;
    let raw: Vec<f64> = (-reach..=reach).map(|m| (-(m as f64 * dx).powi(2) / (2.0 * delta * delta)).exp()).collect();
    let mass: f64 = raw.iter().sum();
    raw.iter().map(|w| S::lit(w / mass)).collect()
}

fn convolve_axis<S: Real>(grid: &GridSpec, f: &[S], axis: usize, weights: &[S]) -> Vec<S> {
    let reach = (weights.len() / 2) as isize;
    (0..f.len())
        .map(|node| {
            weights
                .iter()
                .enumerate()
                .fold(S::zero(), |acc, (m, &w)| acc + w * f[grid.shift(node, axis, m as isize - reach)])
        })
        .collect()
}

/// Periodic scalar convolution with the separable kernel.
pub fn mollify_values<S: Real>(grid: &GridSpec, f: &[S], params: MollifyParams) -> Vec<S> {
    let weights = kernel_weights::<S>(grid, params.delta);
    (0..grid.dim).fold(f.to_vec(), |acc, axis| convolve_axis(grid, &acc, axis, &weights))
}

/// Componentwise periodic convolution of `g`.
pub fn mollify<S: Real>(g: &MetricField<S>, params: MollifyParams) -> Result<MetricField<S>> {
    let params = MollifyParams::new(params.delta)?;
    let grid = g.grid();
    let comps = g.comps.iter().map(|c| mollify_values(&grid, c, params)).collect();
    MetricField::new(SymTensorField { grid, comps })
}

/// A fair background together with the search that produced it.
#[derive(Debug, Clone)]
pub struct FairBackground<S> {
    pub metric: MetricField<S>,
    pub width: f64,
    pub fairness: f64,
    /// `(width, fairness)` for every width tried, in order.
    pub transcript: Vec<(f64, f64)>,
}

/// Widest mollification of `g` (starting at 0.1 and halving) that is
/// `(1 + delta_target)`-fair to `g`.
pub fn fair_background<S: Real>(g: &MetricField<S>, delta_target: f64) -> Result<FairBackground<S>> {
    if !(delta_target > 0.0 && delta_target < 1.0) {
        return Err(Error::BadParameter(format!("fairness target must lie in (0, 1), got {delta_target}")));
    }
    let dx = g.grid().spacing::<f64>();
    let mut width = 0.1;
    let mut transcript = Vec::new();
    let mut best = f64::INFINITY;
    while width >= 2.0 * dx {
        let h = mollify(g, MollifyParams::new(width)?)?;
        let fair = fairness(g, &h)?.to_f64_lossy();
        transcript.push((width, fair));
        best = best.min(fair);
        if fair <= 1.0 + delta_target {
            return Ok(FairBackground { metric: h, width, fairness: fair, transcript });
        }
        width /= 2.0;
    }
    Err(Error::CannotAchieveFairness { delta_target, best })
}

/// `‖a − b‖_{W^{1,p}}` against the background `h`.
pub fn w1p_distance<S: Real>(a: &MetricField<S>, b: &MetricField<S>, h: &Background<S>, p: f64) -> Result<S> {
    let diff = a.tensor().sub(b.tensor())?;
    sobolev_norm(&CovTensorField::from_sym(&diff), h, SobolevSpec::dual(1, p))
}

/// Empirical modulus `Ψ(δ)` of the pairing under mollification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub deltas: Vec<f64>,
    pub moduli: Vec<f64>,
}

/// `sup_φ |⟨R_{g_δ}, φ⟩ − ⟨R_g, φ⟩| / ‖φ‖_{W^{1, n/(n−1)}}` for each width.
pub fn continuity_probe<S: Real>(g: &MetricField<S>, h: &Background<S>, deltas: &[f64], family: &[TestFunction<S>]) -> Result<ContinuityReport> {
    continuity_probe_with(g, h, deltas, family, |_| {})
}

/// As [`continuity_probe`], letting `adjust` edit every pairing before use.
pub fn continuity_probe_with<S: Real>(
    g: &MetricField<S>,
    h: &Background<S>,
    deltas: &[f64],
    family: &[TestFunction<S>],
    adjust: impl Fn(&mut Pairing<'_, S>),
) -> Result<ContinuityReport> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let mut base = Pairing::new(g, h)?;
    adjust(&mut base);
    let norms = family.iter().map(|phi| test_norm(&phi.field, h)).collect::<Result<Vec<S>>>()?;
    let reference = family.iter().map(|phi| base.value(&phi.field)).collect::<Result<Vec<S>>>()?;
    let mut moduli = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let smooth = mollify(g, MollifyParams::new(delta)?)?;
        let mut pairing = Pairing::new(&smooth, h)?;
        adjust(&mut pairing);
        let mut worst = S::zero();
        for ((phi, norm), r) in family.iter().zip(&norms).zip(&reference) {
            worst = worst.max((pairing.value(&phi.field)? - *r).abs() / *norm);
        }
        moduli.push(worst.to_f64_lossy());
    }
    Ok(ContinuityReport { deltas: deltas.to_vec(), moduli })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributional::default_family;
    use crate::linalg;

    fn tent(grid: GridSpec) -> MetricField<f64> {
        MetricField::new(SymTensorField::from_fn(grid, |x: &[f64]| {
            let hat = 1.0 - 2.0 * (x[0] - 0.5).abs();
            let mut m = linalg::identity(grid.dim);
            for i in 0..grid.dim {
                m[i][i] = 1.0 + 0.2 * hat;
            }
            m
        }))
        .unwrap()
    }

    #[test]
    fn kernel_has_unit_mass_and_width_guard() {
        let grid = GridSpec::new(2, 64).unwrap();
        for delta in [0.001, 0.01, 0.05, 0.12] {
            let s: f64 = kernel_weights::<f64>(&grid, delta).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
        assert_eq!(MollifyParams::new(0.125).unwrap_err(), Error::KernelTooWide { delta: 0.125 });
    }

    #[test]
    fn constants_are_fixed() {
        let grid = GridSpec::new(2, 32).unwrap();
        let g = MetricField::new(SymTensorField::scalar_identity(grid, 3.0)).unwrap();
        let out = mollify(&g, MollifyParams { delta: 0.05 }).unwrap();
        assert!(out.tensor().sub(g.tensor()).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn mean_preserved_and_max_contracts() {
        let grid = GridSpec::new(2, 32).unwrap();
        let g = tent(grid);
        let out = mollify(&g, MollifyParams { delta: 0.03 }).unwrap();
        for (a, b) in g.comps.iter().zip(&out.comps) {
            let ma: f64 = a.iter().sum::<f64>();
            let mb: f64 = b.iter().sum::<f64>();
            assert!((ma - mb).abs() <= 1e-10);
            let amax = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(b.iter().all(|v| v.abs() <= amax + 1e-14));
        }
    }

    #[test]
    fn fair_background_of_flat_is_flat() {
        let grid = GridSpec::new(2, 32).unwrap();
        let fb = fair_background(&MetricField::<f64>::flat(grid), 0.1).unwrap();
        assert!((fb.fairness - 1.0).abs() <= 1e-12);
        assert_eq!(fb.transcript.len(), 1);
    }

    #[test]
    fn tent_fair_background_is_reproducible() {
        let grid = GridSpec::new(2, 64).unwrap();
        let a = fair_background(&tent(grid), 0.1).unwrap();
        let b = fair_background(&tent(grid), 0.1).unwrap();
        assert!(a.fairness <= 1.1);
        assert_eq!(a.transcript, b.transcript);
    }

    #[test]
    fn flat_continuity_moduli_vanish() {
        let grid = GridSpec::new(2, 32).unwrap();
        let flat = MetricField::<f64>::flat(grid);
        let bg = Background::new(&flat).unwrap();
        let rep = continuity_probe(&flat, &bg, &[0.04, 0.02], &default_family(grid, 1)).unwrap();
        assert!(rep.moduli.iter().all(|m| m.abs() <= 1e-10));
        assert_eq!(continuity_probe(&flat, &bg, &[0.04], &[]).unwrap_err(), Error::EmptyFamily);
    }
}
