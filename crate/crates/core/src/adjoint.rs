//! Backward construction of the auxiliary function `φ` along a stored flow,
//! and the monotonicity, bound, mass and energy monitors built on it.
//!
//! `ψ` solves `∂_t ψ = −Δψ + Rψ + W·∇ψ` backward from `ψ(T) = φ̃`, where `W` is
//! the DeTurck field of the trace (zero for the homogeneous model), and
//! `φ = ((1 − 2at/n) / (1 − 2aT/n))² ψ`.

use serde::Serialize;

use crate::distributional::{test_norm, test_norm_with, TestFunction, DEFAULT_P};
use crate::error::{Error, Result};
use crate::flow::{scalar_and_drift, CurvatureSource, FlowTrace, HomogeneousModel};
pub use crate::flow::a_of_t;
use crate::geometry::{Background, LaplaceBeltrami};
use crate::grid::{check_same_grid, d_central, MetricField, ScalarField, VectorField};
use crate::scalar::{pairwise_sum, Real};
use crate::verdict::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjointParams {
    /// Terminal time; must be a saved time of the trace.
    pub t_terminal: f64,
    pub a: f64,
    /// Record every `record_stride`-th saved state (the ends are always kept).
    pub record_stride: usize,
}

/// Monitors of one backward solve, in increasing time order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSeries<S> {
    pub times: Vec<f64>,
    pub phi: Vec<ScalarField<S>>,
    pub psi_scale: Vec<f64>,
    /// `Q(t) = ∫ (R − a(t)) φ dμ`
    pub q: Vec<f64>,
    /// `E(t) = ∫ |∇ψ|² dμ`
    pub e: Vec<f64>,
    /// `I(t, T) = sup ψ₁` for the unit terminal datum.
    pub i: Vec<f64>,
    pub sup_phi: Vec<f64>,
    pub min_phi: Vec<f64>,
    /// `‖φ‖_{W^{1, n/(n−1)}}`
    pub w1_norm: Vec<f64>,
    /// `‖φ‖_{W^{1, p/(p−1)}}`
    pub w1_norm_dual: Vec<f64>,
    /// `|∫ (ΔR φ − R Δφ) dμ|`
    pub by_parts_gap: Vec<f64>,
    /// `|∫ a(t) Δφ dμ|`
    pub constant_gap: Vec<f64>,
    /// Terminal datum, kept for the exactness check.
    pub terminal: ScalarField<S>,
    pub max_dt: f64,
    pub dx: f64,
}

/// Result of one batched backward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointBatch<S> {
    pub params: AdjointParams,
    pub series: Vec<AdjointSeries<S>>,
    /// `(t, I(t, T))`
    pub mass: Vec<(f64, f64)>,
}

struct Operator<S> {
    lb: LaplaceBeltrami<S>,
    r: Vec<S>,
    w: Option<VectorField<S>>,
}

impl<S: Real> Operator<S> {
    fn at(trace: &FlowTrace<S>, t: f64) -> Result<Self> {
        let g = trace.metric_at(t)?;
        Self::for_metric(&g, &trace.source, t)
    }

    fn for_metric(g: &MetricField<S>, source: &CurvatureSource<S>, t: f64) -> Result<Self> {
        let lb = LaplaceBeltrami::new(g.tensor())?;
        match source {
            CurvatureSource::Grid(bg) => {
                let (r, w) = scalar_and_drift(g, bg)?;
                Ok(Self { lb, r, w: Some(w) })
            }
            CurvatureSource::Homogeneous(model) => {
                let r = S::lit(model.scalar(t)?);
                Ok(Self { lb, r: vec![r; g.grid().nodes()], w: None })
            }
        }
    }

    /// `Δψ − W·∇ψ − Rψ`
    fn apply(&self, psi: &[S]) -> Vec<S> {
        let grid = self.lb.grid;
        let mut out = self.lb.apply(psi);
        for ((o, &r), &p) in out.iter_mut().zip(&self.r).zip(psi) {
            *o = *o - r * p;
        }
        if let Some(w) = &self.w {
            for k in 0..grid.dim {
                let d = d_central(&grid, psi, k);
                for ((o, &wk), &dk) in out.iter_mut().zip(&w.comps[k]).zip(&d) {
                    *o = *o - wk * dk;
                }
            }
        }
        out
    }
}

fn rk4_backward<S: Real>(y: &[Vec<S>], ops: [&Operator<S>; 3], dt: S) -> Vec<Vec<S>> {
    let half = S::lit(0.5) * dt;
    let two = S::lit(2.0);
    let sixth = dt / S::lit(6.0);
    y.iter()
        .map(|y0| {
            let k1 = ops[0].apply(y0);
            let y1: Vec<S> = y0.iter().zip(&k1).map(|(&a, &k)| a + half * k).collect();
            let k2 = ops[1].apply(&y1);
            let y2: Vec<S> = y0.iter().zip(&k2).map(|(&a, &k)| a + half * k).collect();
            let k3 = ops[1].apply(&y2);
            let y3: Vec<S> = y0.iter().zip(&k3).map(|(&a, &k)| a + dt * k).collect();
            let k4 = ops[2].apply(&y3);
            (0..y0.len()).map(|i| y0[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i])).collect()
        })
        .collect()
}

/// `((1 − 2at/n) / (1 − 2aT/n))²`, exactly 1 at `t = T`.
pub fn psi_scale(a: f64, n: usize, t: f64, t_terminal: f64) -> Result<f64> {
    let model = HomogeneousModel { n, a };
    let ratio = model.scale(t)? / model.scale(t_terminal)?;
    Ok(ratio * ratio)
}

fn norm_background<S: Real>(trace: &FlowTrace<S>) -> Result<Background<S>> {
    match &trace.source {
        CurvatureSource::Grid(bg) => Ok(bg.clone()),
        CurvatureSource::Homogeneous(_) => Background::new(&MetricField::flat(trace.states[0].g.grid())),
    }
}

/// Solves backward from `T` for every terminal datum at once; the unit
/// datum for `I(t, T)` rides along.
pub fn backward_solve<S: Real>(trace: &FlowTrace<S>, params: AdjointParams, terminals: &[TestFunction<S>]) -> Result<AdjointBatch<S>> {
    let n = trace.dim();
    let grid = trace.states[0].g.grid();
    if params.record_stride == 0 {
        return Err(Error::BadParameter("record_stride must be positive".into()));
    }
    for phi in terminals {
        check_same_grid(&grid, &phi.field.grid)?;
        if phi.field.min() < S::zero() {
            return Err(Error::NegativeTestFunction { min: phi.field.min().to_f64_lossy() });
        }
    }
    HomogeneousModel { n, a: params.a }.check(params.t_terminal)?;
    let terminal_idx = trace.saved_index(params.t_terminal).ok_or(Error::TerminalTimeNotSaved(params.t_terminal))?;
    let k_terminal = trace.states[terminal_idx].step;
    let times = trace.step_times();
    let norm_bg = norm_background(trace)?;
    let dual_q = DEFAULT_P / (DEFAULT_P - 1.0);
    let dx = grid.spacing::<f64>();
    let max_dt = trace.dt_history[..k_terminal].iter().fold(0.0f64, |m, v| m.max(*v));

    let mut y: Vec<Vec<S>> = terminals.iter().map(|p| p.field.values.clone()).collect();
    y.push(vec![S::one(); grid.nodes()]);
    let m = terminals.len();
    let mut series: Vec<AdjointSeries<S>> = terminals
        .iter()
        .map(|p| AdjointSeries {
            times: vec![],
            phi: vec![],
            psi_scale: vec![],
            q: vec![],
            e: vec![],
            i: vec![],
            sup_phi: vec![],
            min_phi: vec![],
            w1_norm: vec![],
            w1_norm_dual: vec![],
            by_parts_gap: vec![],
            constant_gap: vec![],
            terminal: p.field.clone(),
            max_dt,
            dx,
        })
        .collect();
    let mut mass = Vec::new();
    let cell = grid.cell_volume::<S>();

    let mut record = |state_idx: usize, op: &Operator<S>, y: &[Vec<S>]| -> Result<()> {
        let t = trace.states[state_idx].t;
        let scale = psi_scale(params.a, n, t, params.t_terminal)?;
        let at = a_of_t(params.a, n, t)?;
        let i_sup = y[m].iter().fold(S::neg_infinity(), |acc, v| acc.max(*v)).to_f64_lossy();
        mass.push((t, i_sup));
        let wr = op.lb.weighted_apply(&op.r);
        for (s, psi) in series.iter_mut().zip(y) {
            let phi: Vec<S> = psi.iter().map(|&v| S::lit(scale) * v).collect();
            let phi = ScalarField { grid, values: phi };
            let q: Vec<S> = op.r.iter().zip(&phi.values).zip(&op.lb.sqrt_det).map(|((&r, &p), &d)| (r - S::lit(at)) * p * d).collect();
            let wphi = op.lb.weighted_apply(&phi.values);
            let parts: Vec<S> = (0..phi.values.len()).map(|i| wr[i] * phi.values[i] - op.r[i] * wphi[i]).collect();
            s.times.push(t);
            s.psi_scale.push(scale);
            s.q.push((pairwise_sum(&q) * cell).to_f64_lossy());
            s.e.push(op.lb.dirichlet_energy(psi).to_f64_lossy());
            s.i.push(i_sup);
            s.sup_phi.push(phi.max().to_f64_lossy());
            s.min_phi.push(phi.min().to_f64_lossy());
            s.w1_norm.push(test_norm(&phi, &norm_bg)?.to_f64_lossy());
            s.w1_norm_dual.push(test_norm_with(&phi, &norm_bg, dual_q)?.to_f64_lossy());
            s.by_parts_gap.push((pairwise_sum(&parts) * cell).abs().to_f64_lossy());
            s.constant_gap.push((S::lit(at) * pairwise_sum(&wphi) * cell).abs().to_f64_lossy());
            s.phi.push(phi);
        }
        Ok(())
    };

    let recorded = |state_idx: usize| state_idx == terminal_idx || state_idx == 0 || (terminal_idx - state_idx) % params.record_stride == 0;
    let mut next_state = terminal_idx;
    let mut op_hi = Operator::at(trace, times[k_terminal])?;
    if recorded(next_state) {
        record(next_state, &op_hi, &y)?;
    }
    next_state = next_state.wrapping_sub(1);
    for k in (1..=k_terminal).rev() {
        let dt = trace.dt_history[k - 1];
        let t_hi = times[k];
        let t_lo = times[k - 1];
        let op_mid = Operator::at(trace, t_hi - 0.5 * dt)?;
        let op_lo = Operator::at(trace, t_lo)?;
        let before = y.iter().flatten().fold(S::zero(), |acc, v| acc.max(v.abs()));
        y = rk4_backward(&y, [&op_hi, &op_mid, &op_lo], S::lit(dt));
        let after = y.iter().flatten().fold(S::zero(), |acc, v| acc.max(v.abs()));
        if !after.is_finite() || after > S::lit(10.0) * before {
            return Err(Error::UnstableStep { t: t_lo, ratio: (after / before).to_f64_lossy() });
        }
        if next_state < trace.states.len() && trace.states[next_state].step == k - 1 {
            if recorded(next_state) {
                record(next_state, &op_lo, &y)?;
            }
            next_state = next_state.wrapping_sub(1);
        }
        op_hi = op_lo;
    }
    for s in &mut series {
        s.times.reverse();
        s.phi.reverse();
        s.psi_scale.reverse();
        s.q.reverse();
        s.e.reverse();
        s.i.reverse();
        s.sup_phi.reverse();
        s.min_phi.reverse();
        s.w1_norm.reverse();
        s.w1_norm_dual.reverse();
        s.by_parts_gap.reverse();
        s.constant_gap.reverse();
    }
    mass.reverse();
    Ok(AdjointBatch { params, series, mass })
}

/// Seeded nonnegative terminal data for monotonicity sweeps.
pub fn seeded_terminals<S: Real>(grid: crate::grid::GridSpec, seed: u64, count: usize) -> Vec<TestFunction<S>> {
    (0..count).map(|k| crate::distributional::random_nonnegative(grid, seed.wrapping_add(1000 + k as u64))).collect()
}

/// Default monotonicity constant `C_mono`.
pub const C_MONO: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub verdict: Verdict,
    pub tol_mono: f64,
    pub c_mono: f64,
    /// Smallest constant `C` for which `1e-6 + C (dt + dx²)` would absorb the
    /// largest observed decrease.
    pub observed_constant: f64,
    pub by_parts: Verdict,
    pub constant: Verdict,
}

/// `Q(t_{k+1}) ≥ Q(t_k) − tol_mono` and the two summation-by-parts identities.
pub fn monotone_series<S: Real>(series: &AdjointSeries<S>, c_mono: f64) -> MonotoneReport {
    let h = series.max_dt + series.dx * series.dx;
    let tol = 1e-6 + c_mono * h;
    let steps: Vec<f64> = series.q.windows(2).map(|w| w[1] - w[0]).collect();
    let worst_drop = steps.iter().fold(0.0f64, |m, d| m.max(-d));
    MonotoneReport {
        verdict: Verdict::from_margins("monotonicity", steps, tol),
        tol_mono: tol,
        c_mono,
        observed_constant: ((worst_drop - 1e-6).max(0.0)) / h,
        by_parts: Verdict::from_margins("by_parts_identity", series.by_parts_gap.iter().map(|v| -v), 1e-10),
        constant: Verdict::from_margins("constant_identity", series.constant_gap.iter().map(|v| -v), 1e-12),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub terminal_exact: bool,
    pub min_phi: f64,
    pub sup_phi_max: f64,
    pub w1_norm_max: f64,
    pub w1_norm_dual_max: f64,
    /// Terminal exactness and positivity.
    pub verdict: Verdict,
}

pub fn bounds_series<S: Real>(series: &AdjointSeries<S>) -> BoundsReport {
    let max = |v: &[f64]| v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    let terminal_exact = series.phi.last().is_some_and(|p| p.values == series.terminal.values);
    let min_phi = series.min_phi.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    let mut verdict = Verdict::from_margins("positivity", [min_phi], 1e-12);
    if !terminal_exact {
        verdict.pass = false;
        verdict.note = Some("terminal condition not reproduced exactly".into());
    }
    BoundsReport {
        terminal_exact,
        min_phi,
        sup_phi_max: max(&series.sup_phi),
        w1_norm_max: max(&series.w1_norm),
        w1_norm_dual_max: max(&series.w1_norm_dual),
        verdict,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassReport {
    pub i_max: f64,
    pub i_terminal: f64,
    /// `exp(∫_0^T max_x |R| dt)` from the trace's saved states.
    pub envelope: f64,
    pub verdict: Verdict,
}

pub fn mass_series<S: Real>(batch: &AdjointBatch<S>, trace: &FlowTrace<S>) -> MassReport {
    let i_max = batch.mass.iter().fold(f64::NEG_INFINITY, |m, (_, v)| m.max(*v));
    let i_terminal = batch.mass.last().map_or(f64::NAN, |(_, v)| *v);
    let t_terminal = batch.params.t_terminal;
    let states: Vec<_> = trace.states.iter().filter(|s| s.t <= t_terminal).collect();
    let mut integral = 0.0;
    for w in states.windows(2) {
        let r = |s: &crate::flow::FlowState<S>| s.max_scalar.abs().max(s.min_scalar.abs());
        integral += 0.5 * (r(w[0]) + r(w[1])) * (w[1].t - w[0].t);
    }
    let envelope = integral.exp();
    let mut verdict = Verdict::at_most("mass_envelope", i_max, envelope * (1.0 + 1e-9));
    if i_terminal != 1.0 {
        verdict.pass = false;
        verdict.note = Some(format!("I(T, T) = {i_terminal}"));
    }
    MassReport { i_max, i_terminal, envelope, verdict }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub e_terminal: f64,
    /// `max_t [log(E(t) + 1) − log(E(T) + 1)]`, the smallest admissible `C_E`.
    pub c_e: f64,
}

pub fn energy_series<S: Real>(series: &AdjointSeries<S>) -> EnergyReport {
    let e_terminal = series.e.last().copied().unwrap_or(0.0);
    let base = (e_terminal + 1.0).ln();
    let c_e = series.e.iter().map(|e| (e + 1.0).ln() - base).fold(f64::NEG_INFINITY, f64::max);
    EnergyReport { e_terminal, c_e }
}
