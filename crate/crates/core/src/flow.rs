//! The h-flow (Ricci–DeTurck flow against a fixed background) on the grid,
//! the homogeneous Einstein model as an exact ODE channel, and the checks
//! run along stored traces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cauchy_defect_from, cauchy_defect_nodal, covariant_gradient, curvature, fairness, pointwise_norm, volume, Background, MetricGeometry};
use crate::grid::{sym_index, sym_len, CovTensorField, MetricField, SymTensorField, VectorField};
use crate::jet::{FieldJet, LocalGeometry, Tensor3, Tensor4};
use crate::linalg::{self, Mat};
use crate::scalar::{pairwise_sum, Real};
use crate::verdict::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub scheme: Scheme,
    pub cfl: f64,
    pub t_end: f64,
    /// Scalar curvature lower bound carried along the flow.
    pub a: f64,
    pub save_stride: usize,
    /// Sobolev exponent of the decay monitors.
    pub p: f64,
    pub delta_fair: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { scheme: Scheme::Rk4, cfl: 0.1, t_end: 0.005, a: 0.0, save_stride: 1, p: 4.0, delta_fair: 0.5 }
    }
}

impl FlowParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 0.5) {
            return Err(Error::BadParameter(format!("cfl must lie in (0, 0.5], got {}", self.cfl)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::BadParameter(format!("t_end must be finite and nonnegative, got {}", self.t_end)));
        }
        if self.save_stride == 0 {
            return Err(Error::BadParameter("save_stride must be positive".into()));
        }
        if !(self.delta_fair > 0.0) {
            return Err(Error::BadParameter(format!("delta_fair must be positive, got {}", self.delta_fair)));
        }
        HomogeneousModel { n, a: self.a }.check(self.t_end)
    }
}

/// `a(t) = a (1 − 2at/n)⁻¹`.
pub fn a_of_t(a: f64, n: usize, t: f64) -> Result<f64> {
    HomogeneousModel { n, a }.scalar(t)
}

/// Einstein metric `g(t) = s(t) g₀` with `Ric(g₀) = (a/n) g₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousModel {
    pub n: usize,
    pub a: f64,
}

impl HomogeneousModel {
    pub fn collapse_time(&self) -> Option<f64> {
        (self.a > 0.0).then(|| self.n as f64 / (2.0 * self.a))
    }

    pub fn check(&self, t: f64) -> Result<()> {
        let factor = 1.0 - 2.0 * self.a * t / self.n as f64;
        if !(factor > 0.0) {
            return Err(Error::CollapseTime { t, factor });
        }
        Ok(())
    }

    /// `s(t) = 1 − 2at/n`
    pub fn scale(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(1.0 - 2.0 * self.a * t / self.n as f64)
    }

    /// `R(t) = a / s(t)`
    pub fn scalar(&self, t: f64) -> Result<f64> {
        Ok(self.a / self.scale(t)?)
    }

    /// `Vol(t) / Vol(0) = s(t)^{n/2}`
    pub fn volume_ratio(&self, t: f64) -> Result<f64> {
        Ok(self.scale(t)?.powf(self.n as f64 / 2.0))
    }
}

/// `(s(t), R(t))` of the homogeneous model.
pub fn homogeneous_flow(model: HomogeneousModel, t: f64) -> Result<(f64, f64)> {
    Ok((model.scale(t)?, model.scalar(t)?))
}

/// RK4 integration of `dR/dt = (2/n) R²` from `R(0) = a`; returns `(t, R)`
/// at every step.
pub fn homogeneous_rk4(model: HomogeneousModel, t_end: f64, dt: f64) -> Vec<(f64, f64)> {
    let c = 2.0 / model.n as f64;
    let f = |r: f64| c * r * r;
    let steps = (t_end / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut r = model.a;
    out.push((0.0, r));
    for k in 0..steps {
        let k1 = f(r);
        let k2 = f(r + 0.5 * dt * k1);
        let k3 = f(r + 0.5 * dt * k2);
        let k4 = f(r + dt * k3);
        r += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(((k + 1) as f64 * dt, r));
    }
    out
}

/// Where a trace takes its scalar curvature from.
#[derive(Debug, Clone)]
pub enum CurvatureSource<S> {
    /// Grid curvature of the states, flowed against this background.
    Grid(Background<S>),
    /// Closed-form curvature of the homogeneous model.
    Homogeneous(HomogeneousModel),
}

/// One saved state of a flow and its monitors.
#[derive(Debug, Clone)]
pub struct FlowState<S> {
    pub t: f64,
    /// Index into the step history.
    pub step: usize,
    pub g: MetricField<S>,
    pub vol: f64,
    pub min_scalar: f64,
    pub max_scalar: f64,
    pub max_curv_proxy: f64,
    /// `sup |∇̃g|_h`
    pub sup_grad_g: f64,
    /// `sup |∇̃²g|_h`
    pub sup_grad2_g: f64,
    pub einstein_defect: f64,
    /// Smallest nodal `2|Ric|² − (2/n)R²`.
    pub cauchy_min: f64,
    /// `∫ |∇̃g|_h^p dμ_h`
    pub grad_p_integral: f64,
}

#[derive(Debug, Clone)]
pub struct FlowTrace<S> {
    pub params: FlowParams,
    pub source: CurvatureSource<S>,
    pub states: Vec<FlowState<S>>,
    /// Every step size taken, in order.
    pub dt_history: Vec<f64>,
}

impl<S: Real> FlowTrace<S> {
    pub fn dim(&self) -> usize {
        self.states[0].g.grid().dim
    }

    pub fn spacing(&self) -> f64 {
        self.states[0].g.grid().spacing()
    }

    pub fn t_final(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.t)
    }

    /// Step start times, `dt_history.len() + 1` entries.
    pub fn step_times(&self) -> Vec<f64> {
        let mut times = Vec::with_capacity(self.dt_history.len() + 1);
        let mut t = 0.0;
        times.push(t);
        for dt in &self.dt_history {
            t += dt;
            times.push(t);
        }
        times
    }

    /// Index of the saved state at exactly time `t`.
    pub fn saved_index(&self, t: f64) -> Option<usize> {
        self.states.iter().position(|s| s.t == t)
    }

    /// Metric at time `t`, linearly interpolated between saved states.
    pub fn metric_at(&self, t: f64) -> Result<MetricField<S>> {
        let last = self.states.len() - 1;
        if !(t >= 0.0 && t <= self.states[last].t) {
            return Err(Error::BadParameter(format!("time {t} outside the trace window")));
        }
        let hi = self.states.iter().position(|s| s.t >= t).unwrap_or(last);
        if self.states[hi].t == t || hi == 0 {
            return Ok(self.states[hi].g.clone());
        }
        let (a, b) = (&self.states[hi - 1], &self.states[hi]);
        let w = S::lit((t - a.t) / (b.t - a.t));
        let blended = a.g.tensor().axpy(w, &b.g.tensor().sub(a.g.tensor())?)?;
        MetricField::new(blended)
    }

    pub fn background(&self) -> Option<&Background<S>> {
        match &self.source {
            CurvatureSource::Grid(bg) => Some(bg),
            CurvatureSource::Homogeneous(_) => None,
        }
    }
}

/// `W^k = g^{pq}(Γ^k_pq − Γ̃^k_pq)` at one node.
pub fn local_drift<S: Real>(l: &LocalGeometry<S>, gt: &Tensor3<S>) -> [S; linalg::MAX_DIM] {
    let n = l.n;
    let mut w = [S::zero(); linalg::MAX_DIM];
    for (k, wk) in w.iter_mut().enumerate().take(n) {
        for p in 0..n {
            for q in 0..n {
                *wk = *wk + l.ginv[p][q] * (l.gamma[k][p][q] - gt[k][p][q]);
            }
        }
    }
    w
}

/// `−2R_ij + ∇_iV_j + ∇_jV_i` with `V_j = g_jk W^k`, at one node.
pub fn local_rhs<S: Real>(l: &LocalGeometry<S>, gt: &Tensor3<S>, dgt: &Tensor4<S>) -> Mat<S> {
    let n = l.n;
    let w = local_drift(l, gt);
    // ∂_i W^k
    let mut dw = linalg::zeros::<S>();
    for i in 0..n {
        for k in 0..n {
            let mut s = S::zero();
            for p in 0..n {
                for q in 0..n {
                    s = s + l.dginv[i][p][q] * (l.gamma[k][p][q] - gt[k][p][q]) + l.ginv[p][q] * (l.dgamma[i][k][p][q] - dgt[i][k][p][q]);
                }
            }
            dw[i][k] = s;
        }
    }
    let mut v = [S::zero(); linalg::MAX_DIM];
    for j in 0..n {
        for k in 0..n {
            v[j] = v[j] + l.g[j][k] * w[k];
        }
    }
    // ∇_i V_j = ∂_i(g_jk W^k) − Γ^m_ij V_m
    let mut nv = linalg::zeros::<S>();
    for i in 0..n {
        for j in 0..n {
            let mut s = S::zero();
            for k in 0..n {
                s = s + l.dg[i][j][k] * w[k] + l.g[j][k] * dw[i][k];
            }
            for m in 0..n {
                s = s - l.gamma[m][i][j] * v[m];
            }
            nv[i][j] = s;
        }
    }
    let two = S::lit(2.0);
    let mut out = linalg::zeros::<S>();
    for i in 0..n {
        for j in 0..n {
            out[i][j] = -two * l.ricci[i][j] + nv[i][j] + nv[j][i];
        }
    }
    out
}

struct RhsEval<S> {
    rhs: SymTensorField<S>,
    max_curv_proxy: S,
}

fn evaluate_rhs<S: Real>(g: &SymTensorField<S>, h: &Background<S>, with_proxy: bool) -> Result<RhsEval<S>> {
    let grid = g.grid;
    let n = grid.dim;
    let jet = FieldJet::new(g);
    let per_node: Vec<Option<(Mat<S>, S)>> = (0..grid.nodes())
        .into_par_iter()
        .map(|node| {
            let l = LocalGeometry::from_jet(&jet.local(g, node))?;
            let m = local_rhs(&l, h.gamma_at(node), h.dgamma_at(node));
            let proxy = if with_proxy { l.riemann_frobenius() } else { S::zero() };
            Some((m, proxy))
        })
        .collect();
    let mut rhs = SymTensorField::zeros(grid);
    let mut proxy = S::zero();
    for (node, entry) in per_node.into_iter().enumerate() {
        let (m, p) = entry.ok_or(Error::SingularMetric { node, min_eigenvalue: 0.0 })?;
        for i in 0..n {
            for j in i..n {
                rhs.comps[sym_index(n, i, j)][node] = m[i][j];
            }
        }
        proxy = proxy.max(p);
    }
    Ok(RhsEval { rhs, max_curv_proxy: proxy })
}

/// Right-hand side of the h-flow, assembled in tensor form.
pub fn h_flow_rhs<S: Real>(g: &MetricField<S>, h: &Background<S>) -> Result<SymTensorField<S>> {
    crate::grid::check_same_grid(&g.grid(), &h.grid())?;
    Ok(evaluate_rhs(g.tensor(), h, false)?.rhs)
}

/// DeTurck vector field `W^k = g^{pq}(Γ^k_pq − Γ̃^k_pq)`.
pub fn deturck_field<S: Real>(g: &MetricField<S>, h: &Background<S>) -> Result<VectorField<S>> {
    let geo = MetricGeometry::new(g)?;
    Ok(deturck_from(&geo, h))
}

pub fn deturck_from<S: Real>(geo: &MetricGeometry<S>, h: &Background<S>) -> VectorField<S> {
    let n = geo.grid.dim;
    let mut out = VectorField::zeros(geo.grid);
    for (node, l) in geo.nodes.iter().enumerate() {
        let w = local_drift(l, h.gamma_at(node));
        for k in 0..n {
            out.comps[k][node] = w[k];
        }
    }
    out
}

/// Scalar curvature and DeTurck field in one pass over the nodes.
pub fn scalar_and_drift<S: Real>(g: &MetricField<S>, h: &Background<S>) -> Result<(Vec<S>, VectorField<S>)> {
    let grid = g.grid();
    let n = grid.dim;
    let jet = FieldJet::new(g.tensor());
    let per_node: Vec<Option<(S, [S; linalg::MAX_DIM])>> = (0..grid.nodes())
        .into_par_iter()
        .map(|node| {
            let l = LocalGeometry::from_jet(&jet.local(g.tensor(), node))?;
            Some((l.scalar, local_drift(&l, h.gamma_at(node))))
        })
        .collect();
    let mut r = Vec::with_capacity(grid.nodes());
    let mut w = VectorField::zeros(grid);
    for (node, entry) in per_node.into_iter().enumerate() {
        let (s, d) = entry.ok_or(Error::SingularMetric { node, min_eigenvalue: 0.0 })?;
        r.push(s);
        for k in 0..n {
            w.comps[k][node] = d[k];
        }
    }
    Ok((r, w))
}

/// `Vol(g)^{−2/n} g`, the unit-volume rescaling.
pub fn normalize<S: Real>(g: &MetricField<S>) -> Result<MetricField<S>> {
    let n = g.grid().dim;
    let vol = volume(g);
    if !(vol > S::zero()) || !vol.is_finite() {
        return Err(Error::NonFinite("volume"));
    }
    g.scaled(vol.powf(-S::lit(2.0) / S::from_usize_lossy(n)))
}

/// `∫ |∇̃g|_h^p dμ_h`
pub fn gradient_p_integral<S: Real>(g: &MetricField<S>, h: &Background<S>, p: f64) -> Result<f64> {
    let grad = covariant_gradient(&CovTensorField::from_sym(g.tensor()), h)?;
    Ok(p_integral(&pointwise_norm(&grad, h), h, p))
}

fn p_integral<S: Real>(norm: &[S], h: &Background<S>, p: f64) -> f64 {
    let ps = S::lit(p);
    let weighted: Vec<S> = norm.iter().zip(&h.sqrt_det).map(|(v, s)| v.powf(ps) * *s).collect();
    (pairwise_sum(&weighted) * h.grid().cell_volume::<S>()).to_f64_lossy()
}

fn summarize<S: Real>(g: &MetricField<S>, source: &CurvatureSource<S>, t: f64, step: usize, p: f64) -> Result<FlowState<S>> {
    let bundle = curvature(g)?;
    let einstein = bundle.traceless_norm_sq.values.iter().fold(S::zero(), |m, v| m.max(v.max(S::zero()).sqrt()));
    let vol = volume(g).to_f64_lossy();
    let n = g.grid().dim;
    match source {
        CurvatureSource::Grid(bg) => {
            let grad = covariant_gradient(&CovTensorField::from_sym(g.tensor()), bg)?;
            let grad_norm = pointwise_norm(&grad, bg);
            let hess_norm = pointwise_norm(&covariant_gradient(&grad, bg)?, bg);
            let sup = |v: &[S]| v.iter().fold(S::zero(), |m, x| m.max(*x)).to_f64_lossy();
            Ok(FlowState {
                t,
                step,
                g: g.clone(),
                vol,
                min_scalar: bundle.scalar.min().to_f64_lossy(),
                max_scalar: bundle.scalar.max().to_f64_lossy(),
                max_curv_proxy: bundle.curv_proxy.max().to_f64_lossy(),
                sup_grad_g: sup(&grad_norm),
                sup_grad2_g: sup(&hess_norm),
                einstein_defect: einstein.to_f64_lossy(),
                cauchy_min: cauchy_defect_from(&bundle).min().to_f64_lossy(),
                grad_p_integral: p_integral(&grad_norm, bg, p),
            })
        }
        CurvatureSource::Homogeneous(model) => {
            let r = model.scalar(t)?;
            let gm = g.matrix(0);
            let mut ric = linalg::zeros::<S>();
            for i in 0..n {
                for j in 0..n {
                    ric[i][j] = S::lit(r / n as f64) * gm[i][j];
                }
            }
            let cauchy = cauchy_defect_nodal(&ric, &gm, n).ok_or(Error::SingularMetric { node: 0, min_eigenvalue: 0.0 })?;
            Ok(FlowState {
                t,
                step,
                g: g.clone(),
                vol,
                min_scalar: r,
                max_scalar: r,
                max_curv_proxy: bundle.curv_proxy.max().to_f64_lossy(),
                sup_grad_g: 0.0,
                sup_grad2_g: 0.0,
                einstein_defect: einstein.to_f64_lossy(),
                cauchy_min: cauchy.to_f64_lossy(),
                grad_p_integral: 0.0,
            })
        }
    }
}

fn stage<S: Real>(g: &SymTensorField<S>, k: &SymTensorField<S>, c: S, t: f64) -> Result<SymTensorField<S>> {
    let next = g.axpy(c, k)?;
    if !next.is_finite() {
        return Err(Error::BlowUp { t, reason: "non-finite metric".into() });
    }
    Ok(next)
}

fn as_metric<S: Real>(t: SymTensorField<S>, time: f64) -> Result<MetricField<S>> {
    MetricField::new(t).map_err(|e| match e {
        Error::SingularMetric { node, min_eigenvalue } => {
            Error::BlowUp { t: time, reason: format!("lost positive definiteness at node {node} (eigenvalue {min_eigenvalue:e})") }
        }
        other => other,
    })
}

fn step<S: Real>(g: &MetricField<S>, h: &Background<S>, dt: f64, scheme: Scheme, t: f64) -> Result<(MetricField<S>, S)> {
    let d = S::lit(dt);
    let half = S::lit(0.5 * dt);
    let k1 = evaluate_rhs(g.tensor(), h, true)?;
    let next = match scheme {
        Scheme::Euler => stage(g.tensor(), &k1.rhs, d, t)?,
        Scheme::Rk4 => {
            let g2 = stage(g.tensor(), &k1.rhs, half, t)?;
            let k2 = evaluate_rhs(&g2, h, false)?.rhs;
            let g3 = stage(g.tensor(), &k2, half, t)?;
            let k3 = evaluate_rhs(&g3, h, false)?.rhs;
            let g4 = stage(g.tensor(), &k3, d, t)?;
            let k4 = evaluate_rhs(&g4, h, false)?.rhs;
            let two = S::lit(2.0);
            let mut combo = k1.rhs.clone();
            for (c, ((b, cc), dd)) in combo.comps.iter_mut().zip(k2.comps.iter().zip(&k3.comps).zip(&k4.comps)) {
                for (((x, y), z), w) in c.iter_mut().zip(b).zip(cc).zip(dd) {
                    *x = *x + two * *y + two * *z + *w;
                }
            }
            stage(g.tensor(), &combo, S::lit(dt / 6.0), t)?
        }
    };
    Ok((as_metric(next, t + dt)?, k1.max_curv_proxy))
}

/// Integrates the h-flow from `g0` against `h` up to `params.t_end`.
pub fn run_h_flow<S: Real>(g0: &MetricField<S>, h: &MetricField<S>, params: FlowParams) -> Result<FlowTrace<S>> {
    crate::grid::check_same_grid(&g0.grid(), &h.grid())?;
    let grid = g0.grid();
    params.validate(grid.dim)?;
    let fair = fairness(g0, h)?.to_f64_lossy();
    if fair > 1.0 + params.delta_fair {
        return Err(Error::NotFair { fairness: fair, delta_fair: params.delta_fair });
    }
    let bg = Background::new(h)?;
    let dx = grid.spacing::<f64>();
    let source = CurvatureSource::Grid(bg);
    let mut states = vec![summarize(g0, &source, 0.0, 0, params.p)?];
    let CurvatureSource::Grid(bg) = &source else { unreachable!() };
    let mut dt_history = Vec::new();
    let mut g = g0.clone();
    let mut t = 0.0;
    let eps = 1e-12 * params.t_end.max(f64::MIN_POSITIVE);
    while params.t_end - t > eps {
        let dt = (params.cfl * dx * dx * g.min_eigenvalue().to_f64_lossy()).min(params.t_end - t);
        let (next, proxy) = step(&g, bg, dt, params.scheme, t)?;
        if proxy.to_f64_lossy() > 1.0 / (dx * dx) {
            return Err(Error::BlowUp { t, reason: format!("curvature proxy {:e} exceeds 1/dx²", proxy.to_f64_lossy()) });
        }
        let ratio = (next.max_abs() / g.max_abs()).to_f64_lossy();
        if ratio > 10.0 {
            return Err(Error::UnstableStep { t, ratio });
        }
        t += dt;
        dt_history.push(dt);
        g = next;
        let steps = dt_history.len();
        if steps % params.save_stride == 0 || params.t_end - t <= eps {
            states.push(summarize(&g, &source, t, steps, params.p)?);
        }
    }
    Ok(FlowTrace { params, source, states, dt_history })
}

/// Trace of the homogeneous model `s(t) g₀` with uniform steps `dt`.
pub fn homogeneous_trace<S: Real>(model: HomogeneousModel, g0: &MetricField<S>, params: FlowParams, dt: f64) -> Result<FlowTrace<S>> {
    params.validate(model.n)?;
    if g0.grid().dim != model.n {
        return Err(Error::BadParameter(format!("model dimension {} does not match grid dimension {}", model.n, g0.grid().dim)));
    }
    if !(dt > 0.0) {
        return Err(Error::BadParameter(format!("dt must be positive, got {dt}")));
    }
    let source = CurvatureSource::Homogeneous(model);
    let steps = (params.t_end / dt).ceil() as usize;
    let mut states = vec![summarize(g0, &source, 0.0, 0, params.p)?];
    let mut dt_history = Vec::with_capacity(steps);
    for k in 1..=steps {
        let t = (k as f64 * dt).min(params.t_end);
        dt_history.push(t - (k - 1) as f64 * dt);
        if k % params.save_stride == 0 || k == steps {
            let g = g0.scaled(S::lit(model.scale(t)?))?;
            states.push(summarize(&g, &source, t, k, params.p)?);
        }
    }
    Ok(FlowTrace { params, source, states, dt_history })
}

fn trace_tol(trace_is_model: bool, grid_tol: f64) -> f64 {
    if trace_is_model {
        1e-8
    } else {
        grid_tol
    }
}

/// `Vol(t) ≤ Vol(0) (1 − 2at/n)^{n/2}` along the trace; equality for the model.
pub fn volume_law_check<S: Real>(trace: &FlowTrace<S>, a: f64) -> Result<Verdict> {
    let n = trace.dim();
    let dx = trace.spacing();
    let model = HomogeneousModel { n, a };
    let homogeneous = matches!(trace.source, CurvatureSource::Homogeneous(_));
    let vol0 = trace.states[0].vol;
    let mut margins = Vec::with_capacity(trace.states.len());
    for s in &trace.states {
        let law = vol0 * model.volume_ratio(s.t)?;
        let slack = law - s.vol;
        margins.push(if homogeneous { -slack.abs() } else { slack });
    }
    Ok(Verdict::from_margins("volume_law", margins, trace_tol(homogeneous, 1e-4 + 5.0 * dx * dx)))
}

/// `min_x R(x, t) ≥ a(t) − tol` along the trace.
pub fn lower_bound_check<S: Real>(trace: &FlowTrace<S>, a: f64) -> Result<Verdict> {
    let n = trace.dim();
    let dx = trace.spacing();
    let margins = trace.states.iter().map(|s| Ok(s.min_scalar - a_of_t(a, n, s.t)?)).collect::<Result<Vec<f64>>>()?;
    Ok(Verdict::from_margins("lower_bound", margins, 1e-3 * (1.0 + a.abs()) + 10.0 * dx * dx))
}

/// Compensated derivative series along a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub p: f64,
    /// Exponents of `t` applied to `sup|∇̃g|`, `sup|∇̃²g|` and the `|Rm|` proxy.
    pub exponents: [f64; 3],
    pub times: Vec<f64>,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub rm: Vec<f64>,
    pub t_burn: f64,
    /// Maxima of the three series over `t ≥ t_burn`.
    pub running_max: [f64; 3],
    /// `∫|∇̃ĝ|^p dμ_h` for the reference metric `ĝ`.
    pub w1p_reference: f64,
    /// `max_t ∫|∇̃g(t)|^p dμ_h / ∫|∇̃ĝ|^p dμ_h`
    pub w1p_ratio_max: f64,
    pub w1p: Verdict,
}

/// `reference` is `∫|∇̃ĝ|^p dμ_h` for the unmollified datum `ĝ`; `None`
/// compares against the first saved state.
pub fn decay_report<S: Real>(trace: &FlowTrace<S>, p: f64, reference: Option<f64>) -> DecayReport {
    let n = trace.dim() as f64;
    let exponents = [n / (2.0 * p), n / (4.0 * p) + 0.75, n / (4.0 * p) + 0.75];
    let t_burn = 10.0 * trace.dt_history.first().copied().unwrap_or(0.0);
    let times: Vec<f64> = trace.states.iter().map(|s| s.t).collect();
    let comp = |f: &dyn Fn(&FlowState<S>) -> f64, e: f64| trace.states.iter().map(|s| s.t.powf(e) * f(s)).collect::<Vec<f64>>();
    let grad = comp(&|s| s.sup_grad_g, exponents[0]);
    let hess = comp(&|s| s.sup_grad2_g, exponents[1]);
    let rm = comp(&|s| s.max_curv_proxy, exponents[2]);
    let running = |v: &[f64]| v.iter().zip(&times).filter(|(_, t)| **t >= t_burn).fold(0.0f64, |m, (x, _)| m.max(*x));
    let base = reference.unwrap_or(trace.states[0].grad_p_integral);
    let ratio = trace
        .states
        .iter()
        .map(|s| if base > 0.0 { s.grad_p_integral / base } else if s.grad_p_integral > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0f64, f64::max);
    let margins = trace.states.iter().map(|s| 10.0 * base - s.grad_p_integral);
    let w1p = Verdict::from_margins("w1p_growth", margins, 1e-12 * (1.0 + base));
    DecayReport { p, exponents, running_max: [running(&grad), running(&hess), running(&rm)], times, grad, hess, rm, t_burn, w1p_reference: base, w1p_ratio_max: ratio, w1p }
}

/// Running maxima may grow by less than 2× from the coarse to the fine grid.
pub fn refinement_stable(check: &str, coarse: &[f64], fine: &[f64]) -> Verdict {
    let margins = coarse.iter().zip(fine).map(|(c, f)| 2.0 * c - f);
    Verdict::from_margins(check, margins, 0.0)
}

/// `max_{i<j} ‖normalize(g_i) − normalize(g_j)‖_∞` over saved states.
pub fn self_similarity<S: Real>(trace: &FlowTrace<S>) -> Result<f64> {
    let normalized = trace.states.iter().map(|s| normalize(&s.g)).collect::<Result<Vec<_>>>()?;
    let m = sym_len(trace.dim());
    let mut worst = S::zero();
    for i in 0..normalized.len() {
        for j in i + 1..normalized.len() {
            for c in 0..m {
                for (x, y) in normalized[i].comps[c].iter().zip(&normalized[j].comps[c]) {
                    worst = worst.max((*x - *y).abs());
                }
            }
        }
    }
    Ok(worst.to_f64_lossy())
}

/// For homogeneous traces the normalized states must coincide; otherwise the
/// value is reported only.
pub fn self_similarity_check<S: Real>(trace: &FlowTrace<S>) -> Result<Verdict> {
    let value = self_similarity(trace)?;
    Ok(match trace.source {
        CurvatureSource::Homogeneous(_) => Verdict::at_most("self_similarity", value, 1e-10),
        CurvatureSource::Grid(_) => Verdict::from_margins("self_similarity", [0.0], 0.0).with_note(format!("diagnostic value {value:e}")),
    })
}

/// Smallest nodal `2|Ric|² − (2/n)R²` over all saved states.
pub fn cauchy_check<S: Real>(trace: &FlowTrace<S>) -> Verdict {
    Verdict::from_margins("cauchy_defect", trace.states.iter().map(|s| s.cauchy_min), 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
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

    #[test]
    fn model_closed_forms() {
        let m = HomogeneousModel { n: 2, a: -1.0 };
        assert_eq!(homogeneous_flow(m, 1.0).unwrap(), (2.0, -0.5));
        let m = HomogeneousModel { n: 4, a: -2.0 };
        let (s, r) = homogeneous_flow(m, 0.5).unwrap();
        assert_eq!(s, 1.5);
        assert!((r + 4.0 / 3.0).abs() < 1e-15);
        let m = HomogeneousModel { n: 2, a: 0.0 };
        assert_eq!(homogeneous_flow(m, 3.0).unwrap(), (1.0, 0.0));
        assert!(matches!(HomogeneousModel { n: 2, a: 1.0 }.scale(1.0), Err(Error::CollapseTime { .. })));
        assert_eq!(a_of_t(-1.0, 2, 0.0).unwrap(), -1.0);
    }

    #[test]
    fn rk4_matches_closed_form() {
        for n in 2..=4 {
            let m = HomogeneousModel { n, a: -1.0 };
            for (t, r) in homogeneous_rk4(m, 1.0, 1e-4) {
                assert!((r - m.scalar(t).unwrap()).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn rhs_vanishes_on_constant_metrics() {
        let grid = GridSpec::new(2, 16).unwrap();
        let h = Background::new(&MetricField::flat(grid)).unwrap();
        assert_eq!(h_flow_rhs(&MetricField::flat(grid), &h).unwrap().max_abs(), 0.0);
        let g = MetricField::new(SymTensorField::scalar_identity(grid, 3.0)).unwrap();
        assert_eq!(h_flow_rhs(&g, &h).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn flat_flow_is_a_fixed_point() {
        let grid = GridSpec::new(2, 16).unwrap();
        let flat = MetricField::<f64>::flat(grid);
        let tr = run_h_flow(&flat, &flat, FlowParams { t_end: 0.01, save_stride: 5, ..Default::default() }).unwrap();
        assert!(tr.states.iter().all(|s| s.g.tensor().sub(flat.tensor()).unwrap().max_abs() <= 1e-12));
        assert_eq!(tr.states.last().unwrap().t, tr.step_times().last().copied().unwrap());
        assert!(lower_bound_check(&tr, 0.0).unwrap().pass);
        assert!(volume_law_check(&tr, 0.0).unwrap().pass);
        let d = decay_report(&tr, 4.0, None);
        assert!(d.grad.iter().chain(&d.hess).chain(&d.rm).all(|v| *v == 0.0));
        assert_eq!(self_similarity(&tr).unwrap(), 0.0);
    }

    #[test]
    fn unfair_background_is_rejected() {
        let grid = GridSpec::new(2, 16).unwrap();
        let g = MetricField::new(SymTensorField::scalar_identity(grid, 3.0)).unwrap();
        let err = run_h_flow(&g, &MetricField::flat(grid), FlowParams::default()).unwrap_err();
        assert!(matches!(err, Error::NotFair { .. }));
    }

    #[test]
    fn normalize_examples() {
        let grid = GridSpec::new(2, 8).unwrap();
        let g = MetricField::new(SymTensorField::scalar_identity(grid, 4.0)).unwrap();
        let out = normalize(&g).unwrap();
        assert!(out.tensor().sub(MetricField::flat(grid).tensor()).unwrap().max_abs() < 1e-15);
        let bump = conformal(GridSpec::new(2, 16).unwrap(), 0.2);
        assert!((volume(&normalize(&bump).unwrap()) - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn homogeneous_trace_equality_cases() {
        let grid = GridSpec::new(2, 8).unwrap();
        let model = HomogeneousModel { n: 2, a: -2.0 };
        let params = FlowParams { t_end: 1.0, a: -2.0, save_stride: 10, ..Default::default() };
        let tr = homogeneous_trace(model, &MetricField::<f64>::flat(grid), params, 0.01).unwrap();
        let last = tr.states.last().unwrap();
        assert!((last.t - 1.0).abs() < 1e-12 && (last.vol - 3.0).abs() < 1e-12);
        let v = volume_law_check(&tr, -2.0).unwrap();
        assert!(v.pass && v.worst_margin.abs() <= 1e-8);
        let lb = lower_bound_check(&tr, -2.0).unwrap();
        assert!(lb.pass && lb.worst_margin.abs() <= 1e-12);
        assert!(self_similarity_check(&tr).unwrap().pass);
        assert!(tr.states.iter().all(|s| s.einstein_defect <= 1e-12));
    }

    #[test]
    fn conformal_flow_smooths_and_respects_cauchy() {
        let grid = GridSpec::new(2, 32).unwrap();
        let g0 = conformal(grid, 0.1);
        let tr = run_h_flow(&g0, &MetricField::flat(grid), FlowParams { t_end: 0.002, save_stride: 4, ..Default::default() }).unwrap();
        let first = &tr.states[0];
        let last = tr.states.last().unwrap();
        assert!(last.sup_grad_g < first.sup_grad_g);
        assert!(cauchy_check(&tr).pass);
        assert!(self_similarity(&tr).unwrap() > 0.0);
        let mid = tr.metric_at(0.5 * (tr.states[1].t + tr.states[2].t)).unwrap();
        let avg = tr.states[1].g.tensor().axpy(1.0, tr.states[2].g.tensor()).unwrap().scaled(0.5);
        assert!(mid.tensor().sub(&avg).unwrap().max_abs() < 1e-14);
    }
}
