//! Acceptance suite: eleven criteria evaluated over a shared, lazily built set
//! of flows and backward solves.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adjoint::{backward_solve, bounds_series, energy_series, monotone_series, seeded_terminals, AdjointBatch, AdjointParams, C_MONO};
use crate::distributional::{bump, default_family, Pairing, TestFunction, DEFAULT_FAMILY_SEED, DEFAULT_P};
use crate::error::Result;
use crate::flow::{
    cauchy_check, decay_report, homogeneous_rk4, homogeneous_trace, lower_bound_check, refinement_stable, run_h_flow, self_similarity_check, volume_law_check, FlowParams, FlowTrace,
    HomogeneousModel,
};
use crate::geometry::{einstein_defect, integrate, Background, MetricGeometry};
use crate::grid::{GridSpec, MetricField, ScalarField, SymTensorField};
use crate::linalg;
use crate::mollifier::{continuity_probe_with, fair_background, mollify, w1p_distance, MollifyParams};
use crate::pipeline::{prepare_flow, FlowRun, GridConfig, RunManifest};
use crate::scenario::{generate, Scenario};
use crate::verdict::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Quick,
    Full,
}

impl Suite {
    pub fn criteria(self) -> Vec<u8> {
        match self {
            Suite::Quick => vec![1, 3, 4, 8],
            Suite::Full => (1..=11).collect(),
        }
    }
}

/// Deliberate defects used to confirm the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Negates the scalar part `F` of every pairing.
    FlipF,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub suite: Suite,
    /// Runs at N = 32/64 instead of 64/128. The fixed tolerances of criteria
    /// 1, 2 and 9 and of the Fourier oracle in 7 are multiplied by 4, the dx²
    /// ratio; every other tolerance already scales with dx.
    pub half_resolution: bool,
    pub mutation: Option<Mutation>,
    /// Restricts the run to these criteria.
    pub only: Option<Vec<u8>>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { suite: Suite::Full, half_resolution: false, mutation: None, only: None }
    }
}

impl VerifyOptions {
    pub fn quick() -> Self {
        Self { suite: Suite::Quick, ..Self::default() }
    }

    fn selected(&self) -> Vec<u8> {
        let ids = self.suite.criteria();
        match &self.only {
            Some(only) => ids.into_iter().filter(|id| only.contains(id)).collect(),
            None => ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub module: &'static str,
    pub pass: bool,
    pub checks: Vec<Verdict>,
    pub seconds: f64,
}

impl CriterionResult {
    /// One summary line, followed by one line per failing check.
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![format!("[{}] {:>2} {} ({}) {:.1}s", if self.pass { "PASS" } else { "FAIL" }, self.id, self.title, self.module, self.seconds)];
        for c in self.checks.iter().filter(|c| !c.pass) {
            out.push(format!(
                "       {}: {} check {} margin {:e} tolerance {:e}{}",
                self.module,
                self.title,
                c.check,
                c.worst_margin,
                c.tolerance,
                c.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default()
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub half_resolution: bool,
    pub mutation: Option<Mutation>,
    pub coarse: usize,
    pub fine: usize,
    pub tolerance_scale: f64,
    pub results: Vec<CriterionResult>,
    pub pass: bool,
    pub seconds: f64,
}

impl VerifyReport {
    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self.results.iter().flat_map(|r| r.lines()).collect();
        let passed = self.results.iter().filter(|r| r.pass).count();
        out.push(format!("{passed}/{} criteria passed in {:.1}s (N = {}/{})", self.results.len(), self.seconds, self.coarse, self.fine));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Tent,
    Random,
}

const KEYS: [Key; 2] = [Key::Tent, Key::Random];
const RANDOM_SEED: u64 = 1;
const TERMINAL_SEED: u64 = 7;
const TERMINALS: usize = 8;

impl Key {
    fn scenario(self) -> Scenario {
        match self {
            Key::Tent => Scenario::tent(),
            Key::Random => Scenario::random_w1p(RANDOM_SEED),
        }
    }

    fn label(self) -> &'static str {
        match self {
            Key::Tent => "tent",
            Key::Random => "random_w1p",
        }
    }
}

struct Context {
    mutation: Option<Mutation>,
    coarse: usize,
    fine: usize,
    scale: f64,
    flows: BTreeMap<(Key, usize), FlowRun>,
    adjoints: BTreeMap<(Key, usize), AdjointBatch<f64>>,
    homogeneous: BTreeMap<usize, FlowTrace<f64>>,
}

impl Context {
    fn ensure_flow(&mut self, key: Key, n: usize) -> Result<()> {
        if !self.flows.contains_key(&(key, n)) {
            let run = prepare_flow(&RunManifest::new(key.scenario(), GridConfig { dim: 2, n }))?;
            self.flows.insert((key, n), run);
        }
        Ok(())
    }

    fn flow(&mut self, key: Key, n: usize) -> Result<&FlowRun> {
        self.ensure_flow(key, n)?;
        Ok(&self.flows[&(key, n)])
    }

    fn ensure_adjoint(&mut self, key: Key, n: usize) -> Result<()> {
        if !self.adjoints.contains_key(&(key, n)) {
            self.ensure_flow(key, n)?;
            let run = &self.flows[&(key, n)];
            let grid = run.trace.states[0].g.grid();
            let params = AdjointParams { t_terminal: run.trace.t_final(), a: run.certification.a, record_stride: 1 };
            let batch = backward_solve(&run.trace, params, &seeded_terminals(grid, TERMINAL_SEED, TERMINALS))?;
            self.adjoints.insert((key, n), batch);
        }
        Ok(())
    }

    fn adjoint(&mut self, key: Key, n: usize) -> Result<&AdjointBatch<f64>> {
        self.ensure_adjoint(key, n)?;
        Ok(&self.adjoints[&(key, n)])
    }

    /// Homogeneous channel with `a = −1` on `t ∈ [0, 1]`, `dt = 1e-4`.
    fn homogeneous(&mut self, dim: usize) -> Result<&FlowTrace<f64>> {
        if !self.homogeneous.contains_key(&dim) {
            let model = HomogeneousModel { n: dim, a: -1.0 };
            let params = FlowParams { t_end: 1.0, a: -1.0, save_stride: 100, ..Default::default() };
            let trace = homogeneous_trace(model, &MetricField::flat(GridSpec::new(dim, 8)?), params, 1e-4)?;
            self.homogeneous.insert(dim, trace);
        }
        Ok(&self.homogeneous[&dim])
    }

    fn pairing_value(&self, g: &MetricField<f64>, bg: &Background<f64>, phi: &ScalarField<f64>) -> Result<f64> {
        let mut pairing = Pairing::new(g, bg)?;
        if self.mutation == Some(Mutation::FlipF) {
            pairing.f = pairing.f.scaled(-1.0);
        }
        pairing.value(phi)
    }
}

fn margin_verdict(check: &str, ok: bool, note: String) -> Verdict {
    Verdict::from_margins(check, [if ok { 0.0 } else { -1.0 }], 0.0).with_note(note)
}

fn decreasing(check: &str, values: &[f64]) -> Verdict {
    Verdict::from_margins(check, values.windows(2).map(|w| w[0] - w[1]), 0.0).with_note(format!("{values:?}"))
}

fn conformal_bump(grid: GridSpec) -> Result<MetricField<f64>> {
    let mut s = Scenario::conformal_bump();
    s.parameters.n = Some(grid.dim);
    generate(&s, grid)
}

/// `h = (1 + 0.1 sin(2πx₂)) δ`
fn wavy_background(grid: GridSpec) -> Result<MetricField<f64>> {
    MetricField::new(SymTensorField::from_fn(grid, |x: &[f64]| {
        let mut m = linalg::identity(grid.dim);
        for (i, row) in m.iter_mut().enumerate().take(grid.dim) {
            row[i] = 1.0 + 0.1 * (TAU * x[1]).sin();
        }
        m
    }))
}

fn smooth_consistency(ctx: &mut Context) -> Result<Vec<Verdict>> {
    let ns = [ctx.coarse / 2, ctx.coarse, ctx.fine];
    let mut gaps = Vec::new();
    let mut total = 0.0;
    for &n in &ns {
        let grid = GridSpec::new(2, n)?;
        let g = conformal_bump(grid)?;
        let bg = Background::new(&MetricField::flat(grid))?;
        let phi = bump::<f64>(grid, &[0.5, 0.5], 2);
        let r = MetricGeometry::new(&g)?.scalar();
        let exact = integrate(&r.zip_map(&phi, |a, b| a * b)?, &g)?;
        gaps.push((ctx.pairing_value(&g, &bg, &phi)? - exact).abs());
        if n == ctx.coarse {
            total = ctx.pairing_value(&g, &bg, &ScalarField::constant(grid, 1.0))?;
        }
    }
    // least-squares slope of log gap against log dx
    let xs: Vec<f64> = ns.iter().map(|n| -(*n as f64).ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let order = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    Ok(vec![
        Verdict::at_most("gap_at_coarse", gaps[1], 1e-3 * ctx.scale).with_note(format!("gaps {gaps:?}; total curvature pairing {total:e}")),
        Verdict::from_margins("convergence_order", [0.3 - (order - 2.0).abs()], 0.0).with_note(format!("order {order:.3}")),
    ])
}

fn background_independence(ctx: &mut Context) -> Result<Vec<Verdict>> {
    let ns = [ctx.coarse / 2, ctx.coarse, ctx.fine];
    let mut bump_rel = Vec::new();
    let mut tent_gap = Vec::new();
    for &n in &ns {
        let grid = GridSpec::new(2, n)?;
        let h1 = Background::new(&MetricField::flat(grid))?;
        let h2 = Background::new(&wavy_background(grid)?)?;
        let g = conformal_bump(grid)?;
        let mut worst = 0.0f64;
        for phi in default_family::<f64>(grid, DEFAULT_FAMILY_SEED) {
            let a = ctx.pairing_value(&g, &h1, &phi.field)?;
            let b = ctx.pairing_value(&g, &h2, &phi.field)?;
            worst = worst.max((a - b).abs() / (1.0 + a.abs()));
        }
        bump_rel.push(worst);
        let tent = generate::<f64>(&Scenario::tent(), grid)?;
        let phi = bump::<f64>(grid, &[0.5, 0.5], 2);
        tent_gap.push((ctx.pairing_value(&tent, &h1, &phi)? - ctx.pairing_value(&tent, &h2, &phi)?).abs());
    }
    Ok(vec![
        Verdict::at_most("relative_gap_at_coarse", bump_rel[1], 1e-3 * ctx.scale).with_note(format!("{bump_rel:?}")),
        decreasing("smooth_gap_refines", &bump_rel),
        decreasing("tent_gap_refines", &tent_gap),
    ])
}

fn closed_form_law(ctx: &mut Context) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    for dim in [2, 3, 4] {
        let model = HomogeneousModel { n: dim, a: -1.0 };
        let trace = ctx.homogeneous(dim)?;
        let mut err = 0.0f64;
        for s in &trace.states {
            err = err.max((s.min_scalar - model.scalar(s.t)?).abs());
        }
        out.push(Verdict::at_most(format!("scalar_law_n{dim}"), err, 1e-8));
        let mut rk = 0.0f64;
        for (t, r) in homogeneous_rk4(model, 1.0, 1e-4) {
            rk = rk.max((r - model.scalar(t)?).abs());
        }
        out.push(Verdict::at_most(format!("rk4_cross_check_n{dim}"), rk, 1e-8));
    }
    Ok(out)
}

fn volume_law(ctx: &mut Context) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    for dim in [2, 3, 4] {
        let v = volume_law_check(ctx.homogeneous(dim)?, -1.0)?;
        out.push(Verdict { check: format!("homogeneous_n{dim}"), ..v });
    }
    let coarse = ctx.coarse;
    for key in KEYS {
        let run = ctx.flow(key, coarse)?;
        let v = volume_law_check(&run.trace, run.certification.a)?;
        out.push(Verdict { check: format!("{}_N{coarse}", key.label()), ..v });
    }
    Ok(out)
}

fn lower_bound(ctx: &mut Context) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    let (coarse, fine) = (ctx.coarse, ctx.fine);
    for key in KEYS {
        let mut margins = Vec::new();
        for n in [coarse, fine] {
            let run = ctx.flow(key, n)?;
            let v = lower_bound_check(&run.trace, run.certification.a)?;
            margins.push(v.worst_margin);
            out.push(Verdict { check: format!("{}_N{n}", key.label()), ..v }.with_note(format!("a = {}", run.certification.a)));
        }
        out.push(Verdict::from_margins(format!("{}_margin_refines", key.label()), [margins[1] - margins[0]], 1e-12).with_note(format!("{margins:?}")));
    }
    Ok(out)
}

fn monotonicity(ctx: &mut Context) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    let (coarse, fine) = (ctx.coarse, ctx.fine);
    for key in KEYS {
        let mut observed = Vec::new();
        for n in [coarse, fine] {
            let batch = ctx.adjoint(key, n)?;
            let reports: Vec<_> = batch.series.iter().map(|s| monotone_series(s, C_MONO)).collect();
            observed.push(reports.iter().map(|r| r.observed_constant).collect::<Vec<_>>());
            if n != coarse {
                continue;
            }
            out.push(Verdict::from_margins(format!("{}_data_count", key.label()), [reports.len() as f64 - 8.0], 0.0));
            for (k, r) in reports.into_iter().enumerate() {
                let tag = format!("{}_datum{k}", key.label());
                out.push(Verdict { check: format!("{tag}_monotone"), ..r.verdict });
                out.push(Verdict { check: format!("{tag}_by_parts"), ..r.by_parts });
                out.push(Verdict { check: format!("{tag}_constant"), ..r.constant });
            }
        }
        out.push(refinement_stable(&format!("{}_c_mono_stable", key.label()), &observed[0], &observed[1]));
    }
    Ok(out)
}

fn fourier_oracle(n: usize) -> Result<f64> {
    let grid = GridSpec::new(2, n)?;
    let flat = MetricField::flat(grid);
    let trace = run_h_flow(&flat, &flat, FlowParams { t_end: 0.005, ..Default::default() })?;
    let t_end = trace.t_final();
    let phi = TestFunction::new(ScalarField::from_fn(grid, |x: &[f64]| 1.0 + 0.5 * (TAU * x[0]).cos()));
    let batch = backward_solve(&trace, AdjointParams { t_terminal: t_end, a: 0.0, record_stride: 1 }, &[phi])?;
    let s = &batch.series[0];
    let mut worst = 0.0f64;
    for (t, p) in s.times.iter().zip(&s.phi) {
        let decay = (-4.0 * PI * PI * (t_end - t)).exp();
        for (node, v) in p.values.iter().enumerate() {
            let x = grid.coords::<f64>(node)[0];
            worst = worst.max((v - (1.0 + 0.5 * decay * (TAU * x).cos())).abs());
        }
    }
    Ok(worst)
}

fn adjoint_bounds(ctx: &mut Context) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    let (coarse, fine) = (ctx.coarse, ctx.fine);
    for key in KEYS {
        let mut sup = Vec::new();
        let mut w1 = Vec::new();
        let mut energy = Vec::new();
        for n in [coarse, fine] {
            let batch = ctx.adjoint(key, n)?;
            let reports: Vec<_> = batch.series.iter().map(bounds_series).collect();
            let exact = reports.iter().all(|r| r.terminal_exact);
            out.push(margin_verdict(&format!("{}_N{n}_terminal_exact", key.label()), exact, format!("{} data", reports.len())));
            let min_phi = reports.iter().fold(f64::INFINITY, |m, r| m.min(r.min_phi));
            out.push(Verdict::from_margins(format!("{}_N{n}_positivity", key.label()), [min_phi], 1e-12));
            sup.push(reports.iter().map(|r| r.sup_phi_max).collect::<Vec<_>>());
            w1.push(reports.iter().map(|r| r.w1_norm_max).collect::<Vec<_>>());
            energy.push(batch.series.iter().map(|s| energy_series(s).c_e.max(0.0) + 1e-6).collect::<Vec<_>>());
        }
        out.push(refinement_stable(&format!("{}_sup_phi_stable", key.label()), &sup[0], &sup[1]));
        out.push(refinement_stable(&format!("{}_w1_norm_stable", key.label()), &w1[0], &w1[1]));
        out.push(refinement_stable(&format!("{}_energy_constant_stable", key.label()), &energy[0], &energy[1]).with_note(format!("{energy:?}")));
    }
    out.push(Verdict::at_most("flat_fourier_oracle", fourier_oracle(ctx.coarse)?, 1e-4 * ctx.scale));
    Ok(out)
}

fn algebraic_inequality(ctx: &mut Context) -> Result<Vec<Verdict>> {
    if ctx.flows.is_empty() {
        ctx.ensure_flow(Key::Tent, ctx.coarse)?;
    }
    for dim in [2, 3, 4] {
        ctx.homogeneous(dim)?;
    }
    let mut out = Vec::new();
    for ((key, n), run) in &ctx.flows {
        out.push(Verdict { check: format!("{}_N{n}", key.label()), ..cauchy_check(&run.trace) });
    }
    for (dim, trace) in &ctx.homogeneous {
        out.push(Verdict { check: format!("homogeneous_n{dim}"), ..cauchy_check(trace) });
    }
    Ok(out)
}

fn mollifier_continuity(ctx: &mut Context) -> Result<Vec<Verdict>> {
    let grid = GridSpec::new(2, ctx.coarse)?;
    let deltas = [0.04, 0.02, 0.01];
    let tent = generate::<f64>(&Scenario::tent(), grid)?;
    let fb = fair_background(&tent, 0.1)?;
    let bg = Background::new(&fb.metric)?;
    let family = default_family::<f64>(grid, DEFAULT_FAMILY_SEED);
    let flip = ctx.mutation == Some(Mutation::FlipF);
    let probe = continuity_probe_with(&tent, &bg, &deltas, &family, |p| {
        if flip {
            p.f = p.f.scaled(-1.0);
        }
    })?;
    let mut out = vec![
        decreasing("psi_decreasing", &probe.moduli),
        Verdict::at_most("psi_at_smallest_delta", *probe.moduli.last().expect("three widths"), 1e-3 * ctx.scale),
    ];
    let mut constant = linalg::identity::<f64>(2);
    constant[0][0] = 1.7;
    constant[0][1] = 0.3;
    constant[1][0] = 0.3;
    let c = MetricField::constant(grid, &constant)?;
    let mut drift = 0.0f64;
    for &d in &deltas {
        let m = mollify(&c, MollifyParams::new(d)?)?;
        for (a, b) in m.comps.iter().zip(&c.comps) {
            for (x, y) in a.iter().zip(b) {
                drift = drift.max((x - y).abs());
            }
        }
    }
    out.push(Verdict::at_most("constants_preserved", drift, 1e-12));
    let mut random = Scenario::random_w1p(RANDOM_SEED);
    random.parameters.n = None;
    for (label, g) in [("tent", tent.clone()), ("random_w1p", generate(&random, grid)?), ("conformal_bump", conformal_bump(grid)?)] {
        let distances = deltas.iter().map(|&d| w1p_distance(&mollify(&g, MollifyParams::new(d)?)?, &g, &bg, DEFAULT_P)).collect::<Result<Vec<f64>>>()?;
        out.push(decreasing(&format!("{label}_w1p_distance_shrinks"), &distances));
    }
    Ok(out)
}

fn flow_estimates(ctx: &mut Context) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    let (coarse, fine) = (ctx.coarse, ctx.fine);
    for key in KEYS {
        let mut running = Vec::new();
        for n in [coarse, fine] {
            let run = ctx.flow(key, n)?;
            let d = decay_report(&run.trace, DEFAULT_P, run.w1p_reference);
            out.push(Verdict { check: format!("{}_N{n}_w1p_growth", key.label()), ..d.w1p }.with_note(format!("ratio {:.3}", d.w1p_ratio_max)));
            running.push(d.running_max.to_vec());
        }
        out.push(refinement_stable(&format!("{}_compensated_stable", key.label()), &running[0], &running[1]).with_note(format!("{running:?}")));
    }
    for dim in [2, 3, 4] {
        let d = decay_report(ctx.homogeneous(dim)?, DEFAULT_P, None);
        out.push(Verdict { check: format!("homogeneous_n{dim}_w1p_growth"), ..d.w1p });
    }
    Ok(out)
}

fn self_similarity(ctx: &mut Context) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    for dim in [2, 3, 4] {
        let trace = ctx.homogeneous(dim)?;
        out.push(Verdict { check: format!("normalized_states_n{dim}"), ..self_similarity_check(trace)? });
        let worst = trace.states.iter().fold(0.0f64, |m, s| m.max(s.einstein_defect));
        out.push(Verdict::at_most(format!("einstein_defect_n{dim}"), worst, 1e-12));
    }
    let control = einstein_defect(&conformal_bump(GridSpec::new(3, ctx.coarse / 2)?)?)?;
    out.push(Verdict::from_margins("bump_n3_not_einstein", [control - 1e-11], 0.0).with_note(format!("einstein_defect {control:e}")));
    Ok(out)
}

type CriterionFn = fn(&mut Context) -> Result<Vec<Verdict>>;

const CRITERIA: [(u8, &str, &str, CriterionFn, Option<f64>); 11] = [
    (1, "smooth consistency", "distributional_curvature", smooth_consistency, Some(30.0)),
    (2, "background independence", "distributional_curvature", background_independence, None),
    (3, "closed-form curvature law", "flow_engine", closed_form_law, Some(5.0)),
    (4, "volume law", "flow_engine", volume_law, None),
    (5, "lower-bound propagation", "flow_engine", lower_bound, Some(300.0)),
    (6, "monotonicity", "adjoint_monitor", monotonicity, None),
    (7, "adjoint bounds", "adjoint_monitor", adjoint_bounds, None),
    (8, "algebraic inequality", "grid_geometry", algebraic_inequality, None),
    (9, "mollifier continuity", "mollifier", mollifier_continuity, None),
    (10, "flow estimates", "flow_engine", flow_estimates, None),
    (11, "self-similarity", "flow_engine", self_similarity, None),
];

/// Runs the selected criteria in order, printing nothing.
pub fn verify(options: &VerifyOptions) -> VerifyReport {
    verify_with(options, |_| {})
}

/// As [`verify`], calling `progress` after each criterion.
pub fn verify_with(options: &VerifyOptions, mut progress: impl FnMut(&CriterionResult)) -> VerifyReport {
    let start = Instant::now();
    let (coarse, fine, scale) = if options.half_resolution { (32, 64, 4.0) } else { (64, 128, 1.0) };
    let mut ctx = Context { mutation: options.mutation, coarse, fine, scale, flows: BTreeMap::new(), adjoints: BTreeMap::new(), homogeneous: BTreeMap::new() };
    let mut results = Vec::new();
    for id in options.selected() {
        let (_, title, module, run, budget) = CRITERIA[id as usize - 1];
        let t0 = Instant::now();
        let mut checks = match run(&mut ctx) {
            Ok(checks) => checks,
            Err(e) => vec![margin_verdict("evaluation", false, e.to_string())],
        };
        let seconds = t0.elapsed().as_secs_f64();
        if let Some(limit) = budget {
            checks.push(Verdict::at_most("runtime_s", seconds, limit));
        }
        let result = CriterionResult { id, title, module, pass: checks.iter().all(|c| c.pass), checks, seconds };
        progress(&result);
        results.push(result);
    }
    let pass = results.iter().all(|r| r.pass);
    VerifyReport {
        suite: options.suite,
        half_resolution: options.half_resolution,
        mutation: options.mutation,
        coarse,
        fine,
        tolerance_scale: scale,
        results,
        pass,
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_select_criteria() {
        assert_eq!(Suite::Quick.criteria(), vec![1, 3, 4, 8]);
        assert_eq!(Suite::Full.criteria().len(), 11);
        let only = VerifyOptions { only: Some(vec![3, 9]), ..VerifyOptions::quick() };
        assert_eq!(only.selected(), vec![3]);
    }

    #[test]
    fn flipped_f_breaks_smooth_consistency() {
        let options = VerifyOptions { only: Some(vec![1]), half_resolution: true, mutation: Some(Mutation::FlipF), ..VerifyOptions::default() };
        let report = verify(&options);
        let r = &report.results[0];
        assert!(!r.pass);
        assert_eq!(r.module, "distributional_curvature");
        assert!(r.lines().iter().any(|l| l.contains("gap_at_coarse")));
    }

    #[test]
    fn closed_form_criteria_pass() {
        let report = verify(&VerifyOptions { only: Some(vec![3, 11]), ..VerifyOptions::default() });
        for r in &report.results {
            assert!(r.pass, "{:?}", r.lines());
        }
    }
}
