//! End-to-end run: generate → certify → fair background → mollify → flow →
//! backward solve → checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::adjoint::{backward_solve, bounds_series, energy_series, mass_series, monotone_series, seeded_terminals, AdjointBatch, AdjointParams, C_MONO};
use crate::distributional::{certificate_with, certified_bound, default_family, LowerBoundCertificate, Pairing, DEFAULT_FAMILY_SEED, DEFAULT_P};
use crate::error::{Error, Result};
use crate::flow::{
    cauchy_check, decay_report, gradient_p_integral, homogeneous_trace, lower_bound_check, normalize, run_h_flow, self_similarity_check, volume_law_check, FlowParams, FlowTrace, Scheme,
};
use crate::geometry::{Background, MetricGeometry};
use crate::grid::{GridSpec, MetricField};
use crate::io::{write_adjoint_csv, write_container, write_trace_csv, FieldData, Provenance, CODE_VERSION};
use crate::mollifier::{fair_background, mollify, FairBackground, MollifyParams};
use crate::scenario::{generate, Scenario};
use crate::verdict::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    #[serde(rename = "N")]
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dim: 2, n: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    pub family_seed: u64,
    pub p: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { family_seed: DEFAULT_FAMILY_SEED, p: DEFAULT_P }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundConfig {
    pub delta_target: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self { delta_target: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MollifyConfig {
    pub delta: f64,
}

impl Default for MollifyConfig {
    fn default() -> Self {
        Self { delta: 0.04 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub scheme: Scheme,
    pub cfl: f64,
    pub t_end: f64,
    pub save_stride: usize,
    pub delta_fair: f64,
    /// Step of the homogeneous channel.
    pub homogeneous_dt: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let d = FlowParams::default();
        Self { scheme: d.scheme, cfl: d.cfl, t_end: d.t_end, save_stride: 10, delta_fair: d.delta_fair, homogeneous_dt: 1e-4 }
    }
}

impl FlowConfig {
    pub fn params(&self, a: f64, p: f64) -> FlowParams {
        FlowParams { scheme: self.scheme, cfl: self.cfl, t_end: self.t_end, a, save_stride: self.save_stride, p, delta_fair: self.delta_fair }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjointConfig {
    pub terminal_seed: u64,
    pub terminals: usize,
    pub record_stride: usize,
}

impl Default for AdjointConfig {
    fn default() -> Self {
        Self { terminal_seed: 7, terminals: 8, record_stride: 1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub certify: CertifyConfig,
    pub background: BackgroundConfig,
    pub mollify: MollifyConfig,
    pub flow: FlowConfig,
    pub adjoint: AdjointConfig,
}

fn tool_version() -> String {
    CODE_VERSION.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub scenario: Scenario,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub stages: StageConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "tool_version")]
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(scenario: Scenario, grid: GridConfig) -> Self {
        Self { scenario, grid, stages: StageConfig::default(), output_dir: None, tool_version: tool_version() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::BadParameter(format!("manifest: {e}")))?;
        m.scenario.validate()?;
        Ok(m)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        self.scenario.grid(self.grid.dim, self.grid.n)
    }

    /// SHA-256 of the manifest with the output directory stripped.
    pub fn input_hash(&self) -> String {
        let mut stripped = self.clone();
        stripped.output_dir = None;
        sha256_hex(serde_json::to_string(&stripped).expect("manifest serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certification {
    /// Certified bound of the unmollified metric.
    pub rough_bound: f64,
    pub mollified_bound: f64,
    /// Smallest nodal scalar curvature of the mollified metric.
    pub jet_min: f64,
    pub a: f64,
    pub certificate: Option<LowerBoundCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub stage: &'static str,
    #[serde(flatten)]
    pub verdict: Verdict,
}

impl CheckRecord {
    pub fn describe(&self) -> String {
        let v = &self.verdict;
        format!("stage {}: check {} margin {:e} tolerance {:e}{}", self.stage, v.check, v.worst_margin, v.tolerance, v.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub tool_version: String,
    pub scenario: Scenario,
    pub grid: GridConfig,
    pub input_hash: String,
    pub a: f64,
    pub stages: BTreeMap<&'static str, Value>,
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
    pub outputs: BTreeMap<String, String>,
}

impl PipelineReport {
    pub fn failures(&self) -> Vec<&CheckRecord> {
        self.checks.iter().filter(|c| !c.verdict.pass).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub manifest: RunManifest,
    pub rough: MetricField<f64>,
    pub background: Option<FairBackground<f64>>,
    pub initial: MetricField<f64>,
    pub certification: Certification,
    pub trace: FlowTrace<f64>,
    pub adjoint: AdjointBatch<f64>,
    pub report: PipelineReport,
}

fn certify_stage(rough: &MetricField<f64>, fb: &FairBackground<f64>, smooth: &MetricField<f64>, cfg: CertifyConfig) -> Result<Certification> {
    let bg = Background::new(&fb.metric)?;
    let rough_bound = certified_bound(rough, &bg)?;
    let mollified_bound = certified_bound(smooth, &bg)?;
    let jet_min = MetricGeometry::new(smooth)?.scalar().min();
    let a = mollified_bound.min(jet_min);
    let family = default_family(smooth.grid(), cfg.family_seed);
    let certificate = certificate_with(&Pairing::new(smooth, &bg)?, a, &family)?;
    Ok(Certification { rough_bound, mollified_bound, jet_min, a, certificate: Some(certificate) })
}

/// Everything up to and including the forward flow.
#[derive(Debug, Clone)]
pub struct FlowRun {
    pub rough: MetricField<f64>,
    pub background: Option<FairBackground<f64>>,
    pub initial: MetricField<f64>,
    pub certification: Certification,
    pub trace: FlowTrace<f64>,
    /// `∫|∇̃ĝ|^p dμ_h` of the normalized unmollified metric.
    pub w1p_reference: Option<f64>,
    pub stages: BTreeMap<&'static str, Value>,
}

/// generate → fair background → mollify → certify → flow.
pub fn prepare_flow(manifest: &RunManifest) -> Result<FlowRun> {
    let grid = manifest.grid_spec().map_err(|e| e.in_stage("generate"))?;
    let st = &manifest.stages;
    let rough = generate::<f64>(&manifest.scenario, grid).map_err(|e| e.in_stage("generate"))?;
    let mut stages = BTreeMap::new();
    stages.insert("generate", json!({ "min_eigenvalue": rough.min_eigenvalue(), "max_eigenvalue": rough.max_eigenvalue() }));
    if let Some(model) = manifest.scenario.model(grid.dim) {
        let certification = Certification { rough_bound: model.a, mollified_bound: model.a, jet_min: model.a, a: model.a, certificate: None };
        stages.insert("certify", json!({ "a": model.a, "source": "homogeneous model" }));
        let params = st.flow.params(model.a, st.certify.p);
        let trace = homogeneous_trace(model, &rough, params, st.flow.homogeneous_dt).map_err(|e| e.in_stage("flow"))?;
        return Ok(FlowRun { initial: rough.clone(), rough, background: None, certification, trace, w1p_reference: None, stages });
    }
    let normalized = normalize(&rough).map_err(|e| e.in_stage("generate"))?;
    let fb = fair_background(&normalized, st.background.delta_target).map_err(|e| e.in_stage("fair_background"))?;
    stages.insert("fair_background", json!({ "width": fb.width, "fairness": fb.fairness, "transcript": fb.transcript }));
    let smooth = mollify(&normalized, MollifyParams::new(st.mollify.delta).map_err(|e| e.in_stage("mollify"))?)
        .and_then(|g| normalize(&g))
        .map_err(|e| e.in_stage("mollify"))?;
    stages.insert("mollify", json!({ "delta": st.mollify.delta }));
    let certification = certify_stage(&normalized, &fb, &smooth, st.certify).map_err(|e| e.in_stage("certify"))?;
    stages.insert("certify", serde_json::to_value(&certification).expect("serializable"));
    let params = st.flow.params(certification.a, st.certify.p);
    let trace = run_h_flow(&smooth, &fb.metric, params).map_err(|e| e.in_stage("flow"))?;
    let bg = trace.background().expect("grid trace");
    let w1p_reference = Some(gradient_p_integral(&normalized, bg, st.certify.p).map_err(|e| e.in_stage("flow"))?);
    Ok(FlowRun { rough, background: Some(fb), initial: smooth, certification, trace, w1p_reference, stages })
}

/// Runs every stage of `manifest` in memory; nothing is written.
pub fn run_pipeline(manifest: &RunManifest) -> Result<PipelineRun> {
    let grid = manifest.grid_spec().map_err(|e| e.in_stage("generate"))?;
    let st = &manifest.stages;
    let FlowRun { rough, background, initial, certification, trace, w1p_reference, mut stages } = prepare_flow(manifest)?;
    let mut checks = Vec::new();
    if let Some(c) = &certification.certificate {
        checks.push(CheckRecord { stage: "certify", verdict: Verdict::from_margins("certificate", [c.worst_defect], c.tolerance) });
    }
    let a = certification.a;

    let flow_stage = |e: Error| e.in_stage("flow");
    let decay = decay_report(&trace, st.certify.p, w1p_reference);
    stages.insert(
        "flow",
        json!({
            "steps": trace.dt_history.len(),
            "saved": trace.states.len(),
            "t_final": trace.t_final(),
            "min_scalar_final": trace.states.last().map(|s| s.min_scalar),
            "decay_running_max": decay.running_max,
            "w1p_ratio_max": decay.w1p_ratio_max,
        }),
    );
    for v in [volume_law_check(&trace, a).map_err(flow_stage)?, lower_bound_check(&trace, a).map_err(flow_stage)?, cauchy_check(&trace), decay.w1p.clone(), self_similarity_check(&trace).map_err(flow_stage)?] {
        checks.push(CheckRecord { stage: "flow", verdict: v });
    }
    if manifest.scenario.model(grid.dim).is_some() {
        let worst = trace.states.iter().fold(0.0f64, |m, s| m.max(s.einstein_defect));
        checks.push(CheckRecord { stage: "flow", verdict: Verdict::at_most("einstein_defect", worst, 1e-12) });
    }

    let terminals = seeded_terminals(grid, st.adjoint.terminal_seed, st.adjoint.terminals);
    let params = AdjointParams { t_terminal: trace.t_final(), a, record_stride: st.adjoint.record_stride };
    let adjoint = backward_solve(&trace, params, &terminals).map_err(|e| e.in_stage("adjoint"))?;
    let mut summaries = Vec::new();
    for (k, series) in adjoint.series.iter().enumerate() {
        let mono = monotone_series(series, C_MONO);
        let bounds = bounds_series(series);
        let energy = energy_series(series);
        summaries.push(json!({
            "datum": k,
            "tol_mono": mono.tol_mono,
            "observed_constant": mono.observed_constant,
            "min_phi": bounds.min_phi,
            "sup_phi_max": bounds.sup_phi_max,
            "w1_norm_max": bounds.w1_norm_max,
            "w1_norm_dual_max": bounds.w1_norm_dual_max,
            "c_e": energy.c_e,
        }));
        for v in [mono.verdict, mono.by_parts, mono.constant, bounds.verdict] {
            checks.push(CheckRecord { stage: "adjoint", verdict: v.with_note(format!("datum {k}")) });
        }
    }
    let mass = mass_series(&adjoint, &trace);
    stages.insert("adjoint", json!({ "t_terminal": params.t_terminal, "data": summaries, "i_max": mass.i_max, "envelope": mass.envelope }));
    checks.push(CheckRecord { stage: "adjoint", verdict: mass.verdict });

    let pass = checks.iter().all(|c| c.verdict.pass);
    let report = PipelineReport {
        tool_version: manifest.tool_version.clone(),
        scenario: manifest.scenario.clone(),
        grid: GridConfig { dim: grid.dim, n: grid.n },
        input_hash: manifest.input_hash(),
        a,
        stages,
        checks,
        pass,
        outputs: BTreeMap::new(),
    };
    Ok(PipelineRun { manifest: manifest.clone(), rough, background, initial, certification, trace, adjoint, report })
}

/// Writes containers, CSVs and `report.json` into `dir`; the report lists the
/// SHA-256 of every other file.
pub fn write_outputs(run: &mut PipelineRun, dir: &Path) -> Result<PathBuf> {
    let io = |e: Error| e.in_stage("output");
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_stage("output"))?;
    let provenance = Provenance::new(run.manifest.scenario.name.as_str(), serde_json::to_value(&run.manifest.scenario.parameters).expect("serializable"));
    let mut written: Vec<PathBuf> = Vec::new();
    let mut container = |name: &str, g: &MetricField<f64>| -> Result<()> {
        let path = dir.join(name);
        write_container(&path, &FieldData::from_metric(g), &provenance)?;
        written.push(path.clone());
        written.push(crate::io::sidecar_path(&path));
        Ok(())
    };
    container("rough.cfl", &run.rough).map_err(io)?;
    if let Some(fb) = &run.background {
        container("background.cfl", &fb.metric).map_err(io)?;
    }
    container("initial.cfl", &run.initial).map_err(io)?;
    container("final.cfl", &run.trace.states.last().expect("nonempty trace").g).map_err(io)?;
    let trace_path = dir.join("trace.csv");
    write_trace_csv(&trace_path, &run.trace).map_err(io)?;
    written.push(trace_path);
    for (k, series) in run.adjoint.series.iter().enumerate() {
        let name = if k == 0 { "adjoint.csv".to_string() } else { format!("adjoint_datum{k}.csv") };
        let path = dir.join(name);
        write_adjoint_csv(&path, series).map_err(io)?;
        written.push(path);
    }
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&run.manifest).expect("serializable") + "\n").map_err(|e| Error::from(e).in_stage("output"))?;
    written.push(manifest_path);
    let mut outputs = BTreeMap::new();
    for path in &written {
        let bytes = fs::read(path).map_err(|e| Error::from(e).in_stage("output"))?;
        outputs.insert(path.file_name().expect("file").to_string_lossy().into_owned(), sha256_hex(&bytes));
    }
    run.report.outputs = outputs;
    let report_path = dir.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&run.report).expect("serializable") + "\n").map_err(|e| Error::from(e).in_stage("output"))?;
    Ok(report_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioName;

    #[test]
    fn manifest_rejects_unknown_fields() {
        let ok = RunManifest::from_json(r#"{"scenario": {"name": "flat"}, "grid": {"dim": 2, "N": 16}}"#).unwrap();
        assert_eq!(ok.stages, StageConfig::default());
        assert!(RunManifest::from_json(r#"{"scenario": {"name": "flat"}, "colour": 1}"#).is_err());
        assert!(RunManifest::from_json(r#"{"scenario": {"name": "flat"}, "stages": {"flow": {"dtt": 1}}}"#).is_err());
        assert!(matches!(RunManifest::from_json(r#"{"scenario": {"name": "round"}}"#), Err(Error::BadParameter(_))));
    }

    #[test]
    fn flat_pipeline_has_zero_margins() {
        let mut m = RunManifest::new(Scenario::new(ScenarioName::Flat), GridConfig { dim: 2, n: 32 });
        m.stages.flow.t_end = 2e-3;
        m.stages.adjoint.terminals = 2;
        let run = run_pipeline(&m).unwrap();
        assert!(run.report.pass, "{:?}", run.report.failures());
        assert!(run.certification.a.abs() < 1e-12);
        for c in &run.report.checks {
            if ["volume_law", "lower_bound", "monotonicity"].contains(&c.verdict.check.as_str()) {
                assert!(c.verdict.worst_margin.abs() < 1e-10, "{}", c.describe());
            }
        }
    }

    #[test]
    fn homogeneous_pipeline_is_exact() {
        let m = RunManifest::new(Scenario::homogeneous(-1.0, 2), GridConfig { dim: 2, n: 8 });
        let run = run_pipeline(&m).unwrap();
        assert!(run.report.pass, "{:?}", run.report.failures());
        let find = |name: &str| run.report.checks.iter().find(|c| c.verdict.check == name).unwrap().verdict.clone();
        assert!(find("lower_bound").worst_margin.abs() < 1e-12);
        assert!(find("volume_law").worst_margin >= -1e-8);
        assert!(find("self_similarity").pass);
    }

    #[test]
    fn stage_errors_are_attributed() {
        let mut m = RunManifest::new(Scenario::tent(), GridConfig { dim: 2, n: 32 });
        m.stages.mollify.delta = 0.5;
        let err = run_pipeline(&m).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "mollify", .. }), "{err}");
        m.stages.mollify.delta = 0.04;
        m.stages.flow.cfl = 3.0;
        assert!(matches!(run_pipeline(&m).unwrap_err(), Error::Stage { stage: "flow", .. }));
    }

    #[test]
    fn outputs_are_reproducible() {
        let mut m = RunManifest::new(Scenario::tent(), GridConfig { dim: 2, n: 32 });
        m.stages.flow.t_end = 5e-4;
        m.stages.adjoint.terminals = 2;
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut reports = Vec::new();
        for d in &dirs {
            let mut run = run_pipeline(&m).unwrap();
            let path = write_outputs(&mut run, d.path()).unwrap();
            reports.push(fs::read(path).unwrap());
        }
        assert_eq!(reports[0], reports[1]);
        for name in ["trace.csv", "adjoint.csv", "adjoint_datum1.csv", "initial.cfl", "initial.json", "report.json"] {
            assert!(dirs[0].path().join(name).exists(), "{name}");
        }
        let header = fs::read_to_string(dirs[0].path().join("trace.csv")).unwrap();
        assert!(header.starts_with("t,dt,vol,min_scalar,max_scalar,max_curv_proxy,sup_grad_g,sup_grad2_g,einstein_defect"));
    }
}
