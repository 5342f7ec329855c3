//! Binary field containers (`CFL1`), their JSON sidecars, and the CSV
//! transcripts of flows and backward solves.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjoint::AdjointSeries;
use crate::error::{Error, Result};
use crate::flow::FlowTrace;
use crate::grid::{GridSpec, MetricField, ScalarField, SymTensorField, VectorField};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"CFL1";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Scalar = 0,
    Vector = 1,
    SymTensor = 2,
    Metric = 3,
}

impl FieldKind {
    fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            0 => Self::Scalar,
            1 => Self::Vector,
            2 => Self::SymTensor,
            3 => Self::Metric,
            other => return Err(Error::BadContainer(format!("unknown field kind {other}"))),
        })
    }
}

/// Field payload in `f64`, component-major in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldData {
    pub grid: GridSpec,
    pub kind: FieldKind,
    pub comps: Vec<Vec<f64>>,
}

fn widen<S: Real>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn narrow<S: Real>(v: &[f64]) -> Vec<S> {
    v.iter().map(|x| S::lit(*x)).collect()
}

impl FieldData {
    pub fn from_scalar<S: Real>(f: &ScalarField<S>) -> Self {
        Self { grid: f.grid, kind: FieldKind::Scalar, comps: vec![widen(&f.values)] }
    }

    pub fn from_vector<S: Real>(f: &VectorField<S>) -> Self {
        Self { grid: f.grid, kind: FieldKind::Vector, comps: f.comps.iter().map(|c| widen(c)).collect() }
    }

    pub fn from_metric<S: Real>(g: &MetricField<S>) -> Self {
        Self { grid: g.grid(), kind: FieldKind::Metric, comps: g.comps.iter().map(|c| widen(c)).collect() }
    }

    pub fn to_metric<S: Real>(&self) -> Result<MetricField<S>> {
        if !matches!(self.kind, FieldKind::Metric | FieldKind::SymTensor) {
            return Err(Error::BadContainer(format!("expected a metric, found {:?}", self.kind)));
        }
        MetricField::new(SymTensorField { grid: self.grid, comps: self.comps.iter().map(|c| narrow(c)).collect() })
    }

    pub fn to_scalar<S: Real>(&self) -> Result<ScalarField<S>> {
        if self.kind != FieldKind::Scalar {
            return Err(Error::BadContainer(format!("expected a scalar field, found {:?}", self.kind)));
        }
        ScalarField::new(self.grid, narrow(&self.comps[0]))
    }

    /// Header followed by little-endian values, node-major with components
    /// interleaved.
    pub fn to_bytes(&self) -> Vec<u8> {
        let nodes = self.grid.nodes();
        let mut out = Vec::with_capacity(20 + 8 * nodes * self.comps.len());
        out.extend_from_slice(MAGIC);
        for v in [self.grid.dim as u32, self.grid.n as u32, self.kind as u32, self.comps.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for node in 0..nodes {
            for c in &self.comps {
                out.extend_from_slice(&c[node].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(Error::BadContainer("missing CFL1 header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("four bytes"));
        let grid = GridSpec::new(word(0) as usize, word(1) as usize)?;
        let kind = FieldKind::from_code(word(2))?;
        let count = word(3) as usize;
        let nodes = grid.nodes();
        let body = &bytes[20..];
        if body.len() != 8 * nodes * count {
            return Err(Error::BadContainer(format!("expected {} payload bytes, found {}", 8 * nodes * count, body.len())));
        }
        let mut comps = vec![Vec::with_capacity(nodes); count];
        for (k, chunk) in body.chunks_exact(8).enumerate() {
            comps[k % count].push(f64::from_le_bytes(chunk.try_into().expect("eight bytes")));
        }
        Ok(Self { grid, kind, comps })
    }
}

/// Provenance written next to every container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario: String,
    pub parameters: serde_json::Value,
    pub code_version: String,
}

impl Provenance {
    pub fn new(scenario: impl Into<String>, parameters: serde_json::Value) -> Self {
        Self { scenario: scenario.into(), parameters, code_version: CODE_VERSION.to_string() }
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    kind: FieldKind,
    dim: usize,
    n: usize,
    #[serde(flatten)]
    provenance: &'a Provenance,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` and its JSON sidecar.
pub fn write_container(path: &Path, field: &FieldData, provenance: &Provenance) -> Result<()> {
    fs::File::create(path)?.write_all(&field.to_bytes())?;
    let sidecar = Sidecar { kind: field.kind, dim: field.grid.dim, n: field.grid.n, provenance };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<FieldData> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    FieldData::from_bytes(&bytes)
}

pub fn read_provenance(path: &Path) -> Result<Provenance> {
    let text = fs::read_to_string(sidecar_path(path))?;
    serde_json::from_str(&text).map_err(|e| Error::BadContainer(e.to_string()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub const TRACE_COLUMNS: [&str; 9] = ["t", "dt", "vol", "min_scalar", "max_scalar", "max_curv_proxy", "sup_grad_g", "sup_grad2_g", "einstein_defect"];
pub const ADJOINT_COLUMNS: [&str; 7] = ["t", "Q", "E", "I", "sup_phi", "w1_norm", "psi_scale"];

/// One row per saved state; `dt` is the step that produced the state.
pub fn write_trace_csv<S: Real>(path: &Path, trace: &FlowTrace<S>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(TRACE_COLUMNS).map_err(csv_error)?;
    for s in &trace.states {
        let dt = if s.step == 0 { 0.0 } else { trace.dt_history[s.step - 1] };
        let row = [s.t, dt, s.vol, s.min_scalar, s.max_scalar, s.max_curv_proxy, s.sup_grad_g, s.sup_grad2_g, s.einstein_defect];
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_adjoint_csv<S: Real>(path: &Path, series: &AdjointSeries<S>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(ADJOINT_COLUMNS).map_err(csv_error)?;
    for k in 0..series.times.len() {
        let row = [series.times[k], series.q[k], series.e[k], series.i[k], series.sup_phi[k], series.w1_norm[k], series.psi_scale[k]];
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let grid = GridSpec::new(2, 8).unwrap();
        let g = MetricField::new(SymTensorField::from_fn(grid, |x: &[f64]| {
            let mut m = crate::linalg::identity(2);
            m[0][0] = 1.5 + x[0];
            m[0][1] = 0.1 * x[1];
            m[1][0] = m[0][1];
            m
        }))
        .unwrap();
        let data = FieldData::from_metric(&g);
        let bytes = data.to_bytes();
        assert_eq!(&bytes[..4], b"CFL1");
        assert_eq!(bytes.len(), 20 + 8 * 64 * 3);
        // node-major, components interleaved
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), g.comps[0][0]);
        assert_eq!(f64::from_le_bytes(bytes[28..36].try_into().unwrap()), g.comps[1][0]);
        let back = FieldData::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_metric::<f64>().unwrap(), g);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.cfl");
        write_container(&path, &data, &Provenance::new("tent", serde_json::json!({"amplitude": 0.2}))).unwrap();
        assert_eq!(read_container(&path).unwrap(), data);
        assert_eq!(read_provenance(&path).unwrap().scenario, "tent");
    }

    #[test]
    fn rejects_truncated_and_foreign_bytes() {
        assert!(matches!(FieldData::from_bytes(b"NOPE"), Err(Error::BadContainer(_))));
        let grid = GridSpec::new(2, 8).unwrap();
        let mut bytes = FieldData::from_scalar(&ScalarField::constant(grid, 1.0)).to_bytes();
        bytes.pop();
        assert!(matches!(FieldData::from_bytes(&bytes), Err(Error::BadContainer(_))));
    }
}
