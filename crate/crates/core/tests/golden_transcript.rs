//! Tent pipeline at N = 32 against archived transcripts. Set `CURVLAB_BLESS=1`
//! to rewrite the fixtures.

use std::fs;
use std::path::{Path, PathBuf};

use curvlab_core::pipeline::{run_pipeline, write_outputs, GridConfig, RunManifest};
use curvlab_core::scenario::Scenario;

const FILES: [&str; 3] = ["trace.csv", "adjoint.csv", "adjoint_datum7.csv"];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/tent_n32").join(name)
}

fn close(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y || (x - y).abs() <= 1e-9 * x.abs().max(y.abs()),
        _ => a == b,
    }
}

#[test]
fn tent_transcript_matches_fixture() {
    let manifest = RunManifest::new(Scenario::tent(), GridConfig { dim: 2, n: 32 });
    let mut run = run_pipeline(&manifest).unwrap();
    assert!(run.report.pass, "{:?}", run.report.failures());
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&mut run, dir.path()).unwrap();
    let bless = std::env::var_os("CURVLAB_BLESS").is_some();
    for name in FILES {
        let got = fs::read_to_string(dir.path().join(name)).unwrap();
        if bless {
            fs::create_dir_all(fixture("")).unwrap();
            fs::write(fixture(name), &got).unwrap();
            continue;
        }
        let want = fs::read_to_string(fixture(name)).unwrap();
        let (got_lines, want_lines): (Vec<_>, Vec<_>) = (got.lines().collect(), want.lines().collect());
        assert_eq!(got_lines.len(), want_lines.len(), "{name}: row count");
        for (row, (g, w)) in got_lines.iter().zip(&want_lines).enumerate() {
            let ok = g.split(',').count() == w.split(',').count() && g.split(',').zip(w.split(',')).all(|(a, b)| close(a, b));
            assert!(ok, "{name} row {row}:\n got  {g}\n want {w}");
        }
    }
}
