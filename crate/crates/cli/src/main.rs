use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use curvlab_core::adjoint::{backward_solve, bounds_series, mass_series, monotone_series, seeded_terminals, AdjointParams, C_MONO};
use curvlab_core::distributional::{bump, random_nonnegative, Pairing, TestFunction};
use curvlab_core::flow::{cauchy_check, decay_report, lower_bound_check, normalize, self_similarity_check, volume_law_check};
use curvlab_core::geometry::{fairness, Background};
use curvlab_core::io::{write_adjoint_csv, write_container, write_trace_csv, FieldData, Provenance};
use curvlab_core::mollifier::{fair_background, mollify, w1p_distance, MollifyParams};
use curvlab_core::pipeline::{prepare_flow, run_pipeline, write_outputs, CheckRecord, GridConfig, RunManifest};
use curvlab_core::scenario::{generate, Scenario, ScenarioName};
use curvlab_core::verdict::Verdict;
use curvlab_core::verify::{verify_with, Mutation, Suite, VerifyOptions};
use curvlab_core::{Metric, Trace};

/// Distributional scalar curvature, h-flow and adjoint monitors on periodic grids.
#[derive(Parser, Debug)]
#[command(name = "curvlab", version)]
struct Cli {
    /// Run manifest (JSON) supplying the scenario, grid and stage settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for containers, CSVs and report.json.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of random scenarios and of the adjoint terminal data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid resolution N per axis.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Dimension n of the torus.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Scenario name when no manifest is given.
    #[arg(long, global = true)]
    scenario: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inspect the scenario catalog.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
    /// Pair the scenario's scalar curvature with a test function.
    Pair {
        #[arg(long, value_enum, default_value = "fair")]
        background: BackgroundKind,
        /// Use a seeded random nonnegative test function instead of the centred bump.
        #[arg(long)]
        phi_seed: Option<u64>,
    },
    /// Mollify the scenario metric.
    Mollify {
        #[arg(long, default_value_t = 0.04)]
        delta: f64,
    },
    /// Run the h-flow and its checks.
    Flow,
    /// Run the flow, then the backward adjoint solve and its checks.
    Adjoint,
    /// Run every stage and write report.json.
    Pipeline,
    /// Run the acceptance criteria.
    Verify {
        #[arg(long, value_enum, default_value = "full")]
        suite: SuiteArg,
        /// Run at N = 32/64 with relaxed tolerances.
        #[arg(long)]
        half: bool,
        /// Inject a deliberate defect.
        #[arg(long, value_enum)]
        mutate: Option<MutationArg>,
        /// Restrict to these criteria (comma separated).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u8>>,
    },
}

#[derive(Subcommand, Debug)]
enum ScenarioAction {
    /// List the catalog.
    List,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BackgroundKind {
    Flat,
    Fair,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SuiteArg {
    Quick,
    Full,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MutationArg {
    FlipF,
}

fn manifest(cli: &Cli) -> Result<RunManifest> {
    let mut m = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunManifest::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let name: ScenarioName = cli.scenario.as_deref().unwrap_or("tent").parse()?;
            let mut s = Scenario::new(name);
            if name == ScenarioName::RandomW1p {
                s.parameters.seed = Some(cli.seed.unwrap_or(1));
            }
            RunManifest::new(s, GridConfig::default())
        }
    };
    if let Some(n) = cli.grid {
        m.grid.n = n;
    }
    if let Some(dim) = cli.dim {
        m.grid.dim = dim;
    }
    if let Some(seed) = cli.seed {
        if m.scenario.name == ScenarioName::RandomW1p {
            m.scenario.parameters.seed = Some(seed);
        }
        m.stages.adjoint.terminal_seed = seed;
    }
    if cli.out.is_some() {
        m.output_dir.clone_from(&cli.out);
    }
    m.scenario.validate()?;
    Ok(m)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn report_checks(checks: &[CheckRecord]) -> bool {
    for c in checks.iter().filter(|c| !c.verdict.pass) {
        eprintln!("FAILED {}", c.describe());
    }
    checks.iter().all(|c| c.verdict.pass)
}

fn provenance(m: &RunManifest) -> Result<Provenance> {
    Ok(Provenance::new(m.scenario.name.as_str(), serde_json::to_value(&m.scenario.parameters)?))
}

fn scenario_list() -> Result<bool> {
    for name in ScenarioName::ALL {
        println!("{:<22} {}", name.as_str(), name.summary());
    }
    Ok(true)
}

fn pair(cli: &Cli, background: BackgroundKind, phi_seed: Option<u64>) -> Result<bool> {
    let m = manifest(cli)?;
    let grid = m.grid_spec()?;
    let g = normalize(&generate::<f64>(&m.scenario, grid)?)?;
    let h = match background {
        BackgroundKind::Flat => Metric::flat(grid),
        BackgroundKind::Fair => fair_background(&g, m.stages.background.delta_target)?.metric,
    };
    let bg = Background::new(&h)?;
    let phi = match phi_seed {
        Some(seed) => random_nonnegative(grid, seed),
        None => TestFunction::nonnegative(bump(grid, &vec![0.5; grid.dim], 2))?,
    };
    let report = Pairing::new(&g, &bg)?.report(&phi)?;
    print_json(&json!({
        "value": report.value,
        "v_term": report.v_term,
        "f_term": report.f_term,
        "test_norm": report.test_norm,
        "grid": { "n": grid.dim, "N": grid.n },
        "scenario": m.scenario.name,
        "background": match background { BackgroundKind::Flat => "flat", BackgroundKind::Fair => "fair" },
    }))?;
    Ok(true)
}

fn mollify_cmd(cli: &Cli, delta: f64) -> Result<bool> {
    let m = manifest(cli)?;
    let grid = m.grid_spec()?;
    let g = generate::<f64>(&m.scenario, grid)?;
    let smooth = mollify(&g, MollifyParams::new(delta)?)?;
    let bg = Background::new(&Metric::flat(grid))?;
    let p = m.stages.certify.p;
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        write_container(&dir.join("mollified.cfl"), &FieldData::from_metric(&smooth), &provenance(&m)?)?;
    }
    print_json(&json!({
        "scenario": m.scenario.name,
        "delta": delta,
        "fairness": fairness(&g, &smooth)?,
        "w1p_distance": w1p_distance(&smooth, &g, &bg, p)?,
        "p": p,
    }))?;
    Ok(true)
}

fn write_states(dir: &Path, m: &RunManifest, trace: &Trace) -> Result<()> {
    fs::create_dir_all(dir)?;
    let prov = provenance(m)?;
    for (k, s) in trace.states.iter().enumerate() {
        write_container(&dir.join(format!("state_{k:04}.cfl")), &FieldData::from_metric(&s.g), &prov)?;
    }
    write_trace_csv(&dir.join("trace.csv"), trace)?;
    Ok(())
}

fn flow_cmd(cli: &Cli) -> Result<bool> {
    let m = manifest(cli)?;
    let run = prepare_flow(&m)?;
    let a = run.certification.a;
    let decay = decay_report(&run.trace, m.stages.certify.p, run.w1p_reference);
    let verdicts: Vec<Verdict> =
        vec![volume_law_check(&run.trace, a)?, lower_bound_check(&run.trace, a)?, cauchy_check(&run.trace), decay.w1p.clone(), self_similarity_check(&run.trace)?];
    if let Some(dir) = &cli.out {
        write_states(dir, &m, &run.trace)?;
    }
    let checks: Vec<CheckRecord> = verdicts.into_iter().map(|verdict| CheckRecord { stage: "flow", verdict }).collect();
    print_json(&json!({ "a": a, "steps": run.trace.dt_history.len(), "t_final": run.trace.t_final(), "checks": checks }))?;
    Ok(report_checks(&checks))
}

fn adjoint_cmd(cli: &Cli) -> Result<bool> {
    let m = manifest(cli)?;
    let run = prepare_flow(&m)?;
    let grid = m.grid_spec()?;
    let a = run.certification.a;
    let params = AdjointParams { t_terminal: run.trace.t_final(), a, record_stride: m.stages.adjoint.record_stride };
    let batch = backward_solve(&run.trace, params, &seeded_terminals(grid, m.stages.adjoint.terminal_seed, m.stages.adjoint.terminals))?;
    let mut checks = Vec::new();
    for (k, s) in batch.series.iter().enumerate() {
        let mono = monotone_series(s, C_MONO);
        for v in [mono.verdict, mono.by_parts, mono.constant, bounds_series(s).verdict] {
            checks.push(CheckRecord { stage: "adjoint", verdict: v.with_note(format!("datum {k}")) });
        }
    }
    checks.push(CheckRecord { stage: "adjoint", verdict: mass_series(&batch, &run.trace).verdict });
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        for (k, s) in batch.series.iter().enumerate() {
            let name = if k == 0 { "adjoint.csv".to_string() } else { format!("adjoint_datum{k}.csv") };
            write_adjoint_csv(&dir.join(name), s)?;
        }
    }
    print_json(&json!({ "a": a, "t_terminal": params.t_terminal, "data": batch.series.len(), "checks": checks }))?;
    Ok(report_checks(&checks))
}

fn pipeline_cmd(cli: &Cli) -> Result<bool> {
    let m = manifest(cli)?;
    let mut run = run_pipeline(&m)?;
    if let Some(dir) = m.output_dir.clone() {
        let path = write_outputs(&mut run, &dir)?;
        eprintln!("wrote {}", path.display());
    }
    print_json(&run.report)?;
    Ok(report_checks(&run.report.checks))
}

fn verify_cmd(suite: SuiteArg, half: bool, mutate: Option<MutationArg>, only: Option<Vec<u8>>, out: Option<&Path>) -> Result<bool> {
    if let Some(ids) = &only {
        if let Some(bad) = ids.iter().find(|id| !(1..=11).contains(*id)) {
            bail!("criterion {bad} does not exist (1..=11)");
        }
    }
    let options = VerifyOptions {
        suite: match suite {
            SuiteArg::Quick => Suite::Quick,
            SuiteArg::Full => Suite::Full,
        },
        half_resolution: half,
        mutation: mutate.map(|MutationArg::FlipF| Mutation::FlipF),
        only,
    };
    let report = verify_with(&options, |r| {
        for line in r.lines() {
            println!("{line}");
        }
    });
    println!("{}", report.lines().last().expect("summary line"));
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(report.pass)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Scenario { action: ScenarioAction::List } => scenario_list(),
        Command::Pair { background, phi_seed } => pair(cli, *background, *phi_seed),
        Command::Mollify { delta } => mollify_cmd(cli, *delta),
        Command::Flow => flow_cmd(cli),
        Command::Adjoint => adjoint_cmd(cli),
        Command::Pipeline => pipeline_cmd(cli),
        Command::Verify { suite, half, mutate, only } => verify_cmd(*suite, *half, *mutate, only.clone(), cli.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
