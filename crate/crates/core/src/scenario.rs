//! Closed catalog of initial metrics.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::HomogeneousModel;
use crate::geometry::{covariant_gradient, sobolev_norm, Background, SobolevSpec};
use crate::grid::{CovTensorField, GridSpec, MetricField, SymTensorField};
use crate::linalg;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Flat,
    ConformalBump,
    Tent,
    RandomW1p,
    HomogeneousEinstein,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [Self::Flat, Self::ConformalBump, Self::Tent, Self::RandomW1p, Self::HomogeneousEinstein];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Flat => "flat",
            Self::ConformalBump => "conformal_bump",
            Self::Tent => "tent",
            Self::RandomW1p => "random_w1p",
            Self::HomogeneousEinstein => "homogeneous_einstein",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Self::Flat => "Euclidean metric on the torus",
            Self::ConformalBump => "g = exp(2 amplitude sin(2 pi frequency x1)) delta",
            Self::Tent => "g = (1 + amplitude hat(x1)) delta, Lipschitz with two kinks",
            Self::RandomW1p => "seeded band-limited conformal factor with a kink and a small off-diagonal term",
            Self::HomogeneousEinstein => "constant metric driven by the Einstein scalar ODE with R(0) = a",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|n| n.as_str() == s).ok_or_else(|| Error::BadScenario(format!("unknown scenario '{s}'")))
    }
}

/// Generator parameters. Unused keys are rejected by [`Scenario::validate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, rename = "N", skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: ScenarioName,
    #[serde(default)]
    pub parameters: ScenarioParams,
    #[serde(default)]
    pub description: String,
}

const TENT_AMPLITUDE: f64 = 0.2;
const BUMP_AMPLITUDE: f64 = 0.1;
const RANDOM_AMPLITUDE: f64 = 0.05;
const RANDOM_MODES: usize = 6;
const RANDOM_MAX_FREQUENCY: i32 = 2;

impl Scenario {
    pub fn new(name: ScenarioName) -> Self {
        Self { name, parameters: ScenarioParams::default(), description: name.summary().to_string() }
    }

    pub fn tent() -> Self {
        Self::new(ScenarioName::Tent)
    }

    pub fn conformal_bump() -> Self {
        Self::new(ScenarioName::ConformalBump)
    }

    pub fn random_w1p(seed: u64) -> Self {
        let mut s = Self::new(ScenarioName::RandomW1p);
        s.parameters.seed = Some(seed);
        s
    }

    pub fn homogeneous(a: f64, n: usize) -> Self {
        let mut s = Self::new(ScenarioName::HomogeneousEinstein);
        s.parameters.a = Some(a);
        s.parameters.n = Some(n);
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::BadScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn amplitude(&self) -> f64 {
        self.parameters.amplitude.unwrap_or(match self.name {
            ScenarioName::Tent => TENT_AMPLITUDE,
            ScenarioName::RandomW1p => RANDOM_AMPLITUDE,
            _ => BUMP_AMPLITUDE,
        })
    }

    pub fn frequency(&self) -> u32 {
        self.parameters.frequency.unwrap_or(1)
    }

    pub fn sobolev_p(&self) -> f64 {
        self.parameters.p.unwrap_or(crate::distributional::DEFAULT_P)
    }

    /// Checks the parameters against the generator's schema.
    pub fn validate(&self) -> Result<()> {
        let p = &self.parameters;
        let bad = |msg: String| Err(Error::BadScenario(format!("{}: {msg}", self.name)));
        let allowed: &[&str] = match self.name {
            ScenarioName::Flat => &["n", "N"],
            ScenarioName::ConformalBump => &["amplitude", "frequency", "n", "N"],
            ScenarioName::Tent => &["amplitude", "n", "N"],
            ScenarioName::RandomW1p => &["amplitude", "seed", "p", "n", "N"],
            ScenarioName::HomogeneousEinstein => &["a", "n", "N"],
        };
        let present = [
            ("amplitude", p.amplitude.is_some()),
            ("frequency", p.frequency.is_some()),
            ("seed", p.seed.is_some()),
            ("p", p.p.is_some()),
            ("a", p.a.is_some()),
            ("n", p.n.is_some()),
            ("N", p.grid_n.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                return bad(format!("parameter '{key}' does not apply"));
            }
        }
        if let Some(amp) = p.amplitude {
            let limit = if self.name == ScenarioName::Tent { 1.0 } else { 0.5 };
            if !(amp.is_finite() && amp.abs() < limit) {
                return bad(format!("amplitude {amp} outside (-{limit}, {limit})"));
            }
        }
        if p.frequency == Some(0) {
            return bad("frequency must be positive".into());
        }
        if self.name == ScenarioName::RandomW1p && p.seed.is_none() {
            return bad("seed is mandatory".into());
        }
        if let Some(n) = p.n {
            if !(1..=linalg::MAX_DIM).contains(&n) {
                return bad(format!("dimension {n} outside 1..={}", linalg::MAX_DIM));
            }
        }
        if let Some(a) = p.a {
            if !a.is_finite() {
                return bad("a must be finite".into());
            }
        }
        if let Some(pp) = p.p {
            let n = p.n.unwrap_or(2) as f64;
            if !(pp > n) {
                return bad(format!("p = {pp} must exceed n = {n}"));
            }
        }
        Ok(())
    }

    /// Grid implied by the `n`/`N` parameters, falling back to the given values.
    pub fn grid(&self, dim: usize, n: usize) -> Result<GridSpec> {
        GridSpec::new(self.parameters.n.unwrap_or(dim), self.parameters.grid_n.unwrap_or(n))
    }

    /// Scalar ODE driving the homogeneous channel.
    pub fn model(&self, dim: usize) -> Option<HomogeneousModel> {
        (self.name == ScenarioName::HomogeneousEinstein).then(|| HomogeneousModel { n: self.parameters.n.unwrap_or(dim), a: self.parameters.a.unwrap_or(-1.0) })
    }
}

/// Periodic unit hat: 0 at the origin, 1 at x = 1/2.
pub fn hat(x: f64) -> f64 {
    1.0 - 2.0 * (x.rem_euclid(1.0) - 0.5).abs()
}

struct Mode {
    k: [i32; linalg::MAX_DIM],
    weight: f64,
    phase: f64,
}

fn random_modes(dim: usize, seed: u64) -> (Vec<Mode>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::with_capacity(RANDOM_MODES);
    while modes.len() < RANDOM_MODES {
        let mut k = [0i32; linalg::MAX_DIM];
        for slot in k.iter_mut().take(dim) {
            *slot = rng.gen_range(-RANDOM_MAX_FREQUENCY..=RANDOM_MAX_FREQUENCY);
        }
        if k.iter().all(|&c| c == 0) {
            continue;
        }
        modes.push(Mode { k, weight: rng.gen_range(-1.0..1.0), phase: rng.gen_range(0.0..std::f64::consts::TAU) });
    }
    let total: f64 = modes.iter().map(|m| m.weight.abs()).sum();
    for m in &mut modes {
        m.weight /= total;
    }
    (modes, rng.gen_range(0.0..std::f64::consts::TAU))
}

/// Samples the scenario's initial metric on `grid`.
pub fn generate<S: Real>(scenario: &Scenario, grid: GridSpec) -> Result<MetricField<S>> {
    scenario.validate()?;
    let p = &scenario.parameters;
    if p.n.is_some_and(|n| n != grid.dim) || p.grid_n.is_some_and(|n| n != grid.n) {
        return Err(Error::BadScenario(format!("{}: parameters fix a grid other than {}^{}", scenario.name, grid.n, grid.dim)));
    }
    let dim = grid.dim;
    let amp = scenario.amplitude();
    let conformal = |c: f64| {
        let mut m = linalg::identity::<S>(dim);
        for (i, row) in m.iter_mut().enumerate().take(dim) {
            row[i] = S::lit(c);
        }
        m
    };
    let t = match scenario.name {
        ScenarioName::Flat | ScenarioName::HomogeneousEinstein => SymTensorField::scalar_identity(grid, S::one()),
        ScenarioName::ConformalBump => {
            let f = scenario.frequency() as f64;
            SymTensorField::from_fn(grid, |x: &[S]| {
                let u = amp * (std::f64::consts::TAU * f * x[0].to_f64_lossy()).sin();
                conformal((2.0 * u).exp())
            })
        }
        ScenarioName::Tent => {
            if grid.n < 8 {
                return Err(Error::BadScenario(format!("tent needs N >= 8 to resolve its kinks, got {}", grid.n)));
            }
            SymTensorField::from_fn(grid, |x: &[S]| conformal(1.0 + amp * hat(x[0].to_f64_lossy())))
        }
        ScenarioName::RandomW1p => {
            let seed = p.seed.expect("validated");
            let (modes, shear_phase) = random_modes(dim, seed);
            let kink = 0.5 * amp;
            let shear = 0.25 * amp;
            SymTensorField::from_fn(grid, |x: &[S]| {
                let xs: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
                let u: f64 = modes
                    .iter()
                    .map(|m| {
                        let arg: f64 = (0..dim).map(|i| m.k[i] as f64 * xs[i]).sum();
                        m.weight * (std::f64::consts::TAU * arg + m.phase).cos()
                    })
                    .sum::<f64>()
                    * amp;
                let c = (2.0 * u).exp() * (1.0 + kink * hat(xs[dim - 1]));
                let mut m = conformal(c);
                if dim > 1 {
                    let s = S::lit(c * shear * (std::f64::consts::TAU * (xs[0] + xs[1]) + shear_phase).sin());
                    m[0][1] = s;
                    m[1][0] = s;
                }
                m
            })
        }
    };
    MetricField::new(t)
}

/// `‖∂g‖_{L^p}` against the flat background.
pub fn gradient_lp<S: Real>(g: &MetricField<S>, p: f64) -> Result<S> {
    let flat = Background::new(&MetricField::flat(g.grid()))?;
    let grad = covariant_gradient(&CovTensorField::from_sym(g.tensor()), &flat)?;
    sobolev_norm(&grad, &flat, SobolevSpec::dual(0, p))
}
