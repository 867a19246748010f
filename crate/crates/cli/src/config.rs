//! Experiment configuration: a TOML file with one table per experiment kind.
//!
//! ```toml
//! experiment = "counterexample"
//! seed = 1
//!
//! [counterexample]
//! p = 2
//! m = 64
//! j_max = 4
//! n = 100000
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Walk,
    Transport,
    Approxhom,
    Counterexample,
    Ift,
    Bch,
    Entropy,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Walk => "walk",
            Self::Transport => "transport",
            Self::Approxhom => "approxhom",
            Self::Counterexample => "counterexample",
            Self::Ift => "ift",
            Self::Bch => "bch",
            Self::Entropy => "entropy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkConfig {
    /// SL₂(Z/p) with the elementary generators [[1,±1],[0,1]], [[1,0],[±1,1]].
    pub primes: Vec<u64>,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self { primes: vec![3, 5, 7, 11, 13] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    /// Rows of rational entries such as "1/4".
    pub coupling: Vec<Vec<String>>,
    /// When set, the matrix is also repaired into a coupling of uniforms with this A.
    pub a: Option<f64>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        let q = || "1/4".to_string();
        Self { coupling: vec![vec![q(), q()], vec![q(), q()]], a: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxHomMode {
    /// θ-pipeline for noisy conjugations of SU(2).
    Real,
    /// Hensel lifts of Ad(g) mod p^input_level on sl₂(Z_p).
    Padic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproxHomConfig {
    pub mode: ApproxHomMode,
    pub count: usize,
    pub rho: f64,
    pub k: u32,
    pub noise: f64,
    pub p: u64,
    pub input_level: u32,
    pub target_level: u32,
}

impl Default for ApproxHomConfig {
    fn default() -> Self {
        Self { mode: ApproxHomMode::Real, count: 5, rho: 0.1, k: 3, noise: 1e-4, p: 5, input_level: 3, target_level: 15 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingChoice {
    Block,
    Product,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleConfig {
    pub p: u64,
    pub m: usize,
    pub j_max: u32,
    pub n: usize,
    pub coupling: CouplingChoice,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self { p: 2, m: 64, j_max: 4, n: 100_000, coupling: CouplingChoice::Block }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IftMode {
    Real,
    Padic,
    /// Calibrates the commutator-openness constant ĉ.
    Commutator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IftConfig {
    pub mode: IftMode,
    pub maps: usize,
    pub targets: usize,
    pub p: u64,
    pub precision: u32,
    pub k0: u32,
    pub rho1: f64,
    pub rho2: f64,
}

impl Default for IftConfig {
    fn default() -> Self {
        Self { mode: IftMode::Real, maps: 10, targets: 100, p: 5, precision: 20, k0: 0, rho1: 0.1, rho2: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BchConfig {
    pub pairs: usize,
    pub radius: f64,
    pub order: u32,
    pub etas: Vec<f64>,
}

impl Default for BchConfig {
    fn default() -> Self {
        Self { pairs: 1000, radius: 0.05, order: 4, etas: vec![0.1, 0.05, 0.025] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyConfig {
    /// Couplings on (Z/n)².
    pub n: usize,
    pub eta: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self { n: 8, eta: 0.5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub walk: WalkConfig,
    pub transport: TransportConfig,
    pub approxhom: ApproxHomConfig,
    pub counterexample: CounterexampleConfig,
    pub ift: IftConfig,
    pub bch: BchConfig,
    pub entropy: EntropyConfig,
}

pub const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("no experiment selected")]
    NoExperiment,
    #[error("invalid config:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

fn is_prime(p: u64) -> bool {
    p >= 2 && (2..).take_while(|d| d * d <= p).all(|d| p % d != 0)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn kind(&self) -> Result<ExperimentKind, ConfigError> {
        self.experiment.ok_or(ConfigError::NoExperiment)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    /// Checks the section of the selected experiment against the preconditions of the operations it calls.
    pub fn validate(&self) -> Result<ExperimentKind, ConfigError> {
        let kind = self.kind()?;
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: String| errs.push(FieldError { field: field.to_string(), message });
        match kind {
            ExperimentKind::Walk => {
                let w = &self.walk;
                if w.primes.is_empty() {
                    bad("walk.primes", "must list at least one prime".into());
                }
                for &p in &w.primes {
                    if !is_prime(p) || p > 13 {
                        bad("walk.primes", format!("{p} is not a prime in 2..=13"));
                    }
                }
            }
            ExperimentKind::Transport => {
                let t = &self.transport;
                if t.coupling.is_empty() || t.coupling.iter().any(|r| r.len() != t.coupling[0].len() || r.is_empty()) {
                    bad("transport.coupling", "must be a non-empty rectangular matrix".into());
                }
                for (i, row) in t.coupling.iter().enumerate() {
                    for (j, x) in row.iter().enumerate() {
                        match BigRational::from_str(x.trim()) {
                            Ok(v) if v >= BigRational::from_integer(0.into()) => {}
                            Ok(_) => bad("transport.coupling", format!("entry ({i}, {j}) = {x} is negative")),
                            Err(_) => bad("transport.coupling", format!("entry ({i}, {j}) = {x:?} is not a rational number")),
                        }
                    }
                }
                if let Some(a) = t.a {
                    if !(a > 2.0) {
                        bad("transport.a", format!("correct_coupling requires A > 2, got {a}"));
                    }
                }
            }
            ExperimentKind::Approxhom => {
                let c = &self.approxhom;
                if c.count == 0 {
                    bad("approxhom.count", "must be positive".into());
                }
                match c.mode {
                    ApproxHomMode::Real => {
                        if !(c.rho > 0.0 && c.rho <= 0.25) {
                            bad("approxhom.rho", format!("must lie in (0, 1/4], got {}", c.rho));
                        }
                        if c.k == 0 || c.k > 8 {
                            bad("approxhom.k", format!("must lie in 1..=8, got {}", c.k));
                        }
                        if !(c.noise >= 0.0 && c.noise < 0.1) {
                            bad("approxhom.noise", format!("must lie in [0, 0.1), got {}", c.noise));
                        }
                    }
                    ApproxHomMode::Padic => {
                        if c.p < 5 || !is_prime(c.p) {
                            bad("approxhom.p", format!("must be a prime >= 5, got {}", c.p));
                        }
                        if c.input_level < 2 || c.input_level >= c.target_level {
                            bad("approxhom.input_level", format!("need 2 <= input_level < target_level, got {} and {}", c.input_level, c.target_level));
                        }
                        if (c.p as f64).powi(c.target_level as i32) >= 2f64.powi(62) {
                            bad("approxhom.target_level", format!("{}^{} exceeds 2^62", c.p, c.target_level));
                        }
                    }
                }
            }
            ExperimentKind::Counterexample => {
                let c = &self.counterexample;
                if !is_prime(c.p) || c.p > 251 {
                    bad("counterexample.p", format!("must be a prime below 256, got {}", c.p));
                }
                if c.m < 4 || !c.m.is_power_of_two() {
                    bad("counterexample.m", format!("must be a power of two >= 4, got {}", c.m));
                }
                if c.j_max == 0 || c.j_max >= 60 || (1usize << (c.j_max + 1)) > c.m {
                    bad("counterexample.j_max", format!("need 1 <= j_max and 2^(j_max+1) <= m, got {}", c.j_max));
                }
                if c.n == 0 {
                    bad("counterexample.n", "must be positive".into());
                }
            }
            ExperimentKind::Ift => {
                let c = &self.ift;
                match c.mode {
                    IftMode::Real => {}
                    IftMode::Padic => {
                        if !is_prime(c.p) {
                            bad("ift.p", format!("{} is not prime", c.p));
                        }
                        if c.k0 + 3 >= c.precision || (c.p as f64).powi(c.precision as i32) >= 2f64.powi(62) {
                            bad("ift.precision", format!("need k0 + 3 < precision and p^precision < 2^62, got {}", c.precision));
                        }
                    }
                    IftMode::Commutator => {
                        for (name, r) in [("ift.rho1", c.rho1), ("ift.rho2", c.rho2)] {
                            if !(r > 0.0 && r <= 0.5) {
                                bad(name, format!("must lie in (0, 1/2], got {r}"));
                            }
                        }
                    }
                }
                if c.maps == 0 || c.targets == 0 {
                    bad("ift.maps", "maps and targets must be positive".into());
                }
            }
            ExperimentKind::Bch => {
                let c = &self.bch;
                if !(c.radius > 0.0 && c.radius < 0.5) {
                    bad("bch.radius", format!("must lie in (0, 1/2), got {}", c.radius));
                }
                if !(1..=5).contains(&c.order) {
                    bad("bch.order", format!("must lie in 1..=5, got {}", c.order));
                }
                if c.etas.iter().any(|&e| !(e > 0.0 && e < 0.5)) {
                    bad("bch.etas", "every η must lie in (0, 1/2)".into());
                }
                if c.pairs == 0 {
                    bad("bch.pairs", "must be positive".into());
                }
            }
            ExperimentKind::Entropy => {
                let c = &self.entropy;
                if c.n < 2 || c.n > 64 {
                    bad("entropy.n", format!("must lie in 2..=64, got {}", c.n));
                }
                if !(c.eta >= 0.0 && c.eta < 1.0) {
                    bad("entropy.eta", format!("must lie below the minimum distance 1, got {}", c.eta));
                }
            }
        }
        if errs.is_empty() {
            Ok(kind)
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}
