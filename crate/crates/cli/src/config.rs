//! TOML experiment configs. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stirring_core::cylinder::{CylinderFunction, RateFamily};
use stirring_core::field::TestFunction;
use stirring_core::kmc::{default_a_n, EventMode, InitialLaw, SamplerChoice, SimParams};
use stirring_core::stats::{InitialDensity, Preset};
use stirring_core::Torus;

use crate::ConfigError;

fn default_outdir() -> PathBuf {
    PathBuf::from("runs")
}

/// `a_n` as a number or the keyword `"sqrt_log_n"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnSpec {
    Value(f64),
    Named(String),
}

impl Default for AnSpec {
    fn default() -> Self {
        AnSpec::Named("sqrt_log_n".into())
    }
}

impl AnSpec {
    pub fn resolve(&self, n: usize) -> Result<f64, ConfigError> {
        match self {
            AnSpec::Value(v) => Ok(*v),
            AnSpec::Named(s) if s == "sqrt_log_n" => Ok(default_a_n(n)),
            AnSpec::Named(s) => Err(ConfigError(format!(
                "a_n: expected a number or \"sqrt_log_n\", got {s:?}"
            ))),
        }
    }
}

/// `"ssep"`, `"speed_change"` or an inline list `c = [...]` of cylinder
/// functions, one per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatesSpec {
    Named(String),
    Inline { c: Vec<CylinderFunction> },
}

impl Default for RatesSpec {
    fn default() -> Self {
        RatesSpec::Named("ssep".into())
    }
}

impl RatesSpec {
    pub fn resolve(&self, d: usize) -> Result<RateFamily, ConfigError> {
        match self {
            RatesSpec::Named(s) if s == "ssep" => Ok(RateFamily::ssep(d)),
            RatesSpec::Named(s) if s == "speed_change" => {
                if d != 1 {
                    return Err(ConfigError(
                        "the speed_change example is one-dimensional".into(),
                    ));
                }
                Ok(Preset::SpeedChange.rates())
            }
            RatesSpec::Named(s) => Err(ConfigError(format!(
                "rates: expected \"ssep\", \"speed_change\" or {{ c = [...] }}, got {s:?}"
            ))),
            RatesSpec::Inline { c } => RateFamily::new(d, c.clone()).map_err(ConfigError::from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub n: usize,
    pub rho: f64,
    #[serde(default)]
    pub a_n: AnSpec,
    #[serde(default)]
    pub rates: RatesSpec,
    #[serde(default)]
    pub event_mode: EventMode,
    #[serde(default)]
    pub sampler: SamplerChoice,
    #[serde(default)]
    pub resync_every: Option<u64>,
}

impl ModelConfig {
    pub fn sim_params(&self) -> Result<SimParams, ConfigError> {
        let torus = Torus::new(self.d, self.n)?;
        let rates = self.rates.resolve(self.d)?;
        let mut p = SimParams::new(torus, self.rho, self.a_n.resolve(self.n)?, rates)?;
        p.event_mode = self.event_mode;
        p.sampler = self.sampler;
        if let Some(r) = self.resync_every {
            p.resync_every = r.max(1);
        }
        Ok(p)
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub replicas: u64,
    pub sample_times: Vec<f64>,
    pub observables: Vec<TestFunction>,
    #[serde(default = "default_true")]
    pub martingale: bool,
    #[serde(default = "default_true")]
    pub write_traces: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_outdir")]
    pub outdir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    pub model: ModelConfig,
    /// Defaults to Bernoulli at the model density.
    #[serde(default)]
    pub initial: Option<InitialLaw>,
    pub simulate: SimulateSection,
}

pub fn default_bg_f() -> CylinderFunction {
    CylinderFunction::eta(&[0]).mul(&CylinderFunction::eta(&[1]))
}

pub fn default_bg_g() -> TestFunction {
    TestFunction::constant(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BgConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_outdir")]
    pub outdir: PathBuf,
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "one")]
    pub d: usize,
    pub ns: Vec<usize>,
    pub rho: f64,
    #[serde(default)]
    pub a_n: AnSpec,
    #[serde(default)]
    pub rates: RatesSpec,
    #[serde(default)]
    pub event_mode: EventMode,
    pub t: f64,
    pub replicas: u64,
    #[serde(default = "default_bg_f")]
    pub f: CylinderFunction,
    #[serde(default = "default_bg_g")]
    pub g: TestFunction,
}

fn one() -> usize {
    1
}

/// Initial law of an exact entropy run: `"full"`, `"empty"` or
/// `"bernoulli:<rho>"`.
pub fn parse_mu0(s: &str) -> Result<InitialDensity, ConfigError> {
    match s {
        "full" => Ok(InitialDensity::Full),
        "empty" => Ok(InitialDensity::Empty),
        _ => {
            let rho = s
                .strip_prefix("bernoulli:")
                .and_then(|r| r.parse::<f64>().ok())
                .ok_or_else(|| {
                    ConfigError(format!(
                        "mu0: expected full, empty or bernoulli:<rho>, got {s:?}"
                    ))
                })?;
            Ok(InitialDensity::Bernoulli { rho })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    #[serde(default = "default_outdir")]
    pub outdir: PathBuf,
    #[serde(default = "one")]
    pub d: usize,
    pub ns: Vec<usize>,
    pub a_ns: Vec<f64>,
    pub rhos: Vec<f64>,
    pub mu0: Vec<InitialDensity>,
    #[serde(default)]
    pub rates: RatesSpec,
    pub t_max: f64,
    pub points: usize,
}

pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))
}

/// Parses `"1..4"` (inclusive) or `"1,2,5"`.
pub fn parse_list<T>(s: &str) -> Result<Vec<T>, ConfigError>
where
    T: std::str::FromStr + Copy + TryFrom<i64>,
{
    let bad = || ConfigError(format!("cannot parse list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (i64, i64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if b < a {
            return Err(bad());
        }
        return (a..=b).map(|v| T::try_from(v).map_err(|_| bad())).collect();
    }
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| bad()))
        .collect()
}

pub fn parse_floats(s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| ConfigError(format!("cannot parse number {p:?}")))
        })
        .collect()
}
