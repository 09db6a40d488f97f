//! Run configuration: a TOML file with a versioned schema.
//!
//! Numeric fields accept plain numbers or π-multiples written as strings:
//! `"pi"`, `"8pi"`, `"-0.5pi"`, `"128pi/9"`.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use multichemo::dynamics::{Regime, Variant};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Cell-count cap per axis; keeps a typo from allocating a huge grid.
pub const MAX_CELLS_PER_AXIS: usize = 4096;

/// A number that may be given as a π-multiple string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Num(pub f64);

pub fn parse_num(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a.trim(), Some(b.trim())),
        None => (s, None),
    };
    let bad = || format!("cannot read {s:?} as a number or a multiple of pi");
    let value = match num.strip_suffix("pi") {
        Some("") => PI,
        Some("-") => -PI,
        Some(c) => c.trim().parse::<f64>().map_err(|_| bad())? * PI,
        None => num.parse::<f64>().map_err(|_| bad())?,
    };
    let value = match den {
        Some(d) => {
            let d: f64 = d.parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            value / d
        }
        None => value,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(bad())
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Num;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a string such as \"8pi\"")
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Num, E> {
                Ok(Num(v))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Num, E> {
                parse_num(v).map(Num).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            Self::One(x) => vec![x.clone()],
            Self::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Square,
    Rectangle,
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub shape: Shape,
    /// Square: cells per side. Disk: cells across the diameter.
    pub n: Option<usize>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub lx: Option<Num>,
    pub ly: Option<Num>,
    pub radius: Option<Num>,
    pub center: Option<[Num; 2]>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { shape: Shape::Square, n: Some(64), nx: None, ny: None, lx: None, ly: None, radius: None, center: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub alpha: Num,
    pub weight: Num,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    KellerSegel,
    TwoSpecies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub preset: Option<Preset>,
    pub tau: Option<Num>,
    pub alpha1: Option<Num>,
    pub alpha2: Option<Num>,
    pub atoms: Option<Vec<AtomConfig>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeName {
    Full,
    Smoluchowski,
    MeanfieldAverage,
    MeanfieldIndividual,
}

impl From<RegimeName> for Regime {
    fn from(r: RegimeName) -> Self {
        match r {
            RegimeName::Full => Regime::Full,
            RegimeName::Smoluchowski => Regime::Smoluchowski,
            RegimeName::MeanfieldAverage => Regime::MeanfieldAverage,
            RegimeName::MeanfieldIndividual => Regime::MeanfieldIndividual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPolicy {
    Fixed,
    Cfl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotFormat {
    Binary,
    Csv,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub regime: RegimeName,
    pub delta: Option<OneOrMany<Num>>,
    pub epsilon: Option<Num>,
    pub time_step: Option<StepPolicy>,
    pub dt: Option<Num>,
    pub safety: Option<Num>,
    pub max_dt: Option<Num>,
    pub horizon: Option<Num>,
    pub cadence: Option<usize>,
    pub max_steps: Option<usize>,
    pub steady_tol: Option<Num>,
    pub collapse_fraction: Option<Num>,
    #[serde(default)]
    pub snapshot_times: Vec<Num>,
    pub snapshot_format: Option<SnapshotFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    Uniform,
    GaussianBump,
    File,
}

/// Density regimes: every species starts from the same profile of total mass
/// `mass`. Mean-field regimes: `v⁰ = G ∗ (profile)`, or the file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub kind: InitialKind,
    /// Defaults to `lambda`.
    pub mass: Option<Num>,
    pub center: Option<[Num; 2]>,
    pub width: Option<Num>,
    /// Binary snapshots: one per species, or a single one used for all.
    pub path: Option<OneOrMany<PathBuf>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BubblesConfig {
    /// Mass sweep; defaults to `[lambda]`.
    pub lambdas: Option<Vec<Num>>,
    pub eta: Option<Num>,
    pub epsilons: Option<Vec<Num>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    Average,
    Individual,
}

impl From<VariantName> for Variant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::Average => Variant::Average,
            VariantName::Individual => Variant::Individual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    pub trials: Option<usize>,
    /// Use `v ≡ 0` (and uniform densities) instead of random fields.
    pub zero: Option<bool>,
    pub variant: Option<VariantName>,
    /// Finite-difference step of the gradient check.
    pub step: Option<Num>,
    pub tolerance: Option<Num>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub lambda: Option<Num>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    pub simulation: Option<SimulationConfig>,
    pub initial: Option<InitialConfig>,
    pub bubbles: Option<BubblesConfig>,
    pub checks: Option<ChecksConfig>,
}
