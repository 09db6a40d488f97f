//! Turns a parsed [`RunConfig`] into core objects, reporting every problem
//! against the line of the offending key (or the flag that overrode it).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use multichemo::bubbles::{validate_ladder, DEFAULT_LADDER};
use multichemo::dynamics::{Regime, TimeStep, Variant};
use multichemo::snapshot::{field_from_snapshot, read_binary};
use multichemo::{Field64, Grid64, Measure64, SimConfig64};

use crate::config::*;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}: {}", self.origin, self.message)
        } else {
            write!(f, "{}: {}: {}", self.origin, self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

pub type Checked<T> = std::result::Result<T, ConfigError>;

/// Line (1-based) of `key` inside table `section` (`""` for the top level).
/// Falls back to the table header when the key is absent.
pub fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = if section.is_empty() { Some(1) } else { None };
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current != section || key.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            let rest = rest.trim_start();
            if rest.starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    header
}

/// Parsed config plus what is needed to point at its lines.
pub struct Source<'a> {
    pub config: RunConfig,
    pub text: &'a str,
    pub path: String,
    /// `section.key` → flag name, for values set on the command line.
    pub overrides: BTreeMap<String, String>,
}

impl<'a> Source<'a> {
    pub fn parse(text: &'a str, path: &str) -> Checked<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError {
            origin: path.to_string(),
            key: String::new(),
            message: e.to_string().trim_end().replace('\n', "\n  "),
        })?;
        let source = Self { config, text, path: path.to_string(), overrides: BTreeMap::new() };
        if source.config.schema_version != SCHEMA_VERSION {
            return Err(source.err(
                "",
                "schema_version",
                format!("unsupported schema version {}, expected {SCHEMA_VERSION}", source.config.schema_version),
            ));
        }
        Ok(source)
    }

    pub fn err(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        let dotted = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        let origin = match self.overrides.get(&dotted) {
            Some(flag) => flag.clone(),
            None => match locate(self.text, section, key) {
                Some(line) => format!("{}:{line}", self.path),
                None => self.path.clone(),
            },
        };
        ConfigError { origin, key: dotted, message: message.into() }
    }

    pub fn grid(&self) -> Checked<Grid64> {
        let g = &self.config.geometry;
        let s = "geometry";
        let cells = |key: &str, n: Option<usize>, min: usize| -> Checked<usize> {
            let n = n.ok_or_else(|| self.err(s, key, "required for this shape"))?;
            if n < min || n > MAX_CELLS_PER_AXIS {
                return Err(self.err(s, key, format!("must lie in [{min}, {MAX_CELLS_PER_AXIS}], got {n}")));
            }
            Ok(n)
        };
        let length = |key: &str, x: Option<Num>, default: f64| -> Checked<f64> {
            let x = x.map_or(default, |x| x.0);
            if x > 0.0 && x.is_finite() {
                Ok(x)
            } else {
                Err(self.err(s, key, format!("must be positive, got {x}")))
            }
        };
        let grid = match g.shape {
            Shape::Square => Grid64::unit_square(cells("n", g.n, 1)?),
            Shape::Rectangle => Grid64::rectangle(
                length("lx", g.lx, 1.0)?,
                length("ly", g.ly, 1.0)?,
                cells("nx", g.nx, 1)?,
                cells("ny", g.ny, 1)?,
            ),
            Shape::Disk => {
                let center = g.center.map_or([0.0, 0.0], |c| [c[0].0, c[1].0]);
                Grid64::disk(length("radius", g.radius, 1.0)?, center, cells("n", g.n, 3)?)
            }
        };
        grid.map_err(|e| self.err(s, "", e.to_string()))
    }

    pub fn measure(&self) -> Checked<Measure64> {
        let m = &self.config.measure;
        let s = "measure";
        match (&m.preset, &m.atoms) {
            (Some(_), Some(_)) => Err(self.err(s, "atoms", "give either a preset or an atom list, not both")),
            (None, Some(atoms)) => {
                let pairs: Vec<(f64, f64)> = atoms.iter().map(|a| (a.alpha.0, a.weight.0)).collect();
                Measure64::new(&pairs).map_err(|e| self.err(s, "atoms", e.to_string()))
            }
            (None, None) | (Some(Preset::KellerSegel), None) => {
                for (key, v) in [("tau", m.tau), ("alpha1", m.alpha1), ("alpha2", m.alpha2)] {
                    if v.is_some() {
                        return Err(self.err(s, key, "only used by the two-species preset"));
                    }
                }
                Ok(Measure64::keller_segel())
            }
            (Some(Preset::TwoSpecies), None) => {
                let need = |key: &str, v: Option<Num>| {
                    v.map(|x| x.0).ok_or_else(|| self.err(s, key, "required by the two-species preset"))
                };
                let tau = need("tau", m.tau)?;
                if !(tau > 0.0 && tau < 1.0) {
                    return Err(self.err(s, "tau", format!("must lie in (0, 1), got {tau}")));
                }
                let a1 = need("alpha1", m.alpha1)?;
                let a2 = need("alpha2", m.alpha2)?;
                Measure64::two_species(tau, a1, a2).map_err(|e| self.err(s, "alpha1", e.to_string()))
            }
        }
    }

    pub fn lambda(&self) -> Checked<f64> {
        let l = self
            .config
            .lambda
            .ok_or_else(|| self.err("", "lambda", "required (set it in the config or pass --lambda)"))?
            .0;
        if l > 0.0 {
            Ok(l)
        } else {
            Err(self.err("", "lambda", format!("must be positive, got {l}")))
        }
    }

    pub fn seed(&self) -> u64 {
        self.config.seed.unwrap_or(0)
    }

    pub fn simulation(&self, measure: &Measure64) -> Checked<(SimConfig64, SnapshotFormat)> {
        let s = "simulation";
        let sim = self.config.simulation.as_ref().ok_or_else(|| self.err(s, "", "missing [simulation] table"))?;
        let regime: Regime = sim.regime.into();
        let mut cfg = SimConfig64::new(regime);
        let positive = |key: &str, v: Option<Num>| -> Checked<Option<f64>> {
            match v {
                Some(Num(x)) if !is_positive(x) => Err(self.err(s, key, format!("must be positive, got {x}"))),
                v => Ok(v.map(|x| x.0)),
            }
        };
        if let Some(delta) = &sim.delta {
            let d: Vec<f64> = delta.to_vec().iter().map(|x| x.0).collect();
            if d.len() != 1 && d.len() != measure.len() {
                return Err(self.err(
                    s,
                    "delta",
                    format!("has {} entries, measure has {} atoms", d.len(), measure.len()),
                ));
            }
            if d.iter().any(|&x| !is_positive(x)) {
                return Err(self.err(s, "delta", "every entry must be positive"));
            }
            cfg.delta = d;
        }
        if let Some(e) = positive("epsilon", sim.epsilon)? {
            if regime != Regime::Full {
                return Err(self.err(s, "epsilon", "only used by the full regime"));
            }
            cfg.epsilon = e;
        }
        if !regime.evolves_density() {
            cfg.lambda = Some(self.lambda()?);
        }
        let dt = positive("dt", sim.dt)?;
        let safety = positive("safety", sim.safety)?;
        let max_dt = positive("max_dt", sim.max_dt)?;
        let policy = sim.time_step.unwrap_or(if dt.is_some() { StepPolicy::Fixed } else { StepPolicy::Cfl });
        cfg.time_step = match policy {
            StepPolicy::Fixed => {
                if safety.is_some() || max_dt.is_some() {
                    let key = if safety.is_some() { "safety" } else { "max_dt" };
                    return Err(self.err(s, key, "only used with time_step = \"cfl\""));
                }
                TimeStep::Fixed { dt: dt.ok_or_else(|| self.err(s, "dt", "required with time_step = \"fixed\""))? }
            }
            StepPolicy::Cfl => {
                if dt.is_some() {
                    return Err(self.err(s, "dt", "only used with time_step = \"fixed\" (use max_dt)"));
                }
                let safety = safety.unwrap_or(0.5);
                if safety > 1.0 {
                    return Err(self.err(s, "safety", format!("must lie in (0, 1], got {safety}")));
                }
                TimeStep::Cfl { safety, max_dt: max_dt.unwrap_or(1e-3) }
            }
        };
        if let Some(Num(t)) = sim.horizon {
            if !t.is_finite() || t < 0.0 {
                return Err(self.err(s, "horizon", format!("must be finite and nonnegative, got {t}")));
            }
            cfg.horizon = t;
        }
        if let Some(c) = sim.cadence {
            if c == 0 {
                return Err(self.err(s, "cadence", "must be at least 1"));
            }
            cfg.cadence = c;
        }
        if let Some(m) = sim.max_steps {
            cfg.max_steps = m;
        }
        if let Some(tol) = sim.steady_tol {
            if tol.0.is_nan() || tol.0 < 0.0 {
                return Err(self.err(s, "steady_tol", "must be nonnegative"));
            }
            cfg.steady_tol = tol.0;
        }
        if let Some(f) = positive("collapse_fraction", sim.collapse_fraction)? {
            if f > 1.0 {
                return Err(self.err(s, "collapse_fraction", format!("must lie in (0, 1], got {f}")));
            }
            cfg.collapse_fraction = f;
        }
        for t in &sim.snapshot_times {
            if !(t.0 >= 0.0 && t.0 <= cfg.horizon) {
                return Err(self.err(s, "snapshot_times", format!("{} lies outside [0, horizon]", t.0)));
            }
        }
        cfg.snapshot_times = sim.snapshot_times.iter().map(|t| t.0).collect();
        cfg.validate(measure).map_err(|e| self.err(s, "", e.to_string()))?;
        Ok((cfg, sim.snapshot_format.unwrap_or(SnapshotFormat::Binary)))
    }

    /// Initial data for a run; file inputs are read and matched against `grid` here.
    pub fn initial(&self, grid: &Grid64, measure: &Measure64, regime: Regime, base: &Path) -> Checked<InitialData> {
        let s = "initial";
        let Some(init) = &self.config.initial else {
            return Ok(InitialData::Profile(Field64::constant(grid, self.initial_mass(None)? / grid.area())));
        };
        let stray = |key: &str, present: bool| {
            if present {
                Err(self.err(s, key, format!("not used by kind {:?}", init.kind)))
            } else {
                Ok(())
            }
        };
        match init.kind {
            InitialKind::Uniform => {
                stray("center", init.center.is_some())?;
                stray("width", init.width.is_some())?;
                stray("path", init.path.is_some())?;
                Ok(InitialData::Profile(Field64::constant(grid, self.initial_mass(init.mass)? / grid.area())))
            }
            InitialKind::GaussianBump => {
                stray("path", init.path.is_some())?;
                let center = init.center.map_or(grid.center(), |c| [c[0].0, c[1].0]);
                if grid.nearest_cell(center).is_none() {
                    return Err(self.err(
                        s,
                        "center",
                        format!("({}, {}) lies outside the domain", center[0], center[1]),
                    ));
                }
                let width = init.width.map_or(0.1, |w| w.0);
                if !is_positive(width) {
                    return Err(self.err(s, "width", format!("must be positive, got {width}")));
                }
                let bump = multichemo::dynamics::gaussian_bump(grid, center, width, self.initial_mass(init.mass)?)
                    .map_err(|e| self.err(s, "", e.to_string()))?;
                Ok(InitialData::Profile(bump))
            }
            InitialKind::File => {
                for (key, present) in
                    [("mass", init.mass.is_some()), ("center", init.center.is_some()), ("width", init.width.is_some())]
                {
                    stray(key, present)?;
                }
                let paths =
                    init.path.as_ref().ok_or_else(|| self.err(s, "path", "required for kind \"file\""))?.to_vec();
                let expected = if regime.evolves_density() { measure.len() } else { 1 };
                if paths.len() != 1 && paths.len() != expected {
                    return Err(self.err(s, "path", format!("give 1 or {expected} files, got {}", paths.len())));
                }
                let fields = paths
                    .iter()
                    .map(|p| {
                        let full = if p.is_absolute() { p.clone() } else { base.join(p) };
                        read_field(grid, &full).map_err(|m| self.err(s, "path", m))
                    })
                    .collect::<Checked<Vec<_>>>()?;
                Ok(InitialData::Files(fields))
            }
        }
    }

    fn initial_mass(&self, mass: Option<Num>) -> Checked<f64> {
        match mass {
            Some(Num(m)) if m > 0.0 && m.is_finite() => Ok(m),
            Some(Num(m)) => Err(self.err("initial", "mass", format!("must be positive, got {m}"))),
            None => self.lambda().map_err(|_| self.err("initial", "mass", "required when lambda is not set")),
        }
    }

    pub fn bubbles(&self, grid: &Grid64) -> Checked<BubblePlan> {
        let s = "bubbles";
        let b = self.config.bubbles.as_ref();
        let lambdas = match b.and_then(|b| b.lambdas.as_ref()) {
            Some(ls) if ls.is_empty() => return Err(self.err(s, "lambdas", "must not be empty")),
            Some(ls) => {
                if let Some(l) = ls.iter().find(|l| l.0.is_nan() || l.0 <= 0.0) {
                    return Err(self.err(s, "lambdas", format!("must be positive, got {}", l.0)));
                }
                ls.iter().map(|l| l.0).collect()
            }
            None => vec![self.lambda()?],
        };
        let eta = b.and_then(|b| b.eta).map_or(0.5, |e| e.0);
        if !(eta > 0.0 && eta <= 2.0) {
            return Err(self.err(s, "eta", format!("must lie in (0, 2], got {eta}")));
        }
        let epsilons: Vec<f64> =
            b.and_then(|b| b.epsilons.as_ref()).map_or(DEFAULT_LADDER.to_vec(), |e| e.iter().map(|x| x.0).collect());
        if epsilons.len() < 4 {
            return Err(self.err(
                s,
                "epsilons",
                format!("need at least 4 values for a slope fit, got {}", epsilons.len()),
            ));
        }
        validate_ladder(grid, &epsilons).map_err(|e| self.err(s, "epsilons", e.to_string()))?;
        Ok(BubblePlan { lambdas, eta, epsilons })
    }

    pub fn checks(&self, default_trials: usize, default_tolerance: f64) -> Checked<CheckPlan> {
        let s = "checks";
        let c = self.config.checks.as_ref();
        let trials = c.and_then(|c| c.trials).unwrap_or(default_trials);
        if trials == 0 {
            return Err(self.err(s, "trials", "must be at least 1"));
        }
        let step = c.and_then(|c| c.step).map_or(1e-4, |x| x.0);
        if step.is_nan() || step <= 0.0 {
            return Err(self.err(s, "step", format!("must be positive, got {step}")));
        }
        let tolerance = c.and_then(|c| c.tolerance).map_or(default_tolerance, |x| x.0);
        if tolerance.is_nan() || tolerance <= 0.0 {
            return Err(self.err(s, "tolerance", format!("must be positive, got {tolerance}")));
        }
        Ok(CheckPlan {
            trials,
            zero: c.and_then(|c| c.zero).unwrap_or(false),
            variant: c.and_then(|c| c.variant).map_or(Variant::Average, Into::into),
            step,
            tolerance,
        })
    }
}

pub enum InitialData {
    /// One profile used for every species (or as the source of `v⁰`).
    Profile(Field64),
    Files(Vec<Field64>),
}

pub struct BubblePlan {
    pub lambdas: Vec<f64>,
    pub eta: f64,
    pub epsilons: Vec<f64>,
}

pub struct CheckPlan {
    pub trials: usize,
    pub zero: bool,
    pub variant: Variant,
    pub step: f64,
    pub tolerance: f64,
}

fn is_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn read_field(grid: &Grid64, path: &PathBuf) -> std::result::Result<Field64, String> {
    let file = std::fs::File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    let (header, values) =
        read_binary(std::io::BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()))?;
    field_from_snapshot(grid, &header, &values).map_err(|e| format!("{}: {e}", path.display()))
}

/// Parses `alpha:weight,alpha:weight,...` (π-multiples allowed).
pub fn parse_atoms(plan: &str) -> std::result::Result<Measure64, String> {
    let pairs = plan
        .split(',')
        .map(|item| {
            let (a, w) = item.split_once(':').ok_or_else(|| format!("expected alpha:weight, got {item:?}"))?;
            Ok((parse_num(a)?, parse_num(w)?))
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    Measure64::new(&pairs).map_err(|e| e.to_string())
}
