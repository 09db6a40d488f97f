//! Time integrators for the four regimes and their Lyapunov diagnostics.
//!
//! * `Full`: `δ_α ∂ρ_α = div(∇ρ_α − αρ_α∇v)`, `ε ∂v = Δv + ∫αρ P(dα)`.
//! * `Smoluchowski`: the same density equations with `−Δv = ∫αρ P(dα)`.
//! * `MeanfieldAverage` / `MeanfieldIndividual`: `∂v = Δv + λ ∫ α e^{αv}/Z P(dα)`
//!   with one partition function `Z` for all species or one per species.
//!
//! Density steps freeze `v` and solve the Scharfetter–Gummel system
//! implicitly in the Slotboom variable `u = ρ e^{−αv}`. The matrix is
//! symmetric positive definite with M-matrix structure, so each step
//! conserves every species mass and keeps `ρ ≥ 0` for any `Δt`. The
//! potential steps treat `Δ` implicitly and the nonlocal source explicitly.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{
    check_exponent, free_energy_f, functional_i, inner_min_rho, inner_min_rho_individual, lyapunov_l, mean_field_j,
};
use crate::greens::{signed_source, GreenOperator};
use crate::grid::{bernoulli, laplacian_dirichlet, max_face_gradient, Field, Grid, SpeciesDensity};
use crate::linalg::{GridMatrix, SpdSolver};
use crate::measure::SpeciesMeasure;
use crate::scalar::Scalar;

/// A run stops with a collapse flag once `max ρ` exceeds this multiple of `1/h²`.
pub const DENSITY_BLOWUP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Full,
    Smoluchowski,
    MeanfieldAverage,
    MeanfieldIndividual,
}

impl Regime {
    pub fn evolves_density(self) -> bool {
        matches!(self, Self::Full | Self::Smoluchowski)
    }
}

/// Normalization of the mean-field source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Average,
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum TimeStep<T> {
    Fixed {
        dt: T,
    },
    /// `dt = min(safety · CFL bound, max_dt)`; mean-field regimes use `max_dt`.
    Cfl {
        safety: T,
        max_dt: T,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig<T> {
    pub regime: Regime,
    /// Per-atom `δ_α`, or a single value used for every atom.
    pub delta: Vec<T>,
    pub epsilon: T,
    /// Mass constraint of the mean-field regimes.
    pub lambda: Option<T>,
    pub time_step: TimeStep<T>,
    pub horizon: T,
    /// Record diagnostics every `cadence` steps (and at the final time).
    pub cadence: usize,
    pub max_steps: usize,
    /// Steady state once the relative change per unit time drops below this.
    pub steady_tol: T,
    /// Collapse once one cell holds this fraction of some species' mass.
    pub collapse_fraction: T,
    pub snapshot_times: Vec<T>,
}

impl<T: Scalar> SimConfig<T> {
    pub fn new(regime: Regime) -> Self {
        Self {
            regime,
            delta: vec![T::one()],
            epsilon: T::one(),
            lambda: None,
            time_step: TimeStep::Cfl { safety: T::lit(0.5), max_dt: T::lit(1e-3) },
            horizon: T::one(),
            cadence: 1,
            max_steps: 10_000_000,
            steady_tol: T::lit(1e-12),
            collapse_fraction: T::lit(0.5),
            snapshot_times: Vec::new(),
        }
    }

    pub fn validate(&self, measure: &SpeciesMeasure<T>) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.delta.len() != 1 && self.delta.len() != measure.len() {
            return bad(format!("delta has {} entries, measure has {} atoms", self.delta.len(), measure.len()));
        }
        if self.delta.iter().any(|&d| !(d > T::zero()) || !d.is_finite()) {
            return bad("every delta must be positive".into());
        }
        if self.regime == Regime::Full && (!(self.epsilon > T::zero()) || !self.epsilon.is_finite()) {
            return bad("epsilon must be positive in the full regime".into());
        }
        if !self.regime.evolves_density() {
            match self.lambda {
                Some(l) if l > T::zero() && l.is_finite() => {}
                Some(l) => return bad(format!("lambda must be positive, got {l}")),
                None => return bad("mean-field regimes require lambda".into()),
            }
        }
        match self.time_step {
            TimeStep::Fixed { dt } if !(dt > T::zero()) || !dt.is_finite() => {
                return bad("fixed dt must be positive".into());
            }
            TimeStep::Cfl { safety, max_dt } => {
                if !(safety > T::zero() && safety <= T::one()) {
                    return bad("CFL safety factor must lie in (0, 1]".into());
                }
                if !(max_dt > T::zero()) || !max_dt.is_finite() {
                    return bad("max_dt must be positive".into());
                }
            }
            _ => {}
        }
        if !(self.horizon >= T::zero()) || !self.horizon.is_finite() {
            return bad("horizon must be finite and nonnegative".into());
        }
        if self.cadence == 0 {
            return bad("cadence must be at least 1".into());
        }
        if !(self.collapse_fraction > T::zero() && self.collapse_fraction <= T::one()) {
            return bad("collapse_fraction must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn delta_for(&self, atom: usize) -> T {
        if self.delta.len() == 1 {
            self.delta[0]
        } else {
            self.delta[atom]
        }
    }

    pub fn delta_min(&self) -> T {
        self.delta.iter().copied().fold(T::infinity(), T::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState<T> {
    pub time: T,
    /// Absent in the mean-field regimes, where densities are slaved to `v`.
    pub rho: Option<SpeciesDensity<T>>,
    pub v: Field<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics<T> {
    pub time: T,
    pub l: T,
    pub f: T,
    /// `I_λ` in the individual regime, `J` otherwise (with `λ` the current total mass).
    pub j_or_i: T,
    pub masses: Vec<T>,
    pub total_mass: T,
    pub min_rho: T,
    pub max_rho: T,
    pub max_abs_v: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    SteadyState,
    StepLimit,
    Collapse { detail: String },
}

impl Termination {
    pub fn is_collapse(&self) -> bool {
        matches!(self, Self::Collapse { .. })
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub records: Vec<Diagnostics<T>>,
    pub snapshots: Vec<SimState<T>>,
    pub termination: Termination,
    pub steps: usize,
    pub final_state: SimState<T>,
}

/// Advances states of one configuration, caching the implicit potential solver per `Δt`.
pub struct Stepper<'a, T: Scalar> {
    config: &'a SimConfig<T>,
    measure: &'a SpeciesMeasure<T>,
    green: &'a GreenOperator<T>,
    v_solver: Option<(T, SpdSolver<T>)>,
}

impl<'a, T: Scalar> Stepper<'a, T> {
    pub fn new(config: &'a SimConfig<T>, measure: &'a SpeciesMeasure<T>, green: &'a GreenOperator<T>) -> Result<Self> {
        config.validate(measure)?;
        Ok(Self { config, measure, green, v_solver: None })
    }

    pub fn grid(&self) -> &'a Grid<T> {
        self.green.grid()
    }

    fn lambda(&self) -> T {
        self.config.lambda.unwrap_or_else(T::one)
    }

    /// `min(δ₀, ε) h / (2 max|α| max|∇_h v|)`, infinite for a flat potential.
    pub fn cfl_bound(&self, v: &Field<T>) -> T {
        let grad = max_face_gradient(v, self.grid()) * self.measure.max_abs_alpha();
        let scale = match self.config.regime {
            Regime::Full => self.config.delta_min().min(self.config.epsilon),
            _ => self.config.delta_min(),
        };
        if grad == T::zero() {
            T::infinity()
        } else {
            scale * self.grid().h() / (T::lit(2.0) * grad)
        }
    }

    /// Step size for the next step from `state`, not exceeding the remaining horizon.
    pub fn choose_dt(&self, state: &SimState<T>) -> Result<T> {
        let density = self.config.regime.evolves_density();
        let dt = match self.config.time_step {
            TimeStep::Fixed { dt } => {
                if density {
                    let bound = self.cfl_bound(&state.v);
                    if dt > bound {
                        return Err(Error::CflViolation { dt: dt.to_f64_lossy(), bound: bound.to_f64_lossy() });
                    }
                }
                dt
            }
            TimeStep::Cfl { safety, max_dt } => {
                if density {
                    (safety * self.cfl_bound(&state.v)).min(max_dt)
                } else {
                    max_dt
                }
            }
        };
        Ok(dt.min(self.config.horizon - state.time))
    }

    fn potential_solver(&mut self, dt: T, shift: T) -> Result<&SpdSolver<T>> {
        let stale = !matches!(&self.v_solver, Some((cached, _)) if *cached == dt);
        if stale {
            let solver = SpdSolver::new(GridMatrix::shifted_dirichlet(self.grid(), shift))?;
            self.v_solver = Some((dt, solver));
        }
        Ok(&self.v_solver.as_ref().expect("solver cached above").1)
    }

    /// Implicit Scharfetter–Gummel update of every species with `v` frozen.
    pub fn density_step(&self, rho: &SpeciesDensity<T>, v: &Field<T>, dt: T) -> Result<SpeciesDensity<T>> {
        rho.check(self.measure.len())?;
        let grid = self.grid();
        check_exponent(v, self.measure)?;
        let species: Vec<Field<T>> = self
            .measure
            .atoms()
            .par_iter()
            .zip(rho.species().par_iter())
            .enumerate()
            .map(|(j, (atom, r))| {
                let c = self.config.delta_for(j) * grid.cell_area() / dt;
                implicit_sg(r, v, atom.alpha, c, grid).and_then(|f| clamp_roundoff(f, j))
            })
            .collect::<Result<_>>()?;
        SpeciesDensity::new(grid, species)
    }

    pub fn step_full(&mut self, state: &SimState<T>, dt: T) -> Result<SimState<T>> {
        let rho = state.rho.as_ref().ok_or_else(|| Error::InvalidConfig("full regime needs densities".into()))?;
        let next = self.density_step(rho, &state.v, dt)?;
        let grid = self.grid();
        let h2 = grid.cell_area();
        let c = self.config.epsilon / dt;
        let s = signed_source(&next, self.measure)?;
        let rhs: Vec<T> = state.v.values().iter().zip(s.values()).map(|(&v, &s)| h2 * (c * v + s)).collect();
        let v = Field::new(self.potential_solver(dt, c * h2)?.solve(&rhs));
        finite(&v)?;
        Ok(SimState { time: state.time + dt, rho: Some(next), v })
    }

    pub fn step_smoluchowski(&mut self, state: &SimState<T>, dt: T) -> Result<SimState<T>> {
        let rho =
            state.rho.as_ref().ok_or_else(|| Error::InvalidConfig("smoluchowski regime needs densities".into()))?;
        let v = self.green.solve(&signed_source(rho, self.measure)?)?;
        let next = self.density_step(rho, &v, dt)?;
        let v = self.green.solve(&signed_source(&next, self.measure)?)?;
        Ok(SimState { time: state.time + dt, rho: Some(next), v })
    }

    fn step_meanfield(&mut self, state: &SimState<T>, dt: T, variant: Variant) -> Result<SimState<T>> {
        let source = meanfield_source(&state.v, self.measure, self.grid(), self.lambda(), variant)?;
        let h2 = self.grid().cell_area();
        let c = T::one() / dt;
        let rhs: Vec<T> = state.v.values().iter().zip(source.values()).map(|(&v, &s)| h2 * (c * v + s)).collect();
        let v = Field::new(self.potential_solver(dt, c * h2)?.solve(&rhs));
        finite(&v)?;
        Ok(SimState { time: state.time + dt, rho: None, v })
    }

    pub fn step_meanfield_average(&mut self, state: &SimState<T>, dt: T) -> Result<SimState<T>> {
        self.step_meanfield(state, dt, Variant::Average)
    }

    pub fn step_meanfield_individual(&mut self, state: &SimState<T>, dt: T) -> Result<SimState<T>> {
        self.step_meanfield(state, dt, Variant::Individual)
    }

    /// One step of the configured regime with step size `dt`.
    pub fn step_with(&mut self, state: &SimState<T>, dt: T) -> Result<SimState<T>> {
        match self.config.regime {
            Regime::Full => self.step_full(state, dt),
            Regime::Smoluchowski => self.step_smoluchowski(state, dt),
            Regime::MeanfieldAverage => self.step_meanfield_average(state, dt),
            Regime::MeanfieldIndividual => self.step_meanfield_individual(state, dt),
        }
    }

    /// One step with the configured step-size policy.
    pub fn step(&mut self, state: &SimState<T>) -> Result<SimState<T>> {
        let dt = self.choose_dt(state)?;
        self.step_with(state, dt)
    }

    /// Densities reported for `state`: evolved ones, or the implied `ρ_v` in mean-field regimes.
    pub fn densities(&self, state: &SimState<T>) -> Result<SpeciesDensity<T>> {
        match (&state.rho, self.config.regime) {
            (Some(rho), _) => Ok(rho.clone()),
            (None, Regime::MeanfieldIndividual) => {
                inner_min_rho_individual(&state.v, self.measure, self.grid(), self.lambda())
            }
            (None, _) => inner_min_rho(&state.v, self.measure, self.grid(), self.lambda()),
        }
    }

    pub fn diagnostics(&self, state: &SimState<T>) -> Result<Diagnostics<T>> {
        let grid = self.grid();
        let rho = self.densities(state)?;
        let masses = rho.masses(grid);
        let total_mass = self.measure.weights().zip(&masses).fold(T::zero(), |acc, (w, &m)| acc + w * m);
        let l = lyapunov_l(&rho, &state.v, self.measure, grid)?.value;
        let f = free_energy_f(&rho, self.measure, grid, self.green)?.value;
        let j_or_i = match self.config.regime {
            Regime::MeanfieldIndividual => functional_i(&state.v, self.measure, grid, self.lambda())?.value,
            Regime::MeanfieldAverage => mean_field_j(&state.v, self.measure, grid, self.lambda())?.value,
            _ if total_mass > T::zero() => mean_field_j(&state.v, self.measure, grid, total_mass)?.value,
            _ => T::nan(),
        };
        let max_rho = rho.species().iter().map(Field::max).fold(T::neg_infinity(), T::max);
        Ok(Diagnostics {
            time: state.time,
            l,
            f,
            j_or_i,
            masses,
            total_mass,
            min_rho: rho.min(),
            max_rho,
            max_abs_v: state.v.max_abs(),
        })
    }

    /// Collapse signal for `state`, if any.
    pub fn collapse(&self, state: &SimState<T>) -> Option<String> {
        let grid = self.grid();
        let rho = match self.densities(state) {
            Ok(rho) => rho,
            Err(Error::ExponentOverflow { exponent, limit }) => {
                return Some(format!("exponent {exponent:.3e} exceeds {limit}"));
            }
            Err(e) => return Some(e.to_string()),
        };
        let h2 = grid.cell_area();
        let limit = T::lit(DENSITY_BLOWUP) / h2;
        for (j, f) in rho.species().iter().enumerate() {
            let max = f.max();
            if max > limit {
                return Some(format!("species {j}: max density {:e} exceeds 1e12/h^2", max.to_f64_lossy()));
            }
            let mass = f.sum() * h2;
            if mass > T::zero() && max * h2 >= self.config.collapse_fraction * mass {
                return Some(format!(
                    "species {j}: one cell holds {:.3} of the mass",
                    (max * h2 / mass).to_f64_lossy()
                ));
            }
        }
        None
    }
}

/// Solves `(c·diag(g) + L_w) u = c ρⁿ` and returns `ρ = g u`, with
/// `g = e^{αv − max αv}` and face weights `w_kl = B(α(v_l − v_k)) g_l`.
fn implicit_sg<T: Scalar>(rho: &Field<T>, v: &Field<T>, alpha: T, c: T, grid: &Grid<T>) -> Result<Field<T>> {
    let p = v.values();
    let m = p.iter().fold(T::neg_infinity(), |m, &x| m.max(alpha * x));
    let g: Vec<T> = p.iter().map(|&x| (alpha * x - m).exp()).collect();
    let mut diag: Vec<T> = g.iter().map(|&gk| c * gk).collect();
    let faces: Vec<(usize, usize, T)> = grid
        .interior_faces()
        .map(|(k, l)| {
            let w = bernoulli(alpha * (p[l] - p[k])) * g[l];
            diag[k] = diag[k] + w;
            diag[l] = diag[l] + w;
            (k, l, -w)
        })
        .collect();
    let solver = SpdSolver::new(GridMatrix { diag, faces })?;
    let rhs: Vec<T> = rho.values().iter().map(|&r| c * r).collect();
    let u = solver.solve(&rhs);
    let out = Field::new(u.iter().zip(&g).map(|(&u, &g)| u * g).collect());
    finite(&out)?;
    Ok(out)
}

/// Zeroes negative entries at rounding level; larger ones are an error.
fn clamp_roundoff<T: Scalar>(f: Field<T>, species: usize) -> Result<Field<T>> {
    let min = f.min();
    if min >= T::zero() {
        return Ok(f);
    }
    if min < -T::lit(1e-13) * f.max_abs() {
        return Err(Error::NegativeDensity { species, min: min.to_f64_lossy() });
    }
    Ok(f.map(|x| x.max(T::zero())))
}

fn finite<T: Scalar>(f: &Field<T>) -> Result<()> {
    if f.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("time step"))
    }
}

/// `λ ∫ α ρ_v P(dα)` with the average (`Z` shared) or individual (`Z_α` per species) normalization.
pub fn meanfield_source<T: Scalar>(
    v: &Field<T>,
    measure: &SpeciesMeasure<T>,
    grid: &Grid<T>,
    lambda: T,
    variant: Variant,
) -> Result<Field<T>> {
    let rho = match variant {
        Variant::Average => inner_min_rho(v, measure, grid, lambda)?,
        Variant::Individual => inner_min_rho_individual(v, measure, grid, lambda)?,
    };
    signed_source(&rho, measure)
}

/// Right-hand side `Δ_h v + source(v)` of the mean-field flow.
pub fn meanfield_rhs<T: Scalar>(
    v: &Field<T>,
    measure: &SpeciesMeasure<T>,
    grid: &Grid<T>,
    lambda: T,
    variant: Variant,
) -> Result<Field<T>> {
    let source = meanfield_source(v, measure, grid, lambda, variant)?;
    Ok(laplacian_dirichlet(v, grid).zip_map(&source, |a, b| a + b))
}

/// Discrete `L²` norm of the mean-field steady-state residual.
pub fn steady_state_residual<T: Scalar>(
    v: &Field<T>,
    measure: &SpeciesMeasure<T>,
    grid: &Grid<T>,
    lambda: T,
    variant: Variant,
) -> Result<T> {
    Ok(grid.norm_l2(&meanfield_rhs(v, measure, grid, lambda, variant)?))
}

/// Outcome of comparing `⟨rhs(v), ξ⟩` with a central difference of the functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck<T> {
    pub inner_product: T,
    pub finite_difference: T,
    pub relative_error: T,
}

/// `⟨rhs(v), ξ⟩_{h²}` against `−(E(v + sξ) − E(v − sξ)) / 2s`, with `E = J`
/// (average) or `E = I_λ` (individual).
pub fn gradient_check<T: Scalar>(
    v: &Field<T>,
    xi: &Field<T>,
    measure: &SpeciesMeasure<T>,
    grid: &Grid<T>,
    lambda: T,
    variant: Variant,
    step: T,
) -> Result<GradientCheck<T>> {
    let rhs = meanfield_rhs(v, measure, grid, lambda, variant)?;
    let inner_product = grid.inner(&rhs, xi);
    let energy = |u: &Field<T>| -> Result<T> {
        Ok(match variant {
            Variant::Average => mean_field_j(u, measure, grid, lambda)?.value,
            Variant::Individual => functional_i(u, measure, grid, lambda)?.value,
        })
    };
    let plus = energy(&v.axpy(step, xi))?;
    let minus = energy(&v.axpy(-step, xi))?;
    let finite_difference = -(plus - minus) / (T::lit(2.0) * step);
    let scale = inner_product.abs().max(finite_difference.abs()).max(T::min_positive_value());
    Ok(GradientCheck {
        inner_product,
        finite_difference,
        relative_error: (inner_product - finite_difference).abs() / scale,
    })
}

/// Normalized Gaussian bump `mass · e^{−|x − c|²/(2w²)} / ∫(...)`.
pub fn gaussian_bump<T: Scalar>(grid: &Grid<T>, center: [T; 2], width: T, mass: T) -> Result<Field<T>> {
    if !(width > T::zero()) {
        return Err(Error::InvalidConfig("bump width must be positive".into()));
    }
    let two_w2 = T::lit(2.0) * width * width;
    let f = Field::from_fn(grid, |x, y| (-((x - center[0]).powi(2) + (y - center[1]).powi(2)) / two_w2).exp());
    let total = f.sum() * grid.cell_area();
    Ok(f.scaled(mass / total))
}

/// Initial state consistent with the regime: `v = G ∗ ∫αρ` in the Smoluchowski regime.
pub fn initial_state<T: Scalar>(
    rho: Option<SpeciesDensity<T>>,
    v: Option<Field<T>>,
    config: &SimConfig<T>,
    measure: &SpeciesMeasure<T>,
    green: &GreenOperator<T>,
) -> Result<SimState<T>> {
    let grid = green.grid();
    if config.regime.evolves_density() && rho.is_none() {
        return Err(Error::InvalidConfig("density regimes need initial densities".into()));
    }
    if let Some(r) = &rho {
        r.check(measure.len())?;
    }
    let v = match config.regime {
        Regime::Smoluchowski => green.solve(&signed_source(rho.as_ref().expect("checked above"), measure)?)?,
        _ => v.unwrap_or_else(|| Field::zeros(grid)),
    };
    grid.check(&v)?;
    let rho = if config.regime.evolves_density() { rho } else { None };
    Ok(SimState { time: T::zero(), rho, v })
}

fn relative_change<T: Scalar>(a: &SimState<T>, b: &SimState<T>) -> T {
    let mut diff = a.v.zip_map(&b.v, |x, y| x - y).max_abs();
    let mut scale = a.v.max_abs();
    if let (Some(ra), Some(rb)) = (&a.rho, &b.rho) {
        for (fa, fb) in ra.species().iter().zip(rb.species()) {
            diff = diff.max(fa.zip_map(fb, |x, y| x - y).max_abs());
            scale = scale.max(fa.max_abs());
        }
    }
    diff / scale.max(T::min_positive_value())
}

/// Integrates from `initial` to the horizon, a collapse signal, or a steady state.
pub fn run<T: Scalar>(
    initial: SimState<T>,
    config: &SimConfig<T>,
    measure: &SpeciesMeasure<T>,
    green: &GreenOperator<T>,
) -> Result<Trajectory<T>> {
    let mut stepper = Stepper::new(config, measure, green)?;
    let annotate = |time: T| move |e: Error| Error::AtTime { time: time.to_f64_lossy(), source: Box::new(e) };
    let mut snap_times: Vec<T> = config.snapshot_times.clone();
    snap_times.sort_by(|a, b| a.partial_cmp(b).expect("finite snapshot times"));
    let mut snap_iter = snap_times.into_iter().peekable();
    let mut snapshots = Vec::new();

    let mut state = initial;
    let mut records = vec![stepper.diagnostics(&state).map_err(annotate(state.time))?];
    let end_tol = T::lit(1e-12) * config.horizon.max(T::one());
    let mut take_snapshots = |state: &SimState<T>, snapshots: &mut Vec<SimState<T>>| {
        while let Some(&t) = snap_iter.peek() {
            if t > state.time + end_tol {
                break;
            }
            snapshots.push(state.clone());
            snap_iter.next();
        }
    };
    take_snapshots(&state, &mut snapshots);

    let mut steps = 0;
    let mut termination = Termination::Horizon;
    if let Some(detail) = stepper.collapse(&state) {
        termination = Termination::Collapse { detail };
    }
    while !termination.is_collapse() && config.horizon - state.time > end_tol {
        if steps >= config.max_steps {
            termination = Termination::StepLimit;
            break;
        }
        let dt = stepper.choose_dt(&state).map_err(annotate(state.time))?;
        let next = match stepper.step_with(&state, dt) {
            Ok(next) => next,
            Err(Error::ExponentOverflow { exponent, limit }) => {
                termination = Termination::Collapse { detail: format!("exponent {exponent:.3e} exceeds {limit}") };
                break;
            }
            Err(e) => return Err(annotate(state.time)(e)),
        };
        steps += 1;
        let change = relative_change(&state, &next) / dt;
        state = next;
        if config.horizon - state.time <= end_tol {
            state.time = config.horizon;
        }
        take_snapshots(&state, &mut snapshots);
        if let Some(detail) = stepper.collapse(&state) {
            termination = Termination::Collapse { detail };
        } else if change < config.steady_tol {
            termination = Termination::SteadyState;
        }
        let last = termination != Termination::Horizon || config.horizon - state.time <= end_tol;
        if steps % config.cadence == 0 || last {
            match stepper.diagnostics(&state) {
                Ok(d) => records.push(d),
                Err(Error::ExponentOverflow { .. }) if termination.is_collapse() => {}
                Err(e) => return Err(annotate(state.time)(e)),
            }
        }
        if termination != Termination::Horizon {
            break;
        }
    }
    Ok(Trajectory { records, snapshots, termination, steps, final_state: state })
}

/// One step of the full regime with the configured step-size policy.
pub fn step_full<T: Scalar>(
    state: &SimState<T>,
    config: &SimConfig<T>,
    measure: &SpeciesMeasure<T>,
    green: &GreenOperator<T>,
) -> Result<SimState<T>> {
    Stepper::new(config, measure, green)?.step(state)
}

pub fn step_smoluchowski<T: Scalar>(
    state: &SimState<T>,
    config: &SimConfig<T>,
    measure: &SpeciesMeasure<T>,
    green: &GreenOperator<T>,
) -> Result<SimState<T>> {
    Stepper::new(config, measure, green)?.step(state)
}

pub fn step_meanfield_average<T: Scalar>(
    state: &SimState<T>,
    config: &SimConfig<T>,
    measure: &SpeciesMeasure<T>,
    green: &GreenOperator<T>,
) -> Result<SimState<T>> {
    Stepper::new(config, measure, green)?.step(state)
}

pub fn step_meanfield_individual<T: Scalar>(
    state: &SimState<T>,
    config: &SimConfig<T>,
    measure: &SpeciesMeasure<T>,
    green: &GreenOperator<T>,
) -> Result<SimState<T>> {
    Stepper::new(config, measure, green)?.step(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize) -> (Grid<f64>, GreenOperator<f64>) {
        let g = Grid::unit_square(n).unwrap();
        let green = GreenOperator::new(&g).unwrap();
        (g, green)
    }

    #[test]
    fn density_step_keeps_equilibrium() {
        let (g, green) = setup(12);
        let m = SpeciesMeasure::keller_segel();
        let cfg = SimConfig::new(Regime::Full);
        let stepper = Stepper::new(&cfg, &m, &green).unwrap();
        let v = Field::from_fn(&g, |x, y| (3.0 * x).sin() * y);
        let rho = SpeciesDensity::new(&g, vec![v.map(f64::exp)]).unwrap();
        let next = stepper.density_step(&rho, &v, 0.1).unwrap();
        let d = next.species()[0].zip_map(&rho.species()[0], |a, b| a - b).max_abs();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn symmetric_uniform_state_is_fixed() {
        let (g, green) = setup(10);
        let m = SpeciesMeasure::two_species(0.5, 1.0, -1.0).unwrap();
        let mut cfg = SimConfig::new(Regime::Full);
        cfg.time_step = TimeStep::Fixed { dt: 1e-2 };
        let rho = SpeciesDensity::replicate(&g, &Field::constant(&g, 2.0), 2).unwrap();
        let s0 = initial_state(Some(rho.clone()), None, &cfg, &m, &green).unwrap();
        let s1 = step_full(&s0, &cfg, &m, &green).unwrap();
        assert_eq!(s1.v.max_abs(), 0.0);
        assert!(s1.rho.unwrap().species()[0].zip_map(&rho.species()[0], |a, b| a - b).max_abs() < 1e-13);
    }

    #[test]
    fn fixed_step_above_cfl_is_refused() {
        let (g, green) = setup(10);
        let m = SpeciesMeasure::keller_segel();
        let mut cfg = SimConfig::new(Regime::Full);
        cfg.time_step = TimeStep::Fixed { dt: 10.0 };
        let rho = SpeciesDensity::new(&g, vec![Field::constant(&g, 1.0)]).unwrap();
        let v = Field::from_fn(&g, |x, _| x);
        let s0 = initial_state(Some(rho), Some(v), &cfg, &m, &green).unwrap();
        assert!(matches!(step_full(&s0, &cfg, &m, &green), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn zero_horizon_gives_one_record() {
        let (g, green) = setup(8);
        let m = SpeciesMeasure::keller_segel();
        let mut cfg = SimConfig::new(Regime::Full);
        cfg.horizon = 0.0;
        let rho = SpeciesDensity::new(&g, vec![Field::constant(&g, 1.0)]).unwrap();
        let s0 = initial_state(Some(rho), None, &cfg, &m, &green).unwrap();
        let traj = run(s0, &cfg, &m, &green).unwrap();
        assert_eq!(traj.records.len(), 1);
        assert_eq!(traj.termination, Termination::Horizon);
    }

    #[test]
    fn steady_residual_of_zero_potential() {
        let (g, _) = setup(8);
        let m = SpeciesMeasure::keller_segel();
        for variant in [Variant::Average, Variant::Individual] {
            let r = steady_state_residual(&Field::zeros(&g), &m, &g, 3.0, variant).unwrap();
            assert!((r - 3.0).abs() < 1e-13);
        }
    }

    #[test]
    fn config_validation() {
        let m = SpeciesMeasure::keller_segel();
        let mut cfg = SimConfig::<f64>::new(Regime::MeanfieldAverage);
        assert!(cfg.validate(&m).is_err());
        cfg.lambda = Some(1.0);
        assert!(cfg.validate(&m).is_ok());
        cfg.delta = vec![1.0, 2.0];
        assert!(cfg.validate(&m).is_err());
    }
}
