//! Entropy, the Lyapunov functional `L`, the free energy `F`, the mean-field
//! functionals `J` and `I_λ`, the single-species `F₀`, and the closed-form
//! inner minimizers linking them.
//!
//! The Dirichlet energy is `½ h² ⟨−Δ_h v, v⟩` with the same stencil the solvers
//! use, so the duality identities hold up to rounding on every grid.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::greens::{signed_source, tg_convolve, GreenOperator};
use crate::grid::{laplacian_dirichlet, Field, Grid, SpeciesDensity};
use crate::measure::SpeciesMeasure;
use crate::scalar::{entropy_density, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Term<T> {
    pub name: &'static str,
    pub value: T,
}

/// Functional value with its signed addends.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalReport<T> {
    pub name: &'static str,
    pub value: T,
    pub breakdown: Vec<Term<T>>,
}

impl<T: Scalar> FunctionalReport<T> {
    fn from_terms(name: &'static str, terms: &[(&'static str, T)]) -> Self {
        let breakdown: Vec<Term<T>> = terms.iter().map(|&(name, value)| Term { name, value }).collect();
        let value = breakdown.iter().fold(T::zero(), |acc, t| acc + t.value);
        Self { name, value, breakdown }
    }

    pub fn term(&self, name: &str) -> Option<T> {
        self.breakdown.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    /// Every species has mass `λ` (and so does the weighted total).
    Individual,
    /// Weighted total mass `λ`.
    Average,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibleCheck<T> {
    pub nonneg: bool,
    pub total_mass: T,
    pub per_species_mass: Vec<T>,
    pub lambda: T,
    pub membership: Membership,
}

/// Classifies a family of species fields against the mass-`λ` admissible sets.
pub fn admissible<T: Scalar>(
    species: &[Field<T>],
    measure: &SpeciesMeasure<T>,
    grid: &Grid<T>,
    lambda: T,
) -> Result<AdmissibleCheck<T>> {
    if species.len() != measure.len() {
        return Err(Error::SpeciesCount { expected: measure.len(), found: species.len() });
    }
    let nonneg = species.iter().all(|f| f.min() >= T::zero());
    let per_species_mass: Vec<T> = species.iter().map(|f| crate::grid::integrate_field(f, grid)).collect();
    let total_mass = measure.weights().zip(&per_species_mass).fold(T::zero(), |acc, (w, &m)| acc + w * m);
    let tol = T::lit(1e-10) * lambda.abs();
    let membership = if !nonneg {
        Membership::Neither
    } else if per_species_mass.iter().all(|&m| (m - lambda).abs() <= tol) {
        Membership::Individual
    } else if (total_mass - lambda).abs() <= tol {
        Membership::Average
    } else {
        Membership::Neither
    };
    Ok(AdmissibleCheck { nonneg, total_mass, per_species_mass, lambda, membership })
}

/// `∬ f(ρ) = h² Σ_cells Σ_j w_j f(ρ_j)`.
pub fn entropy<T: Scalar>(rho: &SpeciesDensity<T>, measure: &SpeciesMeasure<T>, grid: &Grid<T>) -> Result<T> {
    rho.check(measure.len())?;
    let total = measure
        .weights()
        .zip(rho.species())
        .fold(T::zero(), |acc, (w, f)| acc + w * f.values().iter().fold(T::zero(), |s, &r| s + entropy_density(r)));
    Ok(total * grid.cell_area())
}

/// `∫ f(ψ)` for a single nonnegative field.
pub fn field_entropy<T: Scalar>(psi: &Field<T>, grid: &Grid<T>) -> Result<T> {
    grid.check(psi)?;
    let min = psi.min();
    if min < T::zero() {
        return Err(Error::NegativeDensity { species: 0, min: min.to_f64_lossy() });
    }
    Ok(psi.values().iter().fold(T::zero(), |s, &r| s + entropy_density(r)) * grid.cell_area())
}

/// `½ ∫|∇v|²`, computed as `½ h² ⟨−Δ_h v, v⟩`.
pub fn dirichlet_energy<T: Scalar>(v: &Field<T>, grid: &Grid<T>) -> T {
    -T::lit(0.5) * grid.inner(&laplacian_dirichlet(v, grid), v)
}

/// `Σ_j w_j ρ_j`, the unsigned aggregate density.
pub fn aggregate_density<T: Scalar>(rho: &SpeciesDensity<T>, measure: &SpeciesMeasure<T>) -> Result<Field<T>> {
    rho.check(measure.len())?;
    let n = rho.species().first().map_or(0, Field::len);
    let mut out = vec![T::zero(); n];
    for (w, f) in measure.weights().zip(rho.species()) {
        for (o, &r) in out.iter_mut().zip(f.values()) {
            *o = *o + w * r;
        }
    }
    Ok(Field::new(out))
}

/// `L(ρ, v) = ∬ f(ρ) + ½∫|∇v|² − ∬ αρv`.
pub fn lyapunov_l<T: Scalar>(
    rho: &SpeciesDensity<T>,
    v: &Field<T>,
    measure: &SpeciesMeasure<T>,
    grid: &Grid<T>,
) -> Result<FunctionalReport<T>> {
    grid.check(v)?;
    let ent = entropy(rho, measure, grid)?;
    let dir = dirichlet_energy(v, grid);
    let coupling = grid.inner(&signed_source(rho, measure)?, v);
    Ok(FunctionalReport::from_terms("L", &[("entropy", ent), ("dirichlet", dir), ("coupling", -coupling)]))
}

/// `F(ρ) = ∬ f(ρ) − ½ ∫ s G∗s` with `s = ∫ αρ P(dα)`.
pub fn free_energy_f<T: Scalar>(
    rho: &SpeciesDensity<T>,
    measure: &SpeciesMeasure<T>,
    grid: &Grid<T>,
    green: &GreenOperator<T>,
) -> Result<FunctionalReport<T>> {
    let ent = entropy(rho, measure, grid)?;
    let s = signed_source(rho, measure)?;
    let gs = green.solve(&s)?;
    let interaction = T::lit(0.5) * grid.inner(&s, &gs);
    Ok(FunctionalReport::from_terms("F", &[("entropy", ent), ("interaction", -interaction)]))
}

/// `log(h² Σ_k e^{a u_k})` without overflow.
fn log_integral_exp<T: Scalar>(u: &Field<T>, a: T, grid: &Grid<T>) -> T {
    let m = u.values().iter().fold(T::neg_infinity(), |m, &x| m.max(a * x));
    let s = u.values().iter().fold(T::zero(), |s, &x| s + (a * x - m).exp());
    m + (s * grid.cell_area()).ln()
}

/// `log ∬ e^{αv} = log(h² Σ_j w_j Σ_k e^{α_j v_k})`.
pub fn log_partition<T: Scalar>(v: &Field<T>, measure: &SpeciesMeasure<T>, grid: &Grid<T>) -> T {
    let logs: Vec<(T, T)> = measure.atoms().iter().map(|a| (a.weight, log_integral_exp(v, a.alpha, grid))).collect();
    let m = logs.iter().fold(T::neg_infinity(), |m, &(_, l)| m.max(l));
    m + logs.iter().fold(T::zero(), |s, &(w, l)| s + w * (l - m).exp()).ln()
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::NonPositiveLambda(lambda.to_f64_lossy()));
    }
    Ok(())
}

/// `J(v) = ½∫|∇v|² − λ log ∬ e^{αv} + λ(log λ − 1)`.
pub fn mean_field_j<T: Scalar>(
    v: &Field<T>,
    measure: &SpeciesMeasure<T>,
    grid: &Grid<T>,
    lambda: T,
) -> Result<FunctionalReport<T>> {
    check_lambda(lambda)?;
    grid.check(v)?;
    let dir = dirichlet_energy(v, grid);
    let log_term = -lambda * log_partition(v, measure, grid);
    let constant = lambda * (lambda.ln() - T::one());
    Ok(FunctionalReport::from_terms("J", &[("dirichlet", dir), ("log", log_term), ("constant", constant)]))
}

/// `I_λ(v) = ½∫|∇v|² − λ ∫ log(∫_Ω e^{αv}) P(dα) + λ(log λ − 1)`.
pub fn functional_i<T: Scalar>(
    v: &Field<T>,
    measure: &SpeciesMeasure<T>,
    grid: &Grid<T>,
    lambda: T,
) -> Result<FunctionalReport<T>> {
    check_lambda(lambda)?;
    grid.check(v)?;
    let dir = dirichlet_energy(v, grid);
    let avg_log = measure.atoms().iter().fold(T::zero(), |s, a| s + a.weight * log_integral_exp(v, a.alpha, grid));
    let constant = lambda * (lambda.ln() - T::one());
    Ok(FunctionalReport::from_terms("I", &[("dirichlet", dir), ("log", -lambda * avg_log), ("constant", constant)]))
}

/// `F₀(ψ) = ∫ f(ψ) − ½ ∫ ψ G∗ψ`.
pub fn hls_f0<T: Scalar>(psi: &Field<T>, grid: &Grid<T>, green: &GreenOperator<T>) -> Result<T> {
    let ent = field_entropy(psi, grid)?;
    let gpsi = green.solve(psi)?;
    Ok(ent - T::lit(0.5) * grid.inner(psi, &gpsi))
}

/// Rejects `v` if some `|α_j v|` exceeds the exponent guard.
pub fn check_exponent<T: Scalar>(v: &Field<T>, measure: &SpeciesMeasure<T>) -> Result<()> {
    let exponent = measure.max_abs_alpha() * v.max_abs();
    if !exponent.is_finite() || exponent.to_f64_lossy() > T::EXP_LIMIT {
        return Err(Error::ExponentOverflow { exponent: exponent.to_f64_lossy(), limit: T::EXP_LIMIT });
    }
    Ok(())
}

/// Boltzmann factors `e^{α_j v − m}` and the shifted partition function
/// `h² Σ_j w_j Σ_k e^{α_j v_k − m}`, with `m = max_{j,k} α_j v_k`.
pub(crate) fn boltzmann<T: Scalar>(v: &Field<T>, measure: &SpeciesMeasure<T>, grid: &Grid<T>) -> (Vec<Field<T>>, T) {
    let m = measure.alphas().flat_map(|a| v.values().iter().map(move |&x| a * x)).fold(T::neg_infinity(), T::max);
    let factors: Vec<Field<T>> = measure.alphas().map(|a| v.map(|x| (a * x - m).exp())).collect();
    let z = measure.weights().zip(&factors).fold(T::zero(), |acc, (w, f)| acc + w * f.sum()) * grid.cell_area();
    (factors, z)
}

/// `ρ_v = λ e^{αv} / ∬ e^{αv}`, the minimizer of `L(·, v)` over `Γ̃_λ`.
pub fn inner_min_rho<T: Scalar>(
    v: &Field<T>,
    measure: &SpeciesMeasure<T>,
    grid: &Grid<T>,
    lambda: T,
) -> Result<SpeciesDensity<T>> {
    check_lambda(lambda)?;
    grid.check(v)?;
    check_exponent(v, measure)?;
    let (factors, z) = boltzmann(v, measure, grid);
    let c = lambda / z;
    SpeciesDensity::new(grid, factors.into_iter().map(|f| f.scaled(c)).collect())
}

/// Per-species normalization: `ρ_j = λ e^{α_j v} / ∫ e^{α_j v}`, every species of mass `λ`.
pub fn inner_min_rho_individual<T: Scalar>(
    v: &Field<T>,
    measure: &SpeciesMeasure<T>,
    grid: &Grid<T>,
    lambda: T,
) -> Result<SpeciesDensity<T>> {
    check_lambda(lambda)?;
    grid.check(v)?;
    check_exponent(v, measure)?;
    let species = measure
        .alphas()
        .map(|a| {
            let m = v.values().iter().fold(T::neg_infinity(), |m, &x| m.max(a * x));
            let f = v.map(|x| (a * x - m).exp());
            let c = lambda / (f.sum() * grid.cell_area());
            f.scaled(c)
        })
        .collect();
    SpeciesDensity::new(grid, species)
}

/// `v_ρ = G ∗ (∫ αρ P(dα))`, the minimizer of `L(ρ, ·)`.
pub fn inner_min_v<T: Scalar>(
    rho: &SpeciesDensity<T>,
    measure: &SpeciesMeasure<T>,
    green: &GreenOperator<T>,
) -> Result<Field<T>> {
    tg_convolve(rho, measure, green)
}

/// Relative gap `|a − b| / max(1, |a|, |b|)` used by the duality checks.
pub fn relative_gap<T: Scalar>(a: T, b: T) -> T {
    (a - b).abs() / T::one().max(a.abs()).max(b.abs())
}
