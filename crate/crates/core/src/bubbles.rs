//! Liouville-bubble test families, their asymptotic expansions, and the
//! free-energy slope experiment that locates the critical mass.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{entropy, field_entropy, free_energy_f};
use crate::greens::{robin_field, signed_source, GreenOperator};
use crate::grid::{Field, Grid, SpeciesDensity};
use crate::measure::SpeciesMeasure;
use crate::scalar::{eight_pi, Scalar};

/// Half-decade ladder used by default for scans on the unit disk.
pub const DEFAULT_LADDER: [f64; 5] = [0.2, 0.141, 0.1, 0.071, 0.05];

/// A slope more negative than `−(SLOPE_SIGMAS · stderr + SLOPE_DEAD_ZONE · λ)` reads as unbounded.
pub const SLOPE_SIGMAS: f64 = 3.0;
pub const SLOPE_DEAD_ZONE: f64 = 0.05;

fn check_epsilon<T: Scalar>(epsilon: T) -> Result<()> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::InvalidLadder(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// `e^{U_ε} = 8ε² / (ε² + |x − c|²)²`.
fn bubble_exp<T: Scalar>(grid: &Grid<T>, epsilon: T, center: [T; 2]) -> Field<T> {
    let e2 = epsilon * epsilon;
    let num = T::lit(8.0) * e2;
    Field::from_fn(grid, |x, y| {
        let d = e2 + (x - center[0]).powi(2) + (y - center[1]).powi(2);
        num / (d * d)
    })
}

/// `U_ε(x) = log(8ε² / (ε² + |x − c|²)²)` centered at `center`.
pub fn liouville_bubble_at<T: Scalar>(grid: &Grid<T>, epsilon: T, center: [T; 2]) -> Result<Field<T>> {
    check_epsilon(epsilon)?;
    let e2 = epsilon * epsilon;
    let log8e2 = (T::lit(8.0) * e2).ln();
    Ok(Field::from_fn(grid, |x, y| {
        log8e2 - T::lit(2.0) * (e2 + (x - center[0]).powi(2) + (y - center[1]).powi(2)).ln()
    }))
}

/// Bubble centered at the domain center.
pub fn liouville_bubble<T: Scalar>(grid: &Grid<T>, epsilon: T) -> Result<Field<T>> {
    liouville_bubble_at(grid, epsilon, grid.center())
}

/// `ψ_ε = λ e^{U_ε} / ∫ e^{U_ε}`, normalized by the discrete integral.
pub fn bubble_density<T: Scalar>(grid: &Grid<T>, epsilon: T, lambda: T) -> Result<Field<T>> {
    check_epsilon(epsilon)?;
    if !(lambda > T::zero()) {
        return Err(Error::NonPositiveLambda(lambda.to_f64_lossy()));
    }
    let e = bubble_exp(grid, epsilon, grid.center());
    let total = e.sum() * grid.cell_area();
    Ok(e.scaled(lambda / total))
}

/// Interval of `α` values carrying the bubble, with its `P`-mass and first moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band<T> {
    pub lo: T,
    pub hi: T,
    pub mass: T,
    pub moment: T,
}

impl<T: Scalar> Band<T> {
    /// `∫_band α P(dα) / P(band)`.
    pub fn constant(&self) -> T {
        self.moment / self.mass
    }

    pub fn contains(&self, alpha: T) -> bool {
        alpha >= self.lo && alpha <= self.hi
    }
}

/// `[1 − η, 1]` if it carries atoms, otherwise the mirrored `[−1, −1 + η]`.
pub fn select_band<T: Scalar>(measure: &SpeciesMeasure<T>, eta: T) -> Result<Band<T>> {
    if !(eta > T::zero() && eta < T::one()) {
        return Err(Error::InvalidConfig(format!("eta must lie in (0, 1), got {eta}")));
    }
    let one = T::one();
    for (lo, hi) in [(one - eta, one), (-one, -one + eta)] {
        let mass = measure.band_mass(lo, hi);
        if mass > T::zero() {
            return Ok(Band { lo, hi, mass, moment: measure.band_moment(lo, hi) });
        }
    }
    Err(Error::EmptyBand)
}

/// `ρ_ε(x, α) = χ_band(α) ψ_ε(x) / P(band)`.
pub fn bubble_species_density<T: Scalar>(
    grid: &Grid<T>,
    epsilon: T,
    lambda: T,
    measure: &SpeciesMeasure<T>,
    eta: T,
) -> Result<SpeciesDensity<T>> {
    let band = select_band(measure, eta)?;
    let psi = bubble_density(grid, epsilon, lambda)?;
    species_from_psi(grid, &psi, measure, &band)
}

fn species_from_psi<T: Scalar>(
    grid: &Grid<T>,
    psi: &Field<T>,
    measure: &SpeciesMeasure<T>,
    band: &Band<T>,
) -> Result<SpeciesDensity<T>> {
    let inside = psi.scaled(T::one() / band.mass);
    let species =
        measure.alphas().map(|a| if band.contains(a) { inside.clone() } else { Field::zeros(grid) }).collect();
    SpeciesDensity::new(grid, species)
}

/// One row of a bubble scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BubbleRecord<T> {
    pub epsilon: T,
    /// `log(1/ε²)`, the abscissa of the slope fit.
    pub log_inv_eps2: T,
    pub int_eu: T,
    /// `8π(1 − ε²/(1 + ε²))`.
    pub int_eu_reference: T,
    pub int_eu_u: T,
    /// `∫e^U U / (log(1/ε²) ∫e^U)`.
    pub ratio_eu_u: T,
    pub int_eu_geu: T,
    /// `∫e^U G∗e^U / (log(1/ε⁴) ∫e^U)`.
    pub ratio_eu_geu: T,
    pub int_psi_log_psi: T,
    pub int_psi_gpsi: T,
    pub free_energy: T,
    /// `max |G∗e^U − (U − log 8ε² + 8π H(·, c))|` over the half-radius disk.
    pub projection_error: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit<T> {
    pub slope: T,
    pub intercept: T,
    pub stderr: T,
    pub rms_residual: T,
    pub points: usize,
}

/// Ordinary least squares `y ≈ intercept + slope · x` with the slope's standard error.
pub fn fit_slope<T: Scalar>(xs: &[T], ys: &[T]) -> Result<SlopeFit<T>> {
    let n = xs.len().min(ys.len());
    let usable: Vec<(T, T)> =
        xs.iter().zip(ys).map(|(&x, &y)| (x, y)).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if usable.len() < 4 || n < 4 {
        return Err(Error::DegenerateFit(usable.len()));
    }
    let k = T::lit(usable.len() as f64);
    let mx = usable.iter().fold(T::zero(), |s, p| s + p.0) / k;
    let my = usable.iter().fold(T::zero(), |s, p| s + p.1) / k;
    let sxx = usable.iter().fold(T::zero(), |s, p| s + (p.0 - mx).powi(2));
    if !(sxx > T::zero()) {
        return Err(Error::DegenerateFit(usable.len()));
    }
    let sxy = usable.iter().fold(T::zero(), |s, p| s + (p.0 - mx) * (p.1 - my));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = usable.iter().fold(T::zero(), |s, p| s + (p.1 - intercept - slope * p.0).powi(2));
    let stderr = (ssr / (k - T::lit(2.0)) / sxx).sqrt();
    let rms_residual = (ssr / k).sqrt();
    Ok(SlopeFit { slope, intercept, stderr, rms_residual, points: usable.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Bounded,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BubbleScan<T> {
    pub lambda: T,
    pub eta: T,
    pub band: Band<T>,
    pub records: Vec<BubbleRecord<T>>,
}

/// Checks that the ladder is strictly decreasing, inside `(0, R/4)` and resolved (`ε ≥ 4h`).
pub fn validate_ladder<T: Scalar>(grid: &Grid<T>, epsilons: &[T]) -> Result<()> {
    if epsilons.is_empty() {
        return Err(Error::InvalidLadder("empty".into()));
    }
    let quarter = grid.inradius() / T::lit(4.0);
    let min_eps = T::lit(4.0) * grid.h();
    for (i, &e) in epsilons.iter().enumerate() {
        check_epsilon(e)?;
        if e >= quarter {
            return Err(Error::InvalidLadder(format!("epsilon {e} is not below R/4 = {quarter}")));
        }
        if e < min_eps {
            return Err(Error::UnderResolved { epsilon: e.to_f64_lossy(), limit: min_eps.to_f64_lossy() });
        }
        if i > 0 && e >= epsilons[i - 1] {
            return Err(Error::InvalidLadder("epsilons must be strictly decreasing".into()));
        }
    }
    Ok(())
}

/// Evaluates every bubble integral and the free energy of `ρ_ε` along the ladder.
pub fn bubble_scan<T: Scalar>(
    green: &GreenOperator<T>,
    measure: &SpeciesMeasure<T>,
    lambda: T,
    eta: T,
    epsilons: &[T],
) -> Result<BubbleScan<T>> {
    let grid = green.grid();
    validate_ladder(grid, epsilons)?;
    if !(lambda > T::zero()) {
        return Err(Error::NonPositiveLambda(lambda.to_f64_lossy()));
    }
    let band = select_band(measure, eta)?;
    let center = grid.center();
    let robin = robin_field(green, center)?;
    let half = grid.inradius() / T::lit(2.0);
    let inner: Vec<usize> = (0..grid.len())
        .filter(|&k| {
            let [x, y] = grid.coords(k);
            (x - center[0]).powi(2) + (y - center[1]).powi(2) <= half * half
        })
        .collect();

    let records = epsilons
        .par_iter()
        .map(|&eps| {
            let h2 = grid.cell_area();
            let eu = bubble_exp(grid, eps, center);
            let u = liouville_bubble_at(grid, eps, center)?;
            let geu = green.solve(&eu)?;
            let int_eu = eu.sum() * h2;
            let int_eu_u = grid.inner(&eu, &u);
            let int_eu_geu = grid.inner(&eu, &geu);
            let e2 = eps * eps;
            let log_inv_eps2 = -e2.ln();
            let scale = lambda / int_eu;
            let psi = eu.scaled(scale);
            let int_psi_log_psi = field_entropy(&psi, grid)? + lambda;
            let int_psi_gpsi = scale * scale * int_eu_geu;
            let rho = species_from_psi(grid, &psi, measure, &band)?;
            let free_energy = free_energy_f(&rho, measure, grid, green)?.value;
            let shift = (T::lit(8.0) * e2).ln();
            let projection_error = inner.iter().fold(T::zero(), |m, &k| {
                let predicted = u.values()[k] - shift + eight_pi::<T>() * robin.values()[k];
                m.max((geu.values()[k] - predicted).abs())
            });
            Ok(BubbleRecord {
                epsilon: eps,
                log_inv_eps2,
                int_eu,
                int_eu_reference: eight_pi::<T>() * (T::one() - e2 / (T::one() + e2)),
                int_eu_u,
                ratio_eu_u: int_eu_u / (log_inv_eps2 * int_eu),
                int_eu_geu,
                ratio_eu_geu: int_eu_geu / (T::lit(2.0) * log_inv_eps2 * int_eu),
                int_psi_log_psi,
                int_psi_gpsi,
                free_energy,
                projection_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BubbleScan { lambda, eta, band, records })
}

/// Bubble expansions for the single-species measure at `λ = 8π`.
pub fn expansion_report<T: Scalar>(green: &GreenOperator<T>, epsilons: &[T]) -> Result<BubbleScan<T>> {
    bubble_scan(green, &SpeciesMeasure::keller_segel(), eight_pi(), T::lit(0.5), epsilons)
}

/// Leading-order slope `λ(1 − c²λ/8π)` of `F(ρ_ε)` against `log(1/ε²)`.
pub fn predicted_slope<T: Scalar>(lambda: T, band_constant: T) -> T {
    lambda * (T::one() - band_constant * band_constant * lambda / eight_pi())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseExperiment<T> {
    pub lambda: T,
    pub fit: SlopeFit<T>,
    pub predicted_slope: T,
    pub verdict: Verdict,
    pub scan: BubbleScan<T>,
}

/// Verdict for a fitted slope at mass `λ`.
pub fn verdict<T: Scalar>(fit: &SlopeFit<T>, lambda: T) -> Verdict {
    let margin = T::lit(SLOPE_SIGMAS) * fit.stderr + T::lit(SLOPE_DEAD_ZONE) * lambda;
    if fit.slope < -margin {
        Verdict::Unbounded
    } else {
        Verdict::Bounded
    }
}

/// Fits `F(ρ_ε)` against `log(1/ε²)` and classifies the free energy as bounded or not.
pub fn collapse_experiment<T: Scalar>(
    green: &GreenOperator<T>,
    measure: &SpeciesMeasure<T>,
    lambda: T,
    eta: T,
    epsilons: &[T],
) -> Result<CollapseExperiment<T>> {
    if epsilons.len() < 4 {
        return Err(Error::DegenerateFit(epsilons.len()));
    }
    let scan = bubble_scan(green, measure, lambda, eta, epsilons)?;
    let xs: Vec<T> = scan.records.iter().map(|r| r.log_inv_eps2).collect();
    let ys: Vec<T> = scan.records.iter().map(|r| r.free_energy).collect();
    let fit = fit_slope(&xs, &ys)?;
    Ok(CollapseExperiment {
        lambda,
        predicted_slope: predicted_slope(lambda, scan.band.constant()),
        verdict: verdict(&fit, lambda),
        fit,
        scan,
    })
}

/// `(∬ αρ G̃∗(αρ), c² ∫ψ G∗ψ)`: both sides of the factorization identity for `ρ_ε`.
pub fn factorization_sides<T: Scalar>(
    green: &GreenOperator<T>,
    epsilon: T,
    lambda: T,
    measure: &SpeciesMeasure<T>,
    eta: T,
) -> Result<(T, T)> {
    let grid = green.grid();
    let band = select_band(measure, eta)?;
    let psi = bubble_density(grid, epsilon, lambda)?;
    let rho = species_from_psi(grid, &psi, measure, &band)?;
    let s = signed_source(&rho, measure)?;
    let lhs = grid.inner(&s, &green.solve(&s)?);
    let c = band.constant();
    let rhs = c * c * grid.inner(&psi, &green.solve(&psi)?);
    Ok((lhs, rhs))
}

/// `(∬ ρ log ρ, ∫ ψ log ψ, log P(band))` for `ρ_ε`; the first equals
/// `∫ ψ log ψ − λ log P(band)`.
pub fn entropy_sides<T: Scalar>(
    grid: &Grid<T>,
    epsilon: T,
    lambda: T,
    measure: &SpeciesMeasure<T>,
    eta: T,
) -> Result<(T, T, T)> {
    let band = select_band(measure, eta)?;
    let psi = bubble_density(grid, epsilon, lambda)?;
    let rho = species_from_psi(grid, &psi, measure, &band)?;
    let total = measure.weights().zip(&rho.masses(grid)).fold(T::zero(), |a, (w, &m)| a + w * m);
    let rho_log_rho = entropy(&rho, measure, grid)? + total;
    let psi_log_psi = field_entropy(&psi, grid)? + lambda;
    Ok((rho_log_rho, psi_log_psi, band.mass.ln()))
}
