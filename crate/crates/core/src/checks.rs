//! Seeded randomized verifications: duality gaps, inner-minimizer
//! optimality and the gradient-flow structure of the mean-field equations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{gradient_check, GradientCheck, Variant};
use crate::error::Result;
use crate::functionals::{free_energy_f, inner_min_rho, inner_min_v, lyapunov_l, mean_field_j, relative_gap};
use crate::greens::GreenOperator;
use crate::grid::{Field, Grid, SpeciesDensity};
use crate::measure::SpeciesMeasure;
use crate::scalar::Scalar;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `Σ_{p,q ≤ modes} a_pq sin(pπx̂) sin(qπŷ) / (p² + q²)` on the bounding box,
/// `a_pq` uniform in `[−amplitude, amplitude]`.
pub fn random_smooth_field<T: Scalar, R: Rng>(grid: &Grid<T>, rng: &mut R, modes: usize, amplitude: f64) -> Field<T> {
    let coeffs: Vec<(f64, f64, f64)> = (1..=modes)
        .flat_map(|p| (1..=modes).map(move |q| (p as f64, q as f64)))
        .map(|(p, q)| (p, q, rng.gen_range(-amplitude..=amplitude) / (p * p + q * q)))
        .collect();
    let [x0, y0] = grid.origin();
    let (lx, ly) = (grid.h().to_f64_lossy() * grid.nx() as f64, grid.h().to_f64_lossy() * grid.ny() as f64);
    let pi = std::f64::consts::PI;
    Field::from_fn(grid, |x, y| {
        let xs = (x - x0).to_f64_lossy() / lx;
        let ys = (y - y0).to_f64_lossy() / ly;
        T::lit(coeffs.iter().map(|&(p, q, a)| a * (p * pi * xs).sin() * (q * pi * ys).sin()).sum())
    })
}

/// Positive species `e^{φ_j}` with random smooth `φ_j`, scaled to weighted total mass `λ`.
pub fn random_admissible_density<T: Scalar, R: Rng>(
    grid: &Grid<T>,
    measure: &SpeciesMeasure<T>,
    rng: &mut R,
    lambda: T,
) -> Result<SpeciesDensity<T>> {
    let species: Vec<Field<T>> =
        (0..measure.len()).map(|_| random_smooth_field(grid, rng, 4, 3.0).map(T::exp)).collect();
    let total = measure.weights().zip(&species).fold(T::zero(), |a, (w, f)| a + w * f.sum()) * grid.cell_area();
    SpeciesDensity::new(grid, species.into_iter().map(|f| f.scaled(lambda / total)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityReport<T> {
    pub trials: usize,
    /// `max |L(ρ_v, v) − J(v)|`, relative.
    pub max_gap_lj: T,
    /// `max |L(ρ, v_ρ) − F(ρ)|`, relative.
    pub max_gap_lf: T,
}

/// Duality gaps for one pair `(v, ρ)`.
pub fn duality_gaps<T: Scalar>(
    v: &Field<T>,
    rho: &SpeciesDensity<T>,
    measure: &SpeciesMeasure<T>,
    green: &GreenOperator<T>,
    lambda: T,
) -> Result<(T, T)> {
    let grid = green.grid();
    let rho_v = inner_min_rho(v, measure, grid, lambda)?;
    let l_v = lyapunov_l(&rho_v, v, measure, grid)?.value;
    let j = mean_field_j(v, measure, grid, lambda)?.value;
    let v_rho = inner_min_v(rho, measure, green)?;
    let l_rho = lyapunov_l(rho, &v_rho, measure, grid)?.value;
    let f = free_energy_f(rho, measure, grid, green)?.value;
    Ok((relative_gap(l_v, j), relative_gap(l_rho, f)))
}

/// Runs `trials` seeded duality checks; with `zero`, uses `v ≡ 0` and uniform `ρ` instead.
pub fn duality_check<T: Scalar>(
    green: &GreenOperator<T>,
    measure: &SpeciesMeasure<T>,
    lambda: T,
    trials: usize,
    seed: u64,
    zero: bool,
) -> Result<DualityReport<T>> {
    let grid = green.grid();
    let mut rng = rng(seed);
    let mut report = DualityReport { trials, max_gap_lj: T::zero(), max_gap_lf: T::zero() };
    for _ in 0..trials {
        let (v, rho) = if zero {
            let uniform = Field::constant(grid, lambda / grid.area());
            (Field::zeros(grid), SpeciesDensity::replicate(grid, &uniform, measure.len())?)
        } else {
            let v = random_smooth_field(grid, &mut rng, 6, 4.0);
            (v, random_admissible_density(grid, measure, &mut rng, lambda)?)
        };
        let (lj, lf) = duality_gaps(&v, &rho, measure, green, lambda)?;
        report.max_gap_lj = report.max_gap_lj.max(lj);
        report.max_gap_lf = report.max_gap_lf.max(lf);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinimizerReport<T> {
    pub fields: usize,
    pub perturbations: usize,
    /// `min (L(ρ', v) − L(ρ_v, v))` over all perturbed `ρ' ∈ Γ̃_λ`.
    pub min_excess: T,
}

/// Compares `L(ρ_v, v)` with `L(ρ', v)` for convex combinations `ρ' = (1 − t)ρ_v + tρ_rand`.
pub fn minimizer_check<T: Scalar>(
    grid: &Grid<T>,
    measure: &SpeciesMeasure<T>,
    lambda: T,
    fields: usize,
    perturbations: usize,
    seed: u64,
) -> Result<MinimizerReport<T>> {
    let mut rng = rng(seed);
    let mut min_excess = T::infinity();
    for _ in 0..fields {
        let v = random_smooth_field(grid, &mut rng, 6, 4.0);
        let rho_v = inner_min_rho(&v, measure, grid, lambda)?;
        let base = lyapunov_l(&rho_v, &v, measure, grid)?.value;
        for _ in 0..perturbations {
            let other = random_admissible_density(grid, measure, &mut rng, lambda)?;
            let t = T::lit(rng.gen_range(1e-3..=1.0f64).powi(2));
            let mixed = rho_v
                .species()
                .iter()
                .zip(other.species())
                .map(|(a, b)| a.zip_map(b, |x, y| (T::one() - t) * x + t * y))
                .collect();
            let rho = SpeciesDensity::new(grid, mixed)?;
            let value = lyapunov_l(&rho, &v, measure, grid)?.value;
            min_excess = min_excess.min(value - base);
        }
    }
    Ok(MinimizerReport { fields, perturbations, min_excess })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport<T> {
    pub pairs: usize,
    pub max_relative_error: T,
    pub checks: Vec<GradientCheck<T>>,
}

/// Seeded `(v, ξ)` pairs for [`gradient_check`]; with `zero`, `v ≡ 0`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check_trials<T: Scalar>(
    grid: &Grid<T>,
    measure: &SpeciesMeasure<T>,
    lambda: T,
    variant: Variant,
    pairs: usize,
    seed: u64,
    step: T,
    zero: bool,
) -> Result<GradientReport<T>> {
    let mut rng = rng(seed);
    let mut checks = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let v = if zero { Field::zeros(grid) } else { random_smooth_field(grid, &mut rng, 6, 4.0) };
        let xi = random_smooth_field(grid, &mut rng, 3, 1.0);
        checks.push(gradient_check(&v, &xi, measure, grid, lambda, variant, step)?);
    }
    let max_relative_error = checks.iter().map(|c| c.relative_error).fold(T::zero(), T::max);
    Ok(GradientReport { pairs, max_relative_error, checks })
}
