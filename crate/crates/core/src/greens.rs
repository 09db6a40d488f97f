//! Discrete Dirichlet Green operator, its measure-weighted convolution and
//! the Robin function.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, SpeciesDensity};
use crate::linalg::{GridMatrix, SpdSolver};
use crate::measure::SpeciesMeasure;
use crate::scalar::Scalar;

/// Factorized `−Δ_h` for one grid. Immutable once built; solves are reentrant.
#[derive(Debug, Clone)]
pub struct GreenOperator<T> {
    grid: Grid<T>,
    solver: SpdSolver<T>,
}

impl<T: Scalar> GreenOperator<T> {
    pub fn new(grid: &Grid<T>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidGrid("no interior cells".into()));
        }
        let solver = SpdSolver::new(GridMatrix::shifted_dirichlet(grid, T::zero()))?;
        Ok(Self { grid: grid.clone(), solver })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    /// `v` with `−Δ_h v = f`.
    pub fn solve(&self, f: &Field<T>) -> Result<Field<T>> {
        self.grid.check(f)?;
        let h2 = self.grid.cell_area();
        let rhs: Vec<T> = f.values().iter().map(|&x| x * h2).collect();
        let v = Field::new(self.solver.solve(&rhs));
        if !v.is_finite() {
            return Err(Error::NonFinite("Poisson solve"));
        }
        Ok(v)
    }

    /// Discrete `L²` norm of `−Δ_h v − f`.
    pub fn residual(&self, v: &Field<T>, f: &Field<T>) -> T {
        let lap = crate::grid::laplacian_dirichlet(v, &self.grid);
        let r = lap.zip_map(f, |a, b| -a - b);
        self.grid.norm_l2(&r)
    }

    /// `G_h(·, x0)`: the response to a unit point mass at cell `x0`.
    pub fn column(&self, x0: usize) -> Result<Field<T>> {
        if x0 >= self.grid.len() {
            return Err(Error::InvalidGrid(format!("cell {x0} out of range")));
        }
        self.solve(&Field::delta(&self.grid, x0))
    }
}

pub fn solve_poisson<T: Scalar>(f: &Field<T>, green: &GreenOperator<T>) -> Result<Field<T>> {
    green.solve(f)
}

/// `G ∗ ψ`; same operation as [`solve_poisson`].
pub fn green_convolve<T: Scalar>(psi: &Field<T>, green: &GreenOperator<T>) -> Result<Field<T>> {
    green.solve(psi)
}

/// `Σ_j w_j α_j ρ_j`, the signed aggregate density.
pub fn signed_source<T: Scalar>(rho: &SpeciesDensity<T>, measure: &SpeciesMeasure<T>) -> Result<Field<T>> {
    rho.check(measure.len())?;
    let n = rho.species().first().map_or(0, Field::len);
    let mut s = vec![T::zero(); n];
    for (a, f) in measure.atoms().iter().zip(rho.species()) {
        let c = a.weight * a.alpha;
        if c == T::zero() {
            continue;
        }
        for (si, &r) in s.iter_mut().zip(f.values()) {
            *si = *si + c * r;
        }
    }
    Ok(Field::new(s))
}

/// `G ∗ (∫ αρ P(dα))`.
pub fn tg_convolve<T: Scalar>(
    rho: &SpeciesDensity<T>,
    measure: &SpeciesMeasure<T>,
    green: &GreenOperator<T>,
) -> Result<Field<T>> {
    green.solve(&signed_source(rho, measure)?)
}

/// Robin function `H(x0, x0)` from the discrete Green column.
///
/// `G_h(x, x0) + (1/2π) log|x − x0|` is averaged over the cells at lattice
/// distance `k h` (rounded) for `k = 2, 3, 4`, and the three ring means are
/// extrapolated to radius zero by the quadratic through them.
pub fn robin_self<T: Scalar>(green: &GreenOperator<T>, x0: usize) -> Result<T> {
    let means = robin_ring_means(green, x0)?;
    Ok(T::lit(6.0) * means[0] - T::lit(8.0) * means[1] + T::lit(3.0) * means[2])
}

/// Ring means of `G_h(·, x0) + (1/2π) log|x − x0|` at radii `2h, 3h, 4h`.
pub fn robin_ring_means<T: Scalar>(green: &GreenOperator<T>, x0: usize) -> Result<[T; 3]> {
    let grid = green.grid();
    let h = grid.h();
    let required = T::lit(4.0) * h;
    let distance = grid.distance_to_boundary(x0);
    if x0 >= grid.len() || distance < required {
        return Err(Error::TooCloseToBoundary {
            cell: x0,
            distance: distance.to_f64_lossy(),
            required: required.to_f64_lossy(),
        });
    }
    let g = green.column(x0)?;
    let (i0, j0) = grid.cell(x0);
    let inv_two_pi = T::one() / (T::lit(2.0) * T::PI());
    let mut sums = [T::zero(); 3];
    let mut counts = [0usize; 3];
    for dj in -5i64..=5 {
        for di in -5i64..=5 {
            let rr = ((di * di + dj * dj) as f64).sqrt();
            let ring = rr.round() as i64;
            if !(2..=4).contains(&ring) {
                continue;
            }
            let (i, j) = (i0 as i64 + di, j0 as i64 + dj);
            if i < 0 || j < 0 {
                continue;
            }
            let Some(k) = grid.index_of(i as usize, j as usize) else {
                continue;
            };
            let r = T::lit(rr) * h;
            let slot = (ring - 2) as usize;
            sums[slot] = sums[slot] + g.values()[k] + inv_two_pi * r.ln();
            counts[slot] += 1;
        }
    }
    Ok([0, 1, 2].map(|s| sums[s] / T::lit(counts[s] as f64)))
}

/// `H(·, y)`: the discrete harmonic function equal to `(1/2π) log|x − y|` on
/// boundary faces.
pub fn robin_field<T: Scalar>(green: &GreenOperator<T>, y: [T; 2]) -> Result<Field<T>> {
    let grid = green.grid();
    let inv_two_pi = T::one() / (T::lit(2.0) * T::PI());
    let two_over_h2 = T::lit(2.0) / grid.cell_area();
    let b = Field::new(
        (0..grid.len())
            .map(|k| {
                let nb = grid.neighbors(k);
                (0..4).filter(|&d| nb[d].is_none()).fold(T::zero(), |acc, d| {
                    let [fx, fy] = grid.face_midpoint(k, d);
                    let r = ((fx - y[0]).powi(2) + (fy - y[1]).powi(2)).sqrt();
                    acc + two_over_h2 * inv_two_pi * r.ln()
                })
            })
            .collect(),
    );
    green.solve(&b)
}
