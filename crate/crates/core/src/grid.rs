//! Cell-centered finite-volume mesh on a rectangle or a masked disk.
//!
//! Cells are square with spacing `h`. Interior cells are numbered row-major
//! (`j` outer, `i` inner) over the bounding box, skipping masked-out cells.
//! Every interior cell knows its four face neighbors; a face whose neighbor is
//! outside the domain is a boundary face. The potential satisfies `v = 0` on
//! boundary faces (mirror ghost value), densities carry zero flux across them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const EXTERIOR: usize = usize::MAX;

/// Face directions, in the order stored by [`Grid::neighbors`].
pub const EAST: usize = 0;
pub const WEST: usize = 1;
pub const NORTH: usize = 2;
pub const SOUTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry<T> {
    Rectangle { lx: T, ly: T },
    Disk { radius: T, center: [T; 2] },
}

#[derive(Debug, Clone)]
pub struct Grid<T> {
    nx: usize,
    ny: usize,
    h: T,
    origin: [T; 2],
    geometry: Geometry<T>,
    index: Vec<usize>,
    cells: Vec<(usize, usize)>,
    neighbors: Vec<[Option<usize>; 4]>,
}

impl<T: Scalar> Grid<T> {
    /// `[0, lx] × [0, ly]` with `nx × ny` square cells.
    pub fn rectangle(lx: T, ly: T, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid("cell counts must be positive".into()));
        }
        if !(lx > T::zero() && ly > T::zero()) {
            return Err(Error::InvalidGrid("side lengths must be positive".into()));
        }
        let hx = lx / T::lit(nx as f64);
        let hy = ly / T::lit(ny as f64);
        if (hx - hy).abs() > T::lit(1e-12) * hx.max(hy) {
            return Err(Error::InvalidGrid(format!("cells are not square: hx = {hx}, hy = {hy}")));
        }
        Ok(Self::build(nx, ny, hx, [T::zero(), T::zero()], Geometry::Rectangle { lx, ly }, |_, _| true))
    }

    /// Unit square with `n × n` cells.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::rectangle(T::one(), T::one(), n, n)
    }

    /// Disk of the given radius, `n` cells across the diameter. A cell is
    /// interior when its center lies strictly inside the circle.
    pub fn disk(radius: T, center: [T; 2], n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid("disk needs at least 3 cells across".into()));
        }
        if !(radius > T::zero()) {
            return Err(Error::InvalidGrid("radius must be positive".into()));
        }
        let h = T::lit(2.0) * radius / T::lit(n as f64);
        let origin = [center[0] - radius, center[1] - radius];
        let half = T::lit(0.5);
        let grid = Self::build(n, n, h, origin, Geometry::Disk { radius, center }, |i, j| {
            let x = origin[0] + (T::lit(i as f64) + half) * h - center[0];
            let y = origin[1] + (T::lit(j as f64) + half) * h - center[1];
            x * x + y * y < radius * radius
        });
        if grid.cells.is_empty() {
            return Err(Error::InvalidGrid("no interior cells".into()));
        }
        Ok(grid)
    }

    fn build(
        nx: usize,
        ny: usize,
        h: T,
        origin: [T; 2],
        geometry: Geometry<T>,
        inside: impl Fn(usize, usize) -> bool,
    ) -> Self {
        let mut index = vec![EXTERIOR; nx * ny];
        let mut cells = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if inside(i, j) {
                    index[j * nx + i] = cells.len();
                    cells.push((i, j));
                }
            }
        }
        let lookup = |i: isize, j: isize| -> Option<usize> {
            if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
                return None;
            }
            let k = index[j as usize * nx + i as usize];
            (k != EXTERIOR).then_some(k)
        };
        let neighbors = cells
            .iter()
            .map(|&(i, j)| {
                let (i, j) = (i as isize, j as isize);
                [lookup(i + 1, j), lookup(i - 1, j), lookup(i, j + 1), lookup(i, j - 1)]
            })
            .collect();
        Self { nx, ny, h, origin, geometry, index, cells, neighbors }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> T {
        self.h
    }

    /// Cell area `h²`.
    pub fn cell_area(&self) -> T {
        self.h * self.h
    }

    pub fn geometry(&self) -> Geometry<T> {
        self.geometry
    }

    pub fn origin(&self) -> [T; 2] {
        self.origin
    }

    /// Number of interior cells.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Discrete area `N h²`.
    pub fn area(&self) -> T {
        T::lit(self.len() as f64) * self.cell_area()
    }

    /// Center of the domain (rectangle midpoint or disk center).
    pub fn center(&self) -> [T; 2] {
        match self.geometry {
            Geometry::Rectangle { lx, ly } => {
                let half = T::lit(0.5);
                [self.origin[0] + half * lx, self.origin[1] + half * ly]
            }
            Geometry::Disk { center, .. } => center,
        }
    }

    /// Radius of the largest disk around the center contained in the domain.
    pub fn inradius(&self) -> T {
        match self.geometry {
            Geometry::Rectangle { lx, ly } => T::lit(0.5) * lx.min(ly),
            Geometry::Disk { radius, .. } => radius,
        }
    }

    /// Box coordinates `(i, j)` of an interior cell.
    pub fn cell(&self, k: usize) -> (usize, usize) {
        self.cells[k]
    }

    /// Interior index of box cell `(i, j)`, if it is interior.
    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.nx || j >= self.ny {
            return None;
        }
        let k = self.index[j * self.nx + i];
        (k != EXTERIOR).then_some(k)
    }

    /// Cell-center coordinates.
    pub fn coords(&self, k: usize) -> [T; 2] {
        let (i, j) = self.cells[k];
        let half = T::lit(0.5);
        [self.origin[0] + (T::lit(i as f64) + half) * self.h, self.origin[1] + (T::lit(j as f64) + half) * self.h]
    }

    /// Face midpoint of cell `k` in direction `dir`.
    pub fn face_midpoint(&self, k: usize, dir: usize) -> [T; 2] {
        let [x, y] = self.coords(k);
        let half = T::lit(0.5) * self.h;
        match dir {
            EAST => [x + half, y],
            WEST => [x - half, y],
            NORTH => [x, y + half],
            _ => [x, y - half],
        }
    }

    /// Face neighbors `[east, west, north, south]`; `None` marks a boundary face.
    pub fn neighbors(&self, k: usize) -> [Option<usize>; 4] {
        self.neighbors[k]
    }

    pub fn boundary_faces(&self, k: usize) -> usize {
        self.neighbors[k].iter().filter(|n| n.is_none()).count()
    }

    /// Each interior face once, as `(k, l)` with `k < l`.
    pub fn interior_faces(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(k, nb)| [nb[EAST], nb[NORTH]].into_iter().flatten().map(move |l| (k.min(l), k.max(l))))
    }

    /// Distance from the center of cell `k` to the nearest boundary face midpoint.
    pub fn distance_to_boundary(&self, k: usize) -> T {
        let [x, y] = self.coords(k);
        match self.geometry {
            Geometry::Rectangle { lx, ly } => {
                let dx = (x - self.origin[0]).min(self.origin[0] + lx - x);
                let dy = (y - self.origin[1]).min(self.origin[1] + ly - y);
                dx.min(dy)
            }
            Geometry::Disk { radius, center } => {
                let r = ((x - center[0]).powi(2) + (y - center[1]).powi(2)).sqrt();
                radius - r
            }
        }
    }

    /// Interior cell whose center is closest to `p`.
    pub fn nearest_cell(&self, p: [T; 2]) -> Option<usize> {
        (0..self.len()).min_by(|&a, &b| {
            let da = dist2(self.coords(a), p);
            let db = dist2(self.coords(b), p);
            da.partial_cmp(&db).expect("finite coordinates")
        })
    }

    /// `h² Σ a b`.
    pub fn inner(&self, a: &Field<T>, b: &Field<T>) -> T {
        crate::scalar::dot(a.values(), b.values()) * self.cell_area()
    }

    /// Discrete `L²` norm.
    pub fn norm_l2(&self, a: &Field<T>) -> T {
        self.inner(a, a).sqrt()
    }

    pub(crate) fn check(&self, f: &Field<T>) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::FieldLength { expected: self.len(), found: f.len() });
        }
        Ok(())
    }
}

fn dist2<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// One real value per interior cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T>(Vec<T>);

impl<T: Scalar> Field<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        Self(vec![T::zero(); grid.len()])
    }

    pub fn constant(grid: &Grid<T>, c: T) -> Self {
        Self(vec![c; grid.len()])
    }

    /// Samples `f(x, y)` at cell centers.
    pub fn from_fn(grid: &Grid<T>, f: impl Fn(T, T) -> T) -> Self {
        Self(
            (0..grid.len())
                .map(|k| {
                    let [x, y] = grid.coords(k);
                    f(x, y)
                })
                .collect(),
        )
    }

    /// Cell `k` set to `1/h²`: unit mass concentrated in one cell.
    pub fn delta(grid: &Grid<T>, k: usize) -> Self {
        let mut f = Self::zeros(grid);
        f.0[k] = T::one() / grid.cell_area();
        f
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<T> {
        self.0
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn scaled(&self, c: T) -> Self {
        self.map(|x| c * x)
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: T, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn min(&self) -> T {
        self.0.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.0.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn sum(&self) -> T {
        self.0.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// One nonnegative field per measure atom.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesDensity<T> {
    species: Vec<Field<T>>,
}

impl<T: Scalar> SpeciesDensity<T> {
    /// Validates nonnegativity and that every field lives on `grid`.
    pub fn new(grid: &Grid<T>, species: Vec<Field<T>>) -> Result<Self> {
        for (j, f) in species.iter().enumerate() {
            grid.check(f)?;
            let min = f.min();
            if !f.is_finite() {
                return Err(Error::NonFinite("species density"));
            }
            if min < T::zero() {
                return Err(Error::NegativeDensity { species: j, min: min.to_f64_lossy() });
            }
        }
        Ok(Self { species })
    }

    /// The same field for every atom.
    pub fn replicate(grid: &Grid<T>, field: &Field<T>, atoms: usize) -> Result<Self> {
        Self::new(grid, vec![field.clone(); atoms])
    }

    pub fn species(&self) -> &[Field<T>] {
        &self.species
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    pub fn into_species(self) -> Vec<Field<T>> {
        self.species
    }

    pub fn min(&self) -> T {
        self.species.iter().map(Field::min).fold(T::infinity(), T::min)
    }

    /// Per-species masses `∫ρ_j`.
    pub fn masses(&self, grid: &Grid<T>) -> Vec<T> {
        self.species.iter().map(|f| integrate_field(f, grid)).collect()
    }

    pub(crate) fn check(&self, measure_len: usize) -> Result<()> {
        if self.species.len() != measure_len {
            return Err(Error::SpeciesCount { expected: measure_len, found: self.species.len() });
        }
        Ok(())
    }
}

/// `∫_Ω u ≈ h² Σ u`.
pub fn integrate_field<T: Scalar>(u: &Field<T>, grid: &Grid<T>) -> T {
    u.sum() * grid.cell_area()
}

/// Five-point Laplacian with `u = 0` on boundary faces (ghost value `-u`).
pub fn laplacian_dirichlet<T: Scalar>(u: &Field<T>, grid: &Grid<T>) -> Field<T> {
    let inv_h2 = T::one() / grid.cell_area();
    let two = T::lit(2.0);
    let vals = u.values();
    Field::new(
        (0..grid.len())
            .map(|k| {
                let uk = vals[k];
                let acc = grid.neighbors(k).iter().fold(T::zero(), |acc, nb| match nb {
                    Some(l) => acc + (vals[*l] - uk),
                    None => acc - two * uk,
                });
                acc * inv_h2
            })
            .collect(),
    )
}

/// Five-point Laplacian with zero normal derivative on boundary faces.
pub fn laplacian_neumann<T: Scalar>(u: &Field<T>, grid: &Grid<T>) -> Field<T> {
    let inv_h2 = T::one() / grid.cell_area();
    let vals = u.values();
    Field::new(
        (0..grid.len())
            .map(|k| {
                let uk = vals[k];
                grid.neighbors(k).iter().flatten().fold(T::zero(), |acc, &l| acc + (vals[l] - uk)) * inv_h2
            })
            .collect(),
    )
}

/// Bernoulli function `B(s) = s / (e^s - 1)`, `B(0) = 1`.
#[inline]
pub fn bernoulli<T: Scalar>(s: T) -> T {
    if s.abs() < T::lit(1e-5) {
        // 1 - s/2 + s²/12
        T::one() - s * (T::lit(0.5) - s / T::lit(12.0))
    } else {
        s / s.exp_m1()
    }
}

/// `div(∇ρ - αρ∇v)` with Scharfetter–Gummel face fluxes and zero flux on
/// boundary faces.
///
/// The face flux from cell `k` to `l` is `(1/h)[B(-s)ρ_k - B(s)ρ_l]` with
/// `s = α(v_l - v_k)`; it vanishes identically when `ρ ∝ e^{αv}`.
pub fn sg_flux_divergence<T: Scalar>(rho: &Field<T>, v: &Field<T>, alpha: T, grid: &Grid<T>) -> Field<T> {
    let inv_h2 = T::one() / grid.cell_area();
    let (r, p) = (rho.values(), v.values());
    let mut out = vec![T::zero(); grid.len()];
    for (k, l) in grid.interior_faces() {
        let s = alpha * (p[l] - p[k]);
        // h times the flux from k into l.
        let flux = bernoulli(-s) * r[k] - bernoulli(s) * r[l];
        out[k] = out[k] - flux;
        out[l] = out[l] + flux;
    }
    for x in &mut out {
        *x = *x * inv_h2;
    }
    Field::new(out)
}

/// Largest interior-face gradient `max |v_l - v_k| / h`.
pub fn max_face_gradient<T: Scalar>(v: &Field<T>, grid: &Grid<T>) -> T {
    let p = v.values();
    grid.interior_faces().fold(T::zero(), |m, (k, l)| m.max((p[l] - p[k]).abs())) / grid.h()
}
