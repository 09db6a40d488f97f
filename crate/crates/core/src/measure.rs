//! Atomic probability measures over the species index `α ∈ [-1, 1]`.
//!
//! Every species is an atom `(α, w)`: `α > 0` is attracted by the chemical and
//! produces it, `α < 0` is repelled and destroys it. Integrals against the
//! measure are weighted sums over atoms.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{eight_pi, Scalar};

/// Largest number of same-sign atoms accepted by the exhaustive λ̿ enumeration.
pub const MAX_ENUMERATED_ATOMS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom<T> {
    pub alpha: T,
    pub weight: T,
}

/// Probability measure with finitely many atoms, sorted by `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciesMeasure<T> {
    atoms: Vec<Atom<T>>,
}

/// Critical total mass under the average constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AverageCriticalMass<T> {
    Value(T),
    /// The support avoids both endpoints `±1`; no threshold is known.
    NotCovered,
}

impl<T: Scalar> AverageCriticalMass<T> {
    pub fn value(self) -> Option<T> {
        match self {
            Self::Value(v) => Some(v),
            Self::NotCovered => None,
        }
    }
}

/// Builds a measure from `(alpha, weight)` pairs, renormalizing the weights.
pub fn make_measure<T: Scalar>(atoms: &[(T, T)]) -> Result<SpeciesMeasure<T>> {
    SpeciesMeasure::new(atoms)
}

impl<T: Scalar> SpeciesMeasure<T> {
    pub fn new(atoms: &[(T, T)]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let mut list = Vec::with_capacity(atoms.len());
        for &(alpha, weight) in atoms {
            if !alpha.is_finite() || alpha < -T::one() || alpha > T::one() {
                return Err(Error::AlphaOutOfRange(alpha.to_f64_lossy()));
            }
            if !weight.is_finite() || weight <= T::zero() {
                return Err(Error::NonPositiveWeight(weight.to_f64_lossy()));
            }
            list.push(Atom { alpha, weight });
        }
        list.sort_by(|a, b| a.alpha.partial_cmp(&b.alpha).expect("finite alphas"));
        if let Some(pair) = list.windows(2).find(|p| p[0].alpha == p[1].alpha) {
            return Err(Error::DuplicateAlpha(pair[0].alpha.to_f64_lossy()));
        }
        let total: T = list.iter().map(|a| a.weight).sum();
        let last = list.len() - 1;
        let mut acc = T::zero();
        for (k, atom) in list.iter_mut().enumerate() {
            if k == last {
                atom.weight = T::one() - acc;
            } else {
                atom.weight = atom.weight / total;
                acc = acc + atom.weight;
            }
        }
        Ok(Self { atoms: list })
    }

    /// The Dirac mass at `alpha`.
    pub fn dirac(alpha: T) -> Result<Self> {
        Self::new(&[(alpha, T::one())])
    }

    /// `δ₁`, the classical single-species Keller–Segel case.
    pub fn keller_segel() -> Self {
        Self::dirac(T::one()).expect("valid")
    }

    /// `τ δ_{α₁} + (1 − τ) δ_{α₂}`.
    pub fn two_species(tau: T, alpha1: T, alpha2: T) -> Result<Self> {
        Self::new(&[(alpha1, tau), (alpha2, T::one() - tau)])
    }

    pub fn atoms(&self) -> &[Atom<T>] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn alphas(&self) -> impl Iterator<Item = T> + '_ {
        self.atoms.iter().map(|a| a.alpha)
    }

    pub fn weights(&self) -> impl Iterator<Item = T> + '_ {
        self.atoms.iter().map(|a| a.weight)
    }

    pub fn max_abs_alpha(&self) -> T {
        self.alphas().fold(T::zero(), |m, a| m.max(a.abs()))
    }

    /// Exact support query on atoms.
    pub fn contains(&self, alpha: T) -> bool {
        self.atoms.iter().any(|a| a.alpha == alpha)
    }

    /// `∫ g(α) P(dα)`.
    pub fn integrate<F: Fn(T) -> T>(&self, g: F) -> T {
        self.atoms.iter().map(|a| a.weight * g(a.alpha)).sum()
    }

    /// `P([lo, hi])`.
    pub fn band_mass(&self, lo: T, hi: T) -> T {
        self.atoms.iter().filter(|a| a.alpha >= lo && a.alpha <= hi).map(|a| a.weight).sum()
    }

    /// `∫_{[lo, hi]} α P(dα)`.
    pub fn band_moment(&self, lo: T, hi: T) -> T {
        self.atoms.iter().filter(|a| a.alpha >= lo && a.alpha <= hi).map(|a| a.weight * a.alpha).sum()
    }
}

/// `∫ g(α) P(dα) = Σ w_j g(α_j)`.
pub fn integrate_alpha<T: Scalar, F: Fn(T) -> T>(measure: &SpeciesMeasure<T>, g: F) -> T {
    measure.integrate(g)
}

/// `8π` when the support meets `{-1, 1}`, otherwise [`AverageCriticalMass::NotCovered`].
pub fn critical_mass_average<T: Scalar>(measure: &SpeciesMeasure<T>) -> AverageCriticalMass<T> {
    if measure.contains(T::one()) || measure.contains(-T::one()) {
        AverageCriticalMass::Value(eight_pi())
    } else {
        AverageCriticalMass::NotCovered
    }
}

/// Critical mass under the individual constraint:
/// `inf 8π P(K) / (∫_K α P(dα))²` over nonempty same-sign atom subsets `K`.
///
/// `α = 0` atoms belong to the nonnegative side; subsets whose moment vanishes
/// are skipped.
pub fn critical_mass_individual<T: Scalar>(measure: &SpeciesMeasure<T>) -> Result<T> {
    if measure.atoms.iter().all(|a| a.alpha == T::zero()) {
        return Err(Error::AllAlphaZero);
    }
    let nonneg: Vec<Atom<T>> = measure.atoms.iter().copied().filter(|a| a.alpha >= T::zero()).collect();
    let neg: Vec<Atom<T>> = measure.atoms.iter().copied().filter(|a| a.alpha < T::zero()).collect();
    for side in [&nonneg, &neg] {
        if side.len() > MAX_ENUMERATED_ATOMS {
            return Err(Error::TooManyAtoms { count: side.len(), limit: MAX_ENUMERATED_ATOMS });
        }
    }
    let best = min_ratio(&nonneg).into_iter().chain(min_ratio(&neg)).fold(T::infinity(), T::min);
    Ok(eight_pi::<T>() * best)
}

/// `min P(K)/(Σ_K w α)²` over nonempty subsets, visited in Gray-code order so
/// each subset costs one add/remove.
fn min_ratio<T: Scalar>(atoms: &[Atom<T>]) -> Option<T> {
    if atoms.is_empty() {
        return None;
    }
    let n = atoms.len();
    let mut members = vec![false; n];
    let (mut mass, mut moment) = (T::zero(), T::zero());
    let mut best: Option<T> = None;
    for step in 1u64..(1u64 << n) {
        let flip = step.trailing_zeros() as usize;
        let atom = atoms[flip];
        members[flip] = !members[flip];
        let sign = if members[flip] { T::one() } else { -T::one() };
        mass = mass + sign * atom.weight;
        moment = moment + sign * atom.weight * atom.alpha;
        // Small families are re-summed every time so hand-checkable cases are
        // exact; long walks re-sum periodically to bound drift.
        if n <= 12 || step % 4096 == 0 {
            (mass, moment) = subset_sums(atoms, &members);
        }
        if moment == T::zero() {
            continue;
        }
        let ratio = mass / (moment * moment);
        best = Some(best.map_or(ratio, |b| b.min(ratio)));
    }
    best
}

fn subset_sums<T: Scalar>(atoms: &[Atom<T>], members: &[bool]) -> (T, T) {
    atoms
        .iter()
        .zip(members)
        .filter(|(_, m)| **m)
        .fold((T::zero(), T::zero()), |(mass, moment), (a, _)| (mass + a.weight, moment + a.weight * a.alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn m(atoms: &[(f64, f64)]) -> SpeciesMeasure<f64> {
        make_measure(atoms).unwrap()
    }

    #[test]
    fn construction_normalizes_and_sorts() {
        let p = m(&[(1.0, 2.0), (0.5, 2.0)]);
        assert_eq!(p.atoms()[0].alpha, 0.5);
        assert_eq!(p.atoms()[0].weight, 0.5);
        assert_eq!(p.atoms()[1].weight, 0.5);
        let total: f64 = p.weights().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn construction_errors() {
        assert_eq!(make_measure::<f64>(&[]), Err(Error::EmptyMeasure));
        assert!(matches!(make_measure(&[(1.5, 1.0)]), Err(Error::AlphaOutOfRange(_))));
        assert!(matches!(make_measure(&[(0.5, 0.0)]), Err(Error::NonPositiveWeight(_))));
        assert!(matches!(make_measure(&[(0.5, -1.0)]), Err(Error::NonPositiveWeight(_))));
        assert!(matches!(make_measure(&[(0.5, 1.0), (0.5, 2.0)]), Err(Error::DuplicateAlpha(_))));
    }

    #[test]
    fn integrate_examples() {
        assert_eq!(integrate_alpha(&m(&[(1.0, 1.0)]), |a| a), 1.0);
        assert_eq!(integrate_alpha(&m(&[(1.0, 0.5), (-1.0, 0.5)]), |a| a), 0.0);
        assert!((integrate_alpha(&m(&[(1.0, 0.5), (0.5, 0.5)]), |a| a) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn average_threshold() {
        assert_eq!(critical_mass_average(&m(&[(1.0, 1.0)])).value(), Some(8.0 * PI));
        assert_eq!(critical_mass_average(&m(&[(1.0, 0.5), (-1.0, 0.5)])).value(), Some(8.0 * PI));
        assert_eq!(critical_mass_average(&m(&[(-1.0, 0.3), (0.2, 0.7)])).value(), Some(8.0 * PI));
        assert_eq!(critical_mass_average(&m(&[(0.5, 1.0)])), AverageCriticalMass::NotCovered);
    }

    #[test]
    fn individual_threshold_examples() {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b;
        assert!(close(critical_mass_individual(&m(&[(1.0, 1.0)])).unwrap(), 8.0 * PI));
        assert!(close(critical_mass_individual(&m(&[(1.0, 0.5), (0.5, 0.5)])).unwrap(), 128.0 * PI / 9.0));
        assert!(close(critical_mass_individual(&m(&[(1.0, 0.5), (-1.0, 0.5)])).unwrap(), 16.0 * PI));
        assert!(close(critical_mass_individual(&m(&[(0.5, 1.0)])).unwrap(), 32.0 * PI));
    }

    #[test]
    fn zero_atoms_join_the_nonnegative_side() {
        // {0, 1}: K = {1} gives 8π·0.5/0.25 = 16π; K = {0, 1} gives 8π/0.25 = 32π.
        let p = m(&[(0.0, 0.5), (1.0, 0.5)]);
        assert!((critical_mass_individual(&p).unwrap() - 16.0 * PI).abs() < 1e-12);
        assert_eq!(critical_mass_individual(&m(&[(0.0, 1.0)])), Err(Error::AllAlphaZero));
    }

    #[test]
    fn enumeration_limit() {
        let atoms: Vec<(f64, f64)> = (1..=31).map(|k| (k as f64 / 31.0, 1.0)).collect();
        assert!(matches!(critical_mass_individual(&m(&atoms)), Err(Error::TooManyAtoms { .. })));
    }

    #[test]
    fn large_enumeration_matches_brute_force() {
        let atoms: Vec<(f64, f64)> =
            (0..16).map(|k| (-1.0 + 2.0 * (k as f64 + 0.5) / 16.0, 1.0 + (k % 3) as f64)).collect();
        let p = m(&atoms);
        let mut best = f64::INFINITY;
        for side in [true, false] {
            let group: Vec<Atom<f64>> = p.atoms().iter().copied().filter(|a| (a.alpha >= 0.0) == side).collect();
            for mask in 1u32..(1 << group.len()) {
                let (mut mass, mut mom) = (0.0, 0.0);
                for (k, a) in group.iter().enumerate() {
                    if mask & (1 << k) != 0 {
                        mass += a.weight;
                        mom += a.weight * a.alpha;
                    }
                }
                if mom != 0.0 {
                    best = best.min(8.0 * PI * mass / (mom * mom));
                }
            }
        }
        let got = critical_mass_individual(&p).unwrap();
        assert!((got - best).abs() <= 1e-10 * best, "{got} vs {best}");
    }
}
