use std::f64::consts::PI;

use proptest::prelude::*;

use multichemo::checks::{random_admissible_density, random_smooth_field, rng};
use multichemo::dynamics::Stepper;
use multichemo::functionals::{free_energy_f, inner_min_rho, inner_min_v, log_partition, lyapunov_l, mean_field_j};
use multichemo::grid::{bernoulli, integrate_field, laplacian_dirichlet, laplacian_neumann, sg_flux_divergence};
use multichemo::measure::critical_mass_individual;
use multichemo::snapshot::{field_from_snapshot, read_binary, write_binary};
use multichemo::{Field64, Green64, Grid64, Measure64, Regime, SimConfig64};

fn atoms() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..=1.0, 0.05f64..2.0), 1..6)
}

fn measure(raw: &[(f64, f64)]) -> Option<Measure64> {
    Measure64::new(raw).ok()
}

/// Exhaustive `min 8π P(K)/(∫_K α)²` over same-sign subsets.
fn brute_individual(m: &Measure64) -> f64 {
    let a = m.atoms();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << a.len()) {
        let set: Vec<_> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        let pos = set.iter().all(|x| x.alpha >= 0.0);
        let neg = set.iter().all(|x| x.alpha < 0.0);
        if !(pos || neg) {
            continue;
        }
        let p: f64 = set.iter().map(|x| x.weight).sum();
        let mom: f64 = set.iter().map(|x| x.weight * x.alpha).sum();
        if mom != 0.0 {
            best = best.min(8.0 * PI * p / (mom * mom));
        }
    }
    best
}

fn small_grid(n: usize, disk: bool) -> Grid64 {
    if disk {
        Grid64::disk(1.0, [0.0, 0.0], n).unwrap()
    } else {
        Grid64::unit_square(n).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn individual_critical_mass_matches_enumeration(raw in atoms()) {
        let Some(m) = measure(&raw) else { return Ok(()) };
        prop_assume!(m.alphas().any(|a| a != 0.0));
        let got = critical_mass_individual(&m).unwrap();
        let want = brute_individual(&m);
        prop_assert!((got - want).abs() <= 1e-12 * want);
        for a in m.atoms().iter().filter(|a| a.alpha != 0.0) {
            prop_assert!(got <= 8.0 * PI / (a.weight * a.alpha * a.alpha) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn measures_ignore_atom_order(mut raw in atoms(), seed in any::<u64>()) {
        let Some(m) = measure(&raw) else { return Ok(()) };
        let n = raw.len();
        raw.rotate_left((seed as usize) % n);
        let k = (seed as usize / 7) % n;
        raw.swap(0, k);
        let p = measure(&raw).unwrap();
        for (a, b) in m.atoms().iter().zip(p.atoms()) {
            prop_assert_eq!(a.alpha, b.alpha);
            prop_assert!((a.weight - b.weight).abs() < 1e-15);
        }
        prop_assert!((p.weights().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_atom_critical_mass(alpha in -1.0f64..=1.0) {
        prop_assume!(alpha != 0.0);
        let m = Measure64::dirac(alpha).unwrap();
        let got = critical_mass_individual(&m).unwrap();
        prop_assert!((got - 8.0 * PI / (alpha * alpha)).abs() <= 1e-12 * got);
    }

    #[test]
    fn dirichlet_laplacian_is_symmetric_negative(n in 4usize..14, disk in any::<bool>(), seed in any::<u64>()) {
        let grid = small_grid(n, disk);
        let mut r = rng(seed);
        let u = random_smooth_field(&grid, &mut r, 3, 2.0);
        let w = random_smooth_field(&grid, &mut r, 3, 2.0);
        let (lu, lw) = (laplacian_dirichlet(&u, &grid), laplacian_dirichlet(&w, &grid));
        let (a, b) = (grid.inner(&lu, &w), grid.inner(&u, &lw));
        prop_assert!((a - b).abs() <= 1e-12 * (a.abs() + b.abs() + 1.0));
        if u.max_abs() > 0.0 {
            prop_assert!(grid.inner(&lu, &u) < 0.0);
        }
        prop_assert!(integrate_field(&laplacian_neumann(&u, &grid), &grid).abs() <= 1e-12 * (1.0 + u.max_abs()));
    }

    #[test]
    fn green_inverts_the_laplacian(n in 4usize..20, disk in any::<bool>(), seed in any::<u64>()) {
        let grid = small_grid(n, disk);
        let green = Green64::new(&grid).unwrap();
        let f = random_smooth_field(&grid, &mut rng(seed), 3, 5.0);
        let u = green.solve(&f).unwrap();
        let back = laplacian_dirichlet(&u, &grid).scaled(-1.0);
        prop_assert!(back.axpy(-1.0, &f).max_abs() <= 1e-10 * (1.0 + f.max_abs()));
    }

    #[test]
    fn sg_fluxes_conserve_mass_and_vanish_at_equilibrium(
        n in 4usize..16, disk in any::<bool>(), alpha in -1.0f64..=1.0, seed in any::<u64>(),
    ) {
        let grid = small_grid(n, disk);
        let mut r = rng(seed);
        let v = random_smooth_field(&grid, &mut r, 3, 6.0);
        let rho = random_smooth_field(&grid, &mut r, 3, 2.0).map(f64::exp);
        let div = sg_flux_divergence(&rho, &v, alpha, &grid);
        prop_assert!(integrate_field(&div, &grid).abs() <= 1e-11 * (1.0 + div.max_abs()));
        let eq = v.map(|x| (alpha * x).exp());
        let div_eq = sg_flux_divergence(&eq, &v, alpha, &grid);
        prop_assert!(div_eq.max_abs() <= 1e-10 * eq.max() / grid.cell_area());
        let plain = sg_flux_divergence(&rho, &v, 0.0, &grid);
        prop_assert!(plain.axpy(-1.0, &laplacian_neumann(&rho, &grid)).max_abs() <= 1e-12 * (1.0 + plain.max_abs()));
    }

    #[test]
    fn bernoulli_identity(s in -40.0f64..40.0) {
        // B(−s) − B(s) = s.
        prop_assert!((bernoulli(-s) - bernoulli(s) - s).abs() <= 1e-12 * (1.0 + s.abs()));
        prop_assert!(bernoulli(s) > 0.0);
    }

    #[test]
    fn density_step_keeps_mass_and_sign(raw in atoms(), seed in any::<u64>(), dt in 1e-5f64..1e-1) {
        let Some(m) = measure(&raw) else { return Ok(()) };
        let grid = Grid64::unit_square(12).unwrap();
        let green = Green64::new(&grid).unwrap();
        let mut r = rng(seed);
        let rho = random_admissible_density(&grid, &m, &mut r, 10.0).unwrap();
        let v = random_smooth_field(&grid, &mut r, 3, 4.0);
        let cfg = SimConfig64::new(Regime::Smoluchowski);
        let stepper = Stepper::new(&cfg, &m, &green).unwrap();
        let next = stepper.density_step(&rho, &v, dt).unwrap();
        prop_assert!(next.min() >= 0.0);
        for (a, b) in rho.masses(&grid).iter().zip(next.masses(&grid)) {
            prop_assert!((a - b).abs() <= 1e-11 * a);
        }
    }

    #[test]
    fn duality_identities(raw in atoms(), seed in any::<u64>(), lambda in 0.5f64..40.0) {
        let Some(m) = measure(&raw) else { return Ok(()) };
        prop_assume!(m.alphas().any(|a| a != 0.0));
        let grid = Grid64::unit_square(12).unwrap();
        let green = Green64::new(&grid).unwrap();
        let mut r = rng(seed);
        let v = random_smooth_field(&grid, &mut r, 4, 3.0);
        let rho_v = inner_min_rho(&v, &m, &grid, lambda).unwrap();
        let l = lyapunov_l(&rho_v, &v, &m, &grid).unwrap().value;
        let j = mean_field_j(&v, &m, &grid, lambda).unwrap().value;
        prop_assert!((l - j).abs() <= 1e-10 * (1.0 + j.abs()));

        let rho = random_admissible_density(&grid, &m, &mut r, lambda).unwrap();
        let v_rho = inner_min_v(&rho, &m, &green).unwrap();
        let l = lyapunov_l(&rho, &v_rho, &m, &grid).unwrap().value;
        let f = free_energy_f(&rho, &m, &grid, &green).unwrap().value;
        prop_assert!((l - f).abs() <= 1e-10 * (1.0 + f.abs()));
        // Weak duality: J(v) ≤ L(ρ, v) for any admissible ρ.
        let l_any = lyapunov_l(&rho, &v, &m, &grid).unwrap().value;
        prop_assert!(j <= l_any + 1e-10 * (1.0 + l_any.abs()));
    }

    #[test]
    fn log_partition_obeys_jensen(raw in atoms(), seed in any::<u64>()) {
        let Some(m) = measure(&raw) else { return Ok(()) };
        let grid = Grid64::unit_square(10).unwrap();
        let v = random_smooth_field(&grid, &mut rng(seed), 3, 5.0);
        let mean = integrate_field(&v, &grid) / grid.area();
        let z = log_partition(&v, &m, &grid);
        // log Σ w ∫ e^{αv} ≥ log|Ω| + (Σ w α)·mean(v).
        prop_assert!(z >= grid.area().ln() + m.integrate(|a| a) * mean - 1e-12);
    }

    #[test]
    fn snapshots_round_trip(n in 3usize..20, disk in any::<bool>(), seed in any::<u64>()) {
        let grid = small_grid(n, disk);
        let f = random_smooth_field(&grid, &mut rng(seed), 3, 1e3);
        let mut buf = Vec::new();
        write_binary(&mut buf, &grid, &f).unwrap();
        let (header, values) = read_binary(buf.as_slice()).unwrap();
        let back: Field64 = field_from_snapshot(&grid, &header, &values).unwrap();
        prop_assert_eq!(back, f);
    }
}
