use fracpot::experiment::add_noise;
use fracpot::forward::{solve_backward, solve_forward_loads, Field};
use fracpot::mesh::{BoundaryData, BoundaryKind, Potential, SpaceMesh};
use fracpot::optimizer::{free_components, line_stationarity, StepSizeCoefficients};
use fracpot::timegrid::TimeGrid;
use proptest::prelude::*;
use statrs::function::gamma::gamma;

fn field_from(values: &[f64], mesh: &SpaceMesh, grid: &TimeGrid) -> Field {
    let mut f = Field::zeros(mesh, grid);
    f.values_mut().iter_mut().zip(values.iter().cycle()).for_each(|(v, x)| *v = *x);
    f
}

fn pairing(a: &Field, b: &Field, grid: &TimeGrid) -> f64 {
    grid.trapezoid_weights()
        .iter()
        .enumerate()
        .map(|(n, w)| w * a.at(n).iter().zip(b.at(n)).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

fn kind(neumann: bool) -> BoundaryKind {
    if neumann {
        BoundaryKind::Neumann
    } else {
        BoundaryKind::Dirichlet
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l1_weights_decrease_and_telescope(alpha in 0.02f64..0.98, n in 1usize..300) {
        let grid = TimeGrid::new(1.0, n, alpha).unwrap();
        let b = grid.l1_weights();
        prop_assert_eq!(b[0], 1.0);
        prop_assert!(b.windows(2).all(|w| w[1] > 0.0 && w[1] < w[0]));
        let sum: f64 = b.iter().sum();
        let exact = (n as f64).powf(1.0 - alpha);
        prop_assert!((sum - exact).abs() <= 1e-12 * exact);
        prop_assert!((1..n).all(|m| grid.memory_coefficient(m) < 0.0));
    }

    #[test]
    fn caputo_exact_on_affine_histories(alpha in 0.05f64..0.95, n in 2usize..80, a in -5.0f64..5.0, c in -5.0f64..5.0) {
        let grid = TimeGrid::new(2.0, n, alpha).unwrap();
        let history: Vec<f64> = grid.times().map(|t| a + c * t).collect();
        for k in 1..=n {
            let t = grid.time(k);
            let exact = c * t.powf(1.0 - alpha) / gamma(2.0 - alpha);
            prop_assert!((grid.caputo_apply(&history, k) - exact).abs() <= 1e-11 * (1.0 + exact.abs()));
        }
    }

    #[test]
    fn state_operator_is_linear_and_dual(
        alpha in 0.1f64..0.9,
        neumann in any::<bool>(),
        f in proptest::collection::vec(-1.0f64..1.0, 40),
        g in proptest::collection::vec(-1.0f64..1.0, 37),
        s in -3.0f64..3.0,
        amp in 0.0f64..0.9,
    ) {
        let mesh = SpaceMesh::interval(0.0, 2.0, 11).unwrap();
        let grid = TimeGrid::new(1.0, 9, alpha).unwrap();
        let q = Potential::new(mesh.evaluate(|x, _| 1.0 + amp * (2.0 * x).sin()), 1e-3, 10.0).unwrap();
        let (f, g) = (field_from(&f, &mesh, &grid), field_from(&g, &mesh, &grid));
        let k = kind(neumann);
        let sf = solve_forward_loads(&q, &f, k, &mesh, &grid).unwrap();
        let sg = solve_forward_loads(&q, &g, k, &mesh, &grid).unwrap();
        let combo = solve_forward_loads(&q, &(&f.scaled(s) + &g), k, &mesh, &grid).unwrap();
        let expect = &sf.scaled(s) + &sg;
        prop_assert!((&combo - &expect).max_abs() <= 1e-12 * (1.0 + expect.max_abs()));

        let tg = solve_backward(&q, &g, k, &mesh, &grid).unwrap();
        let (lhs, rhs) = (pairing(&sf, &g, &grid), pairing(&f, &tg, &grid));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn noise_is_bounded_seeded_and_zero_at_zero(eps in 0.0f64..0.2, seed in any::<u64>()) {
        let mesh = SpaceMesh::interval(0.0, 2.0, 6).unwrap();
        let grid = TimeGrid::new(1.0, 12, 0.5).unwrap();
        let phi = BoundaryData::from_fn(BoundaryKind::Dirichlet, &mesh, &grid, |x, _, t| x + t);
        let a = add_noise(&phi, eps, seed);
        prop_assert_eq!(&a, &add_noise(&phi, eps, seed));
        prop_assert!(a.values.iter().zip(phi.values.iter()).all(|(n, c)| (n - c).abs() <= eps));
        if eps > 0.0 {
            prop_assert_ne!(&a, &add_noise(&phi, eps, seed.wrapping_add(1)));
        } else {
            prop_assert_eq!(&a, &phi);
        }
    }

    #[test]
    fn projection_is_idempotent_and_masking_keeps_steps_feasible(
        values in proptest::collection::vec(-1.0f64..4.0, 1..30),
        dir in proptest::collection::vec(-2.0f64..2.0, 30),
    ) {
        let mut q = Potential::new(values.iter().map(|v| v.abs() + 0.1).collect(), 0.5, 2.5).unwrap();
        q.project();
        prop_assert!(q.is_admissible());
        let once = q.clone();
        prop_assert!(!q.project());
        prop_assert_eq!(&q, &once);
        let v = free_components(&q, &dir[..q.len()]);
        for (i, (&qi, &vi)) in q.values.iter().zip(&v).enumerate() {
            prop_assert!(vi == 0.0 || vi == dir[i]);
            // a step `q − βv` never leaves the box through an active bound
            prop_assert!(!(qi <= q.lower && vi > 0.0) && !(qi >= q.upper && vi < 0.0));
        }
    }

    #[test]
    fn model_roots_are_critical_points(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0) {
        let m = StepSizeCoefficients { a, b, c };
        for r in m.roots() {
            let scale = 3.0 * a.abs() * r * r + 2.0 * b.abs() * r.abs() + c.abs();
            prop_assert!(m.model_slope(r).abs() <= 1e-9 * scale.max(1e-300));
        }
        if m.discriminant() < 0.0 && a.abs() > 1e-12 {
            prop_assert!(m.roots().is_empty());
        }
    }

    #[test]
    fn generalized_slope_is_a_distance(left in -3.0f64..3.0, right in -3.0f64..3.0) {
        let d = line_stationarity((left, right));
        prop_assert!(d >= 0.0);
        if left == right {
            prop_assert_eq!(d, left.abs());
        }
        if left <= 0.0 && right >= 0.0 {
            prop_assert_eq!(d, 0.0);
        }
    }
}
