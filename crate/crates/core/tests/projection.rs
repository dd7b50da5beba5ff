use mdcs_core::{BoxConstraint, DiagScaling, Point, SeededRng};
use proptest::prelude::*;

/// Per-coordinate grid minimizer of `Σ d_i⁻¹ (z_i − w_i)²` over the box,
/// with the grid endpoints pinned to the box faces.
fn grid_projection(b: &BoxConstraint, d: &Point, z: &Point, step: f64) -> Point {
    let mut out = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let (lo, hi) = (b.lower(i), b.upper(i));
        let n = ((hi - lo) / step).ceil() as usize;
        let mut best = (f64::INFINITY, lo);
        for k in 0..=n {
            let w = (lo + k as f64 * step).min(hi);
            let f = (z[i] - w).powi(2) / d[i];
            if f < best.0 {
                best = (f, w);
            }
        }
        out.push(best.1);
    }
    Point::new(out)
}

fn weighted(d: &Point, z: &Point, w: &Point) -> f64 {
    (0..z.len()).map(|i| (z[i] - w[i]).powi(2) / d[i]).sum()
}

fn random_instance(rng: &mut SeededRng) -> (BoxConstraint, DiagScaling, Point) {
    let dim = 1 + rng.index(6);
    let center = Point::new((0..dim).map(|_| rng.uniform(0.0, 1.0)).collect());
    let radius = rng.uniform(0.01, 0.3);
    let b = BoxConstraint::new(center, radius, 0.0, 1.0).unwrap();
    let d = Point::new((0..dim).map(|_| rng.uniform(1e-3, 1.0)).collect());
    let z = Point::new((0..dim).map(|_| rng.uniform(-0.5, 1.5)).collect());
    (b, DiagScaling::new(d).unwrap(), z)
}

#[test]
fn projection_matches_grid_oracle() {
    let mut rng = SeededRng::new(2024, 0);
    for _ in 0..200 {
        let (b, s, z) = random_instance(&mut rng);
        let p = b.project_diag(&s, &z).unwrap();
        let g = grid_projection(&b, s.diag(), &z, 1e-4);
        let (fp, fg) = (weighted(s.diag(), &z, &p), weighted(s.diag(), &z, &g));
        assert!(fp <= fg + 1e-12, "projection worse than grid: {fp} > {fg}");
        assert!((fp - fg).abs() <= 1e-6);
        assert!(p.sub(&g).linf_norm() <= 1e-4);
        assert!(b.contains(&p));
    }
}

fn instance() -> impl Strategy<Value = (BoxConstraint, DiagScaling, Point, Point)> {
    (1usize..8).prop_flat_map(|dim| {
        (
            prop::collection::vec(0.0f64..1.0, dim),
            0.001f64..0.5,
            prop::collection::vec(1e-6f64..1e3, dim),
            prop::collection::vec(-2.0f64..3.0, dim),
            prop::collection::vec(-2.0f64..3.0, dim),
        )
            .prop_map(|(c, r, d, z1, z2)| {
                (
                    BoxConstraint::new(Point::new(c), r, 0.0, 1.0).unwrap(),
                    DiagScaling::new(Point::new(d)).unwrap(),
                    Point::new(z1),
                    Point::new(z2),
                )
            })
    })
}

proptest! {
    #[test]
    fn projection_equals_clip((b, s, z, _z2) in instance()) {
        prop_assert_eq!(b.project_diag(&s, &z).unwrap(), b.clip(&z).unwrap());
    }

    #[test]
    fn projection_is_nonexpansive((b, s, z1, z2) in instance()) {
        let p1 = b.project_diag(&s, &z1).unwrap();
        let p2 = b.project_diag(&s, &z2).unwrap();
        let lhs = s.inverse_norm(&p1.sub(&p2));
        let rhs = s.inverse_norm(&z1.sub(&z2));
        prop_assert!(lhs <= rhs + 1e-9, "{} > {}", lhs, rhs);
    }

    #[test]
    fn projection_is_idempotent_and_feasible((b, s, z, _z2) in instance()) {
        let p = b.project_diag(&s, &z).unwrap();
        prop_assert!(b.contains(&p));
        prop_assert_eq!(b.project_diag(&s, &p).unwrap(), p);
    }
}
