use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wastemap_core::geometry::{union_area_convex, Point};
use wastemap_core::hexgrid::build_hexgrid;
use wastemap_core::risk::{buffer_segment, Buffer};
use wastemap_core::BBox;

fn monte_carlo(b: &Buffer, window: BBox, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..n)
        .filter(|_| {
            b.contains(Point::new(
                rng.random_range(window.min_x..window.max_x),
                rng.random_range(window.min_y..window.max_y),
            ))
        })
        .count();
    window.area() * hits as f64 / n as f64
}

#[test]
fn capsule_area_close_to_analytic() {
    let b = buffer_segment(&[Point::new(0.0, 0.0), Point::new(100.0, 0.0)], 10.0).unwrap();
    assert!((b.area() - 2314.16).abs() / 2314.16 < 0.01);
}

#[test]
fn union_area_agrees_with_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..5 {
        let line: Vec<Point> = (0..6)
            .map(|_| Point::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)))
            .collect();
        let b = buffer_segment(&line, 25.0).unwrap();
        let window = b.bbox();
        let mc = monte_carlo(&b, window, 200_000, seed);
        let sd = (window.area() * window.area() / 200_000.0 * 0.25).sqrt();
        assert!((b.area() - mc).abs() < 5.0 * sd, "exact {} vs sampled {mc}", b.area());
    }
}

#[test]
fn intersections_over_a_tiling_sum_to_the_area() {
    let line = [Point::new(3.0, 7.0), Point::new(180.0, 60.0), Point::new(90.0, 230.0)];
    let b = buffer_segment(&line, 30.0).unwrap();
    let bb = b.bbox();
    let grid = build_hexgrid(bb, 308.0).unwrap();
    let total: f64 = (0..grid.len()).map(|i| b.intersection_area(&grid.cell_hexagon(i))).sum();
    assert!((total - b.area()).abs() < 1e-6 * b.area());
}

#[test]
fn union_of_disjoint_buffers_adds() {
    let a = buffer_segment(&[Point::new(0.0, 0.0), Point::new(50.0, 0.0)], 5.0).unwrap();
    let c = buffer_segment(&[Point::new(0.0, 100.0), Point::new(50.0, 100.0)], 5.0).unwrap();
    let u = Buffer::union([&a, &c]);
    assert!((u.area() - a.area() - c.area()).abs() < 1e-9);
    let same = Buffer::union([&a, &a]);
    assert!((same.area() - a.area()).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn buffer_area_bounds(x1 in -100.0f64..100.0, y1 in -100.0f64..100.0, r in 0.5f64..30.0) {
        prop_assume!(x1.hypot(y1) > 1e-3);
        let len = x1.hypot(y1);
        let b = buffer_segment(&[Point::new(0.0, 0.0), Point::new(x1, y1)], r).unwrap();
        prop_assert!(b.area() >= 2.0 * r * len * (1.0 - 1e-12));
        prop_assert!(b.area() <= 2.0 * r * len + std::f64::consts::PI * r * r);
    }

    #[test]
    fn slab_union_of_two_squares(dx in -3.0f64..3.0, dy in -3.0f64..3.0) {
        let sq = |ox: f64, oy: f64| BBox::new(ox, oy, ox + 2.0, oy + 2.0).ring();
        let ox = (2.0 - dx.abs()).max(0.0);
        let oy = (2.0 - dy.abs()).max(0.0);
        let want = 8.0 - ox * oy;
        let got = union_area_convex(&[sq(0.0, 0.0), sq(dx, dy)]);
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
    }
}
