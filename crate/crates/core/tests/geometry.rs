mod common;

use common::{bbox, footprint_corners, intersection_vertices, random_quad, random_quad_pair, raster_area, shoelace, P};
use partialgeo_core::geometry::{intersection_area, iou, project_footprint, ConvexPolygon};
use partialgeo_core::{CameraIntrinsics, CameraPose, Error, GeoPoint};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn poly(p: &[P]) -> ConvexPolygon {
    ConvexPolygon::new(p.iter().map(|&(x, y)| GeoPoint::new(x, y)).collect()).unwrap()
}

fn pts(p: &ConvexPolygon) -> Vec<P> {
    p.vertices().iter().map(|v| (v.x_east, v.y_north)).collect()
}

/// Every oracle corner has a matching vertex.
fn same_vertex_set(got: &[P], want: &[P], tol: f64) -> bool {
    got.len() == want.len()
        && want.iter().all(|w| got.iter().any(|g| (g.0 - w.0).hypot(g.1 - w.1) <= tol * (1.0 + w.0.hypot(w.1))))
}

#[test]
fn area_and_intersection_match_raster_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let (a, b) = random_quad_pair(&mut rng);
        let (pa, pb) = (poly(&a), poly(&b));
        let area_oracle = raster_area(std::slice::from_ref(&a), bbox(&a), 1000, &mut rng);
        assert!((pa.area() - area_oracle).abs() / area_oracle < 1e-3, "{} vs {area_oracle}", pa.area());
        let inter = intersection_area(&pa, &pb);
        let corners = intersection_vertices(&a, &b);
        if corners.is_empty() {
            assert_eq!(inter, 0.0);
            continue;
        }
        let inter_oracle = raster_area(&[a.clone(), b.clone()], bbox(&corners), 1000, &mut rng);
        assert!((inter - inter_oracle).abs() / inter_oracle < 1e-3, "{inter} vs {inter_oracle}");
    }
}

#[test]
fn nadir_footprint_widths() {
    for (h, hfov, vfov) in [(80.0, 60.0, 45.0), (650.0, 90.0, 30.0), (123.4, 10.0, 170.0)] {
        let pose = CameraPose::nadir(GeoPoint::new(5.0, -7.0), h).unwrap();
        let fp = project_footprint(&pose, &CameraIntrinsics::new(hfov, vfov).unwrap()).unwrap();
        let (x0, y0, x1, y1) = fp.bounding_box();
        let half_tan = |deg: f64| (deg / 2.0).to_radians().tan();
        let ns = 2.0 * h * half_tan(hfov);
        let ew = 2.0 * h * half_tan(vfov);
        assert!(((y1 - y0) - ns).abs() <= 1e-9 * ns, "north-south {} vs {ns}", y1 - y0);
        assert!(((x1 - x0) - ew).abs() <= 1e-9 * ew, "east-west {} vs {ew}", x1 - x0);
    }
}

#[test]
fn grazing_pose_is_horizon() {
    let pose = CameraPose::new(GeoPoint::new(0.0, 0.0), 100.0, 0.0, -10.0, 0.0).unwrap();
    let e = project_footprint(&pose, &CameraIntrinsics::new(60.0, 45.0).unwrap()).unwrap_err();
    assert!(matches!(e, Error::Horizon(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn footprint_matches_ray_plane_oracle(
        x in -1e4..1e4f64, y in -1e4..1e4f64, h in 80.0..650.0f64,
        roll in -10.0..10.0f64, pitch in -100.0..-80.0f64, yaw in -180.0..180.0f64,
        hfov in 20.0..90.0f64, vfov in 20.0..80.0f64,
    ) {
        let pose = CameraPose::new(GeoPoint::new(x, y), h, roll, pitch, yaw).unwrap();
        let intr = CameraIntrinsics::new(hfov, vfov).unwrap();
        let want = footprint_corners((x, y), h, roll, pitch, yaw, hfov, vfov).expect("steep poses hit the ground");
        let got = project_footprint(&pose, &intr).unwrap();
        prop_assert!(same_vertex_set(&pts(&got), &want, 1e-9), "{:?} vs {:?}", pts(&got), want);
    }

    #[test]
    fn footprint_translates_with_pose(
        h in 80.0..650.0f64, roll in -10.0..10.0f64, pitch in -100.0..-80.0f64, yaw in -180.0..180.0f64,
        dx in -5e3..5e3f64, dy in -5e3..5e3f64,
    ) {
        let intr = CameraIntrinsics::new(60.0, 45.0).unwrap();
        let pose = CameraPose::new(GeoPoint::new(10.0, 20.0), h, roll, pitch, yaw).unwrap();
        let a = project_footprint(&pose, &intr).unwrap().translated(dx, dy);
        let b = project_footprint(&pose.translated(dx, dy), &intr).unwrap();
        prop_assert!(same_vertex_set(&pts(&a), &pts(&b), 1e-9));
    }

    #[test]
    fn iou_is_symmetric_bounded_and_translation_invariant(
        seed in any::<u64>(), dx in -300.0..300.0f64, dy in -300.0..300.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = random_quad_pair(&mut rng);
        let (a, b) = (poly(&a), poly(&b));
        let ab = iou(&a, &b);
        let ba = iou(&b, &a);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() <= 1e-12);
        let moved = iou(&a.translated(dx, dy), &b.translated(dx, dy));
        prop_assert!((moved - ab).abs() <= 1e-9);
        prop_assert!(intersection_area(&a, &b) <= a.area().min(b.area()) * (1.0 + 1e-12));
    }

    #[test]
    fn intersection_matches_corner_enumeration(
        seed in any::<u64>(), dx in -250.0..250.0f64, dy in -250.0..250.0f64, r in 1.0..200.0f64,
    ) {
        // includes slivers and disjoint pairs
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_quad(&mut rng, (0.0, 0.0), 100.0);
        let b = random_quad(&mut rng, (dx, dy), r);
        let want = shoelace(&intersection_vertices(&a, &b)).abs();
        let got = intersection_area(&poly(&a), &poly(&b));
        prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want), "{got} vs {want}");
    }
}
