use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use dirpose::losses::{direction_loss, distribution_loss};
use dirpose::so3::{
    geodesic_distance, gram_schmidt_project, half_rotation, procrustes_project, Rotation3,
};
use dirpose::sphere_grid::{
    crop_padding, expectation, normalize, spherical_pad, vmf_target, Activation, GridSpec, RawGrid, UnitVec3,
};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = UnitVec3> {
    prop::array::uniform3(-1.0f64..1.0)
        .prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(|v| UnitVec3::new(v[0], v[1], v[2]).unwrap())
}

fn rotation() -> impl Strategy<Value = Rotation3> {
    (unit(), 0.0..PI).prop_map(|(axis, angle)| Rotation3::from_axis_angle(&axis, angle))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn geodesic_is_a_metric(a in rotation(), b in rotation(), c in rotation()) {
        let ab = geodesic_distance(&a, &b);
        prop_assert!((ab - geodesic_distance(&b, &a)).abs() < 1e-9);
        prop_assert!(ab <= geodesic_distance(&a, &c) + geodesic_distance(&c, &b) + 1e-9);
        prop_assert!(geodesic_distance(&a, &a) < 1e-7);
        prop_assert!((0.0..=PI).contains(&ab));
    }

    #[test]
    fn geodesic_is_bi_invariant(a in rotation(), b in rotation(), g in rotation()) {
        let d = geodesic_distance(&a, &b);
        prop_assert!((geodesic_distance(&(g * a), &(g * b)) - d).abs() < 1e-9);
        prop_assert!((geodesic_distance(&(a * g), &(b * g)) - d).abs() < 1e-9);
    }

    #[test]
    fn procrustes_fixes_rotations(r in rotation()) {
        let p = procrustes_project(r.matrix()).unwrap();
        prop_assert!((p.matrix() - r.matrix()).amax() < 1e-9);
    }

    #[test]
    fn procrustes_output_is_a_rotation(m in prop::array::uniform9(-1.0f64..1.0)) {
        let m = Matrix3::from_row_slice(&m);
        prop_assume!(m.singular_values().min() > 1e-6);
        let p = procrustes_project(&m).unwrap();
        prop_assert!((p.matrix().transpose() * p.matrix() - Matrix3::identity()).amax() < 1e-9);
        prop_assert!((p.matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gram_schmidt_recovers_rotation(r in rotation()) {
        let g = gram_schmidt_project(&r.column(0), &r.column(1)).unwrap();
        prop_assert!((g.matrix() - r.matrix()).amax() < 1e-12);
    }

    #[test]
    fn half_rotation_squares_back(axis in unit(), angle in 0.0..(PI - 0.01)) {
        let r = Rotation3::from_axis_angle(&axis, angle);
        let h = half_rotation(&r).unwrap();
        prop_assert!(((h * h).matrix() - r.matrix()).amax() < 1e-9);
    }

    #[test]
    fn quaternion_round_trip(r in rotation()) {
        let back = Rotation3::from_quaternion(r.to_quaternion()).unwrap();
        prop_assert!((back.matrix() - r.matrix()).amax() < 1e-12);
    }

    #[test]
    fn pad_then_crop_is_identity(h in 1usize..12, half_w in 2usize..12, pad_frac in 0.0f64..1.0) {
        let w = 2 * half_w;
        let max_pad = (half_w - 1).min(h);
        let pad = 1 + ((max_pad - 1) as f64 * pad_frac) as usize;
        let spec = GridSpec::new(h.max(2), w).unwrap();
        let g: Vec<u32> = (0..spec.len() as u32).collect();
        let pad = pad.min(spec.height());
        let padded = spherical_pad(spec, &g, pad).unwrap();
        prop_assert_eq!(crop_padding(spec, &padded, pad).unwrap(), g);
    }

    #[test]
    fn normalization_closure(values in prop::collection::vec(-30.0f64..30.0, 64), exp in any::<bool>()) {
        let spec = GridSpec::square(8).unwrap();
        let act = if exp { Activation::Exp } else { Activation::Softplus };
        let p = normalize(&RawGrid::new(spec, values).unwrap(), act);
        prop_assert!((p.total_mass() - 1.0).abs() < 1e-9);
        prop_assert!(expectation(&p).norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn distribution_loss_is_symmetric(a in unit(), b in unit()) {
        let spec = GridSpec::square(8).unwrap();
        let (p, q) = (vmf_target(spec, &a, 4.0).unwrap(), vmf_target(spec, &b, 4.0).unwrap());
        let (pq, qp) = (distribution_loss(&p, &q).unwrap(), distribution_loss(&q, &p).unwrap());
        prop_assert!(pq >= 0.0);
        prop_assert!((pq - qp).abs() <= 1e-15);
    }

    #[test]
    fn direction_loss_ignores_scale(a in unit(), b in unit(), s in 0.01f64..100.0) {
        let (a, b) = (a.into_inner(), b.into_inner());
        let base = direction_loss(&a, &b).unwrap();
        prop_assert!((direction_loss(&(a * s), &b).unwrap() - base).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&base));
    }
}

#[test]
fn concentration_is_monotone_in_kappa() {
    let spec = GridSpec::square(32).unwrap();
    let mu = UnitVec3::new(0.3, -0.5, 0.8).unwrap();
    let norms: Vec<f64> = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0]
        .iter()
        .map(|k| expectation(&vmf_target(spec, &mu, *k).unwrap()).norm())
        .collect();
    assert!(norms.windows(2).all(|w| w[0] < w[1]), "{norms:?}");
}

#[test]
fn quarter_turn_about_z_permutes_columns() {
    let spec = GridSpec::square(16).unwrap();
    let mu = UnitVec3::new(0.4, 0.2, 0.6).unwrap();
    let rot = Rotation3::about_z(PI / 2.0);
    let turned = UnitVec3::new_unchecked(rot.apply(&mu));
    let a = vmf_target(spec, &mu, 10.0).unwrap();
    let b = vmf_target(spec, &turned, 10.0).unwrap();
    let shift = spec.width() / 4;
    for i in 0..spec.height() {
        for j in 0..spec.width() {
            assert_abs_diff_eq!(b.get(i, (j + shift) % spec.width()), a.get(i, j), epsilon = 1e-12);
        }
    }
    let ea = expectation(&a);
    let eb = expectation(&b);
    assert_abs_diff_eq!((rot.apply(&ea) - eb).norm(), 0.0, epsilon = 1e-12);
}

#[test]
fn geodesic_on_many_random_triples() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let [a, b, c] = std::array::from_fn(|_| dirpose::so3::random_rotation(&mut rng));
        let ab = geodesic_distance(&a, &b);
        assert!((ab - geodesic_distance(&b, &a)).abs() <= 1e-9);
        assert!(ab <= geodesic_distance(&a, &c) + geodesic_distance(&c, &b) + 1e-9);
    }
}

#[test]
fn expectation_commutes_with_direction_of_mean() {
    let spec = GridSpec::square(64).unwrap();
    let mu = UnitVec3::x_axis();
    let e = expectation(&vmf_target(spec, &mu, 10.0).unwrap());
    assert!(e.angle(&Vector3::x()).to_degrees() < 0.5);
}
