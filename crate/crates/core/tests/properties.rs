use hcnn::geometry::{AlgebraCoords, GroupElement, GroupKind, ManifoldPoint};
use hcnn::seed::derive_seed;
use hcnn::stats::{hotelling_t2, FeatureTable};
use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use proptest::prelude::*;

fn vec3(bound: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-bound..bound).prop_map(Vector3::from)
}

fn unit() -> impl Strategy<Value = Vector3<f64>> {
    vec3(1.0).prop_filter("away from zero", |v| v.norm() > 0.1).prop_map(|v| v.normalize())
}

fn rot_scale() -> impl Strategy<Value = GroupElement> {
    (vec3(1.7), -1.5..1.5f64).prop_map(|(w, l)| GroupElement::exp(GroupKind::So3xScale, &AlgebraCoords(vec![w.x, w.y, w.z, l])).unwrap())
}

/// GL(3) elements near the identity, inside the principal log domain.
fn general() -> impl Strategy<Value = GroupElement> {
    prop::array::uniform9(-0.4..0.4f64).prop_map(|a| GroupElement::exp(GroupKind::Gl3, &AlgebraCoords(a.to_vec())).unwrap())
}

fn spd() -> impl Strategy<Value = ManifoldPoint> {
    prop::array::uniform9(-1.0..1.0f64).prop_map(|a| {
        let b = Matrix3::from_row_slice(&a);
        ManifoldPoint::spd(b * b.transpose() + Matrix3::identity() * 0.3).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_log_round_trip(w in vec3(1.7), l in -2.0..2.0f64) {
        let v = AlgebraCoords(vec![w.x, w.y, w.z, l]);
        let back = GroupElement::exp(GroupKind::So3xScale, &v).unwrap().log().unwrap();
        for (a, b) in v.0.iter().zip(&back.0) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn action_is_a_left_action(g in rot_scale(), h in rot_scale(), u in unit(), r in 0.1..5.0f64) {
        let x = ManifoldPoint::product(u, r).unwrap();
        let lhs = x.act(&g.compose(&h).unwrap()).unwrap();
        let rhs = x.act(&h).unwrap().act(&g).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        let back = x.act(&g).unwrap().act(&g.inverse().unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn product_distance_is_invariant(g in rot_scale(), u in unit(), v in unit(), r in 0.1..5.0f64, s in 0.1..5.0f64) {
        let (x, y) = (ManifoldPoint::product(u, r).unwrap(), ManifoldPoint::product(v, s).unwrap());
        let d = x.distance(&y).unwrap();
        let dg = x.act(&g).unwrap().distance(&y.act(&g).unwrap()).unwrap();
        prop_assert!((d - dg).abs() < 1e-10, "{} vs {}", d, dg);
        prop_assert!((d - y.distance(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn spd_distance_is_congruence_invariant(x in spd(), y in spd(), g in general()) {
        let d = x.distance(&y).unwrap();
        let dg = x.act(&g).unwrap().distance(&y.act(&g).unwrap()).unwrap();
        prop_assert!((d - dg).abs() < 1e-7 * d.max(1.0), "{} vs {}", d, dg);
        prop_assert!(x.distance(&x).unwrap() < 1e-7);
    }

    #[test]
    fn group_distance_is_left_invariant(a in rot_scale(), b in rot_scale(), g in rot_scale()) {
        let d = a.distance(&b).unwrap();
        let dg = g.compose(&a).unwrap().distance(&g.compose(&b).unwrap()).unwrap();
        prop_assert!((d - dg).abs() < 1e-9);
    }

    #[test]
    fn derived_seeds_are_stable_and_label_specific(seed in any::<u64>(), a in "[a-z]{1,8}", b in "[a-z]{1,8}") {
        prop_assert_eq!(derive_seed(seed, &a), derive_seed(seed, &a));
        if a != b {
            prop_assert_ne!(derive_seed(seed, &a), derive_seed(seed, &b));
        }
    }

    #[test]
    fn hotelling_ignores_row_order_and_label_names(values in prop::collection::vec(-3.0..3.0f64, 24), rot in 1usize..11) {
        let rows = Array2::from_shape_vec((12, 2), values).unwrap();
        let groups: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let t = hotelling_t2(&FeatureTable::from_rows(rows.clone(), groups.clone()).unwrap());
        let order: Vec<usize> = (0..12).map(|i| (i + rot) % 12).collect();
        let shuffled = Array2::from_shape_fn((12, 2), |(i, j)| rows[[order[i], j]]);
        let moved: Vec<usize> = order.iter().map(|&i| groups[i]).collect();
        let t_moved = hotelling_t2(&FeatureTable::from_rows(shuffled, moved).unwrap());
        let flipped: Vec<usize> = groups.iter().map(|g| 1 - g).collect();
        let t_flipped = hotelling_t2(&FeatureTable::from_rows(rows, flipped).unwrap());
        prop_assert!((t - t_moved).abs() < 1e-9 * t.max(1.0));
        prop_assert!((t - t_flipped).abs() < 1e-9 * t.max(1.0));
    }
}
