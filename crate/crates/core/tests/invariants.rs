//! Property checks for algebraic laws that hold for every input, not
//! just the pinned cases in the release gate.

use proptest::prelude::*;

use dvfkit::intensity::{add_noise, jacobian_determinant, NoiseParams};
use dvfkit::metrics::huber;
use dvfkit::pipeline::{compose, warp_volume};
use dvfkit::{DisplacementField, Grid, Volume};

const N: usize = 8;

fn grid() -> Grid {
    Grid::isotropic([N, N, N])
}

fn field_strategy(bound: f64) -> impl Strategy<Value = DisplacementField> {
    let comp = proptest::collection::vec(-bound..bound, N * N * N);
    (comp.clone(), comp.clone(), comp)
        .prop_map(|(x, y, z)| DisplacementField::new(grid(), [x, y, z]).unwrap())
}

fn volume_strategy() -> impl Strategy<Value = Volume> {
    proptest::collection::vec(-1000.0..1000.0f64, N * N * N)
        .prop_map(|d| Volume::new(grid(), d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // The penalty depends only on |truth - pred|.
    #[test]
    fn huber_value_is_symmetric(a in field_strategy(3.0), b in field_strategy(3.0)) {
        let (va, _) = huber(&a, &b).unwrap();
        let (vb, _) = huber(&b, &a).unwrap();
        prop_assert_eq!(va, vb);
    }

    #[test]
    fn huber_of_equal_fields_is_zero(a in field_strategy(3.0)) {
        let (v, g) = huber(&a, &a).unwrap();
        prop_assert_eq!(v, 0.0);
        for axis in 0..3 {
            prop_assert!(g.component(axis).iter().all(|&x| x == 0.0));
        }
    }

    // Constant displacements behave like vector addition under
    // composition, up to interpolation round-off.
    #[test]
    fn compose_adds_translations(
        a in proptest::array::uniform3(-3.0..3.0f64),
        b in proptest::array::uniform3(-3.0..3.0f64),
    ) {
        let fa = DisplacementField::from_fn(grid(), |_| a).unwrap();
        let fb = DisplacementField::from_fn(grid(), |_| b).unwrap();
        let c = compose(&fa, &fb).unwrap();
        for [x, y, z] in grid().iter_voxels() {
            let got = c.vector_at(x, y, z);
            for axis in 0..3 {
                prop_assert!((got[axis] - (a[axis] + b[axis])).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn compose_with_zero_is_identity_both_ways(f in field_strategy(2.0)) {
        let zeros = DisplacementField::zeros(grid());
        let left = compose(&zeros, &f).unwrap();
        let right = compose(&f, &zeros).unwrap();
        for axis in 0..3 {
            prop_assert_eq!(left.component(axis), f.component(axis));
            prop_assert_eq!(right.component(axis), f.component(axis));
        }
    }

    #[test]
    fn warp_by_zero_field_is_bitwise_identity(v in volume_strategy()) {
        let zeros = DisplacementField::zeros(grid());
        let w = warp_volume(&v, &zeros).unwrap();
        prop_assert_eq!(w.data(), v.data());
    }

    // Rigid shifts never change local volume.
    #[test]
    fn jacobian_of_translation_is_one(t in proptest::array::uniform3(-10.0..10.0f64)) {
        let f = DisplacementField::from_fn(grid(), |_| t).unwrap();
        let jac = jacobian_determinant(&f).unwrap();
        prop_assert!(jac.data().iter().all(|&j| j == 1.0));
    }

    #[test]
    fn add_noise_is_deterministic(v in volume_strategy(), seed in any::<u64>()) {
        let params = NoiseParams { sigma_n: 5.0, seed };
        let a = add_noise(&v, &params).unwrap();
        let b = add_noise(&v, &params).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }
}
