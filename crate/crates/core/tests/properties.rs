use gdn_core::data::PatchSet;
use gdn_core::{delta_j, project_constraints, GdnParams, Tying, BETA_FLOOR};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn any_params(n: usize) -> impl Strategy<Value = GdnParams> {
    let nn = n * n;
    (
        prop::collection::vec(-3.0..3.0f64, nn),
        prop::collection::vec(-1.0..4.0f64, nn),
        prop::collection::vec(-1.0..2.0f64, n),
        prop::collection::vec(-1.0..1.0f64, nn),
        prop::collection::vec(-1.0..2.0f64, n),
    )
        .prop_map(move |(h, a, b, g, e)| GdnParams {
            h: Array2::from_shape_vec((n, n), h).unwrap() + Array2::<f64>::eye(n) * 4.0,
            alpha: Array2::from_shape_vec((n, n), a).unwrap(),
            beta: Array1::from(b),
            gamma: Array2::from_shape_vec((n, n), g).unwrap(),
            epsilon: Array1::from(e),
        })
}

fn tyings() -> impl Strategy<Value = Tying> {
    prop_oneof![
        Just(Tying::Full),
        Just(Tying::ColumnTiedAlpha),
        Just(Tying::DiagonalGamma),
        Just(Tying::Radial),
        Just(Tying::ClassicDn),
        (1.0..3.0f64).prop_map(|p| Tying::LpRadial { p }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_feasible_and_idempotent(p in any_params(3), tying in tyings()) {
        let once = project_constraints(&p, &tying).unwrap();
        prop_assert!(once.validate().is_ok());
        prop_assert!(once.beta.iter().all(|&b| b >= BETA_FLOOR));
        let twice = project_constraints(&once, &tying).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn delta_j_ignores_row_order(p in any_params(2), rows in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 2..40)) {
        let p = project_constraints(&p, &Tying::Full).unwrap();
        let x = Array2::from_shape_fn((rows.len(), 2), |(i, j)| if j == 0 { rows[i].0 } else { rows[i].1 });
        let mut rev = x.clone();
        rev.invert_axis(ndarray::Axis(0));
        let (a, b) = (delta_j(&p, x.view()).unwrap(), delta_j(&p, rev.view()).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn patch_files_round_trip(values in prop::collection::vec(-1e6..1e6f64, 0..60), source in "[a-z:]{0,12}") {
        let m = values.len() / 3;
        let data = Array2::from_shape_vec((m, 3), values[..m * 3].to_vec()).unwrap();
        let set = PatchSet::new(data, source, "none");
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        prop_assert_eq!(PatchSet::read_from(buf.as_slice()).unwrap(), set);
    }
}
