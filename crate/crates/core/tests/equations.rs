mod common;

use common::equations::checks;

fn check(name: &str) {
    let c = checks().into_iter().find(|c| c.name == name).expect("registered example");
    if let Err(msg) = (c.run)() {
        panic!("{name}: {msg}");
    }
}

macro_rules! examples {
    ($($name:ident),* $(,)?) => {
        $(#[test] fn $name() { check(stringify!($name)); })*

        #[test]
        fn every_example_has_a_test() {
            let listed = [$(stringify!($name)),*];
            for c in checks() {
                assert!(listed.contains(&c.name), "{} has no test", c.name);
            }
        }
    };
}

examples!(
    hinge_d_saturated_margins, hinge_d_zero_scores, hinge_d_partial_margins, hinge_g_zero, hinge_g_three,
    hinge_g_decreasing, pixel_l2_identical, pixel_l2_unit_difference, h2l_total_arithmetic,
    h2l_total_without_pixel_term, h2l_total_linear, began_perfect_reconstruction, began_k_zero, began_d_arithmetic,
    kt_update_arithmetic, kt_update_clamps_at_one, kt_update_fixed_point, lsgan_d3_perfect_discriminator,
    lsgan_d3_undecided, lsgan_d3_symmetric_fakes, g2_total_vanishes, g2_total_supervised_only,
    generate_face_deterministic, generate_face_landmarks_in_bbox, subsample_constant, subsample_quarter_side,
    subsample_preserves_mean, degrade_zero_ranges, degrade_differs_from_subsample, encode_gaussian_values,
    encode_invisible, decode_grid_roundtrip, decode_zero_channel_invisible, augment_identity, augment_translation,
    downsample_landmarks_factor_four, downsample_landmarks_identity, nrmse_exact_prediction, nrmse_three_four_five,
    nrmse_ignores_invisible, ced_all_zero, ced_monotone, auc_all_zero, auc_all_above, auc_half, align_identity,
    align_exact_affine, evaluate_oracle_predictions, evaluate_model_deterministic,
);
