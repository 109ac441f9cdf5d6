use regunet::gradcheck::{GRADCHECK_TOLERANCE, L1_EXCLUSION};
use regunet::{gradient_check, gradient_check_with, tiny_config, GradCheckOptions, Variant};

#[test]
fn every_variant_passes_at_tiny_scale() {
    for seed in 0..4 {
        for v in Variant::ALL {
            let report = gradient_check(&tiny_config(v, seed), seed).unwrap();
            println!(
                "{v} seed {seed}: max rel {:.3e} at {} (checked {}, kink {}, l1 {})",
                report.max_rel_error,
                report.worst_param,
                report.checked,
                report.skipped_kink,
                report.skipped_l1
            );
            assert!(report.max_rel_error < GRADCHECK_TOLERANCE, "{report:?}");
            assert!(report.checked > 0);
            // Kink exclusions must stay a small fraction of the comparison set.
            assert!(
                report.skipped_kink * 10 < report.checked + report.skipped_kink,
                "{report:?}"
            );
        }
    }
}

#[test]
fn corrupted_backward_is_detected() {
    for v in Variant::ALL {
        let opts = GradCheckOptions {
            inject_fault: true,
            ..Default::default()
        };
        let report = gradient_check_with(&tiny_config(v, 0), 0, opts).unwrap();
        assert!(report.max_rel_error > 1e-2, "{report:?}");
        assert!(
            report.worst_param.starts_with("branch0.dense1.weight"),
            "{report:?}"
        );
    }
}

#[test]
fn l1_exclusion_counts_exactly_the_small_l1_weights() {
    let l1_small = |seed: u64| {
        let model = regunet::Model::build(tiny_config(Variant::L1Reg, seed)).unwrap();
        model
            .param_info()
            .iter()
            .zip(model.parameters())
            .filter(|(info, _)| info.penalty.is_some_and(|p| p.mode == regunet::RegMode::L1))
            .map(|(_, (_, m))| m.data().iter().filter(|w| w.abs() < L1_EXCLUSION).count())
            .sum::<usize>()
    };
    let seed = (0..500)
        .find(|&s| l1_small(s) > 0)
        .expect("some seed draws a near-zero weight");
    let report = gradient_check(&tiny_config(Variant::L1Reg, seed), seed).unwrap();
    assert_eq!(report.skipped_l1, l1_small(seed));
    assert!(report.passed());
    let l2 = gradient_check(&tiny_config(Variant::L2Reg, seed), seed).unwrap();
    assert_eq!(l2.skipped_l1, 0);
}

#[test]
fn oversized_models_are_rejected() {
    let model_cfg = tiny_config(Variant::Concat, 0).with_dims(6, 4, 4);
    assert!(gradient_check(&model_cfg, 0).is_err());
    let opts = GradCheckOptions {
        batch: 9,
        ..Default::default()
    };
    assert!(gradient_check_with(&tiny_config(Variant::Concat, 0), 0, opts).is_err());
}
