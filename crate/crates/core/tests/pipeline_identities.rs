mod common;

use dhcp::mlp::TrainConfig;
use dhcp::pipeline::{self, Variant};
use dhcp::synthgen;
use dhcp::tensor::Sample;

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

#[test]
fn partition_matches_stage1_precision() {
    let samples = synthgen::generate(&common::small_four_way(1, 4)).unwrap();
    let refs: Vec<&Sample> = samples.iter().collect();
    let c1 = pipeline::train_stage1(&refs, Variant::DhcpD, &cfg(4), &mut |_| {}).unwrap().model;
    let part = pipeline::partition_stage2(&c1, Variant::DhcpD, &refs).unwrap();

    let bundle = pipeline::DetectorBundle::one_stage(Variant::DhcpD, samples[0].tensor.shape(), c1).unwrap();
    let verdicts = pipeline::serve_samples(&bundle, &refs).unwrap();
    let report = pipeline::stage1_report(Variant::DhcpD, &refs, &verdicts).unwrap();

    for (name, t, f) in [
        ("A_YH", &part.yh_true, &part.yh_false),
        ("A_NH", &part.nh_true, &part.nh_false),
    ] {
        let c = report.class(name).unwrap();
        let flagged = t.len() + f.len();
        assert!(flagged > 0, "{name} never predicted");
        assert_eq!(c.precision, t.len() as f64 / flagged as f64, "{name}");
        for &i in t {
            assert_eq!(refs[i].category.name(), name);
        }
        for &i in f {
            assert_ne!(refs[i].category.name(), name);
        }
    }
    // One-stage hallucination flags are exactly the four partition cells.
    let flagged = verdicts.iter().filter(|v| v.hallucination).count();
    assert_eq!(
        flagged,
        part.yh_true.len() + part.yh_false.len() + part.nh_true.len() + part.nh_false.len()
    );
}

#[test]
fn refiners_only_remove_flags() {
    let samples = synthgen::generate(&common::small_four_way(2, 4)).unwrap();
    let refs: Vec<&Sample> = samples.iter().collect();
    let (bundle, _) = pipeline::train_dhcp_d(&refs, &cfg(4), &cfg(4), &mut |_, _| {}).unwrap();
    let one = pipeline::serve_samples(&bundle.without_refiners(), &refs).unwrap();
    let two = pipeline::serve_samples(&bundle, &refs).unwrap();
    for (a, b) in one.iter().zip(&two) {
        assert_eq!(a.stage1_class, b.stage1_class);
        assert!(!b.hallucination || a.hallucination);
    }
}
