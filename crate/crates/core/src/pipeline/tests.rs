use super::*;
use crate::mlp::Architecture;
use crate::synthgen::{self, Bump, ClassSpec, SynthSpec};
use crate::tensor::{AttentionTensor, GroundTruth};

fn shape() -> TensorShape {
    TensorShape::new(2, 1, 2).unwrap()
}

fn stub(classes: usize, winner: usize) -> MlpModel {
    let arch = Architecture {
        input: shape().len(),
        hidden1: 3,
        hidden2: 2,
        classes,
    };
    let mut logits = vec![0.0; classes];
    logits[winner] = 5.0;
    MlpModel::constant(arch, &logits).unwrap()
}

fn dhcp_d(stage1: usize, yh: usize, nh: usize) -> DetectorBundle {
    DetectorBundle {
        variant: Variant::DhcpD,
        shape: shape(),
        c1: stub(4, stage1),
        c2_yh: Some(stub(2, yh)),
        c2_nh: Some(stub(2, nh)),
        c2_g: None,
    }
}

fn sample(id: &str, category: Category) -> Sample {
    let (answer, ground_truth) = match category {
        Category::AnsweredYes => (Answer::Yes, GroundTruth::Yes),
        Category::AnsweredNo => (Answer::No, GroundTruth::No),
        Category::HallucinatedYes => (Answer::Yes, GroundTruth::No),
        Category::HallucinatedNo => (Answer::No, GroundTruth::Yes),
        _ => (Answer::Other, GroundTruth::NotApplicable),
    };
    Sample {
        id: id.into(),
        tensor: AttentionTensor::zeros(shape()),
        answer,
        ground_truth,
        category,
        cluster: Cluster::None,
        probs: None,
    }
}

#[test]
fn serving_truth_table() {
    let x = vec![0.1f32; shape().len()];
    for stage1 in 0..4 {
        for stage2 in 0..2 {
            let v = serve(&dhcp_d(stage1, stage2, stage2), &x).unwrap();
            let class = Category::FOUR_WAY[stage1];
            assert_eq!(v.stage1_class, class);
            let flagged = class.is_hallucination() == Some(true);
            assert_eq!(v.hallucination, flagged && stage2 == 1, "{class} / {stage2}");
            assert_eq!(v.stage2_probs.is_some(), flagged);
        }
    }
    // Only the matching refiner is consulted.
    assert!(serve(&dhcp_d(2, 1, 0), &x).unwrap().hallucination);
    assert!(!serve(&dhcp_d(2, 0, 1), &x).unwrap().hallucination);
    assert!(serve(&dhcp_d(3, 0, 1), &x).unwrap().hallucination);
}

#[test]
fn one_stage_returns_stage1_decision() {
    let x = vec![0.0f32; shape().len()];
    for stage1 in 0..4 {
        let b = dhcp_d(stage1, 0, 0).without_refiners();
        let v = serve(&b, &x).unwrap();
        assert_eq!(v.hallucination, stage1 >= 2);
        assert!(v.stage2_probs.is_none());
    }
}

#[test]
fn dhcp_g_serving() {
    let x = vec![0.0f32; shape().len()];
    for (stage1, stage2, expected) in [(0, 1, false), (1, 0, false), (1, 1, true), (0, 0, false)] {
        let b = DetectorBundle {
            variant: Variant::DhcpG,
            shape: shape(),
            c1: stub(2, stage1),
            c2_yh: None,
            c2_nh: None,
            c2_g: Some(stub(2, stage2)),
        };
        let v = serve(&b, &x).unwrap();
        assert_eq!(v.hallucination, expected);
        assert_eq!(v.stage2_probs.is_some(), stage1 == 1);
    }
}

#[test]
fn serve_rejects_wrong_width() {
    assert!(matches!(
        serve(&dhcp_d(0, 0, 0), &[0.0; 3]),
        Err(Error::DimMismatch { expected: 4, actual: 3 })
    ));
    let other = Sample {
        tensor: AttentionTensor::zeros(TensorShape::new(4, 1, 1).unwrap()),
        ..sample("s", Category::AnsweredYes)
    };
    assert!(matches!(
        serve_samples(&dhcp_d(0, 0, 0), &[&other]),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn mitigation() {
    let x = vec![0.0f32; shape().len()];
    let flagged = serve(&dhcp_d(2, 1, 1), &x).unwrap();
    let clean = serve(&dhcp_d(0, 1, 1), &x).unwrap();
    assert_eq!(mitigate_flip(Answer::Yes, &flagged).unwrap(), Answer::No);
    assert_eq!(mitigate_flip(Answer::No, &clean).unwrap(), Answer::No);
    assert_eq!(mitigate_flip(Answer::No, &flagged).unwrap(), Answer::Yes);
    for a in [Answer::Yes, Answer::No] {
        for v in [&flagged, &clean] {
            assert_eq!(mitigate_flip(mitigate_flip(a, v).unwrap(), v).unwrap(), a);
        }
    }
    assert!(matches!(mitigate_flip(Answer::Other, &clean), Err(Error::NotBinaryAnswer)));

    let s = [sample("a", Category::HallucinatedYes), sample("b", Category::AnsweredNo)];
    let refs: Vec<&Sample> = s.iter().collect();
    let v = serve_samples(&dhcp_d(2, 1, 1), &refs).unwrap();
    assert_eq!(v[0].mitigated_answer, Some(Answer::No));
    assert_eq!(v[1].mitigated_answer, Some(Answer::Yes));
}

#[test]
fn partition_by_correctness() {
    let s = [
        sample("0", Category::HallucinatedYes),
        sample("1", Category::AnsweredYes),
        sample("2", Category::HallucinatedNo),
        sample("3", Category::AnsweredNo),
        sample("4", Category::AnsweredYes),
        sample("5", Category::HallucinatedYes),
    ];
    let refs: Vec<&Sample> = s.iter().collect();
    let p = partition_from_predictions(Variant::DhcpD, &[2, 2, 3, 3, 0, 1], &refs).unwrap();
    assert_eq!(p.yh_true, vec![0]);
    assert_eq!(p.yh_false, vec![1]);
    assert_eq!(p.nh_true, vec![2]);
    assert_eq!(p.nh_false, vec![3]);
    assert!(p.g_true.is_empty() && p.g_false.is_empty());
    let c1 = stub(4, 2);
    let all_yh = partition_stage2(&c1, Variant::DhcpD, &refs).unwrap();
    assert_eq!(all_yh.yh_true, vec![0, 5]);
    assert_eq!(all_yh.yh_false, vec![1, 2, 3, 4]);
    assert!(matches!(
        partition_from_predictions(Variant::DhcpD, &[0], &refs),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn refiner_needs_both_sides() {
    let s = [sample("0", Category::HallucinatedYes)];
    let refs: Vec<&Sample> = s.iter().collect();
    let p = Partition {
        yh_true: vec![0],
        ..Partition::default()
    };
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let err = train_stage2(&refs, &p, &cfg, &mut |_, _| {}).unwrap_err();
    assert!(matches!(err, Error::EmptyClass(name) if name.contains("c2_yh")));
}

#[test]
fn union_and_labels() {
    let a = Shard {
        shape: shape(),
        samples: vec![sample("a", Category::AnsweredYes)],
    };
    let b = Shard {
        shape: TensorShape::new(4, 1, 1).unwrap(),
        samples: vec![],
    };
    assert_eq!(union(std::slice::from_ref(&a)).unwrap().1.len(), 1);
    assert!(matches!(union(&[a.clone(), b]), Err(Error::ShapeMismatch { .. })));
    assert!(union(&[]).is_err());

    let binary = sample("h", Category::HallucinationBinary);
    assert_eq!(Variant::DhcpG.label(&binary).unwrap(), 1);
    assert_eq!(Variant::DhcpG.label(&sample("y", Category::AnsweredYes)).unwrap(), 0);
    assert_eq!(Variant::DhcpG.label(&sample("n", Category::HallucinatedNo)).unwrap(), 1);
    assert!(Variant::DhcpD.label(&binary).is_err());
}

#[test]
fn single_class_stage1_reports_its_name() {
    let s = [sample("a", Category::AnsweredYes), sample("b", Category::AnsweredNo)];
    let refs: Vec<&Sample> = s.iter().collect();
    let cfg = TrainConfig {
        epochs: 1,
        hidden1: 2,
        hidden2: 2,
        ..TrainConfig::default()
    };
    let err = train_stage1(&refs, Variant::DhcpD, &cfg, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::EmptyClass(c) if c == "A_YH"));
}

#[test]
fn source_classifier_inputs() {
    let mut s = sample("a", Category::HallucinatedYes);
    s.cluster = Cluster::Popular;
    assert_eq!(source_label(&s).unwrap(), 1);
    let cfg = TrainConfig {
        epochs: 1,
        hidden1: 2,
        hidden2: 2,
        ..TrainConfig::default()
    };
    let err = train_source_classifier(&[&s], &cfg, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::EmptyClass(c) if c == "random"));
    let untagged = sample("b", Category::HallucinatedNo);
    assert!(source_label(&untagged).is_err());
    assert!(source_label(&sample("c", Category::AnsweredYes)).is_err());
}

#[test]
fn bundle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = dhcp_d(1, 0, 1);
    save_bundle(dir.path(), &b).unwrap();
    assert_eq!(load_bundle(dir.path()).unwrap(), b);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(BUNDLE_FILE)).unwrap()).unwrap();
    assert_eq!(json["variant"], "DHCP_D");
    assert_eq!(json["stage1_classes"][2], "A_YH");
    assert_eq!(json["c2_nh"], "c2_nh.bin");

    let mut broken = b.clone();
    broken.c2_nh = None;
    assert!(matches!(save_bundle(dir.path(), &broken), Err(Error::InvalidBundle(_))));
    let mut wide = b;
    wide.c2_yh = Some(stub(4, 0));
    assert!(matches!(wide.validate(), Err(Error::InvalidBundle(_))));
}

#[test]
fn reports_over_verdicts() {
    let s = [sample("a", Category::HallucinatedYes), sample("b", Category::AnsweredNo)];
    let refs: Vec<&Sample> = s.iter().collect();
    let v = serve_samples(&dhcp_d(2, 1, 1), &refs).unwrap();
    let r = hallucination_report(&refs, &v).unwrap();
    assert_eq!(r.accuracy, 0.5);
    assert_eq!(r.class("hallucination").unwrap().recall, 1.0);
    assert_eq!(r.class("hallucination").unwrap().precision, 0.5);
    let r1 = stage1_report(Variant::DhcpD, &refs, &v).unwrap();
    assert_eq!(r1.class("A_YH").unwrap().support, 1);
}

#[test]
fn cascade_trains_on_tiny_benchmark() {
    let spec = SynthSpec {
        shape: TensorShape::new(8, 2, 2).unwrap(),
        classes: [(Category::AnsweredYes, 1), (Category::AnsweredNo, 3), (Category::HallucinatedYes, 5), (Category::HallucinatedNo, 7)]
            .into_iter()
            .map(|(category, token)| ClassSpec {
                category,
                cluster: Cluster::None,
                count: 60,
                bumps: vec![Bump { token, delta: 0.3 }],
                modes: vec![],
                gap: None,
            })
            .collect(),
        sigma: 0.01,
        base_mean: 0.05,
        jitter: 0.0,
        layer_band: None,
        hallucination_prior: None,
        seed: 5,
        id_prefix: "s".into(),
    };
    let samples = synthgen::generate(&spec).unwrap();
    let refs: Vec<&Sample> = samples.iter().collect();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 32,
        learning_rate: 0.01,
        hidden1: 16,
        hidden2: 8,
        ..TrainConfig::default()
    };
    let c1 = train_stage1(&refs, Variant::DhcpD, &cfg, &mut |_| {}).unwrap().model;
    let bundle = DetectorBundle::one_stage(Variant::DhcpD, spec.shape, c1).unwrap();
    let v = serve_samples(&bundle, &refs).unwrap();
    assert_eq!(stage1_report(Variant::DhcpD, &refs, &v).unwrap().accuracy, 1.0);
}
