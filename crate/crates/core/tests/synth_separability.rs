//! Held-out accuracy of a small detector tracks how far apart the synthetic
//! classes are.

use dhcp::metrics;
use dhcp::mlp::TrainConfig;
use dhcp::pipeline::{self, Variant};
use dhcp::synthgen::{self, Bump, ClassSpec, SynthSpec};
use dhcp::tensor::{Category, Cluster, Sample, TensorShape};

const SIGMA: f32 = 0.02;

fn spec(separation: f32, seed: u64) -> SynthSpec {
    let class = |category, token| ClassSpec {
        category,
        cluster: Cluster::None,
        count: 300,
        bumps: vec![Bump {
            token,
            delta: separation * SIGMA,
        }],
        modes: vec![],
        gap: None,
    };
    SynthSpec {
        shape: TensorShape::new(8, 2, 2).unwrap(),
        classes: vec![class(Category::CleanBinary, 2), class(Category::HallucinationBinary, 5)],
        sigma: SIGMA,
        base_mean: 0.3,
        jitter: 0.0,
        layer_band: None,
        hallucination_prior: None,
        seed,
        id_prefix: format!("p{seed}-"),
    }
}

fn held_out_accuracy(mut spec: SynthSpec) -> f64 {
    let train = synthgen::generate(&spec).unwrap();
    spec.seed += 1000;
    spec.id_prefix.push('x');
    let test = synthgen::generate(&spec).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let train: Vec<&Sample> = train.iter().collect();
    let test: Vec<&Sample> = test.iter().collect();
    let model = pipeline::train_stage1(&train, Variant::DhcpG, &cfg, &mut |_| {}).unwrap().model;
    let preds = pipeline::classify(&model, &test).unwrap();
    let truths: Vec<usize> = test.iter().map(|s| Variant::DhcpG.label(s).unwrap()).collect();
    let names = ["clean", "hallucination"].map(String::from);
    metrics::report(&metrics::confusion(&truths, &preds, &names).unwrap()).accuracy
}

#[test]
fn identical_classes_are_chance() {
    // Both classes bump the same token: nothing to learn.
    let mut s = spec(5.0, 3);
    s.classes[1].bumps = s.classes[0].bumps.clone();
    let acc = held_out_accuracy(s);
    assert!((acc - 0.5).abs() < 0.1, "accuracy {acc}");
}

#[test]
fn accuracy_grows_with_separation() {
    let accs: Vec<f64> = [0.5, 1.0, 5.0].iter().map(|&d| held_out_accuracy(spec(d, 4))).collect();
    assert!(accs[0] <= accs[1] + 0.03 && accs[1] <= accs[2] + 0.03, "{accs:?}");
    assert!(accs[2] > 0.97, "{accs:?}");
    assert!(accs[0] < 0.9, "{accs:?}");
}
