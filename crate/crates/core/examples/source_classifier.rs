//! Tell apart hallucinations from random, popular and adversarial questions.
//!
//! ```text
//! cargo run --release --example source_classifier
//! ```

use dhcp::metrics;
use dhcp::mlp::TrainConfig;
use dhcp::pipeline;
use dhcp::synthgen::{self, Bump, ClassSpec, SynthSpec};
use dhcp::tensor::{Category, Cluster, Sample, TensorShape};

fn spec(count: usize, seed: u64) -> SynthSpec {
    // Each cluster leaves its trace on a different token; adversarial
    // questions also share a weaker copy of the popular one.
    let bumps = |cluster| match cluster {
        Cluster::Random => vec![Bump { token: 3, delta: 0.04 }],
        Cluster::Popular => vec![Bump { token: 11, delta: 0.04 }],
        _ => vec![Bump { token: 19, delta: 0.04 }, Bump { token: 11, delta: 0.02 }],
    };
    let classes = Cluster::TAGGED
        .iter()
        .flat_map(|&cluster| {
            [Category::HallucinatedYes, Category::HallucinatedNo].map(|category| ClassSpec {
                category,
                cluster,
                count,
                bumps: bumps(cluster),
                modes: vec![],
                gap: None,
            })
        })
        .collect();
    SynthSpec {
        shape: TensorShape::new(32, 8, 8).unwrap(),
        classes,
        sigma: 0.01,
        base_mean: 0.05,
        jitter: 0.3,
        layer_band: Some((2, 5)),
        hallucination_prior: None,
        seed,
        id_prefix: format!("c{seed}-"),
    }
}

fn main() -> dhcp::Result<()> {
    let train = synthgen::generate(&spec(200, 1))?;
    let test = synthgen::generate(&spec(60, 2))?;
    let train: Vec<&Sample> = train.iter().collect();
    let test: Vec<&Sample> = test.iter().collect();
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let model = pipeline::train_source_classifier(&train, &cfg, &mut |e| {
        println!("epoch {:>2} loss {:.4}", e.epoch, e.mean_loss)
    })?
    .model;
    let truths = test.iter().map(|s| pipeline::source_label(s)).collect::<dhcp::Result<Vec<_>>>()?;
    let preds = pipeline::classify(&model, &test)?;
    let cm = metrics::confusion(&truths, &preds, &pipeline::source_class_names())?;
    println!("{}", metrics::report(&cm).to_table());
    Ok(())
}
