//! Train a bare four-way MLP on a small synthetic set with the low-level
//! training API, save it, reload it and score a held-out shard.
//!
//! ```text
//! cargo run --release --example train_detector
//! ```

use dhcp::metrics;
use dhcp::mlp::{self, TrainConfig, TrainingSet};
use dhcp::synthgen::{self, SynthSpec};
use dhcp::tensor::{Category, Sample, TensorShape};

fn spec(seed: u64) -> SynthSpec {
    let mut s = SynthSpec::standard(seed).scaled(0.05);
    // Keep the bump tokens but shrink layers and heads.
    s.shape = TensorShape::new(32, 4, 4).unwrap();
    s.id_prefix = format!("seed{seed}-");
    s
}

fn label(s: &Sample) -> usize {
    Category::FOUR_WAY.iter().position(|&c| c == s.category).unwrap()
}

fn main() -> dhcp::Result<()> {
    let train = synthgen::generate(&spec(1))?;
    let test = synthgen::generate(&spec(2))?;
    let data = TrainingSet::new(
        train.iter().map(|s| s.tensor.values()).collect(),
        train.iter().map(label).collect(),
        4,
    )?;
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let trained = mlp::train_with(&data, &cfg, |e| println!("epoch {:>2} loss {:.4}", e.epoch, e.mean_loss))?;

    let path = std::env::temp_dir().join("dhcp_example_c1.bin");
    mlp::save_model(&path, &trained.model)?;
    let model = mlp::load_model(&path)?;
    println!("saved and reloaded {} parameters from {}", model.param_count(), path.display());

    let preds = test
        .iter()
        .map(|s| model.predict(&s.tensor).map(|(c, _)| c))
        .collect::<dhcp::Result<Vec<_>>>()?;
    let truths: Vec<usize> = test.iter().map(label).collect();
    let names: Vec<String> = Category::FOUR_WAY.iter().map(|c| c.name().to_string()).collect();
    println!("{}", metrics::report(&metrics::confusion(&truths, &preds, &names)?).to_table());
    Ok(())
}
