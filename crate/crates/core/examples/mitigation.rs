//! Flip the answers a two-stage detector calls hallucinated and compare
//! yes/no metrics before and after.
//!
//! ```text
//! cargo run --release --example mitigation
//! ```

use dhcp::metrics::{self, PopeReport};
use dhcp::mlp::TrainConfig;
use dhcp::pipeline;
use dhcp::synthgen::{self, SynthSpec};
use dhcp::tensor::{Sample, TensorShape};

fn spec(seed: u64, scale: f64) -> SynthSpec {
    let mut s = SynthSpec::standard(seed).scaled(scale);
    s.shape = TensorShape::new(32, 4, 4).unwrap();
    s.id_prefix = format!("m{seed}-");
    s
}

fn main() -> dhcp::Result<()> {
    let train = synthgen::generate(&spec(1, 0.25))?;
    let test = synthgen::generate(&spec(2, 0.05))?;
    let train: Vec<&Sample> = train.iter().collect();
    let test: Vec<&Sample> = test.iter().collect();
    let stage1 = TrainConfig {
        epochs: 3,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let stage2 = TrainConfig {
        epochs: 30,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (bundle, _) = pipeline::train_dhcp_d(&train, &stage1, &stage2, &mut |_, _| {})?;
    let verdicts = pipeline::serve_samples(&bundle, &test)?;

    let truths: Vec<_> = test
        .iter()
        .map(|s| s.ground_truth.as_answer().expect("yes/no ground truth"))
        .collect();
    let before: Vec<_> = test.iter().map(|s| s.answer).collect();
    let after: Vec<_> = verdicts.iter().map(|v| v.mitigated_answer.expect("yes/no answer")).collect();
    let flipped = before.iter().zip(&after).filter(|(a, b)| a != b).count();

    println!("{flipped} of {} answers flipped", test.len());
    println!("\t{}", PopeReport::HEADER);
    println!("original\t{}", metrics::pope_report(&truths, &before)?.to_row());
    println!("mitigated\t{}", metrics::pope_report(&truths, &after)?.to_row());
    Ok(())
}
