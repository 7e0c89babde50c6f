//! The binary variant: a clean/hallucination first stage and a single
//! refiner over everything it flags.
//!
//! ```text
//! cargo run --release --example dhcp_g
//! ```

use dhcp::mlp::TrainConfig;
use dhcp::pipeline::{self, Variant};
use dhcp::synthgen::{self, SynthSpec};
use dhcp::tensor::{Sample, TensorShape};

fn main() -> dhcp::Result<()> {
    let mut spec = SynthSpec::standard(3).scaled(0.1);
    spec.shape = TensorShape::new(32, 4, 4).unwrap();
    let samples = synthgen::generate(&spec)?;
    let train: Vec<&Sample> = samples.iter().enumerate().filter(|(i, _)| i % 5 != 4).map(|(_, s)| s).collect();
    let test: Vec<&Sample> = samples.iter().enumerate().filter(|(i, _)| i % 5 == 4).map(|(_, s)| s).collect();

    let stage1 = TrainConfig {
        epochs: 6,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let stage2 = TrainConfig {
        epochs: 30,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (bundle, part) = pipeline::train_dhcp_g(&train, &stage1, &stage2, &mut |_, _| {})?;
    println!("refiner trained on {} true / {} false detections", part.g_true.len(), part.g_false.len());

    let one = pipeline::serve_samples(&bundle.without_refiners(), &test)?;
    let two = pipeline::serve_samples(&bundle, &test)?;
    println!("first stage\n{}", pipeline::stage1_report(Variant::DhcpG, &test, &one)?.to_table());
    println!("one stage\n{}", pipeline::hallucination_report(&test, &one)?.to_table());
    println!("two stages\n{}", pipeline::hallucination_report(&test, &two)?.to_table());
    Ok(())
}
