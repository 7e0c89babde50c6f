//! The standard synthetic benchmark end to end: generate, hold out a fifth
//! of every class, train DHCP-d, and compare one-stage with two-stage serving.
//!
//! ```text
//! cargo run --release --example standard_benchmark -- [scale] [stage1 epochs] [stage2 epochs] [batch] [lr]
//! ```
//!
//! `scale` multiplies every class count (default 1.0, about 2.6 GB in memory).

use std::time::Instant;

use dhcp::mlp::TrainConfig;
use dhcp::pipeline::{self, hallucination_report, serve_samples, stage1_report};
use dhcp::synthgen::{self, SynthSpec};
use dhcp::tensor::Sample;

fn main() -> dhcp::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| args.get(i).and_then(|a| a.parse().ok()).unwrap_or(default);
    let scale = arg(0, 1.0);
    let stage1 = TrainConfig {
        epochs: arg(1, 4.0) as usize,
        batch_size: arg(3, 1024.0) as usize,
        learning_rate: arg(4, 0.001),
        ..TrainConfig::default()
    };
    let stage2 = TrainConfig {
        epochs: arg(2, 10.0) as usize,
        batch_size: 64,
        ..TrainConfig::default()
    };

    let t = Instant::now();
    let samples = synthgen::generate(&SynthSpec::standard(7).scaled(scale))?;
    let (train, test): (Vec<(usize, &Sample)>, Vec<(usize, &Sample)>) =
        samples.iter().enumerate().partition(|(i, _)| i % 5 != 4);
    let train: Vec<&Sample> = train.into_iter().map(|(_, s)| s).collect();
    let test: Vec<&Sample> = test.into_iter().map(|(_, s)| s).collect();
    eprintln!("generated {} train / {} test in {:?}", train.len(), test.len(), t.elapsed());

    let (bundle, partition) = pipeline::train_dhcp_d(&train, &stage1, &stage2, &mut |m, e| {
        eprintln!("{m} epoch {} loss {:.4} at {} ms", e.epoch, e.mean_loss, e.wallclock_ms)
    })?;
    eprintln!(
        "partition: yh {} true / {} false, nh {} true / {} false",
        partition.yh_true.len(),
        partition.yh_false.len(),
        partition.nh_true.len(),
        partition.nh_false.len()
    );

    let two = serve_samples(&bundle, &test)?;
    let one = serve_samples(&bundle.without_refiners(), &test)?;
    println!("stage 1 on held-out samples\n{}", stage1_report(bundle.variant, &test, &one)?.to_table());
    let r1 = hallucination_report(&test, &one)?;
    let r2 = hallucination_report(&test, &two)?;
    println!("one-stage hallucination detection\n{}", r1.to_table());
    println!("two-stage hallucination detection\n{}", r2.to_table());
    eprintln!("total {:?}", t.elapsed());
    Ok(())
}
