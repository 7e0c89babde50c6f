//! Compare the answer confidence gap |P(yes) - P(no)| of false alarms with
//! that of clean samples the detector passes.
//!
//! ```text
//! cargo run --release --example confidence_gap
//! ```

use dhcp::mlp::TrainConfig;
use dhcp::pipeline::{self, aggregate_gap_stats, Variant};
use dhcp::synthgen::{self, GapSpec, SynthSpec};
use dhcp::tensor::{Sample, TensorShape};

fn main() -> dhcp::Result<()> {
    let mut spec = SynthSpec::standard(5).scaled(0.1);
    spec.shape = TensorShape::new(32, 4, 4).unwrap();
    // Confusable clean samples answer with less confidence.
    for class in &mut spec.classes {
        for mode in &mut class.modes {
            mode.gap = Some(GapSpec { mean: 0.3, std: 0.15 });
        }
    }
    let samples = synthgen::generate(&spec)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let c1 = pipeline::train_stage1(&refs, Variant::DhcpD, &cfg, &mut |_| {})?.model;
    let bundle = pipeline::DetectorBundle::one_stage(Variant::DhcpD, spec.shape, c1)?;
    let verdicts = pipeline::serve_samples(&bundle, &refs)?;

    let clean = |s: &&Sample| s.category.is_hallucination() == Some(false);
    let pick = |flagged: bool| -> Vec<&Sample> {
        refs.iter()
            .zip(&verdicts)
            .filter(|(s, v)| clean(s) && v.hallucination == flagged)
            .map(|(s, _)| *s)
            .collect()
    };
    let stats = aggregate_gap_stats(&[("false_alarm", pick(true)), ("control", pick(false))])?;
    for g in &stats.groups {
        println!("{:<12} n={:<6} mean gap {:.3}", g.name, g.count, g.mean);
    }
    print!("{}", stats.to_csv());
    Ok(())
}
