//! Generate a scaled-down standard benchmark, write it as a shard, read it
//! back and show the per-class mean attention on each bump token.
//!
//! ```text
//! cargo run --release --example synth_shard -- [scale=0.05] [out=standard.dhcp]
//! ```

use std::collections::BTreeMap;

use dhcp::synthgen::{self, SynthSpec, STANDARD_TOKENS};
use dhcp::tensor;

fn main() -> dhcp::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scale: f64 = args.first().and_then(|a| a.parse().ok()).unwrap_or(0.05);
    let out = args.get(1).map_or("standard.dhcp", String::as_str);

    let spec = SynthSpec::standard(7).scaled(scale);
    let samples = synthgen::generate(&spec)?;
    tensor::write_shard(out, spec.shape, &samples)?;
    let shard = tensor::read_shard(out)?;
    println!(
        "{out}: {} samples of shape {:?}, {} bytes",
        shard.samples.len(),
        shard.shape,
        std::fs::metadata(out).map_err(|e| dhcp::Error::io(out, e))?.len()
    );

    let mut by_class: BTreeMap<&str, Vec<&tensor::Sample>> = BTreeMap::new();
    for s in &shard.samples {
        by_class.entry(s.category.name()).or_default().push(s);
    }
    print!("{:<6}{:>7}", "class", "n");
    for (c, t) in STANDARD_TOKENS {
        print!("{:>12}", format!("t{t} ({})", c.name()));
    }
    println!();
    for (name, group) in &by_class {
        print!("{name:<6}{:>7}", group.len());
        for (_, t) in STANDARD_TOKENS {
            let mean = group.iter().map(|s| s.tensor.token_mean(t as usize)).sum::<f64>() / group.len() as f64;
            print!("{mean:>12.4}");
        }
        println!();
    }
    Ok(())
}
