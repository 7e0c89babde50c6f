//! Compare back-propagated gradients with central differences on a few
//! small random networks.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use rand::Rng;

use dhcp::mlp::{self, Architecture, MlpModel};

fn main() -> dhcp::Result<()> {
    for seed in 0..5 {
        let mut r = dhcp::rng::stream(seed, "example/gradcheck");
        let arch = Architecture {
            input: r.random_range(2..=16),
            hidden1: 8,
            hidden2: 6,
            classes: 3,
        };
        let model = MlpModel::init(arch, seed)?;
        let x: Vec<f32> = (0..arch.input).map(|_| r.random()).collect();
        let label = r.random_range(0..arch.classes);
        let err = mlp::gradient_check(&model, &x, label, 1e-3, None)?;
        println!("{:?} label {label}: relative error {err:.2e}", arch.dims());
    }
    Ok(())
}
