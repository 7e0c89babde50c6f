#![allow(dead_code)]

use dhcp::synthgen::{Bump, ClassSpec, Mode, SynthSpec};
use dhcp::tensor::{Category, Cluster, TensorShape};

fn bump(token: u32, delta: f32) -> Vec<Bump> {
    vec![Bump { token, delta }]
}

fn class(category: Category, count: usize, token: u32, confuser: u32, share: f64) -> ClassSpec {
    ClassSpec {
        category,
        cluster: Cluster::None,
        count,
        bumps: bump(token, 0.05),
        modes: vec![Mode {
            fraction: share,
            bumps: bump(confuser, 0.05),
            gap: None,
        }],
        gap: None,
    }
}

/// Four-way spec small enough for debug-speed tests. Each clean class shares
/// a bump with its hallucination twin often enough that the first stage is
/// guaranteed both true and false detections.
pub fn small_four_way(seed: u64, scale: usize) -> SynthSpec {
    SynthSpec {
        shape: TensorShape::new(16, 4, 4).unwrap(),
        classes: vec![
            class(Category::AnsweredYes, 40 * scale, 1, 9, 0.2),
            class(Category::AnsweredNo, 40 * scale, 3, 11, 0.2),
            class(Category::HallucinatedYes, 25 * scale, 9, 1, 0.1),
            class(Category::HallucinatedNo, 25 * scale, 11, 3, 0.1),
        ],
        sigma: 0.01,
        base_mean: 0.05,
        jitter: 0.1,
        layer_band: None,
        hallucination_prior: None,
        seed,
        id_prefix: format!("t{seed}-"),
    }
}
