//! Confidence gap `|P(yes) - P(no)|` and its distribution per sample group.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Sample;

pub const GAP_BIN_WIDTH: f64 = 0.05;
const BINS: usize = 20;

pub fn confidence_gap(p_yes: f64, p_no: f64) -> f64 {
    (p_yes - p_no).abs().min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapGroup {
    pub name: String,
    pub count: usize,
    pub mean: f64,
    /// Density per bin of width [`GAP_BIN_WIDTH`] over `[0, 1]`; integrates to 1.
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub bin_width: f64,
    pub groups: Vec<GapGroup>,
}

/// Gap statistics per named group of samples. Empty groups get mean 0 and
/// zero density.
pub fn aggregate_gap_stats(groups: &[(&str, Vec<&Sample>)]) -> Result<GapStats> {
    let groups = groups
        .iter()
        .map(|(name, samples)| {
            let gaps = samples
                .iter()
                .map(|s| {
                    s.probs
                        .map(|p| confidence_gap(p.yes as f64, p.no as f64))
                        .ok_or_else(|| Error::MissingProbability(s.id.clone()))
                })
                .collect::<Result<Vec<f64>>>()?;
            let mut counts = [0usize; BINS];
            for &g in &gaps {
                counts[((g / GAP_BIN_WIDTH) as usize).min(BINS - 1)] += 1;
            }
            let n = gaps.len();
            let scale = if n == 0 { 0.0 } else { 1.0 / (n as f64 * GAP_BIN_WIDTH) };
            Ok(GapGroup {
                name: name.to_string(),
                count: n,
                mean: if n == 0 { 0.0 } else { gaps.iter().sum::<f64>() / n as f64 },
                density: counts.iter().map(|&c| c as f64 * scale).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GapStats {
        bin_width: GAP_BIN_WIDTH,
        groups,
    })
}

impl GapStats {
    /// `bin_left,bin_right,<group>...` with one density column per group.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right");
        for g in &self.groups {
            out.push(',');
            out.push_str(&g.name);
        }
        out.push('\n');
        for b in 0..BINS {
            let _ = write!(out, "{:.2},{:.2}", b as f64 * GAP_BIN_WIDTH, (b + 1) as f64 * GAP_BIN_WIDTH);
            for g in &self.groups {
                let _ = write!(out, ",{:.6}", g.density[b]);
            }
            out.push('\n');
        }
        out
    }
}
