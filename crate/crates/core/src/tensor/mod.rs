//! Cross-modal attention tensors and the samples that carry them.
//!
//! A tensor holds the attention the language model pays to each visual token,
//! at every layer and head, when it emits the first answer token. Values are
//! stored densely with token as the slowest axis and head as the fastest:
//! `index = ((t * layers) + l) * heads + h`.

mod shard;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use shard::{
    read_shard, read_shard_from, record_len, write_shard, write_shard_to, Shard, HEADER_LEN,
    SHARD_MAGIC, SHARD_VERSION,
};

/// Largest supported flattened tensor length, `2^24`.
pub const MAX_FLAT_LEN: usize = 1 << 24;

/// Attention values may exceed 1 by this much to absorb extractor rounding.
pub const UPPER_TOLERANCE: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub tokens: u32,
    pub layers: u32,
    pub heads: u32,
}

impl TensorShape {
    pub fn new(tokens: u32, layers: u32, heads: u32) -> Result<Self> {
        let shape = TensorShape {
            tokens,
            layers,
            heads,
        };
        shape.check()?;
        Ok(shape)
    }

    /// The shape InstructBLIP Vicuna-7B produces: 32 query tokens, 32 layers, 32 heads.
    pub const fn instructblip() -> Self {
        TensorShape {
            tokens: 32,
            layers: 32,
            heads: 32,
        }
    }

    pub fn check(&self) -> Result<()> {
        let invalid = || Error::InvalidShape {
            tokens: self.tokens,
            layers: self.layers,
            heads: self.heads,
        };
        if self.tokens == 0 || self.layers == 0 || self.heads == 0 {
            return Err(invalid());
        }
        let len = (self.tokens as u64) * (self.layers as u64) * (self.heads as u64);
        if len > MAX_FLAT_LEN as u64 {
            return Err(Error::ShapeTooLarge(len as usize));
        }
        Ok(())
    }

    /// Number of values, `T * L * H`.
    pub fn len(&self) -> usize {
        self.tokens as usize * self.layers as usize * self.heads as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, token: usize, layer: usize, head: usize) -> usize {
        debug_assert!(token < self.tokens as usize);
        debug_assert!(layer < self.layers as usize);
        debug_assert!(head < self.heads as usize);
        (token * self.layers as usize + layer) * self.heads as usize + head
    }

    /// Inverse of [`TensorShape::index`].
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let heads = self.heads as usize;
        let layers = self.layers as usize;
        (index / (layers * heads), (index / heads) % layers, index % heads)
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.tokens, self.layers, self.heads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    shape: TensorShape,
    values: Vec<f32>,
}

impl AttentionTensor {
    /// Builds a tensor and validates it.
    pub fn new(shape: TensorShape, values: Vec<f32>) -> Result<Self> {
        let t = Self::from_raw(shape, values);
        t.validate()?;
        Ok(t)
    }

    /// Builds a tensor without checking values or length.
    pub fn from_raw(shape: TensorShape, values: Vec<f32>) -> Self {
        AttentionTensor { shape, values }
    }

    pub fn zeros(shape: TensorShape) -> Self {
        AttentionTensor {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    /// Rebuilds a tensor from its flattened form.
    pub fn unflatten(shape: TensorShape, flat: &[f32]) -> Result<Self> {
        Self::new(shape, flat.to_vec())
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, token: usize, layer: usize, head: usize) -> f32 {
        self.values[self.shape.index(token, layer, head)]
    }

    /// Checks every tensor invariant, reporting the first violating index.
    pub fn validate(&self) -> Result<()> {
        self.shape.check()?;
        if self.values.len() != self.shape.len() {
            return Err(Error::LengthMismatch {
                expected: self.shape.len(),
                actual: self.values.len(),
            });
        }
        for (i, &v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(i));
            }
            if v < 0.0 {
                return Err(Error::Negative(i));
            }
            if v > 1.0 + UPPER_TOLERANCE {
                return Err(Error::AboveOne(i));
            }
        }
        Ok(())
    }

    /// The model input vector. The dense layout already is the flattening
    /// order, so this is a view.
    pub fn flatten(&self) -> &[f32] {
        &self.values
    }

    /// Mean attention on one visual token over all layers and heads.
    pub fn token_mean(&self, token: usize) -> f64 {
        let width = self.shape.layers as usize * self.shape.heads as usize;
        let start = token * width;
        self.values[start..start + width]
            .iter()
            .map(|&v| v as f64)
            .sum::<f64>()
            / width as f64
    }
}

pub fn validate_tensor(t: &AttentionTensor) -> Result<()> {
    t.validate()
}

pub fn flatten(t: &AttentionTensor) -> Vec<f32> {
    t.flatten().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    Yes,
    No,
    Other,
}

impl Answer {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Answer::Yes,
            1 => Answer::No,
            2 => Answer::Other,
            _ => return None,
        })
    }

    pub fn flipped(self) -> Option<Self> {
        match self {
            Answer::Yes => Some(Answer::No),
            Answer::No => Some(Answer::Yes),
            Answer::Other => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroundTruth {
    Yes,
    No,
    #[serde(rename = "NA")]
    NotApplicable,
}

impl GroundTruth {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => GroundTruth::Yes,
            1 => GroundTruth::No,
            2 => GroundTruth::NotApplicable,
            _ => return None,
        })
    }

    /// The answer that would be correct.
    pub fn as_answer(self) -> Option<Answer> {
        match self {
            GroundTruth::Yes => Some(Answer::Yes),
            GroundTruth::No => Some(Answer::No),
            GroundTruth::NotApplicable => None,
        }
    }
}

/// Labels a sample can carry. The first four are the yes/no states; the
/// binary pair serves open-ended tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "A_Y")]
    AnsweredYes,
    #[serde(rename = "A_N")]
    AnsweredNo,
    #[serde(rename = "A_YH")]
    HallucinatedYes,
    #[serde(rename = "A_NH")]
    HallucinatedNo,
    #[serde(rename = "hallucination")]
    HallucinationBinary,
    #[serde(rename = "clean")]
    CleanBinary,
    #[serde(rename = "unlabeled")]
    Unlabeled,
}

impl Category {
    pub const FOUR_WAY: [Category; 4] = [
        Category::AnsweredYes,
        Category::AnsweredNo,
        Category::HallucinatedYes,
        Category::HallucinatedNo,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Category::AnsweredYes,
            1 => Category::AnsweredNo,
            2 => Category::HallucinatedYes,
            3 => Category::HallucinatedNo,
            4 => Category::HallucinationBinary,
            5 => Category::CleanBinary,
            6 => Category::Unlabeled,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::AnsweredYes => "A_Y",
            Category::AnsweredNo => "A_N",
            Category::HallucinatedYes => "A_YH",
            Category::HallucinatedNo => "A_NH",
            Category::HallucinationBinary => "hallucination",
            Category::CleanBinary => "clean",
            Category::Unlabeled => "unlabeled",
        }
    }

    /// Whether this label marks a hallucination. `None` for unlabeled samples.
    pub fn is_hallucination(self) -> Option<bool> {
        match self {
            Category::HallucinatedYes | Category::HallucinatedNo | Category::HallucinationBinary => {
                Some(true)
            }
            Category::AnsweredYes | Category::AnsweredNo | Category::CleanBinary => Some(false),
            Category::Unlabeled => None,
        }
    }

    /// Collapses any labeled category onto the binary pair.
    pub fn binary(self) -> Option<Category> {
        self.is_hallucination().map(|h| {
            if h {
                Category::HallucinationBinary
            } else {
                Category::CleanBinary
            }
        })
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Negative-object cluster a question was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cluster {
    Random,
    Popular,
    Adversarial,
    None,
}

impl Cluster {
    pub const TAGGED: [Cluster; 3] = [Cluster::Random, Cluster::Popular, Cluster::Adversarial];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Cluster::Random,
            1 => Cluster::Popular,
            2 => Cluster::Adversarial,
            3 => Cluster::None,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Cluster::Random => "random",
            Cluster::Popular => "popular",
            Cluster::Adversarial => "adversarial",
            Cluster::None => "none",
        }
    }
}

impl fmt::Display for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Probabilities of the "yes" and "no" answer tokens at the first step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerProbs {
    pub yes: f32,
    pub no: f32,
}

/// One image-question interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub tensor: AttentionTensor,
    pub answer: Answer,
    pub ground_truth: GroundTruth,
    pub category: Category,
    pub cluster: Cluster,
    pub probs: Option<AnswerProbs>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        self.tensor.validate()?;
        if let Some(p) = self.probs {
            for v in [p.yes, p.no] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!(
                        "sample {:?}: probability {v} outside [0, 1]",
                        self.id
                    )));
                }
            }
        }
        if let Ok(expected) = crate::dataset::label_four_way(self.answer, self.ground_truth) {
            let consistent = match self.category {
                Category::HallucinationBinary | Category::CleanBinary => {
                    self.category.binary() == expected.binary()
                }
                Category::Unlabeled => true,
                c => c == expected,
            };
            if !consistent {
                return Err(Error::InvalidInput(format!(
                    "sample {:?}: category {} contradicts answer {:?} / truth {:?}",
                    self.id, self.category, self.answer, self.ground_truth
                )));
            }
        }
        Ok(())
    }
}
