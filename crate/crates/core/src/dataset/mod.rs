//! Training labels, class balancing, train/test splitting, and
//! POPE-style question generation.

mod pope;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Answer, Category, GroundTruth};

pub use pope::{
    gen_pope_clusters, gen_pope_questions, read_questions_jsonl, select_negatives,
    write_questions_jsonl, AnnotationSet, ImageObjects, Polarity, QuestionRecord,
};

/// Maps a yes/no answer and its ground truth onto the four answer states.
pub fn label_four_way(answer: Answer, ground_truth: GroundTruth) -> Result<Category> {
    Ok(match (answer, ground_truth) {
        (Answer::Yes, GroundTruth::Yes) => Category::AnsweredYes,
        (Answer::No, GroundTruth::No) => Category::AnsweredNo,
        (Answer::Yes, GroundTruth::No) => Category::HallucinatedYes,
        (Answer::No, GroundTruth::Yes) => Category::HallucinatedNo,
        (a, g) => {
            return Err(Error::InvalidInput(format!(
                "four-way labeling needs yes/no on both sides, got {a:?} / {g:?}"
            )))
        }
    })
}

/// Inverse-count sampling weights: `weight(c) = 1 / count(c)`.
pub fn compute_sampling_weights<K>(counts: &BTreeMap<K, u64>) -> Result<BTreeMap<K, f64>>
where
    K: Ord + Clone + Display,
{
    counts
        .iter()
        .map(|(k, &n)| {
            if n == 0 {
                Err(Error::EmptyCategory(k.to_string()))
            } else {
                Ok((k.clone(), 1.0 / n as f64))
            }
        })
        .collect()
}

/// Draws sample indices with probability proportional to their class weight.
///
/// A draw first picks a class with probability `weight(c) * count(c)`
/// (normalized), then a member of that class uniformly, which gives each
/// sample probability proportional to `weight(c)`.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    members: Vec<Vec<usize>>,
    classes: WeightedIndex<f64>,
    class_ids: Vec<usize>,
}

impl WeightedSampler {
    /// `labels[i]` is the class of sample `i`; `weights[c]` the class weight.
    /// Every class with positive weight must have at least one sample.
    pub fn new(labels: &[usize], weights: &[f64]) -> Result<Self> {
        let mut members = vec![Vec::new(); weights.len()];
        for (i, &l) in labels.iter().enumerate() {
            let slot = members.get_mut(l).ok_or(Error::BadLabel {
                label: l,
                classes: weights.len(),
            })?;
            slot.push(i);
        }
        let mut mass = Vec::new();
        let mut class_ids = Vec::new();
        let mut kept = Vec::new();
        for (c, (m, &w)) in members.into_iter().zip(weights).enumerate() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!("class weight {w} for class {c}")));
            }
            if w == 0.0 {
                continue;
            }
            if m.is_empty() {
                return Err(Error::EmptyClass(c.to_string()));
            }
            mass.push(w * m.len() as f64);
            class_ids.push(c);
            kept.push(m);
        }
        let classes = WeightedIndex::new(&mass)
            .map_err(|e| Error::InvalidConfig(format!("sampling weights: {e}")))?;
        Ok(WeightedSampler {
            members: kept,
            classes,
            class_ids,
        })
    }

    /// Sampler with inverse-count weights computed from the labels.
    pub fn balanced(labels: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0u64; classes];
        for &l in labels {
            *counts.get_mut(l).ok_or(Error::BadLabel { label: l, classes })? += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(c.to_string()));
        }
        let weights: Vec<f64> = counts.iter().map(|&n| 1.0 / n as f64).collect();
        Self::new(labels, &weights)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let bucket = self.classes.sample(rng);
        let m = &self.members[bucket];
        m[rng.random_range(0..m.len())]
    }

    /// Probability that a single draw lands in each class.
    pub fn class_probabilities(&self, classes: usize) -> Vec<f64> {
        let mut p = vec![0.0; classes];
        let total: f64 = self.classes.total_weight();
        for (bucket, &c) in self.class_ids.iter().enumerate() {
            p[c] = self.classes.weight(bucket).unwrap_or(0.0) / total;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Splits image ids into train and test. Reserved ids always land in test;
/// the test side has `n - round(ratio * n)` ids. Both outputs are sorted.
pub fn split_train_test(
    image_ids: &[String],
    reserved_test_ids: &[String],
    ratio: f64,
    seed: u64,
) -> Result<Split> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidInput(format!("split ratio {ratio} outside [0, 1]")));
    }
    let all: BTreeSet<&String> = image_ids.iter().collect();
    if all.len() != image_ids.len() {
        return Err(Error::InvalidInput("duplicate image ids".into()));
    }
    let reserved: BTreeSet<&String> = reserved_test_ids.iter().collect();
    if let Some(missing) = reserved.iter().find(|id| !all.contains(*id)) {
        return Err(Error::InvalidInput(format!(
            "reserved id {missing:?} is not among the image ids"
        )));
    }
    let n = all.len();
    let train_size = (ratio * n as f64).round() as usize;
    let test_size = n - train_size;
    if reserved.len() > test_size {
        return Err(Error::ReservedTooLarge {
            reserved: reserved.len(),
            test_size,
        });
    }

    let mut pool: Vec<&String> = all.iter().copied().filter(|id| !reserved.contains(id)).collect();
    pool.shuffle(&mut rng::stream(seed, rng::SPLIT));
    let extra = test_size - reserved.len();
    let mut test: Vec<String> = reserved.iter().map(|s| s.to_string()).collect();
    test.extend(pool[..extra].iter().map(|s| s.to_string()));
    let mut train: Vec<String> = pool[extra..].iter().map(|s| s.to_string()).collect();
    test.sort();
    train.sort();
    Ok(Split { train, test })
}
