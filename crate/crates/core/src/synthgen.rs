//! Synthetic attention datasets with class-conditional token bumps.
//!
//! Every cell starts as `|N(base_mean, sigma)|` clamped to `[0, 1]`. Each
//! class then raises the attention on a few visual tokens by a bump across
//! all layers and heads (or a layer band), and the result is clamped again.
//!
//! Two optional mechanisms make the classes overlap the way real attention
//! maps do:
//!
//! - `jitter` scales each bump per sample by `max(0, 1 + jitter * z)` with
//!   `z ~ N(0, 1)`, so `delta` is the mean bump rather than an exact one.
//! - `modes` carve out a share of a class that carries a different bump set.
//!   A clean class can include samples that look partly like a hallucination
//!   class, which is what trips a recall-oriented first stage.
//!
//! Generation uses one counter-indexed random stream per sample, so output is
//! identical for any thread count.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{
    Answer, AnswerProbs, AttentionTensor, Category, Cluster, GroundTruth, Sample, TensorShape,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub token: u32,
    pub delta: f32,
}

/// Confidence gap `|p_yes - p_no|` drawn as `N(mean, std)` clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    pub mean: f32,
    pub std: f32,
}

/// A share of a class that carries its own bump set instead of the class's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub fraction: f64,
    pub bumps: Vec<Bump>,
    #[serde(default)]
    pub gap: Option<GapSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub category: Category,
    #[serde(default = "no_cluster")]
    pub cluster: Cluster,
    pub count: usize,
    pub bumps: Vec<Bump>,
    #[serde(default)]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub gap: Option<GapSpec>,
}

fn no_cluster() -> Cluster {
    Cluster::None
}

fn default_base_mean() -> f32 {
    0.05
}

fn default_prefix() -> String {
    "s".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub shape: TensorShape,
    pub classes: Vec<ClassSpec>,
    pub sigma: f32,
    #[serde(default = "default_base_mean")]
    pub base_mean: f32,
    #[serde(default)]
    pub jitter: f32,
    /// Inclusive layer range `[a, b]` the bumps are confined to.
    #[serde(default)]
    pub layer_band: Option<(u32, u32)>,
    /// Rescales hallucination-class counts so they make up this share of
    /// all samples, keeping their relative proportions.
    #[serde(default)]
    pub hallucination_prior: Option<f64>,
    pub seed: u64,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
}

/// Token each four-way class bumps in the standard benchmark.
pub const STANDARD_TOKENS: [(Category, u32); 4] = [
    (Category::AnsweredYes, 5),
    (Category::AnsweredNo, 13),
    (Category::HallucinatedNo, 21),
    (Category::HallucinatedYes, 27),
];

impl SynthSpec {
    /// The standard four-class benchmark: shape (32, 32, 32), single-token
    /// bumps of 0.05 at tokens 5, 13, 21 and 27, sigma 0.01, and class counts
    /// {A_Y: 8000, A_N: 9000, A_YH: 900, A_NH: 2000} (about 15% hallucinations).
    ///
    /// On top of that, bumps jitter by 15% and a tenth of each clean class
    /// carries a 0.55-strength copy of the matching hallucination bump instead
    /// of its own. Without some overlap the classes separate perfectly and
    /// the first stage makes no false detections for a second stage to learn.
    pub fn standard(seed: u64) -> Self {
        let delta = 0.05;
        let bump = |token| vec![Bump { token, delta }];
        let confuser = |token| Mode {
            fraction: 0.1,
            bumps: vec![Bump {
                token,
                delta: 0.55 * delta,
            }],
            gap: Some(GapSpec { mean: 0.45, std: 0.2 }),
        };
        let clean_gap = Some(GapSpec { mean: 0.8, std: 0.15 });
        let halluc_gap = Some(GapSpec { mean: 0.5, std: 0.25 });
        SynthSpec {
            shape: TensorShape::instructblip(),
            classes: vec![
                ClassSpec {
                    category: Category::AnsweredYes,
                    cluster: Cluster::None,
                    count: 8000,
                    bumps: bump(5),
                    modes: vec![confuser(27)],
                    gap: clean_gap,
                },
                ClassSpec {
                    category: Category::AnsweredNo,
                    cluster: Cluster::None,
                    count: 9000,
                    bumps: bump(13),
                    modes: vec![confuser(21)],
                    gap: clean_gap,
                },
                ClassSpec {
                    category: Category::HallucinatedYes,
                    cluster: Cluster::None,
                    count: 900,
                    bumps: bump(27),
                    modes: vec![],
                    gap: halluc_gap,
                },
                ClassSpec {
                    category: Category::HallucinatedNo,
                    cluster: Cluster::None,
                    count: 2000,
                    bumps: bump(21),
                    modes: vec![],
                    gap: halluc_gap,
                },
            ],
            sigma: 0.01,
            base_mean: 0.05,
            jitter: 0.15,
            layer_band: None,
            hallucination_prior: None,
            seed,
            id_prefix: default_prefix(),
        }
    }

    /// Same classes with every count multiplied by `factor` (at least 1 each).
    pub fn scaled(mut self, factor: f64) -> Self {
        for c in &mut self.classes {
            c.count = ((c.count as f64 * factor).round() as usize).max(1);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        self.shape.check().map_err(|e| Error::InvalidSpec(e.to_string()))?;
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.base_mean) {
            return bad(format!("base mean {} outside [0, 1]", self.base_mean));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad(format!("jitter must be non-negative, got {}", self.jitter));
        }
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        if let Some((a, b)) = self.layer_band {
            if a > b || b >= self.shape.layers {
                return bad(format!("layer band {a}:{b} outside 0..{}", self.shape.layers));
            }
        }
        if let Some(p) = self.hallucination_prior {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("hallucination prior {p} outside (0, 1)"));
            }
            let halluc = self
                .classes
                .iter()
                .filter(|c| c.category.is_hallucination() == Some(true))
                .count();
            if halluc == 0 || halluc == self.classes.len() {
                return bad("hallucination prior needs both hallucination and clean classes".into());
            }
        }
        let check_bumps = |bumps: &[Bump]| -> Result<()> {
            for b in bumps {
                if b.token >= self.shape.tokens {
                    return Err(Error::InvalidSpec(format!(
                        "bump token {} outside 0..{}",
                        b.token, self.shape.tokens
                    )));
                }
                if !(b.delta > 0.0 && b.delta.is_finite()) {
                    return Err(Error::InvalidSpec(format!("bump delta {} must be positive", b.delta)));
                }
            }
            Ok(())
        };
        for c in &self.classes {
            if c.count == 0 {
                return bad(format!("class {} has count 0", c.category));
            }
            check_bumps(&c.bumps)?;
            let mut share = 0.0;
            for m in &c.modes {
                if !(0.0..=1.0).contains(&m.fraction) {
                    return bad(format!("mode fraction {} outside [0, 1]", m.fraction));
                }
                share += m.fraction;
                check_bumps(&m.bumps)?;
            }
            if share > 1.0 + 1e-9 {
                return bad(format!("modes of class {} cover more than the class", c.category));
            }
        }
        Ok(())
    }

    /// Class counts after applying the hallucination prior.
    pub fn effective_counts(&self) -> Vec<usize> {
        let counts: Vec<usize> = self.classes.iter().map(|c| c.count).collect();
        let Some(prior) = self.hallucination_prior else {
            return counts;
        };
        let is_h: Vec<bool> = self
            .classes
            .iter()
            .map(|c| c.category.is_hallucination() == Some(true))
            .collect();
        let clean: usize = counts.iter().zip(&is_h).filter(|(_, &h)| !h).map(|(n, _)| n).sum();
        let halluc: usize = counts.iter().zip(&is_h).filter(|(_, &h)| h).map(|(n, _)| n).sum();
        let target = prior / (1.0 - prior) * clean as f64;
        counts
            .iter()
            .zip(&is_h)
            .map(|(&n, &h)| {
                if h {
                    ((n as f64 * target / halluc as f64).round() as usize).max(1)
                } else {
                    n
                }
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn answers_for(category: Category) -> (Answer, GroundTruth) {
    match category {
        Category::AnsweredYes => (Answer::Yes, GroundTruth::Yes),
        Category::AnsweredNo => (Answer::No, GroundTruth::No),
        Category::HallucinatedYes => (Answer::Yes, GroundTruth::No),
        Category::HallucinatedNo => (Answer::No, GroundTruth::Yes),
        _ => (Answer::Other, GroundTruth::NotApplicable),
    }
}

struct Job<'a> {
    index: usize,
    class: &'a ClassSpec,
    bumps: &'a [Bump],
    gap: Option<GapSpec>,
}

/// Generates all samples, class by class in spec order.
pub fn generate(spec: &SynthSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let counts = spec.effective_counts();
    let mut jobs = Vec::with_capacity(counts.iter().sum());
    for (class, &count) in spec.classes.iter().zip(&counts) {
        let mut assigned = 0;
        for m in &class.modes {
            let n = ((m.fraction * count as f64).round() as usize).min(count - assigned);
            for _ in 0..n {
                jobs.push((class, m.bumps.as_slice(), m.gap.or(class.gap)));
            }
            assigned += n;
        }
        for _ in assigned..count {
            jobs.push((class, class.bumps.as_slice(), class.gap));
        }
    }
    let jobs: Vec<Job> = jobs
        .into_iter()
        .enumerate()
        .map(|(index, (class, bumps, gap))| Job {
            index,
            class,
            bumps,
            gap,
        })
        .collect();
    let width = jobs.len().max(1).to_string().len().max(6);
    jobs.par_iter().map(|job| sample_for(spec, job, width)).collect()
}

fn sample_for(spec: &SynthSpec, job: &Job, width: usize) -> Result<Sample> {
    let mut r = rng::indexed(spec.seed, rng::SYNTH, job.index as u64);
    let shape = spec.shape;
    let noise = Normal::new(spec.base_mean, spec.sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut values: Vec<f32> = (0..shape.len())
        .map(|_| noise.sample(&mut r).abs().min(1.0))
        .collect();

    let (l0, l1) = spec.layer_band.unwrap_or((0, shape.layers - 1));
    let std_normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    for b in job.bumps {
        let scale = if spec.jitter > 0.0 {
            (1.0 + spec.jitter * std_normal.sample(&mut r)).max(0.0)
        } else {
            1.0
        };
        let amp = b.delta * scale;
        for layer in l0..=l1 {
            for head in 0..shape.heads {
                let i = shape.index(b.token as usize, layer as usize, head as usize);
                values[i] = (values[i] + amp).clamp(0.0, 1.0);
            }
        }
    }

    let (answer, ground_truth) = answers_for(job.class.category);
    let probs = job.gap.map(|g| {
        let gap = (g.mean + g.std * std_normal.sample(&mut r)).clamp(0.0, 1.0);
        let hi = (1.0 + gap) / 2.0;
        let lo = (1.0 - gap) / 2.0;
        let rest: f32 = r.random_range(0.0..=lo.min(0.02));
        match answer {
            Answer::No => AnswerProbs { yes: lo - rest, no: hi },
            _ => AnswerProbs { yes: hi, no: lo - rest },
        }
    });
    let id = format!("{}{:0width$}", spec.id_prefix, job.index, width = width);
    Ok(Sample {
        id,
        tensor: AttentionTensor::from_raw(shape, values),
        answer,
        ground_truth,
        category: job.class.category,
        cluster: job.class.cluster,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(shape: TensorShape, sigma: f32, delta: f32, count: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            shape,
            classes: vec![
                ClassSpec {
                    category: Category::AnsweredYes,
                    cluster: Cluster::None,
                    count,
                    bumps: vec![Bump { token: 1, delta }],
                    modes: vec![],
                    gap: None,
                },
                ClassSpec {
                    category: Category::HallucinatedYes,
                    cluster: Cluster::None,
                    count,
                    bumps: vec![Bump { token: 3, delta }],
                    modes: vec![],
                    gap: None,
                },
            ],
            sigma,
            base_mean: 0.05,
            jitter: 0.0,
            layer_band: None,
            hallucination_prior: None,
            seed,
            id_prefix: "t".into(),
        }
    }

    #[test]
    fn counts_ids_and_validity() {
        let shape = TensorShape::new(4, 2, 3).unwrap();
        let spec = two_class(shape, 0.01, 0.1, 7, 1);
        let samples = generate(&spec).unwrap();
        assert_eq!(samples.len(), 14);
        assert_eq!(samples.iter().filter(|s| s.category == Category::HallucinatedYes).count(), 7);
        let ids: std::collections::BTreeSet<_> = samples.iter().map(|s| &s.id).collect();
        assert_eq!(ids.len(), 14);
        for s in &samples {
            s.validate().unwrap();
        }
        assert_eq!(samples, generate(&spec).unwrap());
        assert_ne!(samples, generate(&SynthSpec { seed: 2, ..spec }).unwrap());
    }

    #[test]
    fn bump_raises_token_mean_by_delta() {
        let shape = TensorShape::new(32, 8, 8).unwrap();
        let mut spec = SynthSpec::standard(4);
        spec.shape = shape;
        spec.jitter = 0.0;
        spec.classes.iter_mut().for_each(|c| {
            c.count = 200;
            c.modes.clear();
        });
        let samples = generate(&spec).unwrap();
        let mean27 = |cat| {
            let v: Vec<f64> = samples
                .iter()
                .filter(|s| s.category == cat)
                .map(|s| s.tensor.token_mean(27))
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let diff = mean27(Category::HallucinatedYes) - mean27(Category::AnsweredYes);
        let tol = 3.0 * 0.01 / ((shape.layers * shape.heads) as f64).sqrt();
        assert!((diff - 0.05).abs() < tol, "diff {diff}");
    }

    #[test]
    fn modes_take_their_share() {
        let shape = TensorShape::new(8, 1, 1).unwrap();
        let mut spec = two_class(shape, 0.001, 0.5, 10, 0);
        spec.classes[0].modes.push(Mode {
            fraction: 0.3,
            bumps: vec![Bump { token: 6, delta: 0.5 }],
            gap: None,
        });
        let samples = generate(&spec).unwrap();
        let with_mode = samples[..10].iter().filter(|s| s.tensor.get(6, 0, 0) > 0.3).count();
        let with_base = samples[..10].iter().filter(|s| s.tensor.get(1, 0, 0) > 0.3).count();
        assert_eq!((with_mode, with_base), (3, 7));
    }

    #[test]
    fn layer_band_confines_bumps() {
        let shape = TensorShape::new(4, 6, 2).unwrap();
        let mut spec = two_class(shape, 0.001, 0.5, 3, 0);
        spec.layer_band = Some((2, 3));
        let s = &generate(&spec).unwrap()[0];
        for layer in 0..6 {
            let bumped = s.tensor.get(1, layer, 0) > 0.3;
            assert_eq!(bumped, (2..=3).contains(&layer), "layer {layer}");
        }
    }

    #[test]
    fn hallucination_prior_rescales() {
        let shape = TensorShape::new(4, 1, 1).unwrap();
        let mut spec = two_class(shape, 0.01, 0.1, 100, 0);
        spec.hallucination_prior = Some(0.2);
        assert_eq!(spec.effective_counts(), vec![100, 25]);
    }

    #[test]
    fn probabilities_follow_the_answer() {
        let spec = SynthSpec::standard(0).scaled(0.002);
        let mut spec = spec;
        spec.shape = TensorShape::new(32, 1, 1).unwrap();
        for s in generate(&spec).unwrap() {
            let p = s.probs.unwrap();
            assert!(p.yes + p.no <= 1.0 + 1e-6);
            match s.answer {
                Answer::Yes => assert!(p.yes >= p.no),
                Answer::No => assert!(p.no >= p.yes),
                Answer::Other => unreachable!(),
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let shape = TensorShape::new(4, 2, 2).unwrap();
        let base = two_class(shape, 0.01, 0.1, 5, 0);
        let mut s = base.clone();
        s.sigma = 0.0;
        assert!(matches!(generate(&s), Err(Error::InvalidSpec(_))));
        let mut s = base.clone();
        s.classes[0].bumps[0].token = 4;
        assert!(matches!(generate(&s), Err(Error::InvalidSpec(_))));
        let mut s = base.clone();
        s.classes[1].bumps[0].delta = 0.0;
        assert!(matches!(generate(&s), Err(Error::InvalidSpec(_))));
        let mut s = base.clone();
        s.classes[0].count = 0;
        assert!(matches!(generate(&s), Err(Error::InvalidSpec(_))));
        let mut s = base;
        s.layer_band = Some((1, 2));
        assert!(matches!(generate(&s), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SynthSpec::standard(3);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(SynthSpec::from_json(&text).unwrap(), spec);
        let minimal = r#"{"shape":{"tokens":4,"layers":1,"heads":1},"sigma":0.01,"seed":1,
            "classes":[{"category":"A_Y","count":2,"bumps":[{"token":0,"delta":0.1}]},
                       {"category":"A_YH","count":2,"bumps":[{"token":3,"delta":0.1}]}]}"#;
        let s = SynthSpec::from_json(minimal).unwrap();
        assert_eq!(generate(&s).unwrap().len(), 4);
    }
}
