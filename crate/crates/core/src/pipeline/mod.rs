//! The two-stage detector.
//!
//! DHCP-d: a four-way first stage (`A_Y`, `A_N`, `A_YH`, `A_NH`) and one
//! binary refiner per hallucination class. DHCP-g: a binary first stage and
//! a single binary refiner. A sample is a hallucination only when the first
//! stage flags it and the refiner confirms the flag.
//!
//! Refiners are trained on the first stage's own detections: samples it
//! assigns to a hallucination class, labelled by whether that assignment was
//! right. Class index 0 of a refiner is a false detection, 1 a true one.

mod bundle;
mod gap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, ClassificationReport};
use crate::mlp::{self, EpochLog, Forward, MlpModel, TrainConfig, Trained, TrainingSet};
use crate::tensor::{Answer, Category, Cluster, Sample, Shard, TensorShape};

pub use bundle::{load_bundle, save_bundle, BundleManifest, BUNDLE_FILE};
pub use gap::{aggregate_gap_stats, confidence_gap, GapGroup, GapStats, GAP_BIN_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "DHCP_D")]
    DhcpD,
    #[serde(rename = "DHCP_G")]
    DhcpG,
}

impl Variant {
    /// First-stage classes in output order.
    pub fn stage1_classes(self) -> Vec<Category> {
        match self {
            Variant::DhcpD => Category::FOUR_WAY.to_vec(),
            Variant::DhcpG => vec![Category::CleanBinary, Category::HallucinationBinary],
        }
    }

    /// First-stage label of a sample.
    pub fn label(self, s: &Sample) -> Result<usize> {
        let classes = self.stage1_classes();
        let category = match self {
            Variant::DhcpD => s.category,
            Variant::DhcpG => s.category.binary().unwrap_or(s.category),
        };
        classes.iter().position(|&c| c == category).ok_or_else(|| {
            Error::InvalidInput(format!(
                "sample {:?} has category {} which {:?} cannot train on",
                s.id, s.category, self
            ))
        })
    }
}

/// Refiner class names, by output index.
pub const STAGE2_CLASSES: [&str; 2] = ["false_detection", "true_detection"];

/// Source-classifier classes, by output index.
pub const SOURCE_CLASSES: [Cluster; 3] = [Cluster::Random, Cluster::Popular, Cluster::Adversarial];

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorBundle {
    pub variant: Variant,
    pub shape: TensorShape,
    pub c1: MlpModel,
    pub c2_yh: Option<MlpModel>,
    pub c2_nh: Option<MlpModel>,
    pub c2_g: Option<MlpModel>,
}

impl DetectorBundle {
    pub fn one_stage(variant: Variant, shape: TensorShape, c1: MlpModel) -> Result<Self> {
        let b = DetectorBundle {
            variant,
            shape,
            c1,
            c2_yh: None,
            c2_nh: None,
            c2_g: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidBundle(m));
        let input = self.shape.len();
        let expected = self.variant.stage1_classes().len();
        if self.c1.input_dim() != input || self.c1.classes() != expected {
            return bad(format!(
                "c1 is {}->{}, shape {} needs {input}->{expected}",
                self.c1.input_dim(),
                self.c1.classes(),
                self.shape
            ));
        }
        for (name, m) in self.refiners() {
            if m.input_dim() != input || m.classes() != 2 {
                return bad(format!("{name} is {}->{}, needs {input}->2", m.input_dim(), m.classes()));
            }
        }
        match self.variant {
            Variant::DhcpD if self.c2_g.is_some() => bad("DHCP_D bundle carries c2_g".into()),
            Variant::DhcpD if self.c2_yh.is_some() != self.c2_nh.is_some() => {
                bad("DHCP_D needs both refiners or neither".into())
            }
            Variant::DhcpG if self.c2_yh.is_some() || self.c2_nh.is_some() => {
                bad("DHCP_G bundle carries four-way refiners".into())
            }
            _ => Ok(()),
        }
    }

    pub fn refiners(&self) -> impl Iterator<Item = (&'static str, &MlpModel)> {
        [("c2_yh", &self.c2_yh), ("c2_nh", &self.c2_nh), ("c2_g", &self.c2_g)]
            .into_iter()
            .filter_map(|(n, m)| m.as_ref().map(|m| (n, m)))
    }

    pub fn is_two_stage(&self) -> bool {
        match self.variant {
            Variant::DhcpD => self.c2_yh.is_some() && self.c2_nh.is_some(),
            Variant::DhcpG => self.c2_g.is_some(),
        }
    }

    /// The same bundle with the refiners dropped.
    pub fn without_refiners(&self) -> Self {
        DetectorBundle {
            c2_yh: None,
            c2_nh: None,
            c2_g: None,
            ..self.clone()
        }
    }

    /// Refiner consulted when the first stage predicts `class`.
    fn refiner_for(&self, class: Category) -> Option<&MlpModel> {
        match class {
            Category::HallucinatedYes => self.c2_yh.as_ref(),
            Category::HallucinatedNo => self.c2_nh.as_ref(),
            Category::HallucinationBinary => self.c2_g.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub hallucination: bool,
    pub stage1_class: Category,
    pub stage1_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mitigated_answer: Option<Answer>,
}

/// Probability vectors of one verdict line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictProbs {
    pub stage1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2: Option<Vec<f64>>,
}

/// One line of a verdict file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub id: String,
    pub stage1_class: Category,
    pub hallucination: bool,
    pub probs: VerdictProbs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mitigated_answer: Option<Answer>,
}

impl VerdictRecord {
    pub fn new(id: &str, v: &Verdict) -> Self {
        VerdictRecord {
            id: id.to_string(),
            stage1_class: v.stage1_class,
            hallucination: v.hallucination,
            probs: VerdictProbs {
                stage1: v.stage1_probs.clone(),
                stage2: v.stage2_probs.clone(),
            },
            mitigated_answer: v.mitigated_answer,
        }
    }

    pub fn verdict(&self) -> Verdict {
        Verdict {
            hallucination: self.hallucination,
            stage1_class: self.stage1_class,
            stage1_probs: self.probs.stage1.clone(),
            stage2_probs: self.probs.stage2.clone(),
            mitigated_answer: self.mitigated_answer,
        }
    }
}

pub fn write_verdicts_jsonl<W: std::io::Write>(mut w: W, records: &[VerdictRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<verdicts>", e))?;
    }
    w.flush().map_err(|e| Error::io("<verdicts>", e))
}

pub fn read_verdicts_jsonl(text: &str) -> Result<Vec<VerdictRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Serves one flattened tensor.
pub fn serve(bundle: &DetectorBundle, input: &[f32]) -> Result<Verdict> {
    Ok(serve_batch(bundle, &[input])?.pop().expect("one verdict"))
}

/// Serves many inputs; output order follows input order.
pub fn serve_batch(bundle: &DetectorBundle, inputs: &[&[f32]]) -> Result<Vec<Verdict>> {
    let classes = bundle.variant.stage1_classes();
    let first = bundle.c1.forward_batch(inputs)?;
    let mut verdicts: Vec<Verdict> = first
        .into_iter()
        .map(|f| {
            let stage1_class = classes[f.class()];
            Verdict {
                hallucination: stage1_class.is_hallucination() == Some(true),
                stage1_class,
                stage1_probs: f.probs,
                stage2_probs: None,
                mitigated_answer: None,
            }
        })
        .collect();
    if !bundle.is_two_stage() {
        return Ok(verdicts);
    }
    for &class in &classes {
        let Some(refiner) = bundle.refiner_for(class) else {
            continue;
        };
        let picked: Vec<usize> = (0..verdicts.len())
            .filter(|&i| verdicts[i].stage1_class == class)
            .collect();
        let rows: Vec<&[f32]> = picked.iter().map(|&i| inputs[i]).collect();
        for (i, f) in picked.into_iter().zip(refiner.forward_batch(&rows)?) {
            verdicts[i].hallucination = f.class() == 1;
            verdicts[i].stage2_probs = Some(f.probs);
        }
    }
    Ok(verdicts)
}

/// Serves samples and fills in the flipped answer for yes/no questions.
pub fn serve_samples(bundle: &DetectorBundle, samples: &[&Sample]) -> Result<Vec<Verdict>> {
    check_shape(bundle.shape, samples)?;
    let inputs: Vec<&[f32]> = samples.iter().map(|s| s.tensor.flatten()).collect();
    let mut verdicts = serve_batch(bundle, &inputs)?;
    for (v, s) in verdicts.iter_mut().zip(samples) {
        v.mitigated_answer = mitigate_flip(s.answer, v).ok();
    }
    Ok(verdicts)
}

/// Flips a yes/no answer the detector calls a hallucination.
pub fn mitigate_flip(answer: Answer, verdict: &Verdict) -> Result<Answer> {
    let flipped = answer.flipped().ok_or(Error::NotBinaryAnswer)?;
    Ok(if verdict.hallucination { flipped } else { answer })
}

fn check_shape(shape: TensorShape, samples: &[&Sample]) -> Result<()> {
    for s in samples {
        if s.tensor.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_string(),
                found: s.tensor.shape().to_string(),
            });
        }
    }
    Ok(())
}

/// All samples of several shards, which must share one shape.
pub fn union(shards: &[Shard]) -> Result<(TensorShape, Vec<&Sample>)> {
    let first = shards
        .first()
        .ok_or_else(|| Error::InvalidInput("no shards given".into()))?;
    for s in shards {
        if s.shape != first.shape {
            return Err(Error::ShapeMismatch {
                expected: first.shape.to_string(),
                found: s.shape.to_string(),
            });
        }
    }
    Ok((first.shape, shards.iter().flat_map(|s| &s.samples).collect()))
}

fn fit(
    samples: &[&Sample],
    labels: Vec<usize>,
    classes: usize,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Trained> {
    let inputs = samples.iter().map(|s| s.tensor.flatten()).collect();
    let data = TrainingSet::new(inputs, labels, classes)?;
    mlp::train_with(&data, cfg, on_epoch)
}

fn check_uniform_shape(samples: &[&Sample]) -> Result<()> {
    match samples.first() {
        Some(s) => check_shape(s.tensor.shape(), samples),
        None => Err(Error::InvalidInput("no training samples".into())),
    }
}

/// Trains the first stage on the union of all given samples.
pub fn train_stage1(
    samples: &[&Sample],
    variant: Variant,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Trained> {
    check_uniform_shape(samples)?;
    let labels = samples.iter().map(|s| variant.label(s)).collect::<Result<Vec<_>>>()?;
    let classes = variant.stage1_classes();
    let named = |i: usize| classes[i].name().to_string();
    fit(samples, labels, classes.len(), cfg, on_epoch).map_err(|e| match e {
        Error::EmptyClass(c) => Error::EmptyClass(c.parse().map(named).unwrap_or(c)),
        e => e,
    })
}

/// First-stage detections on the samples they were computed from, split by
/// whether each was right. Entries are indices into that sample list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub yh_true: Vec<usize>,
    pub yh_false: Vec<usize>,
    pub nh_true: Vec<usize>,
    pub nh_false: Vec<usize>,
    /// DHCP-g detections.
    pub g_true: Vec<usize>,
    pub g_false: Vec<usize>,
}

/// Runs a model over samples.
pub fn predict_all(model: &MlpModel, samples: &[&Sample]) -> Result<Vec<Forward>> {
    let inputs: Vec<&[f32]> = samples.iter().map(|s| s.tensor.flatten()).collect();
    model.forward_batch(&inputs)
}

/// Splits the first stage's hallucination detections by correctness.
pub fn partition_from_predictions(
    variant: Variant,
    predicted: &[usize],
    samples: &[&Sample],
) -> Result<Partition> {
    if predicted.len() != samples.len() {
        return Err(Error::LengthMismatch {
            expected: samples.len(),
            actual: predicted.len(),
        });
    }
    let classes = variant.stage1_classes();
    let mut p = Partition::default();
    for (i, (&pred, s)) in predicted.iter().zip(samples).enumerate() {
        let truth = classes[variant.label(s)?];
        let correct = truth == classes[pred];
        let side = match (classes[pred], correct) {
            (Category::HallucinatedYes, true) => &mut p.yh_true,
            (Category::HallucinatedYes, false) => &mut p.yh_false,
            (Category::HallucinatedNo, true) => &mut p.nh_true,
            (Category::HallucinatedNo, false) => &mut p.nh_false,
            (Category::HallucinationBinary, true) => &mut p.g_true,
            (Category::HallucinationBinary, false) => &mut p.g_false,
            _ => continue,
        };
        side.push(i);
    }
    Ok(p)
}

pub fn partition_stage2(c1: &MlpModel, variant: Variant, samples: &[&Sample]) -> Result<Partition> {
    partition_from_predictions(variant, &classify(c1, samples)?, samples)
}

/// Trains a refiner on true detections (class 1) against false ones (class 0).
pub fn train_refiner(
    name: &str,
    samples: &[&Sample],
    true_idx: &[usize],
    false_idx: &[usize],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Trained> {
    if true_idx.is_empty() {
        return Err(Error::EmptyClass(format!("{name} true detections")));
    }
    if false_idx.is_empty() {
        return Err(Error::EmptyClass(format!("{name} false detections")));
    }
    let rows: Vec<&Sample> = false_idx.iter().chain(true_idx).map(|&i| samples[i]).collect();
    let labels = std::iter::repeat_n(0, false_idx.len())
        .chain(std::iter::repeat_n(1, true_idx.len()))
        .collect();
    fit(&rows, labels, 2, cfg, on_epoch)
}

/// Trains `c2_yh` and `c2_nh` from a DHCP-d partition.
pub fn train_stage2(
    samples: &[&Sample],
    partition: &Partition,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&str, &EpochLog),
) -> Result<(Trained, Trained)> {
    let yh = train_refiner(
        "c2_yh",
        samples,
        &partition.yh_true,
        &partition.yh_false,
        cfg,
        &mut |e| on_epoch("c2_yh", e),
    )?;
    let nh = train_refiner(
        "c2_nh",
        samples,
        &partition.nh_true,
        &partition.nh_false,
        cfg,
        &mut |e| on_epoch("c2_nh", e),
    )?;
    Ok((yh, nh))
}

/// Trains the DHCP-g refiner from a DHCP-g partition.
pub fn train_stage2_g(
    samples: &[&Sample],
    partition: &Partition,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Trained> {
    train_refiner("c2_g", samples, &partition.g_true, &partition.g_false, cfg, on_epoch)
}

/// Trains a full DHCP-d bundle: the first stage, its partition of the same
/// training samples, and both refiners.
pub fn train_dhcp_d(
    samples: &[&Sample],
    stage1: &TrainConfig,
    stage2: &TrainConfig,
    on_epoch: &mut dyn FnMut(&str, &EpochLog),
) -> Result<(DetectorBundle, Partition)> {
    let c1 = train_stage1(samples, Variant::DhcpD, stage1, &mut |e| on_epoch("c1", e))?.model;
    let partition = partition_stage2(&c1, Variant::DhcpD, samples)?;
    let (yh, nh) = train_stage2(samples, &partition, stage2, on_epoch)?;
    let bundle = DetectorBundle {
        c2_yh: Some(yh.model),
        c2_nh: Some(nh.model),
        ..DetectorBundle::one_stage(Variant::DhcpD, samples[0].tensor.shape(), c1)?
    };
    bundle.validate()?;
    Ok((bundle, partition))
}

/// Trains a full DHCP-g bundle.
pub fn train_dhcp_g(
    samples: &[&Sample],
    stage1: &TrainConfig,
    stage2: &TrainConfig,
    on_epoch: &mut dyn FnMut(&str, &EpochLog),
) -> Result<(DetectorBundle, Partition)> {
    let c1 = train_stage1(samples, Variant::DhcpG, stage1, &mut |e| on_epoch("c1", e))?.model;
    let partition = partition_stage2(&c1, Variant::DhcpG, samples)?;
    let g = train_stage2_g(samples, &partition, stage2, &mut |e| on_epoch("c2_g", e))?;
    let bundle = DetectorBundle {
        c2_g: Some(g.model),
        ..DetectorBundle::one_stage(Variant::DhcpG, samples[0].tensor.shape(), c1)?
    };
    Ok((bundle, partition))
}

/// Source label of a hallucination sample.
pub fn source_label(s: &Sample) -> Result<usize> {
    if s.category.is_hallucination() != Some(true) {
        return Err(Error::InvalidInput(format!(
            "sample {:?} is not a hallucination ({})",
            s.id, s.category
        )));
    }
    SOURCE_CLASSES
        .iter()
        .position(|&c| c == s.cluster)
        .ok_or_else(|| Error::InvalidInput(format!("sample {:?} has no cluster tag", s.id)))
}

/// Trains the three-way random/popular/adversarial classifier.
pub fn train_source_classifier(
    samples: &[&Sample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Trained> {
    check_uniform_shape(samples)?;
    let labels = samples.iter().map(|s| source_label(s)).collect::<Result<Vec<_>>>()?;
    fit(samples, labels, 3, cfg, on_epoch).map_err(|e| match e {
        Error::EmptyClass(c) => Error::EmptyClass(
            c.parse::<usize>()
                .map(|i| SOURCE_CLASSES[i].name().to_string())
                .unwrap_or(c),
        ),
        e => e,
    })
}

pub fn source_class_names() -> Vec<String> {
    SOURCE_CLASSES.iter().map(|c| c.name().to_string()).collect()
}

/// Binary hallucination report over verdicts, classes `clean` and
/// `hallucination`.
pub fn hallucination_report(samples: &[&Sample], verdicts: &[Verdict]) -> Result<ClassificationReport> {
    if samples.len() != verdicts.len() {
        return Err(Error::LengthMismatch {
            expected: samples.len(),
            actual: verdicts.len(),
        });
    }
    let truths = samples
        .iter()
        .map(|s| {
            s.category
                .is_hallucination()
                .map(usize::from)
                .ok_or_else(|| Error::InvalidInput(format!("sample {:?} is unlabeled", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<usize> = verdicts.iter().map(|v| usize::from(v.hallucination)).collect();
    let cm = metrics::confusion(&truths, &preds, &["clean".to_string(), "hallucination".to_string()])?;
    Ok(metrics::report(&cm))
}

/// First-stage report over the variant's own classes.
pub fn stage1_report(
    variant: Variant,
    samples: &[&Sample],
    verdicts: &[Verdict],
) -> Result<ClassificationReport> {
    let classes = variant.stage1_classes();
    let truths = samples.iter().map(|s| variant.label(s)).collect::<Result<Vec<_>>>()?;
    let preds: Vec<usize> = verdicts
        .iter()
        .map(|v| classes.iter().position(|&c| c == v.stage1_class).unwrap_or(usize::MAX))
        .collect();
    let names: Vec<String> = classes.iter().map(|c| c.name().to_string()).collect();
    Ok(metrics::report(&metrics::confusion(&truths, &preds, &names)?))
}

/// Predicted class indices of a model over samples.
pub fn classify(model: &MlpModel, samples: &[&Sample]) -> Result<Vec<usize>> {
    Ok(predict_all(model, samples)?.iter().map(Forward::class).collect())
}

#[cfg(test)]
mod tests;
