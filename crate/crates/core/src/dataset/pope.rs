//! POPE-style existence questions built from object annotations.
//!
//! For each image, `k` positive questions ask about present objects and `k`
//! negative questions ask about absent ones. The negative cluster decides
//! which absent objects are asked about:
//!
//! - `random`: uniform over absent objects,
//! - `popular`: absent objects most frequent across the whole dataset,
//! - `adversarial`: absent objects whose co-occurrence counts with the image's
//!   present objects sum highest.
//!
//! Ties in the ranked clusters break by object name.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Cluster;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageObjects {
    pub image_id: String,
    pub objects: BTreeSet<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Num(u64),
    Text(String),
}

#[derive(Deserialize)]
struct RawImage {
    image_id: RawId,
    objects: Vec<String>,
}

/// Images with their object sets plus derived dataset statistics.
#[derive(Debug, Clone)]
pub struct AnnotationSet {
    images: Vec<ImageObjects>,
    frequency: BTreeMap<String, u64>,
    cooccurrence: BTreeMap<(String, String), u64>,
}

impl AnnotationSet {
    /// Builds the set, sorting images by id and deriving object frequency
    /// (images containing the object) and pairwise co-occurrence.
    pub fn from_images(mut images: Vec<ImageObjects>) -> Result<Self> {
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        if let Some(w) = images.windows(2).find(|w| w[0].image_id == w[1].image_id) {
            return Err(Error::InvalidInput(format!("duplicate image id {:?}", w[0].image_id)));
        }
        let mut frequency = BTreeMap::new();
        let mut cooccurrence = BTreeMap::new();
        for img in &images {
            for a in &img.objects {
                *frequency.entry(a.clone()).or_insert(0) += 1;
                for b in img.objects.range::<String, _>((
                    std::ops::Bound::Excluded(a),
                    std::ops::Bound::Unbounded,
                )) {
                    *cooccurrence.entry((a.clone(), b.clone())).or_insert(0) += 1;
                }
            }
        }
        Ok(AnnotationSet {
            images,
            frequency,
            cooccurrence,
        })
    }

    /// Parses the JSON form `[{"image_id": .., "objects": [..]}, ..]`.
    /// Numeric ids are accepted and kept as their decimal text.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vec<RawImage> = serde_json::from_str(text)?;
        Self::from_images(
            raw.into_iter()
                .map(|r| ImageObjects {
                    image_id: match r.image_id {
                        RawId::Num(n) => n.to_string(),
                        RawId::Text(s) => s,
                    },
                    objects: r.objects.into_iter().collect(),
                })
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn images(&self) -> &[ImageObjects] {
        &self.images
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageObjects> {
        self.images
            .binary_search_by(|img| img.image_id.as_str().cmp(image_id))
            .ok()
            .map(|i| &self.images[i])
    }

    /// Every object name in the dataset, sorted.
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.frequency.keys().map(String::as_str)
    }

    pub fn frequency(&self, object: &str) -> u64 {
        self.frequency.get(object).copied().unwrap_or(0)
    }

    pub fn cooccurrence(&self, a: &str, b: &str) -> u64 {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.cooccurrence
            .get(&(key.0.to_string(), key.1.to_string()))
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub image_id: String,
    pub object: String,
    pub polarity: Polarity,
    pub cluster: Cluster,
    #[serde(rename = "text")]
    pub template_text: String,
}

impl QuestionRecord {
    fn new(image_id: &str, object: &str, polarity: Polarity, cluster: Cluster) -> Self {
        QuestionRecord {
            image_id: image_id.to_string(),
            object: object.to_string(),
            polarity,
            cluster,
            template_text: question_text(object),
        }
    }
}

fn question_text(object: &str) -> String {
    let article = match object.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    };
    format!("Is there {article} {object} in the image?")
}

/// Top `k` of `candidates` by descending score, ties by name.
fn top_k<'a>(candidates: &[&'a str], k: usize, score: impl Fn(&str) -> u64) -> Vec<&'a str> {
    let mut ranked: Vec<(u64, &str)> = candidates.iter().map(|&c| (score(c), c)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
    ranked.into_iter().take(k).map(|(_, c)| c).collect()
}

/// Absent objects chosen as negatives for one image, in selection order.
///
/// `index` is the image's position in the annotation set; it keys the random
/// stream so each image's draw is independent of every other image.
pub fn select_negatives<'a>(
    ann: &'a AnnotationSet,
    image: &ImageObjects,
    cluster: Cluster,
    k: usize,
    seed: u64,
    index: u64,
) -> Result<Vec<&'a str>> {
    let absent: Vec<&str> = ann.vocabulary().filter(|o| !image.objects.contains(*o)).collect();
    if absent.len() < k {
        return Err(Error::InsufficientAbsentObjects(image.image_id.clone()));
    }
    Ok(match cluster {
        Cluster::Random => {
            let mut r = rng::indexed(seed, "questions/random", index);
            absent.choose_multiple(&mut r, k).copied().collect()
        }
        Cluster::Popular => top_k(&absent, k, |o| ann.frequency(o)),
        Cluster::Adversarial => top_k(&absent, k, |o| {
            image.objects.iter().map(|p| ann.cooccurrence(p, o)).sum()
        }),
        Cluster::None => {
            return Err(Error::InvalidInput("question cluster must be random, popular or adversarial".into()))
        }
    })
}

fn image_questions(
    ann: &AnnotationSet,
    index: usize,
    cluster: Cluster,
    k: usize,
    seed: u64,
) -> Result<Vec<QuestionRecord>> {
    let image = &ann.images[index];
    if image.objects.len() < k {
        return Err(Error::InsufficientObjects(image.image_id.clone()));
    }
    let present: Vec<&String> = image.objects.iter().collect();
    let mut r = rng::indexed(seed, "questions/positive", index as u64);
    let mut positives: Vec<&String> = present.choose_multiple(&mut r, k).copied().collect();
    positives.sort();
    let mut negatives = select_negatives(ann, image, cluster, k, seed, index as u64)?;
    negatives.sort();

    let id = &image.image_id;
    Ok(positives
        .into_iter()
        .map(|o| QuestionRecord::new(id, o, Polarity::Positive, cluster))
        .chain(
            negatives
                .into_iter()
                .map(|o| QuestionRecord::new(id, o, Polarity::Negative, cluster)),
        )
        .collect())
}

/// Generates `k` positive and `k` negative questions per image for one
/// cluster. Output order: image id, then polarity, then object name.
pub fn gen_pope_questions(
    ann: &AnnotationSet,
    cluster: Cluster,
    per_image_k: usize,
    seed: u64,
) -> Result<Vec<QuestionRecord>> {
    let per_image: Vec<Vec<QuestionRecord>> = (0..ann.images.len())
        .into_par_iter()
        .map(|i| image_questions(ann, i, cluster, per_image_k, seed))
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Generates all three clusters. With `dedupe`, a negative question
/// (same image and object) selected by more than one cluster is dropped from
/// every cluster, leaving each cluster only its own negatives.
pub fn gen_pope_clusters(
    ann: &AnnotationSet,
    per_image_k: usize,
    seed: u64,
    dedupe: bool,
) -> Result<BTreeMap<Cluster, Vec<QuestionRecord>>> {
    let mut out = BTreeMap::new();
    for cluster in Cluster::TAGGED {
        out.insert(cluster, gen_pope_questions(ann, cluster, per_image_k, seed)?);
    }
    if dedupe {
        let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
        for q in out.values().flatten().filter(|q| q.polarity == Polarity::Negative) {
            *seen.entry((q.image_id.clone(), q.object.clone())).or_insert(0) += 1;
        }
        for records in out.values_mut() {
            records.retain(|q| {
                q.polarity == Polarity::Positive
                    || seen[&(q.image_id.clone(), q.object.clone())] == 1
            });
        }
    }
    Ok(out)
}

pub fn write_questions_jsonl(path: impl AsRef<Path>, records: &[QuestionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_questions_jsonl(path: impl AsRef<Path>) -> Result<Vec<QuestionRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(id: &str, objects: &[&str]) -> ImageObjects {
        ImageObjects {
            image_id: id.to_string(),
            objects: objects.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn statistics_are_derived() {
        let ann = AnnotationSet::from_json(
            r#"[{"image_id": 1, "objects": ["cat", "dog"]},
                {"image_id": "2", "objects": ["dog", "car"]}]"#,
        )
        .unwrap();
        assert_eq!(ann.frequency("dog"), 2);
        assert_eq!(ann.frequency("cat"), 1);
        assert_eq!(ann.cooccurrence("dog", "cat"), 1);
        assert_eq!(ann.cooccurrence("cat", "car"), 0);
        assert_eq!(ann.vocabulary().collect::<Vec<_>>(), ["car", "cat", "dog"]);
        assert!(ann.image("2").is_some());
    }

    #[test]
    fn only_choice_case() {
        let mut images = vec![img("target", &["cat"])];
        images.extend((0..5).map(|i| img(&format!("dog{i}"), &["dog"])));
        let ann = AnnotationSet::from_images(images).unwrap();
        assert_eq!(ann.frequency("dog"), 5);
        let qs = gen_pope_questions(&ann, Cluster::Popular, 1, 0).unwrap();
        let target: Vec<_> = qs.iter().filter(|q| q.image_id == "target").collect();
        assert_eq!(target.len(), 2);
        assert_eq!((target[0].object.as_str(), target[0].polarity), ("cat", Polarity::Positive));
        assert_eq!((target[1].object.as_str(), target[1].polarity), ("dog", Polarity::Negative));
    }

    #[test]
    fn popular_picks_most_frequent_absent() {
        let mut images = vec![img("target", &["a"])];
        for (obj, n) in [("b", 10), ("c", 5), ("d", 1)] {
            images.extend((0..n).map(|i| img(&format!("{obj}{i:02}"), &[obj])));
        }
        let ann = AnnotationSet::from_images(images).unwrap();
        let target = ann.image("target").unwrap();
        let neg = select_negatives(&ann, target, Cluster::Popular, 2, 0, 0).unwrap();
        assert_eq!(neg, ["b", "c"]);
        // a single present object cannot supply two positives
        assert!(matches!(
            gen_pope_questions(&ann, Cluster::Popular, 2, 0),
            Err(Error::InsufficientObjects(_))
        ));
    }

    #[test]
    fn adversarial_picks_strongest_cooccurrence() {
        let mut images = vec![img("target", &["a"])];
        for (obj, n) in [("b", 9), ("c", 2), ("d", 7)] {
            images.extend((0..n).map(|i| img(&format!("{obj}{i:02}"), &["a", obj])));
        }
        let ann = AnnotationSet::from_images(images).unwrap();
        let target = ann.image("target").unwrap();
        let mut neg = select_negatives(&ann, target, Cluster::Adversarial, 2, 0, 0).unwrap();
        neg.sort();
        assert_eq!(neg, ["b", "d"]);
    }

    #[test]
    fn ties_break_by_name() {
        let ann = AnnotationSet::from_images(vec![
            img("t", &["a"]),
            img("x", &["z", "y"]),
            img("w", &["m"]),
        ])
        .unwrap();
        let t = ann.image("t").unwrap();
        assert_eq!(select_negatives(&ann, t, Cluster::Popular, 2, 0, 0).unwrap(), ["m", "y"]);
    }

    #[test]
    fn too_few_absent_objects() {
        let ann = AnnotationSet::from_images(vec![img("t", &["a", "b"]), img("u", &["a", "c"])]).unwrap();
        assert!(matches!(
            gen_pope_questions(&ann, Cluster::Random, 2, 0),
            Err(Error::InsufficientAbsentObjects(_))
        ));
    }

    #[test]
    fn question_template() {
        assert_eq!(question_text("apple"), "Is there an apple in the image?");
        assert_eq!(question_text("dog"), "Is there a dog in the image?");
        assert_eq!(question_text("umbrella"), "Is there an umbrella in the image?");
    }

    #[test]
    fn random_cluster_is_seeded() {
        let images: Vec<_> = (0..20)
            .map(|i| img(&format!("i{i:02}"), &["p", "q", "r"]))
            .chain([img("v", &["a", "b", "c", "d", "e", "f", "g", "h"])])
            .collect();
        let ann = AnnotationSet::from_images(images).unwrap();
        let a = gen_pope_questions(&ann, Cluster::Random, 3, 5).unwrap();
        let b = gen_pope_questions(&ann, Cluster::Random, 3, 5).unwrap();
        let c = gen_pope_questions(&ann, Cluster::Random, 3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 21 * 6);
    }

    #[test]
    fn dedupe_keeps_cluster_unique_negatives() {
        let mut images = vec![img("t0", &["a", "b"]), img("t1", &["a", "c"])];
        images.extend((0..4).map(|i| img(&format!("f{i}"), &["x", "y"])));
        let ann = AnnotationSet::from_images(images).unwrap();
        let plain = gen_pope_clusters(&ann, 1, 0, false).unwrap();
        let deduped = gen_pope_clusters(&ann, 1, 0, true).unwrap();
        for c in Cluster::TAGGED {
            assert!(deduped[&c].len() <= plain[&c].len());
        }
        let negs = |c: Cluster| -> BTreeSet<(String, String)> {
            deduped[&c]
                .iter()
                .filter(|q| q.polarity == Polarity::Negative)
                .map(|q| (q.image_id.clone(), q.object.clone()))
                .collect()
        };
        assert!(negs(Cluster::Popular).is_disjoint(&negs(Cluster::Adversarial)));
        assert!(negs(Cluster::Random).is_disjoint(&negs(Cluster::Popular)));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        let records = vec![QuestionRecord::new("1", "apple", Polarity::Negative, Cluster::Adversarial)];
        write_questions_jsonl(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.trim(),
            r#"{"image_id":"1","object":"apple","polarity":"negative","cluster":"adversarial","text":"Is there an apple in the image?"}"#
        );
        assert_eq!(read_questions_jsonl(&path).unwrap(), records);
    }
}
