//! Build random, popular and adversarial yes/no questions from object
//! annotations, then split the images into train and test.
//!
//! ```text
//! cargo run --example pope_questions -- [annotations.json]
//! ```
//!
//! Without an argument a small built-in annotation set is used.

use dhcp::dataset::{self, AnnotationSet, Polarity};

const BUILTIN: &str = r#"[
  {"image_id": "000001", "objects": ["person", "dog", "frisbee", "tree"]},
  {"image_id": "000002", "objects": ["person", "car", "traffic light", "bicycle"]},
  {"image_id": "000003", "objects": ["dining table", "cup", "fork", "person"]},
  {"image_id": "000004", "objects": ["cat", "couch", "remote", "tv"]},
  {"image_id": "000005", "objects": ["person", "surfboard", "boat", "dog"]},
  {"image_id": "000006", "objects": ["car", "truck", "traffic light", "person"]}
]"#;

fn main() -> dhcp::Result<()> {
    let ann = match std::env::args().nth(1) {
        Some(path) => AnnotationSet::load(path)?,
        None => AnnotationSet::from_json(BUILTIN)?,
    };
    let k = 2;
    for (cluster, records) in dataset::gen_pope_clusters(&ann, k, 0, false)? {
        println!("{cluster}: {} questions", records.len());
        for q in records.iter().filter(|q| q.image_id == "000001") {
            let tag = if q.polarity == Polarity::Positive { "yes" } else { "no " };
            println!("  {} [{tag}] {}", q.image_id, q.template_text);
        }
    }

    let ids: Vec<String> = ann.images().iter().map(|i| i.image_id.clone()).collect();
    let split = dataset::split_train_test(&ids, &["000004".to_string()], 0.5, 0)?;
    println!("train {:?}\ntest  {:?}", split.train, split.test);
    Ok(())
}
