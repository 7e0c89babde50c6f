//! Bundle directories: `bundle.json` plus one model file per member.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DetectorBundle, Variant, STAGE2_CLASSES};
use crate::error::{Error, Result};
use crate::mlp::{load_model, save_model};
use crate::tensor::TensorShape;

pub const BUNDLE_FILE: &str = "bundle.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub variant: Variant,
    pub shape: TensorShape,
    /// First-stage category names by output index.
    pub stage1_classes: Vec<String>,
    /// Refiner class names by output index.
    pub stage2_classes: Vec<String>,
    pub c1: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2_yh: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2_nh: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2_g: Option<String>,
}

impl BundleManifest {
    fn describe_labels(variant: Variant) -> (Vec<String>, Vec<String>) {
        (
            variant.stage1_classes().iter().map(|c| c.name().to_string()).collect(),
            STAGE2_CLASSES.iter().map(|s| s.to_string()).collect(),
        )
    }

    fn describe(b: &DetectorBundle) -> Self {
        let file = |present: bool, name: &str| present.then(|| format!("{name}.bin"));
        let (stage1_classes, stage2_classes) = Self::describe_labels(b.variant);
        BundleManifest {
            variant: b.variant,
            shape: b.shape,
            stage1_classes,
            stage2_classes,
            c1: "c1.bin".into(),
            c2_yh: file(b.c2_yh.is_some(), "c2_yh"),
            c2_nh: file(b.c2_nh.is_some(), "c2_nh"),
            c2_g: file(b.c2_g.is_some(), "c2_g"),
        }
    }
}

/// Writes the bundle into `dir`, creating it if needed.
pub fn save_bundle(dir: impl AsRef<Path>, bundle: &DetectorBundle) -> Result<()> {
    bundle.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = BundleManifest::describe(bundle);
    save_model(dir.join(&manifest.c1), &bundle.c1)?;
    let members = [
        (&manifest.c2_yh, &bundle.c2_yh),
        (&manifest.c2_nh, &bundle.c2_nh),
        (&manifest.c2_g, &bundle.c2_g),
    ];
    for (file, model) in members {
        if let (Some(f), Some(m)) = (file, model) {
            save_model(dir.join(f), m)?;
        }
    }
    let path = dir.join(BUNDLE_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<DetectorBundle> {
    let dir = dir.as_ref();
    let path = dir.join(BUNDLE_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text)?;
    let canonical = BundleManifest::describe_labels(manifest.variant);
    if (&manifest.stage1_classes, &manifest.stage2_classes) != (&canonical.0, &canonical.1) {
        return Err(Error::InvalidBundle(format!(
            "label maps {:?} / {:?} do not match {:?}",
            manifest.stage1_classes, manifest.stage2_classes, manifest.variant
        )));
    }
    let load = |f: &Option<String>| f.as_ref().map(|f| load_model(dir.join(f))).transpose();
    let bundle = DetectorBundle {
        variant: manifest.variant,
        shape: manifest.shape,
        c1: load_model(dir.join(&manifest.c1))?,
        c2_yh: load(&manifest.c2_yh)?,
        c2_nh: load(&manifest.c2_nh)?,
        c2_g: load(&manifest.c2_g)?,
    };
    bundle.validate()?;
    Ok(bundle)
}
