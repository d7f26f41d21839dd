use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_hdr, load_ldr, load_mask, ExposureStack, MotionMask, RadianceImage};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
}

/// One scene. Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Defaults to the final component of `stack_dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub stack_dir: PathBuf,
    /// Frame file names inside `stack_dir`; defaults to `ldr_00.png`, `ldr_01.png`, ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_hdr: Option<PathBuf>,
    /// One mask per non-reference frame, in stack order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_masks: Option<Vec<PathBuf>>,
    pub ev_bias: Vec<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_index: Option<usize>,
}

impl ManifestEntry {
    pub fn id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.stack_dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }

    pub fn image_names(&self) -> Vec<String> {
        self.images
            .clone()
            .unwrap_or_else(|| (0..self.ev_bias.len()).map(|k| format!("ldr_{k:02}.png")).collect())
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index.unwrap_or(self.ev_bias.len() / 2)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(split: Split, base_dir: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            split,
            entries: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            let names = e.image_names();
            if names.len() != e.ev_bias.len() {
                return Err(Error::BadConfig(format!(
                    "{}: {} images but {} exposure values",
                    e.id(),
                    names.len(),
                    e.ev_bias.len()
                )));
            }
            let dir = self.resolve(&e.stack_dir);
            let mut paths: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
            paths.extend(e.gt_hdr.iter().map(|p| self.resolve(p)));
            paths.extend(e.gt_masks.iter().flatten().map(|p| self.resolve(p)));
            if let Some(missing) = paths.into_iter().find(|p| !p.exists()) {
                return Err(Error::MissingFile(missing));
            }
        }
        Ok(())
    }
}

/// One fully loaded scene.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub stack: ExposureStack,
    pub gt_hdr: Option<RadianceImage>,
    pub gt_masks: Option<Vec<MotionMask>>,
}

pub fn load_stack(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<ExposureStack> {
    let dir = manifest.resolve(&entry.stack_dir);
    let images = entry
        .image_names()
        .iter()
        .map(|n| load_ldr(&dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
    ExposureStack::new(images, entry.ev_bias.clone(), Some(entry.reference_index()))
}

pub fn load_sample(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<Sample> {
    let stack = load_stack(manifest, entry)?;
    let gt_hdr = entry
        .gt_hdr
        .as_ref()
        .map(|p| load_hdr(&manifest.resolve(p)))
        .transpose()?;
    let gt_masks = match &entry.gt_masks {
        None => None,
        Some(paths) => {
            let sources: Vec<usize> = stack.source_indices().collect();
            if paths.len() != sources.len() {
                return Err(Error::BadConfig(format!(
                    "{}: {} masks for {} source frames",
                    entry.id(),
                    paths.len(),
                    sources.len()
                )));
            }
            let masks = paths
                .iter()
                .zip(sources)
                .map(|(p, k)| load_mask(&manifest.resolve(p), k))
                .collect::<Result<Vec<_>>>()?;
            for m in &masks {
                if m.width != stack.width() || m.height != stack.height() {
                    return Err(Error::ShapeMismatch(format!("{}: mask size", entry.id())));
                }
            }
            Some(masks)
        }
    };
    if let Some(gt) = &gt_hdr {
        if gt.width() != stack.width() || gt.height() != stack.height() {
            return Err(Error::ShapeMismatch(format!("{}: ground truth size", entry.id())));
        }
    }
    Ok(Sample {
        id: entry.id(),
        stack,
        gt_hdr,
        gt_masks,
    })
}

impl DatasetManifest {
    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        self.entries.iter().map(|e| load_sample(self, e)).collect()
    }
}
