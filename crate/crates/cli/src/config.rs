use std::fs;
use std::path::{Path, PathBuf};

use hdrfuse::metrics::Tonemapper;
use hdrfuse::{Error, ModelConfig, Result, SegmenterConfig, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    #[default]
    Cpu,
    Accelerator,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    #[default]
    Neural,
    Classical,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Segmenter,
    Difference,
    Zero,
    GroundTruth,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_manifest: Option<PathBuf>,
    /// A single stack directory holding `ldr_00.png`, `ldr_01.png`, ...
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stack_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stack_ev: Option<Vec<i32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hdr_vdp2: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub count: usize,
    pub size: usize,
    pub ev_bias: Vec<i32>,
    pub occlusion: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            count: 4,
            size: 64,
            ev_bias: vec![-2, 0, 2],
            occlusion: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmenter: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion: Option<PathBuf>,
}

/// Everything a subcommand reads. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub device: Device,
    pub data: DataConfig,
    pub synth: SynthSection,
    pub pipeline: Pipeline,
    pub masks: MaskMode,
    pub diff_threshold: f64,
    pub segmenter: SegmenterConfig,
    pub model: ModelConfig,
    pub seg_train: TrainConfig,
    pub fusion_train: TrainConfig,
    pub checkpoints: CheckpointPaths,
    pub tonemappers: Vec<Tonemapper>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            description: None,
            seed: 0,
            out_dir: PathBuf::from("out"),
            device: Device::Cpu,
            data: DataConfig::default(),
            synth: SynthSection::default(),
            pipeline: Pipeline::Neural,
            masks: MaskMode::Segmenter,
            diff_threshold: 0.1,
            segmenter: SegmenterConfig::default(),
            model: ModelConfig::default(),
            seg_train: TrainConfig::default(),
            fusion_train: TrainConfig::default(),
            checkpoints: CheckpointPaths::default(),
            tonemappers: vec![Tonemapper::MuLaw, Tonemapper::Reinhard],
        }
    }
}

pub const PRESETS: [(&str, &str); 12] = [
    ("A1", include_str!("../presets/A1.json")),
    ("A2", include_str!("../presets/A2.json")),
    ("A3", include_str!("../presets/A3.json")),
    ("A4", include_str!("../presets/A4.json")),
    ("A5", include_str!("../presets/A5.json")),
    ("A6", include_str!("../presets/A6.json")),
    ("A7", include_str!("../presets/A7.json")),
    ("A8", include_str!("../presets/A8.json")),
    ("A9", include_str!("../presets/A9.json")),
    ("A10", include_str!("../presets/A10.json")),
    ("A11", include_str!("../presets/A11.json")),
    ("A12", include_str!("../presets/A12.json")),
];

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_json(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::BadConfig(format!("unknown preset {name:?}, expected A1..A12")))?;
        Self::from_json(text)
    }

    /// Propagates the run seed and output directory into the nested
    /// training configs, then validates every section.
    pub fn resolve(&mut self) -> Result<()> {
        self.seg_train.seed = self.seed;
        self.fusion_train.seed = self.seed;
        if self.seg_train.checkpoint_dir.is_none() {
            self.seg_train.checkpoint_dir = Some(self.out_dir.clone());
        }
        if self.fusion_train.checkpoint_dir.is_none() {
            self.fusion_train.checkpoint_dir = Some(self.out_dir.clone());
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.segmenter.validate()?;
        self.model.validate()?;
        self.seg_train.validate()?;
        self.fusion_train.validate()?;
        if !(self.diff_threshold > 0.0 && self.diff_threshold < 1.0) {
            return Err(Error::BadConfig(format!(
                "diff_threshold must lie in (0, 1), got {}",
                self.diff_threshold
            )));
        }
        if self.synth.size < 16 || !self.synth.size.is_multiple_of(8) {
            return Err(Error::BadConfig(format!(
                "synth.size must be a multiple of 8 and >= 16, got {}",
                self.synth.size
            )));
        }
        if self.synth.ev_bias.is_empty() {
            return Err(Error::BadConfig("synth.ev_bias is empty".into()));
        }
        if self.synth.ev_bias.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadEv(self.synth.ev_bias.clone()));
        }
        if self.pipeline == Pipeline::Classical && self.fusion_train.mode != TrainMode::TwoStage {
            return Err(Error::BadConfig(
                "the classical pipeline has no end-to-end training".into(),
            ));
        }
        if self.fusion_train.mode != TrainMode::TwoStage && self.masks != MaskMode::Segmenter {
            return Err(Error::ModeDataMismatch {
                mode: format!("{:?}", self.fusion_train.mode),
                what: "masks = segmenter".into(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| io_error(path, e))
    }
}

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingFile(path.to_path_buf())
    } else {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
    }
}
