//! Segmentation-guided HDR deghosting.
//!
//! A bracketed exposure stack is split per source frame into static and
//! moving regions by a motion segmenter; static and moving features are fused
//! by separate networks, a slot memory accumulates features across frames,
//! and a decoder produces the linear radiance map aligned to the reference
//! frame. Classical triangle-weighted merging and a thresholded-difference
//! segmenter are included as baselines.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fusion_net;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod radiometry;
pub mod segmentation;
pub mod stack_io;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use fusion_net::{Aggregator, DecoderKind, FusionNet, ModelConfig};
pub use image::Image;
pub use metrics::{EvalReport, EvalRow, Tonemapper};
pub use segmentation::{SegModel, SegmenterConfig};
pub use stack_io::{DatasetManifest, ExposureStack, MotionMask, RadianceImage, Sample};
pub use training::{LossKind, MaskSource, TrainConfig, TrainMode, TrainReport};
