//! Motion masks: the thresholded-difference baseline, a small U-shaped CNN
//! segmenter, and the two-annotator merge protocol.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{checkpoint, Binding, Conv2d, ParamStore};
use crate::radiometry::{brightness_normalize, DEFAULT_GAMMA};
use crate::stack_io::{ExposureStack, MotionMask};
use crate::tensor::{ConvGeom, Graph, Var};

/// Threshold used by the difference baseline.
pub const DIFF_THRESHOLD: f64 = 0.1;
const SAT_HI: f32 = 0.99;
const SAT_LO: f32 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    pub base_channels: usize,
    pub depth: usize,
    /// Binarization threshold for hard masks.
    pub threshold: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            base_channels: 16,
            depth: 3,
            threshold: 0.5,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 {
            return Err(Error::BadConfig(format!(
                "base_channels must be >= 4, got {}",
                self.base_channels
            )));
        }
        if self.depth < 1 {
            return Err(Error::BadConfig("depth must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::BadConfig(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Binarizes at `tau`: values `>= tau` become 1.
pub fn hard_mask(m: &MotionMask, tau: f64) -> MotionMask {
    let tau = tau as f32;
    MotionMask {
        width: m.width,
        height: m.height,
        values: m.values.iter().map(|&v| if v >= tau { 1.0 } else { 0.0 }).collect(),
        source_index: m.source_index,
    }
}

fn max_channel_diff(a: &Image, b: &Image, p: usize) -> f32 {
    (0..3)
        .map(|c| (a.data[p * 3 + c] - b.data[p * 3 + c]).abs())
        .fold(0.0, f32::max)
}

fn all_channels(a: &Image, p: usize, pred: impl Fn(f32) -> bool) -> bool {
    (0..3).all(|c| pred(a.data[p * 3 + c]))
}

/// Thresholded brightness-normalized difference.
///
/// Each frame is re-rendered at the other's exposure and the smaller of the
/// two max-over-channel differences is compared to `tau`, so pixels clipped
/// in only one frame are judged in the frame where they are still
/// measurable. Pixels clipped in both frames are never moving.
pub fn diff_segment(src: &Image, reference: &Image, ev_src: i32, ev_ref: i32, tau: f64) -> Result<MotionMask> {
    diff_segment_with_gamma(src, reference, ev_src, ev_ref, tau, DEFAULT_GAMMA)
}

pub fn diff_segment_with_gamma(
    src: &Image,
    reference: &Image,
    ev_src: i32,
    ev_ref: i32,
    tau: f64,
    gamma: f64,
) -> Result<MotionMask> {
    src.ensure_same_shape(reference)?;
    if src.channels != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected RGB, got {} channels",
            src.channels
        )));
    }
    let src_at_ref = brightness_normalize(src, ev_src, ev_ref, gamma);
    let ref_at_src = brightness_normalize(reference, ev_ref, ev_src, gamma);
    let tau = tau as f32;
    let hi = |v: f32| v >= SAT_HI;
    let lo = |v: f32| v <= SAT_LO;
    let values = (0..src.width * src.height)
        .map(|p| {
            let both_clipped = |a: &Image, b: &Image| {
                (all_channels(a, p, hi) && all_channels(b, p, hi)) || (all_channels(a, p, lo) && all_channels(b, p, lo))
            };
            if both_clipped(reference, &src_at_ref) || both_clipped(src, &ref_at_src) {
                return 0.0;
            }
            let d = max_channel_diff(&src_at_ref, reference, p).min(max_channel_diff(&ref_at_src, src, p));
            if d > tau {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(MotionMask {
        width: src.width,
        height: src.height,
        values,
        source_index: 0,
    })
}

/// Difference masks for every source frame of a stack.
pub fn diff_segment_stack(stack: &ExposureStack, tau: f64) -> Result<Vec<MotionMask>> {
    let r = stack.reference_index();
    stack
        .source_indices()
        .map(|k| {
            let mut m = diff_segment(
                stack.image(k),
                stack.reference(),
                stack.ev_bias()[k],
                stack.ev_bias()[r],
                tau,
            )?;
            m.source_index = k;
            Ok(m)
        })
        .collect()
}

/// Union of two hard annotations, plus the disagreement map for the final
/// reviewer.
pub fn merge_annotations(a: &MotionMask, b: &MotionMask) -> Result<(MotionMask, MotionMask)> {
    if !a.is_hard() || !b.is_hard() {
        return Err(Error::SoftMaskRejected);
    }
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "annotations {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let merged = a.values.iter().zip(&b.values).map(|(x, y)| x.max(*y)).collect();
    let mismatch = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| if x != y { 1.0 } else { 0.0 })
        .collect();
    let wrap = |values| MotionMask {
        width: a.width,
        height: a.height,
        values,
        source_index: a.source_index,
    };
    Ok((wrap(merged), wrap(mismatch)))
}

#[derive(Clone, Debug)]
struct Block {
    first: Conv2d,
    second: Conv2d,
}

impl Block {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Self {
        Block {
            first: Conv2d::new(store, rng, &format!("{name}.0"), cin, cout, 3, ConvGeom::same(3), true),
            second: Conv2d::new(store, rng, &format!("{name}.1"), cout, cout, 3, ConvGeom::same(3), true),
        }
    }

    fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Var {
        let y = self.first.forward_act(g, p, x);
        self.second.forward_act(g, p, y)
    }
}

/// U-shaped encoder-decoder mapping `source ++ reference` (6 channels) to a
/// one-channel sigmoid motion map.
#[derive(Clone, Debug)]
pub struct SegModel {
    config: SegmenterConfig,
    params: ParamStore,
    down: Vec<Block>,
    bottleneck: Block,
    up: Vec<Block>,
    head: Conv2d,
}

impl SegModel {
    pub fn new(config: SegmenterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let b = config.base_channels;
        let mut down = Vec::with_capacity(config.depth);
        let mut cin = 6;
        for l in 0..config.depth {
            let c = b << l;
            down.push(Block::new(&mut params, &mut rng, &format!("seg.down{l}"), cin, c));
            cin = c;
        }
        let bottom = b << config.depth;
        let bottleneck = Block::new(&mut params, &mut rng, "seg.bottleneck", cin, bottom);
        let mut up = Vec::with_capacity(config.depth);
        let mut below = bottom;
        for l in (0..config.depth).rev() {
            let c = b << l;
            up.push(Block::new(&mut params, &mut rng, &format!("seg.up{l}"), below + c, c));
            below = c;
        }
        let head = Conv2d::new(&mut params, &mut rng, "seg.head", b, 1, 1, ConvGeom::same(1), true);
        Ok(SegModel {
            config,
            params,
            down,
            bottleneck,
            up,
            head,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn divisor(&self) -> usize {
        1 << self.config.depth
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        let d = self.divisor();
        if !height.is_multiple_of(d) || !width.is_multiple_of(d) || height == 0 || width == 0 {
            return Err(Error::BadSpatialDims {
                height,
                width,
                divisor: d,
            });
        }
        Ok(())
    }

    /// Pre-sigmoid logits `[1, H, W]` for `source`, `reference` of shape `[3, H, W]`.
    pub fn forward_logits(&self, g: &mut Graph, p: &Binding, source: Var, reference: Var) -> Var {
        let mut x = g.concat(&[source, reference]);
        let mut skips = Vec::with_capacity(self.down.len());
        for block in &self.down {
            let s = block.forward(g, p, x);
            skips.push(s);
            x = g.avg_pool2(s);
        }
        x = self.bottleneck.forward(g, p, x);
        for (block, skip) in self.up.iter().zip(skips.iter().rev()) {
            let u = g.upsample2x(x);
            let cat = g.concat(&[u, *skip]);
            x = block.forward(g, p, cat);
        }
        self.head.forward(g, p, x)
    }

    /// Soft motion map in `(0, 1)`.
    pub fn predict(&self, source: &Image, reference: &Image) -> Result<MotionMask> {
        source.ensure_same_shape(reference)?;
        self.check_dims(source.height, source.width)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let s = g.constant(source.to_tensor());
        let r = g.constant(reference.to_tensor());
        let logits = self.forward_logits(&mut g, &p, s, r);
        let prob = g.sigmoid(logits);
        let values = g.value(prob).data().iter().map(|&v| v as f32).collect();
        MotionMask::new(source.width, source.height, values, 0)
    }

    /// Soft masks for every source frame of a stack.
    pub fn predict_stack(&self, stack: &ExposureStack) -> Result<Vec<MotionMask>> {
        stack
            .source_indices()
            .map(|k| {
                let mut m = self.predict(stack.image(k), stack.reference())?;
                m.source_index = k;
                Ok(m)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, "segmenter", serde_json::to_value(&self.config)?, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = checkpoint::load(path)?;
        if ckpt.header.kind != "segmenter" {
            return Err(Error::CheckpointMismatch(format!(
                "expected a segmenter checkpoint, found {}",
                ckpt.header.kind
            )));
        }
        let config: SegmenterConfig =
            serde_json::from_value(ckpt.header.config.clone()).map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
        let mut model = SegModel::new(config, 0)?;
        ckpt.restore_into(&mut model.params)?;
        Ok(model)
    }
}
