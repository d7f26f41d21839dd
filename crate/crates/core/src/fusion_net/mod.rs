//! Mask-guided fusion network: per-frame encoder, static/dynamic feature
//! split, two fusion branches, a slot memory, and a choice of decoders.

mod decoder;
mod memory;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use decoder::{Decoder, DecoderKind, GUIDE_CHANNELS, SDC_DILATIONS};
pub use memory::{Memory, MemoryState};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{checkpoint, Binding, Conv2d, ParamStore};
use crate::radiometry::{deghost_triangle, DEFAULT_GAMMA, DEFAULT_MU};
use crate::stack_io::{ExposureStack, MotionMask, RadianceImage};
use crate::tensor::{ConvGeom, Graph, Tensor, Var};

/// Spatial downsampling of the encoder.
pub const FEATURE_STRIDE: usize = 4;
/// Sharpness of the softplus that keeps the tonemapped output nonnegative.
pub const OUTPUT_SHARPNESS: f64 = 200.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    ConcatFixedK,
    #[default]
    MeanMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub enc_channels: usize,
    pub share_fusion: bool,
    pub use_memory: bool,
    pub memory_slots: usize,
    pub share_rw: bool,
    pub decoder: DecoderKind,
    pub decoder_blocks: usize,
    pub aggregator: Aggregator,
    /// Frame count, required by `concat_fixed_k`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub gamma: f64,
    pub mu: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            enc_channels: 8,
            share_fusion: false,
            use_memory: true,
            memory_slots: 3,
            share_rw: false,
            decoder: DecoderKind::SdcDense,
            decoder_blocks: 3,
            aggregator: Aggregator::MeanMax,
            k: None,
            gamma: DEFAULT_GAMMA,
            mu: DEFAULT_MU,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enc_channels < 8 {
            return Err(Error::BadConfig(format!(
                "enc_channels must be >= 8, got {}",
                self.enc_channels
            )));
        }
        if self.use_memory && self.memory_slots < 1 {
            return Err(Error::BadConfig("memory_slots must be >= 1 when use_memory".into()));
        }
        if self.decoder_blocks < 1 {
            return Err(Error::BadConfig("decoder_blocks must be >= 1".into()));
        }
        if self.aggregator == Aggregator::ConcatFixedK && !matches!(self.k, Some(k) if k >= 2) {
            return Err(Error::BadConfig("concat_fixed_k needs k >= 2".into()));
        }
        if !(self.gamma > 0.0 && self.mu > 0.0) {
            return Err(Error::BadConfig("gamma and mu must be positive".into()));
        }
        Ok(())
    }

    /// Channels of the encoder output.
    pub fn feature_channels(&self) -> usize {
        self.enc_channels * 4
    }
}

/// Parameter groups for counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Encoder,
    Fusion,
    MemoryRead,
    MemoryWrite,
    Decoder,
}

impl Stage {
    fn prefix(self) -> &'static str {
        match self {
            Stage::Encoder => "enc.",
            Stage::Fusion => "fuse_",
            Stage::MemoryRead => "mem.read",
            Stage::MemoryWrite => "mem.write",
            Stage::Decoder => "dec.",
        }
    }
}

#[derive(Clone, Debug)]
struct FusionBranch {
    convs: [Conv2d; 2],
}

impl FusionBranch {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, c: usize) -> Self {
        let g = ConvGeom::same(3);
        FusionBranch {
            convs: [
                Conv2d::new(store, rng, &format!("{name}.0"), cin, c, 3, g, false),
                Conv2d::new(store, rng, &format!("{name}.1"), c, c, 3, g, false),
            ],
        }
    }

    fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Var {
        let y = self.convs[0].forward_act(g, p, x);
        self.convs[1].forward_act(g, p, y)
    }
}

/// Network inputs derived from a stack and its masks, everything except the
/// masks themselves (which may be graph nodes of a segmenter).
#[derive(Clone, Debug)]
pub struct FusionInput {
    /// `[6, H, W]` per frame: LDR followed by tonemapped linear radiance.
    pub frames: Vec<Tensor>,
    pub reference_index: usize,
    /// Frame indices from shortest to longest exposure; frame `exposure_order[r]`
    /// is written to memory slot `r mod M`.
    pub exposure_order: Vec<usize>,
    /// `[GUIDE_CHANNELS, H, W]` full-resolution guidance.
    pub guide: Tensor,
    /// `[3, H, W]` tonemapped classical estimate the decoder refines.
    pub base: Tensor,
    /// Normalization peak of the tonemapped domain.
    pub peak: f64,
    pub height: usize,
    pub width: usize,
}

impl FusionInput {
    pub fn new(stack: &ExposureStack, masks: &[MotionMask], config: &ModelConfig) -> Result<Self> {
        let (h, w) = (stack.height(), stack.width());
        if h % FEATURE_STRIDE != 0 || w % FEATURE_STRIDE != 0 {
            return Err(Error::BadSpatialDims {
                height: h,
                width: w,
                divisor: FEATURE_STRIDE,
            });
        }
        let peak = stack.radiance_ceiling();
        let tonemap = |img: &Image| -> Tensor {
            img.to_tensor()
                .map(|v| crate::radiometry::mu_law(v.max(0.0) / peak, config.mu))
        };
        let frames = stack
            .images()
            .iter()
            .zip(stack.exposure_times())
            .map(|(im, &t)| {
                let linear = im.map(|z| ((z as f64).powf(config.gamma) / t) as f32);
                Tensor::concat_channels(&[&im.to_tensor(), &tonemap(&linear)])
            })
            .collect::<Vec<_>>();
        let hard: Vec<MotionMask> = masks.to_vec();
        let base = tonemap(deghost_triangle(stack, &hard, config.gamma)?.image());
        let r = stack.reference_index();
        let guide = Tensor::concat_channels(&[&frames[r], &base]);
        let times = stack.exposure_times();
        let mut exposure_order: Vec<usize> = (0..frames.len()).collect();
        exposure_order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        Ok(FusionInput {
            frames,
            reference_index: r,
            exposure_order,
            guide,
            base,
            peak,
            height: h,
            width: w,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Tonemapped-domain target for a linear ground truth.
    pub fn tonemap_target(&self, gt: &RadianceImage, mu: f64) -> Tensor {
        gt.image()
            .to_tensor()
            .map(|v| crate::radiometry::mu_law(v.max(0.0) / self.peak, mu))
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub features: Vec<Var>,
    pub static_features: Vec<Var>,
    pub dynamic_features: Vec<Var>,
    pub fused_static: Var,
    pub fused_dynamic: Var,
    pub memory: Option<Var>,
    pub residual: Var,
    /// `[3, H, W]` prediction in the tonemapped domain.
    pub output: Var,
}

/// `static = E - E*m`, `dynamic = E*m` for `E [C,h,w]`, `m [1,h,w]`.
pub fn split_features(g: &mut Graph, features: Var, mask: Var) -> Result<(Var, Var)> {
    let (_, h, w) = g.value(features).dims3();
    if g.value(mask).shape() != [1, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} vs features {:?}",
            g.value(mask).shape(),
            g.value(features).shape()
        )));
    }
    let dynamic = g.mul_mask(features, mask);
    let stat = g.sub(features, dynamic);
    Ok((stat, dynamic))
}

/// Combines per-frame features into one tensor.
pub fn aggregate(g: &mut Graph, features: &[Var], mode: Aggregator, k: Option<usize>) -> Result<Var> {
    if features.is_empty() {
        return Err(Error::ArityMismatch {
            expected: k.unwrap_or(1),
            actual: 0,
        });
    }
    let shape = g.value(features[0]).shape().to_vec();
    if features.iter().any(|&f| g.value(f).shape() != shape.as_slice()) {
        return Err(Error::ShapeMismatch("aggregated features differ in shape".into()));
    }
    match mode {
        Aggregator::ConcatFixedK => {
            let expected = k.unwrap_or(features.len());
            if features.len() != expected {
                return Err(Error::ArityMismatch {
                    expected,
                    actual: features.len(),
                });
            }
            Ok(g.concat(features))
        }
        Aggregator::MeanMax => {
            let mean = g.mean_of(features);
            let max = g.max_of(features);
            Ok(g.concat(&[mean, max]))
        }
    }
}

/// Area-average of a `[1, H, W]` mask down to feature resolution.
pub fn downsample_mask(g: &mut Graph, mask: Var) -> Var {
    let half = g.avg_pool2(mask);
    g.avg_pool2(half)
}

#[derive(Clone, Debug)]
pub struct FusionNet {
    config: ModelConfig,
    params: ParamStore,
    encoder: [Conv2d; 2],
    fuse_static: FusionBranch,
    fuse_dynamic: FusionBranch,
    memory: Option<Memory>,
    decoder: Decoder,
}

impl FusionNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let stage_rng = |stage: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stage);
            rng
        };
        let mut params = ParamStore::new();
        let e = config.enc_channels;
        let c = config.feature_channels();
        let strided = ConvGeom::strided(3, 2);
        let mut rng = stage_rng(0);
        let encoder = [
            Conv2d::new(&mut params, &mut rng, "enc.0", 6, 2 * e, 3, strided, true),
            Conv2d::new(&mut params, &mut rng, "enc.1", 2 * e, c, 3, strided, true),
        ];
        let agg = match config.aggregator {
            Aggregator::MeanMax => 2 * c,
            Aggregator::ConcatFixedK => c * config.k.unwrap_or(2),
        };
        let fuse_static = FusionBranch::new(&mut params, &mut stage_rng(1), "fuse_s", agg, c);
        let fuse_dynamic = if config.share_fusion {
            fuse_static.clone()
        } else {
            FusionBranch::new(&mut params, &mut stage_rng(2), "fuse_d", agg, c)
        };
        let memory = config
            .use_memory
            .then(|| Memory::new(&mut params, &mut stage_rng(3), c, config.memory_slots, config.share_rw));
        let decoder = Decoder::new(
            &mut params,
            &mut stage_rng(4),
            config.decoder,
            3 * c,
            c,
            config.decoder_blocks,
        );
        Ok(FusionNet {
            config,
            params,
            encoder,
            fuse_static,
            fuse_dynamic,
            memory,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn memory(&self) -> Option<&Memory> {
        self.memory.as_ref()
    }

    /// Independent scalar parameters; shared tensors are stored once.
    pub fn count_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn stage_params(&self, stage: Stage) -> usize {
        self.params.num_scalars_with_prefix(stage.prefix())
    }

    /// Names of the tensors used by the dynamic branch.
    pub fn dynamic_branch_params(&self) -> Vec<String> {
        self.fuse_dynamic
            .convs
            .iter()
            .map(|c| self.params.name(c.weight).to_string())
            .collect()
    }

    /// `[C, H/4, W/4]` features of one `[6, H, W]` frame.
    pub fn encode(&self, g: &mut Graph, p: &Binding, frame: Var) -> Result<Var> {
        let (c, h, w) = g.value(frame).dims3();
        if c != 6 {
            return Err(Error::ShapeMismatch(format!("encoder expects 6 channels, got {c}")));
        }
        if h % FEATURE_STRIDE != 0 || w % FEATURE_STRIDE != 0 {
            return Err(Error::BadSpatialDims {
                height: h,
                width: w,
                divisor: FEATURE_STRIDE,
            });
        }
        let x = self.encoder[0].forward_act(g, p, frame);
        Ok(self.encoder[1].forward_act(g, p, x))
    }

    pub fn fuse_static(&self, g: &mut Graph, p: &Binding, aggregated: Var) -> Var {
        self.fuse_static.forward(g, p, aggregated)
    }

    pub fn fuse_dynamic(&self, g: &mut Graph, p: &Binding, aggregated: Var) -> Var {
        self.fuse_dynamic.forward(g, p, aggregated)
    }

    /// Full pass on graph nodes. `masks` are `[1, H, W]` nodes for the
    /// source frames in stack order.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        p: &Binding,
        input: &FusionInput,
        masks: &[Var],
    ) -> Result<ForwardTrace> {
        let k = input.len();
        if masks.len() + 1 != k {
            return Err(Error::ArityMismatch {
                expected: k - 1,
                actual: masks.len(),
            });
        }
        if self.config.aggregator == Aggregator::ConcatFixedK {
            let expected = self.config.k.unwrap_or(k);
            if expected != k {
                return Err(Error::ArityMismatch { expected, actual: k });
            }
        }
        let c = self.config.feature_channels();
        let (h, w) = (input.height / FEATURE_STRIDE, input.width / FEATURE_STRIDE);
        let mut features = Vec::with_capacity(k);
        let mut static_features = Vec::with_capacity(k);
        let mut dynamic_features = Vec::with_capacity(k);
        let mut source_masks = masks.iter();
        for (i, frame) in input.frames.iter().enumerate() {
            let x = g.constant(frame.clone());
            let e = self.encode(g, p, x)?;
            g.set_name(e, format!("features{i}"));
            let m = if i == input.reference_index {
                g.constant(Tensor::zeros(&[1, h, w]))
            } else {
                let full = *source_masks.next().expect("mask count checked");
                if g.value(full).shape() != [1, input.height, input.width] {
                    return Err(Error::ShapeMismatch(format!(
                        "mask {:?} for a {}x{} stack",
                        g.value(full).shape(),
                        input.width,
                        input.height
                    )));
                }
                downsample_mask(g, full)
            };
            let (s, d) = split_features(g, e, m)?;
            features.push(e);
            static_features.push(s);
            dynamic_features.push(d);
        }
        let agg_s = aggregate(g, &static_features, self.config.aggregator, self.config.k)?;
        let agg_d = aggregate(g, &dynamic_features, self.config.aggregator, self.config.k)?;
        let fused_static = self.fuse_static(g, p, agg_s);
        let fused_dynamic = self.fuse_dynamic(g, p, agg_d);
        g.set_name(fused_static, "fused_static");
        g.set_name(fused_dynamic, "fused_dynamic");

        let memory = match &self.memory {
            Some(mem) => {
                let mut state = mem.init(g, (c, h, w));
                for (rank, &i) in input.exposure_order.iter().enumerate() {
                    mem.write(g, p, &mut state, features[i], rank % mem.slots())?;
                }
                let read = mem.read(g, p, &state, features[input.reference_index]);
                g.set_name(read, "memory_read");
                Some(read)
            }
            None => None,
        };
        let mem_part = match memory {
            Some(m) => m,
            None => g.constant(Tensor::zeros(&[c, h, w])),
        };
        let fused = g.concat(&[fused_static, fused_dynamic, mem_part]);
        let guide = g.constant(input.guide.clone());
        let residual = self.decoder.forward(g, p, fused, guide);
        g.set_name(residual, "residual");
        let base = g.constant(input.base.clone());
        let pre = g.add(base, residual);
        let sharp = g.scale(pre, OUTPUT_SHARPNESS);
        let soft = g.softplus(sharp);
        let output = g.scale(soft, 1.0 / OUTPUT_SHARPNESS);
        g.set_name(output, "output");
        Ok(ForwardTrace {
            features,
            static_features,
            dynamic_features,
            fused_static,
            fused_dynamic,
            memory,
            residual,
            output,
        })
    }

    /// Tonemapped-domain prediction `[3, H, W]` for fixed masks.
    pub fn forward_tonemapped(&self, stack: &ExposureStack, masks: &[MotionMask]) -> Result<(Tensor, FusionInput)> {
        let ordered = order_masks(stack, masks)?;
        let input = FusionInput::new(stack, &ordered, &self.config)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let mask_vars: Vec<Var> = ordered.iter().map(|m| g.constant(m.to_tensor())).collect();
        let trace = self.forward_graph(&mut g, &p, &input, &mask_vars)?;
        let bad = g.non_finite_nodes();
        if !bad.is_empty() {
            return Err(Error::NumericFailure(format!(
                "non-finite values in {}",
                bad.join(", ")
            )));
        }
        Ok((g.value(trace.output).clone(), input))
    }

    /// Linear-domain radiance for `stack` with one mask per source frame.
    pub fn forward(&self, stack: &ExposureStack, masks: &[MotionMask]) -> Result<RadianceImage> {
        let (t, input) = self.forward_tonemapped(stack, masks)?;
        tonemapped_to_radiance(&t, input.peak, self.config.mu)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, "fusion", serde_json::to_value(&self.config)?, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = checkpoint::load(path)?;
        if ckpt.header.kind != "fusion" {
            return Err(Error::CheckpointMismatch(format!(
                "expected a fusion checkpoint, found {}",
                ckpt.header.kind
            )));
        }
        let config: ModelConfig =
            serde_json::from_value(ckpt.header.config.clone()).map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
        let mut model = FusionNet::new(config, 0)?;
        ckpt.restore_into(&mut model.params)?;
        Ok(model)
    }
}

/// Inverse tonemap of a `[3, H, W]` prediction.
pub fn tonemapped_to_radiance(t: &Tensor, peak: f64, mu: f64) -> Result<RadianceImage> {
    let linear = t.map(|v| peak * crate::radiometry::mu_law_inverse(v, mu));
    RadianceImage::new(Image::from_tensor(&linear)?)
}

/// Masks sorted into source-frame order, one per source frame.
pub fn order_masks(stack: &ExposureStack, masks: &[MotionMask]) -> Result<Vec<MotionMask>> {
    let sources: Vec<usize> = stack.source_indices().collect();
    if masks.len() != sources.len() {
        return Err(Error::ArityMismatch {
            expected: sources.len(),
            actual: masks.len(),
        });
    }
    sources
        .iter()
        .map(|&k| {
            let m = masks
                .iter()
                .find(|m| m.source_index == k)
                .ok_or_else(|| Error::BadConfig(format!("no mask for source frame {k}")))?;
            if m.width != stack.width() || m.height != stack.height() {
                return Err(Error::ShapeMismatch("mask does not match stack".into()));
            }
            Ok(m.clone())
        })
        .collect()
}

/// All-zero masks for every source frame.
pub fn zero_masks(stack: &ExposureStack) -> Vec<MotionMask> {
    stack
        .source_indices()
        .map(|k| MotionMask::zeros(stack.width(), stack.height(), k))
        .collect()
}
