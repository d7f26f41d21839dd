use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Binding, Conv2d, ParamStore, LEAKY_SLOPE};
use crate::tensor::{ConvGeom, Graph, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Vanilla,
    Resnet,
    Sdc,
    #[default]
    SdcDense,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 4] = [
        DecoderKind::Vanilla,
        DecoderKind::Resnet,
        DecoderKind::Sdc,
        DecoderKind::SdcDense,
    ];
}

pub const SDC_DILATIONS: [usize; 3] = [1, 2, 4];
/// Convolutions per block for the plain and residual bodies.
const LAYERS_PER_BLOCK: usize = 3;

#[derive(Clone, Debug)]
struct SdcBlock {
    branches: Vec<Conv2d>,
    project: Conv2d,
}

#[derive(Clone, Debug)]
enum Body {
    Vanilla(Vec<Conv2d>),
    Resnet(Vec<Vec<Conv2d>>),
    Sdc { blocks: Vec<SdcBlock>, dense: bool },
}

/// Low-resolution body, two 2x upsampling stages, and a full-resolution head
/// that sees the reference frame and predicts a residual over `base`.
#[derive(Clone, Debug)]
pub struct Decoder {
    project: Conv2d,
    body: Body,
    up: [Conv2d; 2],
    head: [Conv2d; 2],
}

/// Channels of the full-resolution guidance: reference LDR, reference
/// tonemapped radiance, and the tonemapped base estimate.
pub const GUIDE_CHANNELS: usize = 9;

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        kind: DecoderKind,
        in_channels: usize,
        width: usize,
        blocks: usize,
    ) -> Self {
        let same3 = ConvGeom::same(3);
        let project = Conv2d::new(store, rng, "dec.project", in_channels, width, 3, same3, true);
        let body = match kind {
            DecoderKind::Vanilla => Body::Vanilla(
                (0..blocks * LAYERS_PER_BLOCK)
                    .map(|i| Conv2d::new(store, rng, &format!("dec.body{i}"), width, width, 3, same3, true))
                    .collect(),
            ),
            DecoderKind::Resnet => Body::Resnet(
                (0..blocks)
                    .map(|b| {
                        (0..LAYERS_PER_BLOCK)
                            .map(|i| Conv2d::new(store, rng, &format!("dec.res{b}.{i}"), width, width, 3, same3, true))
                            .collect()
                    })
                    .collect(),
            ),
            DecoderKind::Sdc | DecoderKind::SdcDense => {
                let dense = kind == DecoderKind::SdcDense;
                let blocks = (0..blocks)
                    .map(|b| {
                        let cin = if dense { width * (b + 1) } else { width };
                        let branches = SDC_DILATIONS
                            .iter()
                            .map(|&d| {
                                Conv2d::new(
                                    store,
                                    rng,
                                    &format!("dec.sdc{b}.d{d}"),
                                    cin,
                                    width,
                                    3,
                                    ConvGeom::dilated(3, d),
                                    true,
                                )
                            })
                            .collect();
                        let project = Conv2d::new(
                            store,
                            rng,
                            &format!("dec.sdc{b}.project"),
                            width * SDC_DILATIONS.len(),
                            width,
                            1,
                            ConvGeom::same(1),
                            true,
                        );
                        SdcBlock { branches, project }
                    })
                    .collect();
                Body::Sdc { blocks, dense }
            }
        };
        let half = (width / 2).max(8);
        let up = [
            Conv2d::new(store, rng, "dec.up0", width, half, 3, same3, true),
            Conv2d::new(store, rng, "dec.up1", half, half, 3, same3, true),
        ];
        let head = [
            Conv2d::new(store, rng, "dec.head0", half + GUIDE_CHANNELS, half, 3, same3, true),
            Conv2d::new(store, rng, "dec.head1", half, 3, 3, same3, true),
        ];
        Decoder {
            project,
            body,
            up,
            head,
        }
    }

    /// Maps fused low-resolution features and full-resolution guidance to
    /// a 3-channel residual.
    pub fn forward(&self, g: &mut Graph, p: &Binding, fused: Var, guide: Var) -> Var {
        let x0 = self.project.forward_act(g, p, fused);
        let mut x = x0;
        match &self.body {
            Body::Vanilla(layers) => {
                for l in layers {
                    x = l.forward_act(g, p, x);
                }
            }
            Body::Resnet(blocks) => {
                for block in blocks {
                    let mut t = x;
                    for (i, l) in block.iter().enumerate() {
                        t = if i + 1 < block.len() {
                            l.forward_act(g, p, t)
                        } else {
                            l.forward(g, p, t)
                        };
                    }
                    let s = g.add(x, t);
                    x = g.leaky_relu(s, LEAKY_SLOPE);
                }
            }
            Body::Sdc { blocks, dense } => {
                let mut outputs = vec![x0];
                for block in blocks {
                    let input = if *dense { g.concat(&outputs) } else { x };
                    let branches: Vec<Var> = block.branches.iter().map(|b| b.forward_act(g, p, input)).collect();
                    let cat = g.concat(&branches);
                    x = block.project.forward_act(g, p, cat);
                    outputs.push(x);
                }
            }
        }
        for u in &self.up {
            let up = g.upsample2x(x);
            x = u.forward_act(g, p, up);
        }
        let cat = g.concat(&[x, guide]);
        let h = self.head[0].forward_act(g, p, cat);
        self.head[1].forward(g, p, h)
    }
}
