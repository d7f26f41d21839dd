use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{gaussian_kernel, SSIM_SIGMA, SSIM_WINDOW};
use crate::radiometry::{mu_law, DEFAULT_MU};
use crate::stack_io::RadianceImage;
use crate::tensor::{Graph, Var};

/// Standard five-scale MS-SSIM exponents truncated to three scales and renormalized.
pub const MS_SSIM_WEIGHTS: [f64; 3] = [0.0448 / 0.6305, 0.2856 / 0.6305, 0.3001 / 0.6305];
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const MS_SSIM_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LossKind {
    #[default]
    L2,
    L1,
    L2L1,
    L1MsSsim,
    L2MsSsim,
    L1L2MsSsim,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::L2,
        LossKind::L1,
        LossKind::L2L1,
        LossKind::L1MsSsim,
        LossKind::L2MsSsim,
        LossKind::L1L2MsSsim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::L1 => "l1",
            LossKind::L2L1 => "l2+l1",
            LossKind::L1MsSsim => "l1+msssim",
            LossKind::L2MsSsim => "l2+msssim",
            LossKind::L1L2MsSsim => "l1+l2+msssim",
        }
    }

    /// `(l2, l1, msssim)` membership.
    pub fn terms(self) -> (bool, bool, bool) {
        match self {
            LossKind::L2 => (true, false, false),
            LossKind::L1 => (false, true, false),
            LossKind::L2L1 => (true, true, false),
            LossKind::L1MsSsim => (false, true, true),
            LossKind::L2MsSsim => (true, false, true),
            LossKind::L1L2MsSsim => (true, true, true),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::BadConfig(format!("unknown loss {s:?}")))
    }
}

impl Serialize for LossKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LossKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn l2_graph(g: &mut Graph, pred: Var, target: Var) -> Var {
    let d = g.sub(pred, target);
    let sq = g.mul(d, d);
    g.mean_all(sq)
}

pub fn l1_graph(g: &mut Graph, pred: Var, target: Var) -> Var {
    let d = g.sub(pred, target);
    let a = g.abs(d);
    g.mean_all(a)
}

/// `(mean luminance term, mean contrast-structure term)` of SSIM with a
/// Gaussian window no larger than the image.
fn ssim_terms(g: &mut Graph, x: Var, y: Var) -> (Var, Var) {
    let (_, h, w) = g.value(x).dims3();
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k: Arc<[f64]> = gaussian_kernel(size, SSIM_SIGMA).into();
    let mx = g.blur(x, k.clone());
    let my = g.blur(y, k.clone());
    let xx = g.mul(x, x);
    let yy = g.mul(y, y);
    let xy = g.mul(x, y);
    let sxx = g.blur(xx, k.clone());
    let syy = g.blur(yy, k.clone());
    let sxy = g.blur(xy, k);
    let mx2 = g.mul(mx, mx);
    let my2 = g.mul(my, my);
    let mxy = g.mul(mx, my);
    let vx = g.sub(sxx, mx2);
    let vy = g.sub(syy, my2);
    let cxy = g.sub(sxy, mxy);

    let l_num = g.scale(mxy, 2.0);
    let l_num = g.add_scalar(l_num, SSIM_C1);
    let l_den = g.add(mx2, my2);
    let l_den = g.add_scalar(l_den, SSIM_C1);
    let l = g.div(l_num, l_den);

    let cs_num = g.scale(cxy, 2.0);
    let cs_num = g.add_scalar(cs_num, SSIM_C2);
    let cs_den = g.add(vx, vy);
    let cs_den = g.add_scalar(cs_den, SSIM_C2);
    let cs = g.div(cs_num, cs_den);
    (g.mean_all(l), g.mean_all(cs))
}

/// Three-scale MS-SSIM of images in `[0, 1]`.
pub fn ms_ssim_graph(g: &mut Graph, x: Var, y: Var) -> Var {
    let (mut x, mut y) = (x, y);
    let mut acc: Option<Var> = None;
    let last = MS_SSIM_WEIGHTS.len() - 1;
    for (j, &wj) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (l, cs) = ssim_terms(g, x, y);
        let term = if j == last { g.mul(l, cs) } else { cs };
        let term = g.clamp_min(term, MS_SSIM_FLOOR);
        let term = g.pow(term, wj);
        acc = Some(match acc {
            None => term,
            Some(a) => g.mul(a, term),
        });
        if j < last {
            let (_, h, w) = g.value(x).dims3();
            if h >= 2 && w >= 2 {
                x = g.avg_pool2(x);
                y = g.avg_pool2(y);
            }
        }
    }
    acc.expect("at least one scale")
}

/// Tonemapped-domain loss between graph nodes.
pub fn loss_graph(g: &mut Graph, pred: Var, target: Var, kind: LossKind) -> Var {
    let (use_l2, use_l1, use_ms) = kind.terms();
    let mut parts = Vec::with_capacity(3);
    if use_l2 {
        parts.push(l2_graph(g, pred, target));
    }
    if use_l1 {
        parts.push(l1_graph(g, pred, target));
    }
    if use_ms {
        let ms = ms_ssim_graph(g, pred, target);
        let neg = g.scale(ms, -1.0);
        parts.push(g.add_scalar(neg, 1.0));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p);
    }
    total
}

/// Loss between linear radiance images after μ-law tonemapping with a shared `peak`.
pub fn loss_tonemapped(pred: &RadianceImage, gt: &RadianceImage, kind: LossKind, peak: f64) -> Result<f64> {
    pred.image().ensure_same_shape(gt.image())?;
    let tm = |im: &RadianceImage| im.image().to_tensor().map(|v| mu_law(v / peak, DEFAULT_MU));
    let mut g = Graph::new();
    let p = g.constant(tm(pred));
    let t = g.constant(tm(gt));
    let l = loss_graph(&mut g, p, t, kind);
    Ok(g.value(l).item())
}
