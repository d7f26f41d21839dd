//! Raw numeric kernels behind the graph ops. All buffers are planar `[C, H, W]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn same(kernel: usize) -> Self {
        ConvGeom {
            stride: 1,
            pad: kernel / 2,
            dilation: 1,
        }
    }

    pub const fn dilated(kernel: usize, dilation: usize) -> Self {
        ConvGeom {
            stride: 1,
            pad: dilation * (kernel / 2),
            dilation,
        }
    }

    pub const fn strided(kernel: usize, stride: usize) -> Self {
        ConvGeom {
            stride,
            pad: kernel / 2,
            dilation: 1,
        }
    }

    pub fn output_size(&self, input: usize, kernel: usize) -> usize {
        let span = self.dilation * (kernel - 1) + 1;
        assert!(
            input + 2 * self.pad >= span,
            "input {input} too small for kernel span {span}"
        );
        (input + 2 * self.pad - span) / self.stride + 1
    }

    fn is_pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c = op(a) * op(b) + beta * c` where `a` is stored `a_rows x a_cols`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &[f64],
    a_dims: (usize, usize),
    trans_a: bool,
    b: &[f64],
    b_dims: (usize, usize),
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    let a = ArrayView2::from_shape(a_dims, a).expect("gemm lhs shape");
    let b = ArrayView2::from_shape(b_dims, b).expect("gemm rhs shape");
    let a = if trans_a { a.t() } else { a };
    let b = if trans_b { b.t() } else { b };
    let mut c = ArrayViewMut2::from_shape((a.nrows(), b.ncols()), c).expect("gemm output shape");
    general_mat_mul(1.0, &a, &b, beta, &mut c);
}

struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl ConvDims {
    fn new(x: &Tensor, weight: &Tensor, geom: ConvGeom) -> (usize, Self) {
        let (c, h, w) = x.dims3();
        let &[o, wc, kh, kw] = weight.shape() else {
            panic!("conv weight must be [O, C, kh, kw], got {:?}", weight.shape());
        };
        assert_eq!(wc, c, "conv expects {wc} input channels, got {c}");
        let ho = geom.output_size(h, kh);
        let wo = geom.output_size(w, kw);
        (
            o,
            ConvDims {
                c,
                h,
                w,
                kh,
                kw,
                ho,
                wo,
            },
        )
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], d: &ConvDims, g: ConvGeom) -> Vec<f64> {
    let cols = d.cols();
    let mut col = vec![0.0; d.rows() * cols];
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = (c * d.kh + i) * d.kw + j;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + i * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let dst_row = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    for (ox, v) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j * g.dilation) as isize - g.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            *v = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], d: &ConvDims, g: ConvGeom) -> Vec<f64> {
    let cols = d.cols();
    let mut x = vec![0.0; d.c * d.h * d.w];
    for c in 0..d.c {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = (c * d.kh + i) * d.kw + j;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + i * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let src_row = &src[oy * d.wo..(oy + 1) * d.wo];
                    for (ox, v) in src_row.iter().enumerate() {
                        let ix = (ox * g.stride + j * g.dilation) as isize - g.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    x
}

pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, geom: ConvGeom) -> Tensor {
    let (o, d) = ConvDims::new(x, weight, geom);
    let cols = d.cols();
    let mut out = vec![0.0; o * cols];
    if let Some(b) = bias {
        assert_eq!(b.len(), o, "bias length");
        for (k, &bv) in b.data().iter().enumerate() {
            out[k * cols..(k + 1) * cols].fill(bv);
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    if geom.is_pointwise(d.kh, d.kw) {
        gemm(
            weight.data(),
            (o, d.rows()),
            false,
            x.data(),
            (d.rows(), cols),
            false,
            &mut out,
            beta,
        );
    } else {
        let col = im2col(x.data(), &d, geom);
        gemm(
            weight.data(),
            (o, d.rows()),
            false,
            &col,
            (d.rows(), cols),
            false,
            &mut out,
            beta,
        );
    }
    Tensor::from_vec(vec![o, d.ho, d.wo], out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(x: &Tensor, weight: &Tensor, dy: &Tensor, geom: ConvGeom, need_input: bool) -> ConvGrads {
    let (o, d) = ConvDims::new(x, weight, geom);
    let cols = d.cols();
    let dyd = dy.data();
    let pointwise = geom.is_pointwise(d.kh, d.kw);
    let owned_col;
    let col: &[f64] = if pointwise {
        x.data()
    } else {
        owned_col = im2col(x.data(), &d, geom);
        &owned_col
    };

    let mut dw = vec![0.0; o * d.rows()];
    gemm(dyd, (o, cols), false, col, (d.rows(), cols), true, &mut dw, 0.0);

    let db = (0..o).map(|k| dyd[k * cols..(k + 1) * cols].iter().sum()).collect();

    let input = need_input.then(|| {
        let mut dcol = vec![0.0; d.rows() * cols];
        gemm(
            weight.data(),
            (o, d.rows()),
            true,
            dyd,
            (o, cols),
            false,
            &mut dcol,
            0.0,
        );
        let dx = if pointwise { dcol } else { col2im(&dcol, &d, geom) };
        Tensor::from_vec(vec![d.c, d.h, d.w], dx)
    });

    ConvGrads {
        input,
        weight: Tensor::from_vec(weight.shape().to_vec(), dw),
        bias: Tensor::from_vec(vec![o], db),
    }
}

/// Source taps for 2x bilinear upsampling with half-pixel centers.
fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let lo = src.floor();
            let frac = src - lo;
            let i0 = (lo.max(0.0) as usize).min(n - 1);
            let i1 = ((lo + 1.0).max(0.0) as usize).min(n - 1);
            (i0, i1, frac)
        })
        .collect()
}

pub fn upsample2x(x: &Tensor) -> Tensor {
    let (c, h, w) = x.dims3();
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let src = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let p = &src[ch * h * w..(ch + 1) * h * w];
        let q = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                q[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::from_vec(vec![c, oh, ow], out)
}

pub fn upsample2x_backward(dy: &Tensor, c: usize, h: usize, w: usize) -> Tensor {
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let g = dy.data();
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let p = &mut dx[ch * h * w..(ch + 1) * h * w];
        let q = &g[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = q[oy * ow + ox];
                p[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                p[y0 * w + x1] += v * (1.0 - fy) * fx;
                p[y1 * w + x0] += v * fy * (1.0 - fx);
                p[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    Tensor::from_vec(vec![c, h, w], dx)
}

pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.dims3();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims, got {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let src = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let b = ch * h * w + 2 * oy * w + 2 * ox;
                out[(ch * oh + oy) * ow + ox] = 0.25 * (src[b] + src[b + 1] + src[b + w] + src[b + w + 1]);
            }
        }
    }
    Tensor::from_vec(vec![c, oh, ow], out)
}

pub fn avg_pool2_backward(dy: &Tensor, c: usize, h: usize, w: usize) -> Tensor {
    let (oh, ow) = (h / 2, w / 2);
    let g = dy.data();
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = 0.25 * g[(ch * oh + oy) * ow + ox];
                let b = ch * h * w + 2 * oy * w + 2 * ox;
                dx[b] += v;
                dx[b + 1] += v;
                dx[b + w] += v;
                dx[b + w + 1] += v;
            }
        }
    }
    Tensor::from_vec(vec![c, h, w], dx)
}

/// Separable "valid" filtering of every channel with the same 1-D kernel.
pub fn blur_valid(x: &Tensor, kernel: &[f64]) -> Tensor {
    let (c, h, w) = x.dims3();
    let n = kernel.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let src = x.data();
    let mut tmp = vec![0.0; c * h * ow];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst = &mut tmp[(ch * h + y) * ow..(ch * h + y + 1) * ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = kernel.iter().zip(&row[ox..ox + n]).map(|(k, v)| k * v).sum();
            }
        }
    }
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let dst = &mut out[(ch * oh + oy) * ow..(ch * oh + oy + 1) * ow];
            for (i, &k) in kernel.iter().enumerate() {
                let srow = &tmp[(ch * h + oy + i) * ow..(ch * h + oy + i + 1) * ow];
                for (d, s) in dst.iter_mut().zip(srow) {
                    *d += k * s;
                }
            }
        }
    }
    Tensor::from_vec(vec![c, oh, ow], out)
}

pub fn blur_valid_backward(dy: &Tensor, kernel: &[f64], c: usize, h: usize, w: usize) -> Tensor {
    let n = kernel.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let g = dy.data();
    let mut dtmp = vec![0.0; c * h * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let srow = &g[(ch * oh + oy) * ow..(ch * oh + oy + 1) * ow];
            for (i, &k) in kernel.iter().enumerate() {
                let drow = &mut dtmp[(ch * h + oy + i) * ow..(ch * h + oy + i + 1) * ow];
                for (d, s) in drow.iter_mut().zip(srow) {
                    *d += k * s;
                }
            }
        }
    }
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let trow = &dtmp[(ch * h + y) * ow..(ch * h + y + 1) * ow];
            let drow = &mut dx[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (ox, &t) in trow.iter().enumerate() {
                for (i, &k) in kernel.iter().enumerate() {
                    drow[ox + i] += k * t;
                }
            }
        }
    }
    Tensor::from_vec(vec![c, h, w], dx)
}
