//! Forward and backward kernels for the network layers. Convolutions are
//! lowered to one GEMM over the whole batch via im2col.

use serde::{Deserialize, Serialize};

use super::tensor::{matmul, Scalar, Tensor};

/// Geometry of a 2-D convolution (or of the forward convolution a
/// transposed convolution inverts).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub dh: usize,
    pub dw: usize,
}

impl ConvGeom {
    /// Square kernel with "same" padding for stride 1: `pad = dilation·(k−1)/2`.
    pub fn same(k: usize, stride: usize, dilation: usize) -> Self {
        let pad = dilation * (k - 1) / 2;
        Self {
            kh: k,
            kw: k,
            sh: stride,
            sw: stride,
            ph: pad,
            pw: pad,
            dh: dilation,
            dw: dilation,
        }
    }

    pub fn pointwise() -> Self {
        Self::same(1, 1, 1)
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let eh = self.dh * (self.kh - 1) + 1;
        let ew = self.dw * (self.kw - 1) + 1;
        assert!(
            h + 2 * self.ph >= eh && w + 2 * self.pw >= ew,
            "input {h}x{w} smaller than kernel extent {eh}x{ew}"
        );
        (
            (h + 2 * self.ph - eh) / self.sh + 1,
            (w + 2 * self.pw - ew) / self.sw + 1,
        )
    }

    /// Output side of the transposed convolution with the given output padding.
    pub fn transposed_out_size(&self, h: usize, w: usize, out_pad: usize) -> (usize, usize) {
        (
            (h - 1) * self.sh + self.dh * (self.kh - 1) + out_pad + 1 - 2 * self.ph,
            (w - 1) * self.sw + self.dw * (self.kw - 1) + out_pad + 1 - 2 * self.pw,
        )
    }

    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }
}

/// Output columns `oj` whose input column `oj·sw + off` lies in `[0, w)`.
#[inline]
fn valid_cols(off: isize, sw: usize, w: usize, wo: usize) -> (usize, usize) {
    let sw = sw as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + sw - 1) / sw };
    let hi = if off >= w as isize {
        0
    } else {
        ((w as isize - off) + sw - 1) / sw
    };
    let lo = (lo as usize).min(wo);
    (lo, (hi as usize).clamp(lo, wo))
}

/// Writes the patches of one image `x` (`c × h × w`) into the column block
/// starting at `col0` of `cols` (`c·kh·kw` rows, `stride` columns).
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    cols: &mut [T],
    stride: usize,
    col0: usize,
) {
    let (ho, wo) = g.out_size(h, w);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * stride + col0..row * stride + col0 + ho * wo];
                let off = (kj * g.dw) as isize - g.pw as isize;
                let (lo, hi) = valid_cols(off, g.sw, w, wo);
                for oi in 0..ho {
                    let ii = (oi * g.sh + ki * g.dh) as isize - g.ph as isize;
                    let out_row = &mut dst[oi * wo..(oi + 1) * wo];
                    if ii < 0 || ii >= h as isize || lo == hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    let start = (lo as isize * g.sw as isize + off) as usize;
                    if g.sw == 1 {
                        out_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (slot, &v) in out_row[lo..hi]
                            .iter_mut()
                            .zip(src[start..].iter().step_by(g.sw))
                        {
                            *slot = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a column block back into `x`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    stride: usize,
    col0: usize,
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    x: &mut [T],
) {
    let (ho, wo) = g.out_size(h, w);
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * stride + col0..row * stride + col0 + ho * wo];
                let off = (kj * g.dw) as isize - g.pw as isize;
                let (lo, hi) = valid_cols(off, g.sw, w, wo);
                if lo == hi {
                    continue;
                }
                for oi in 0..ho {
                    let ii = (oi * g.sh + ki * g.dh) as isize - g.ph as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    let start = (lo as isize * g.sw as isize + off) as usize;
                    let src_row = &src[oi * wo + lo..oi * wo + hi];
                    if g.sw == 1 {
                        for (slot, &v) in dst[start..start + src_row.len()].iter_mut().zip(src_row)
                        {
                            *slot += v;
                        }
                    } else {
                        for (slot, &v) in dst[start..].iter_mut().step_by(g.sw).zip(src_row) {
                            *slot += v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], b: usize, c: usize, p: usize) {
    for bi in 0..b {
        for (ci, &bv) in bias.iter().enumerate().take(c) {
            for v in &mut out[(bi * c + ci) * p..(bi * c + ci + 1) * p] {
                *v += bv;
            }
        }
    }
}

fn bias_grad<T: Scalar>(dy: &Tensor<T>) -> Vec<T> {
    let (b, c, h, w) = dy.dims4();
    let p = h * w;
    let mut db = vec![T::zero(); c];
    for bi in 0..b {
        for (ci, slot) in db.iter_mut().enumerate() {
            *slot += dy.data[(bi * c + ci) * p..(bi * c + ci + 1) * p]
                .iter()
                .copied()
                .sum::<T>();
        }
    }
    db
}

impl ConvGeom {
    /// 1×1, stride 1, no padding: the input already is its own column matrix.
    fn is_identity_lowering(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }
}

/// Column matrix (`c·kh·kw × Ho·Wo`) of one image, borrowed when the
/// lowering is the identity and written into `scratch` otherwise.
fn columns<'a, T: Scalar>(
    x: &'a [T],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    scratch: &'a mut Vec<T>,
) -> &'a [T] {
    if g.is_identity_lowering() {
        return x;
    }
    let (ho, wo) = g.out_size(h, w);
    let p = ho * wo;
    scratch.resize(c * g.taps() * p, T::zero());
    im2col(x, c, h, w, g, scratch, p, 0);
    scratch
}

// Convolutions run one image at a time so temporaries stay small and are
// reused across the batch; batch items are visited in order, which keeps
// accumulated weight gradients deterministic.

/// `x: [B, Ci, H, W]`, `w: [Co, Ci, kh, kw]` → `[B, Co, Ho, Wo]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let (b, ci, h, wd) = x.dims4();
    let co = w.shape[0];
    assert_eq!(w.shape, vec![co, ci, g.kh, g.kw], "conv weight shape");
    let (ho, wo) = g.out_size(h, wd);
    let p = ho * wo;
    let k = ci * g.taps();
    let mut out = vec![T::zero(); b * co * p];
    let mut scratch = Vec::new();
    for bi in 0..b {
        let cols = columns(
            &x.data[bi * ci * h * wd..(bi + 1) * ci * h * wd],
            ci,
            h,
            wd,
            g,
            &mut scratch,
        );
        matmul(
            co,
            k,
            p,
            &w.data,
            false,
            cols,
            false,
            &mut out[bi * co * p..(bi + 1) * co * p],
            false,
        );
    }
    if let Some(bias) = bias {
        add_bias(&mut out, &bias.data, b, co, p);
    }
    Tensor::from_vec(&[b, co, ho, wo], out)
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: &ConvGeom,
    need_dx: bool,
) -> ConvGrads<T> {
    let (b, ci, h, wd) = x.dims4();
    let (_, co, ho, wo) = dy.dims4();
    let p = ho * wo;
    let k = ci * g.taps();
    let plane_in = ci * h * wd;
    let mut dw = vec![T::zero(); co * k];
    let mut dx = if need_dx {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    let mut scratch = Vec::new();
    let mut dcols = Vec::new();
    for bi in 0..b {
        let dyb = &dy.data[bi * co * p..(bi + 1) * co * p];
        let cols = columns(
            &x.data[bi * plane_in..(bi + 1) * plane_in],
            ci,
            h,
            wd,
            g,
            &mut scratch,
        );
        matmul(co, p, k, dyb, false, cols, true, &mut dw, bi > 0);
        if need_dx {
            let dxb = &mut dx[bi * plane_in..(bi + 1) * plane_in];
            if g.is_identity_lowering() {
                matmul(k, co, p, &w.data, true, dyb, false, dxb, false);
            } else {
                dcols.resize(k * p, T::zero());
                matmul(k, co, p, &w.data, true, dyb, false, &mut dcols, false);
                col2im(&dcols, p, 0, ci, h, wd, g, dxb);
            }
        }
    }
    ConvGrads {
        dx: need_dx.then(|| Tensor::from_vec(&x.shape, dx)),
        dw: Tensor::from_vec(&w.shape, dw),
        db: Tensor::from_vec(&[co], bias_grad(dy)),
    }
}

/// Transposed convolution. `x: [B, Ci, H, W]`, `w: [Ci, Co, kh, kw]`; `g` is
/// the geometry of the forward convolution mapping the output back to `x`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
    out_pad: usize,
) -> Tensor<T> {
    let (b, ci, h, wd) = x.dims4();
    let co = w.shape[1];
    assert_eq!(
        w.shape,
        vec![ci, co, g.kh, g.kw],
        "transposed conv weight shape"
    );
    let (ho, wo) = g.transposed_out_size(h, wd, out_pad);
    debug_assert_eq!(g.out_size(ho, wo), (h, wd));
    let p = h * wd;
    let k = co * g.taps();
    let plane_out = co * ho * wo;
    let mut out = vec![T::zero(); b * plane_out];
    let mut cols = vec![T::zero(); k * p];
    for bi in 0..b {
        matmul(
            k,
            ci,
            p,
            &w.data,
            true,
            &x.data[bi * ci * p..(bi + 1) * ci * p],
            false,
            &mut cols,
            false,
        );
        col2im(
            &cols,
            p,
            0,
            co,
            ho,
            wo,
            g,
            &mut out[bi * plane_out..(bi + 1) * plane_out],
        );
    }
    if let Some(bias) = bias {
        add_bias(&mut out, &bias.data, b, co, ho * wo);
    }
    Tensor::from_vec(&[b, co, ho, wo], out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: &ConvGeom,
    need_dx: bool,
) -> ConvGrads<T> {
    let (b, ci, h, wd) = x.dims4();
    let (_, co, ho, wo) = dy.dims4();
    let p = h * wd;
    let k = co * g.taps();
    let plane_out = co * ho * wo;
    let mut dw = vec![T::zero(); ci * k];
    let mut dx = if need_dx {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    let mut scratch = Vec::new();
    for bi in 0..b {
        let dcols = columns(
            &dy.data[bi * plane_out..(bi + 1) * plane_out],
            co,
            ho,
            wo,
            g,
            &mut scratch,
        );
        let xb = &x.data[bi * ci * p..(bi + 1) * ci * p];
        matmul(ci, p, k, xb, false, dcols, true, &mut dw, bi > 0);
        if need_dx {
            matmul(
                ci,
                k,
                p,
                &w.data,
                false,
                dcols,
                false,
                &mut dx[bi * ci * p..(bi + 1) * ci * p],
                false,
            );
        }
    }
    ConvGrads {
        dx: need_dx.then(|| Tensor::from_vec(&x.shape, dx)),
        dw: Tensor::from_vec(&w.shape, dw),
        db: Tensor::from_vec(&[co], bias_grad(dy)),
    }
}

/// Non-overlapping `k × k` average pooling.
pub fn avg_pool_forward<T: Scalar>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    assert!(
        h % k == 0 && w % k == 0,
        "pool window {k} must divide {h}x{w}"
    );
    let (ho, wo) = (h / k, w / k);
    let scale = T::of(1.0 / (k * k) as f64);
    let mut out = vec![T::zero(); b * c * ho * wo];
    for plane in 0..b * c {
        let src = &x.data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for i in 0..h {
            let out_row = &mut dst[(i / k) * wo..(i / k + 1) * wo];
            for (slot, chunk) in out_row
                .iter_mut()
                .zip(src[i * w..(i + 1) * w].chunks_exact(k))
            {
                *slot += chunk.iter().copied().sum::<T>();
            }
        }
        for v in dst.iter_mut() {
            *v *= scale;
        }
    }
    Tensor::from_vec(&[b, c, ho, wo], out)
}

pub fn avg_pool_backward<T: Scalar>(dy: &Tensor<T>, k: usize) -> Tensor<T> {
    let (b, c, ho, wo) = dy.dims4();
    let (h, w) = (ho * k, wo * k);
    let scale = T::of(1.0 / (k * k) as f64);
    let mut dx = vec![T::zero(); b * c * h * w];
    for plane in 0..b * c {
        let src = &dy.data[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for i in 0..h {
            let in_row = &src[(i / k) * wo..(i / k + 1) * wo];
            for (chunk, &g) in dst[i * w..(i + 1) * w].chunks_exact_mut(k).zip(in_row) {
                chunk.fill(g * scale);
            }
        }
    }
    Tensor::from_vec(&[b, c, h, w], dx)
}

/// Cached quantities of a global-context forward pass, per batch item.
#[derive(Debug, Clone)]
pub struct GcCache<T> {
    /// Softmax weights over positions, `[B, P]`.
    pub alpha: Vec<T>,
    /// Attention-pooled context vectors, `[B, C]`.
    pub context: Vec<T>,
}

/// `z_i = x_i + Wv · Σ_j softmax_j(wk · x_j) · x_j` for each batch item.
/// `wk: [1, C, 1, 1]`, `wv: [C, C, 1, 1]`.
pub fn gc_forward<T: Scalar>(
    x: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
) -> (Tensor<T>, GcCache<T>) {
    let (b, c, h, w) = x.dims4();
    assert_eq!(wk.len(), c, "gc key weights must have {c} entries");
    assert_eq!(wv.len(), c * c, "gc value weights must be {c}x{c}");
    let p = h * w;
    let mut out = x.data.clone();
    let mut alpha = vec![T::zero(); b * p];
    let mut context = vec![T::zero(); b * c];
    for bi in 0..b {
        let xb = &x.data[bi * c * p..(bi + 1) * c * p];
        let a = &mut alpha[bi * p..(bi + 1) * p];
        for (ci, &k) in wk.data.iter().enumerate() {
            for (slot, &v) in a.iter_mut().zip(&xb[ci * p..(ci + 1) * p]) {
                *slot += k * v;
            }
        }
        let max = a.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in a.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in a.iter_mut() {
            *v = *v / total;
        }
        let ctx = &mut context[bi * c..(bi + 1) * c];
        for (ci, slot) in ctx.iter_mut().enumerate() {
            *slot = xb[ci * p..(ci + 1) * p]
                .iter()
                .zip(a.iter())
                .map(|(&v, &al)| v * al)
                .sum();
        }
        let ob = &mut out[bi * c * p..(bi + 1) * c * p];
        for co in 0..c {
            let shift: T = (0..c).map(|ci| wv.data[co * c + ci] * ctx[ci]).sum();
            for v in &mut ob[co * p..(co + 1) * p] {
                *v += shift;
            }
        }
    }
    (Tensor::from_vec(&x.shape, out), GcCache { alpha, context })
}

pub struct GcGrads<T> {
    pub dx: Tensor<T>,
    pub dwk: Tensor<T>,
    pub dwv: Tensor<T>,
}

pub fn gc_backward<T: Scalar>(
    x: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
    cache: &GcCache<T>,
    dz: &Tensor<T>,
) -> GcGrads<T> {
    let (b, c, h, w) = x.dims4();
    let p = h * w;
    let mut dx = dz.data.clone();
    let mut dwk = vec![T::zero(); c];
    let mut dwv = vec![T::zero(); c * c];
    for bi in 0..b {
        let xb = &x.data[bi * c * p..(bi + 1) * c * p];
        let dzb = &dz.data[bi * c * p..(bi + 1) * c * p];
        let a = &cache.alpha[bi * p..(bi + 1) * p];
        let ctx = &cache.context[bi * c..(bi + 1) * c];
        let dv: Vec<T> = (0..c)
            .map(|co| dzb[co * p..(co + 1) * p].iter().copied().sum())
            .collect();
        for co in 0..c {
            for ci in 0..c {
                dwv[co * c + ci] += dv[co] * ctx[ci];
            }
        }
        let dctx: Vec<T> = (0..c)
            .map(|ci| (0..c).map(|co| wv.data[co * c + ci] * dv[co]).sum())
            .collect();
        // dα_j = dctx · x_j ; dl = α ⊙ (dα − Σ α dα)
        let mut dalpha = vec![T::zero(); p];
        for ci in 0..c {
            for (slot, &v) in dalpha.iter_mut().zip(&xb[ci * p..(ci + 1) * p]) {
                *slot += dctx[ci] * v;
            }
        }
        let mean: T = a.iter().zip(&dalpha).map(|(&al, &d)| al * d).sum();
        let dl: Vec<T> = a
            .iter()
            .zip(&dalpha)
            .map(|(&al, &d)| al * (d - mean))
            .collect();
        let dxb = &mut dx[bi * c * p..(bi + 1) * c * p];
        for ci in 0..c {
            let row = &mut dxb[ci * p..(ci + 1) * p];
            let xrow = &xb[ci * p..(ci + 1) * p];
            let mut acc = T::zero();
            for j in 0..p {
                row[j] += a[j] * dctx[ci] + dl[j] * wk.data[ci];
                acc += dl[j] * xrow[j];
            }
            dwk[ci] += acc;
        }
    }
    GcGrads {
        dx: Tensor::from_vec(&x.shape, dx),
        dwk: Tensor::from_vec(&wk.shape, dwk),
        dwv: Tensor::from_vec(&wv.shape, dwv),
    }
}
