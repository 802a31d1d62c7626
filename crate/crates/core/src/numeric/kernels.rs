//! Plain-slice compute kernels behind the tape operations.
//!
//! Reductions use fixed-width partial sums so results are bitwise
//! reproducible for identical inputs.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    /// Range of output columns whose input column `ox*stride + kx - pad`
    /// lies inside `[0, w)`.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        axis_range(self.w, self.w_out, self.stride, kx, self.pad)
    }

    #[inline]
    fn row_range(&self, ky: usize) -> (usize, usize) {
        axis_range(self.h, self.h_out, self.stride, ky, self.pad)
    }
}

#[inline]
fn axis_range(len: usize, len_out: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    // first o with o*stride + k >= pad
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    // last o with o*stride + k - pad <= len - 1
    let limit = len - 1 + pad;
    let hi = if k > limit {
        0
    } else {
        ((limit - k) / stride + 1).min(len_out)
    };
    (lo.min(hi), hi)
}

/// Unfolds `input` into a `[c_in*k*k, h_out*w_out]` patch matrix.
fn im2col(g: &ConvGeom, input: &[f32], cols: &mut [f32]) {
    let (hw_in, hw_out) = (g.h * g.w, g.h_out * g.w_out);
    for c in 0..g.c_in {
        let in_plane = &input[c * hw_in..(c + 1) * hw_in];
        for ky in 0..g.k {
            let (y0, y1) = g.row_range(ky);
            for kx in 0..g.k {
                let row = &mut cols[((c * g.k + ky) * g.k + kx) * hw_out..][..hw_out];
                let (x0, x1) = g.col_range(kx);
                if x0 >= x1 || y0 >= y1 {
                    row.fill(0.0);
                    continue;
                }
                row[..y0 * g.w_out].fill(0.0);
                row[y1 * g.w_out..].fill(0.0);
                for oy in y0..y1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let irow = &in_plane[iy * g.w..(iy + 1) * g.w];
                    let orow = &mut row[oy * g.w_out..(oy + 1) * g.w_out];
                    orow[..x0].fill(0.0);
                    orow[x1..].fill(0.0);
                    let ix0 = x0 * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        orow[x0..x1].copy_from_slice(&irow[ix0..ix0 + (x1 - x0)]);
                    } else {
                        for (j, d) in orow[x0..x1].iter_mut().enumerate() {
                            *d = irow[ix0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Folds a patch-matrix gradient back onto the input, accumulating.
fn col2im(g: &ConvGeom, cols: &[f32], grad_in: &mut [f32]) {
    let (hw_in, hw_out) = (g.h * g.w, g.h_out * g.w_out);
    for c in 0..g.c_in {
        let gin_plane = &mut grad_in[c * hw_in..(c + 1) * hw_in];
        for ky in 0..g.k {
            let (y0, y1) = g.row_range(ky);
            for kx in 0..g.k {
                let row = &cols[((c * g.k + ky) * g.k + kx) * hw_out..][..hw_out];
                let (x0, x1) = g.col_range(kx);
                if x0 >= x1 {
                    continue;
                }
                for oy in y0..y1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let irow = &mut gin_plane[iy * g.w..(iy + 1) * g.w];
                    let src = &row[oy * g.w_out + x0..oy * g.w_out + x1];
                    let ix0 = x0 * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, &s) in irow[ix0..ix0 + src.len()].iter_mut().zip(src) {
                            *d += s;
                        }
                    } else {
                        for (j, &s) in src.iter().enumerate() {
                            irow[ix0 + j * g.stride] += s;
                        }
                    }
                }
            }
        }
    }
}

/// `out[m,n] += a[m,kd] * b[kd,n]`, all row-major. Four output rows share
/// each load of `b`; columns are tiled to stay in cache.
fn gemm_acc(m: usize, kd: usize, n: usize, a: &[f32], b: &[f32], out: &mut [f32]) {
    const TILE: usize = 512;
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + TILE).min(n);
        let mut rows = out.chunks_exact_mut(n);
        let mut i = 0;
        while i + 4 <= m {
            let (r0, r1, r2, r3) = (
                rows.next().unwrap(),
                rows.next().unwrap(),
                rows.next().unwrap(),
                rows.next().unwrap(),
            );
            let (o0, o1, o2, o3) = (
                &mut r0[j0..j1],
                &mut r1[j0..j1],
                &mut r2[j0..j1],
                &mut r3[j0..j1],
            );
            for r in 0..kd {
                let brow = &b[r * n + j0..r * n + j1];
                let (w0, w1, w2, w3) = (
                    a[i * kd + r],
                    a[(i + 1) * kd + r],
                    a[(i + 2) * kd + r],
                    a[(i + 3) * kd + r],
                );
                for ((((d0, d1), d2), d3), &v) in o0
                    .iter_mut()
                    .zip(o1.iter_mut())
                    .zip(o2.iter_mut())
                    .zip(o3.iter_mut())
                    .zip(brow)
                {
                    *d0 += w0 * v;
                    *d1 += w1 * v;
                    *d2 += w2 * v;
                    *d3 += w3 * v;
                }
            }
            i += 4;
        }
        for (ii, row) in rows.enumerate() {
            let i = i + ii;
            let o = &mut row[j0..j1];
            for r in 0..kd {
                let wv = a[i * kd + r];
                for (d, &v) in o.iter_mut().zip(&b[r * n + j0..r * n + j1]) {
                    *d += wv * v;
                }
            }
        }
        j0 = j1;
    }
}

/// Patch matrix of `input`, borrowed when the convolution is pointwise.
fn patches<'a>(g: &ConvGeom, input: &'a [f32]) -> std::borrow::Cow<'a, [f32]> {
    if g.k == 1 && g.stride == 1 && g.pad == 0 {
        std::borrow::Cow::Borrowed(input)
    } else {
        let mut cols = vec![0.0f32; g.c_in * g.k * g.k * g.h_out * g.w_out];
        im2col(g, input, &mut cols);
        std::borrow::Cow::Owned(cols)
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, input: &[f32], kernel: &[f32], out: &mut [f32]) {
    let ckk = g.c_in * g.k * g.k;
    let cols = patches(g, input);
    out.fill(0.0);
    gemm_acc(g.c_out, ckk, g.h_out * g.w_out, kernel, &cols, out);
}

/// Accumulates the input gradient of a convolution into `grad_in`.
pub(crate) fn conv2d_backward_input(
    g: &ConvGeom,
    kernel: &[f32],
    grad_out: &[f32],
    grad_in: &mut [f32],
) {
    let ckk = g.c_in * g.k * g.k;
    let hw_out = g.h_out * g.w_out;
    let mut kt = vec![0.0f32; ckk * g.c_out];
    for o in 0..g.c_out {
        for r in 0..ckk {
            kt[r * g.c_out + o] = kernel[o * ckk + r];
        }
    }
    if g.k == 1 && g.stride == 1 && g.pad == 0 {
        gemm_acc(ckk, g.c_out, hw_out, &kt, grad_out, grad_in);
        return;
    }
    let mut cols = vec![0.0f32; ckk * hw_out];
    gemm_acc(ckk, g.c_out, hw_out, &kt, grad_out, &mut cols);
    col2im(g, &cols, grad_in);
}

/// Accumulates the kernel gradient of a convolution into `grad_k`.
pub(crate) fn conv2d_backward_kernel(
    g: &ConvGeom,
    input: &[f32],
    grad_out: &[f32],
    grad_k: &mut [f32],
) {
    let ckk = g.c_in * g.k * g.k;
    let hw_out = g.h_out * g.w_out;
    let cols = patches(g, input);
    for o in 0..g.c_out {
        let grow = &grad_out[o * hw_out..(o + 1) * hw_out];
        for r in 0..ckk {
            grad_k[o * ckk + r] += dot(grow, &cols[r * hw_out..(r + 1) * hw_out]);
        }
    }
}

/// Dot product with eight fixed lanes.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    let s = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5]))
        + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
    s + tail
}

/// Eight-lane sum, same association as [`dot`].
#[inline]
pub(crate) fn sum(a: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let ra = ca.remainder();
    for x in ca {
        for i in 0..8 {
            lanes[i] += x[i];
        }
    }
    let tail: f32 = ra.iter().sum();
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5]))
        + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]))
        + tail
}

pub(crate) fn upsample_nearest(
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    input: &[f32],
    out: &mut [f32],
) {
    let (wo, hw_in, hw_out) = (w * f, h * w, h * w * f * f);
    for ch in 0..c {
        for y in 0..h {
            let irow = &input[ch * hw_in + y * w..ch * hw_in + (y + 1) * w];
            let base = ch * hw_out + y * f * wo;
            let first = &mut out[base..base + wo];
            for (x, &v) in irow.iter().enumerate() {
                first[x * f..(x + 1) * f].fill(v);
            }
            for r in 1..f {
                out.copy_within(base..base + wo, base + r * wo);
            }
        }
    }
}

pub(crate) fn upsample_nearest_backward(
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    grad_out: &[f32],
    grad_in: &mut [f32],
) {
    let (wo, hw_in, hw_out) = (w * f, h * w, h * w * f * f);
    for ch in 0..c {
        for y in 0..h {
            for r in 0..f {
                let orow = &grad_out[ch * hw_out + (y * f + r) * wo..][..wo];
                let irow = &mut grad_in[ch * hw_in + y * w..][..w];
                for (x, d) in irow.iter_mut().enumerate() {
                    *d += sum(&orow[x * f..(x + 1) * f]);
                }
            }
        }
    }
}

/// Per-pixel softmax over the channel axis of a `[C, HW]` buffer.
pub(crate) fn softmax_channels(c: usize, hw: usize, logits: &[f32], out: &mut [f32]) {
    let mut maxv = logits[..hw].to_vec();
    for ch in 1..c {
        for (m, &v) in maxv.iter_mut().zip(&logits[ch * hw..(ch + 1) * hw]) {
            if v > *m {
                *m = v;
            }
        }
    }
    let mut denom = vec![0.0f32; hw];
    for ch in 0..c {
        let src = &logits[ch * hw..(ch + 1) * hw];
        let dst = &mut out[ch * hw..(ch + 1) * hw];
        for p in 0..hw {
            let e = (src[p] - maxv[p]).exp();
            dst[p] = e;
            denom[p] += e;
        }
    }
    for ch in 0..c {
        for (d, &z) in out[ch * hw..(ch + 1) * hw].iter_mut().zip(&denom) {
            *d /= z;
        }
    }
}
