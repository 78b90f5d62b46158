//! Slice-level compute kernels behind the graph operations.
//!
//! Convolutions are lowered to matrix products: `im2col` lays out one row per kernel
//! tap (channel-major, then kernel row, then kernel column, matching the flattened
//! `[F, C, k, k]` weight layout) and one column per output position. Batches are
//! lowered in fixed-size sample groups, one group per task; per-group partial weight
//! gradients are summed in group order, so results do not depend on the thread count.

use super::Real;
use crate::{par, Error, Result};

/// `C ← A·B + beta·C` with `A: m×k`, `B: k×n`, `C: m×n`, each given as a slice and
/// `(row stride, column stride)`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: (usize, usize),
    b: &[T],
    sb: (usize, usize),
    beta: T,
    c: &mut [T],
    sc: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let reach = |rows: usize, cols: usize, s: (usize, usize)| (rows - 1) * s.0 + (cols - 1) * s.1;
    assert!(reach(m, n, sc) < c.len(), "gemm: C too small");
    if k > 0 {
        assert!(reach(m, k, sa) < a.len(), "gemm: A too small");
        assert!(reach(k, n, sb) < b.len(), "gemm: B too small");
    }
    // SAFETY: the assertions above bound every index the product touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        )
    }
}

/// Freshly allocated row-major `m×n` product `A·B`.
pub fn gemm_new<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: (usize, usize),
    b: &[T],
    sb: (usize, usize),
) -> Vec<T> {
    if m == 0 || n == 0 || k == 0 {
        return vec![T::zero(); m * n];
    }
    let reach = |rows: usize, cols: usize, s: (usize, usize)| (rows - 1) * s.0 + (cols - 1) * s.1;
    assert!(reach(m, k, sa) < a.len(), "gemm: A too small");
    assert!(reach(k, n, sb) < b.len(), "gemm: B too small");
    let mut c = Vec::with_capacity(m * n);
    // SAFETY: A and B are bounds-checked above and C has capacity for m·n elements.
    // With beta = 0 the kernel overwrites every element of C without reading it, so
    // all m·n elements are initialized before `set_len`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            T::zero(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        c.set_len(m * n);
    }
    c
}

/// Geometry of a 2-D convolution over a `c × h × w` image with a square kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if k == 0 || stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(format!(
                "kernel {k} (stride {stride}, pad {pad}) does not fit a {h}×{w} input"
            )));
        }
        Ok(ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Number of output positions.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Length of one receptive-field row.
    pub fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Range of output columns `ox` whose input column `ox·stride + kx − pad` lies in
/// `0..w`.
#[inline]
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let ow = g.out_w();
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride).min(ow);
    let hi = (g.w + g.pad)
        .saturating_sub(kx)
        .div_ceil(g.stride)
        .clamp(lo, ow);
    (lo, hi)
}

/// `cols[c·k² + ky·k + kx, oy·ow + ox] = img[c, y, x]` (zero outside the image).
pub fn im2col<T: Real>(g: &ConvGeom, img: &[T]) -> Vec<T> {
    let p = g.positions();
    let mut cols = vec![T::zero(); g.patch() * p];
    im2col_into(g, img, &mut cols, p);
    cols
}

/// [`im2col`] into a zeroed matrix whose rows are `ld` apart; only in-image entries
/// are written.
fn im2col_into<T: Real>(g: &ConvGeom, img: &[T], cols: &mut [T], ld: usize) {
    let (ow, p) = (g.out_w(), g.positions());
    if p == 0 {
        return;
    }
    for r in 0..g.patch() {
        let (c, ky, kx) = (r / (g.k * g.k), r / g.k % g.k, r % g.k);
        let plane = &img[c * g.h * g.w..][..g.h * g.w];
        let (lo, hi) = valid_cols(g, kx);
        if lo == hi {
            continue;
        }
        let x0 = lo * g.stride + kx - g.pad;
        for (oy, row) in cols[r * ld..][..p].chunks_exact_mut(ow).enumerate() {
            let Some(y) = (oy * g.stride + ky).checked_sub(g.pad).filter(|&y| y < g.h) else {
                continue;
            };
            let src = &plane[y * g.w + x0..(y + 1) * g.w];
            if g.stride == 1 {
                row[lo..hi].copy_from_slice(&src[..hi - lo]);
            } else if g.stride == 2 {
                // Pairs vectorize where a strided iterator does not.
                let (body, last) = row[lo..hi].split_at_mut(hi - lo - 1);
                body.iter_mut()
                    .zip(src.chunks_exact(2))
                    .for_each(|(d, pair)| *d = pair[0]);
                last[0] = src[2 * (hi - lo - 1)];
            } else {
                row[lo..hi]
                    .iter_mut()
                    .zip(src.iter().step_by(g.stride))
                    .for_each(|(d, &v)| *d = v);
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds every entry back into `img`.
pub fn col2im<T: Real>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    col2im_from(g, cols, g.positions(), img)
}

/// [`col2im`] from a matrix whose rows are `ld` apart.
fn col2im_from<T: Real>(g: &ConvGeom, cols: &[T], ld: usize, img: &mut [T]) {
    let (oh, ow, p) = (g.out_h(), g.out_w(), g.positions());
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let srcs = &cols[((c * g.k + ky) * g.k + kx) * ld..][..p];
                let (lo, hi) = valid_cols(g, kx);
                if lo == hi {
                    continue;
                }
                for oy in 0..oh {
                    let Some(y) = (oy * g.stride + ky).checked_sub(g.pad).filter(|&y| y < g.h)
                    else {
                        continue;
                    };
                    let row = &srcs[oy * ow..][lo..hi];
                    let dst = &mut plane[y * g.w..][..g.w][lo * g.stride + kx - g.pad..];
                    if g.stride == 1 {
                        dst.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    } else if g.stride == 2 {
                        let (body, last) = row.split_at(row.len() - 1);
                        dst.chunks_exact_mut(2)
                            .zip(body)
                            .for_each(|(d, &v)| d[0] += v);
                        dst[2 * body.len()] += last[0];
                    } else {
                        dst.iter_mut()
                            .step_by(g.stride)
                            .zip(row)
                            .for_each(|(d, &v)| *d += v);
                    }
                }
            }
        }
    }
}

fn sum_f64<T: Real>(xs: &[T]) -> f64 {
    xs.iter().map(|x| x.f64()).sum()
}

/// Per-channel sums of a `[n, ch, len]` tensor, accumulated in `f64` in index order.
pub fn channel_sums<T: Real>(data: &[T], n: usize, ch: usize, len: usize) -> Vec<T> {
    (0..ch)
        .map(|f| {
            T::of(
                (0..n)
                    .map(|i| sum_f64(&data[(i * ch + f) * len..][..len]))
                    .sum(),
            )
        })
        .collect()
}

/// Samples lowered together into one matrix product. Fixed, so that the summation
/// order of weight gradients does not depend on the thread count.
const GROUP: usize = 8;

/// Sample ranges of the groups covering `0..n`.
fn groups(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(GROUP))
        .map(|i| (i * GROUP, GROUP.min(n - i * GROUP)))
        .collect()
}

/// `[ch, ns·len]` copy of samples `s0..s0 + ns` of a `[n, ch, len]` tensor.
fn to_channel_major<T: Real>(src: &[T], (s0, ns): (usize, usize), ch: usize, len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(ch * ns * len);
    for c in 0..ch {
        for s in 0..ns {
            out.extend_from_slice(&src[((s0 + s) * ch + c) * len..][..len]);
        }
    }
    out
}

/// Inverse of [`to_channel_major`] for one group: `[ch, ns·len]` into `[ns, ch, len]`,
/// adding `bias[c]` when given.
fn from_channel_major<T: Real>(
    src: &[T],
    ns: usize,
    ch: usize,
    len: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let mut out = Vec::with_capacity(ns * ch * len);
    for s in 0..ns {
        for c in 0..ch {
            let row = &src[(c * ns + s) * len..][..len];
            match bias {
                Some(b) => out.extend(row.iter().map(|&v| v + b[c])),
                None => out.extend_from_slice(row),
            }
        }
    }
    out
}

/// Lowers samples `s0..s0 + ns` of `x: [n, g.c, g.h, g.w]` into one `[patch, ns·p]`
/// matrix.
fn im2col_group<T: Real>(g: &ConvGeom, x: &[T], (s0, ns): (usize, usize)) -> Vec<T> {
    let (p, il) = (g.positions(), g.image_len());
    let mut cols = vec![T::zero(); g.patch() * ns * p];
    for s in 0..ns {
        im2col_into(g, &x[(s0 + s) * il..][..il], &mut cols[s * p..], ns * p);
    }
    cols
}

/// Stride-1 layers with at most this many output channels skip lowering: a
/// one-row product cannot amortize the cost of building the column matrix.
const DIRECT_MAX_FILTERS: usize = 2;

fn direct(g: &ConvGeom, f: usize) -> bool {
    g.stride == 1 && f <= DIRECT_MAX_FILTERS
}

/// Visits every (filter, tap, output row) of a stride-1 convolution with the in-image
/// column range: `visit(fo, c, tap, oy, y, lo, hi, x0)` where output columns
/// `lo..hi` read input columns `x0..x0 + hi - lo` of row `y`.
fn for_each_row(
    g: &ConvGeom,
    f: usize,
    mut visit: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize),
) {
    for fo in 0..f {
        for c in 0..g.c {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let (lo, hi) = valid_cols(g, kx);
                    if lo == hi {
                        continue;
                    }
                    for oy in 0..g.out_h() {
                        if let Some(y) = (oy + ky).checked_sub(g.pad).filter(|&y| y < g.h) {
                            visit(fo, c, ky * g.k + kx, oy, y, lo, hi, lo + kx - g.pad);
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with eight interleaved partial sums, which the compiler can vectorize.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |t, (&x, &y)| t + x * y);
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    acc.iter().fold(tail, |t, &v| t + v)
}

fn direct_forward<T: Real>(g: &ConvGeom, f: usize, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let (ow, p, kk) = (g.out_w(), g.positions(), g.k * g.k);
    for (o, &bias) in out.chunks_mut(p).zip(b) {
        o.iter_mut().for_each(|v| *v = bias);
    }
    for_each_row(g, f, |fo, c, tap, oy, y, lo, hi, x0| {
        let wv = w[(fo * g.c + c) * kk + tap];
        let src = &x[(c * g.h + y) * g.w + x0..][..hi - lo];
        let dst = &mut out[fo * p + oy * ow..][lo..hi];
        dst.iter_mut().zip(src).for_each(|(d, &s)| *d += wv * s);
    });
}

fn direct_backward<T: Real>(
    g: &ConvGeom,
    f: usize,
    x: &[T],
    w: &[T],
    dout: &[T],
    need_dx: bool,
    need_dw: bool,
) -> GroupGrads<T> {
    let (ow, p, kk) = (g.out_w(), g.positions(), g.k * g.k);
    let mut dx = need_dx.then(|| vec![T::zero(); g.image_len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); f * g.patch()]);
    for_each_row(g, f, |fo, c, tap, oy, y, lo, hi, x0| {
        let wi = (fo * g.c + c) * kk + tap;
        let d = &dout[fo * p + oy * ow..][lo..hi];
        let at = (c * g.h + y) * g.w + x0;
        if let Some(dw) = dw.as_mut() {
            dw[wi] += dot(&x[at..][..hi - lo], d);
        }
        if let Some(dx) = dx.as_mut() {
            let wv = w[wi];
            dx[at..][..hi - lo]
                .iter_mut()
                .zip(d)
                .for_each(|(t, &v)| *t += wv * v);
        }
    });
    (dx, dw)
}

/// Cross-correlation of `x: [n, g.c, g.h, g.w]` with `w: [f, g.c, k, k]` plus bias,
/// into `out: [n, f, oh, ow]`. With `keep_cols` the lowered input of each sample
/// group is returned for reuse by [`conv2d_backward`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    n: usize,
    f: usize,
    x: &[T],
    w: &[T],
    b: &[T],
    out: &mut [T],
    keep_cols: bool,
) -> Option<Vec<Vec<T>>> {
    let (p, patch, il) = (g.positions(), g.patch(), g.image_len());
    if direct(g, f) {
        par::for_each_chunk_mut(&mut out[..n * f * p], f * p, |i, out_i| {
            direct_forward(g, f, &x[i * il..][..il], w, b, out_i)
        });
        return None;
    }
    let parts = par::map_range(n.div_ceil(GROUP), |gi| {
        let grp = groups(n)[gi];
        let cols = im2col_group(g, x, grp);
        let prod = gemm_new(f, patch, grp.1 * p, w, (patch, 1), &cols, (grp.1 * p, 1));
        (
            from_channel_major(&prod, grp.1, f, p, Some(b)),
            keep_cols.then_some(cols),
        )
    });
    let mut kept = keep_cols.then(|| Vec::with_capacity(parts.len()));
    let mut at = 0;
    for (out_g, cols) in parts {
        out[at..][..out_g.len()].copy_from_slice(&out_g);
        at += out_g.len();
        if let (Some(k), Some(c)) = (kept.as_mut(), cols) {
            k.push(c);
        }
    }
    kept
}

/// Weight and input gradients of one layer. A gradient is `None` when not requested.
pub struct LayerGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Vec<T>,
}

/// Input gradient (in sample-major layout) and weight gradient of one sample group.
type GroupGrads<T> = (Option<Vec<T>>, Option<Vec<T>>);

/// Concatenates input gradients and sums weight gradients in group order.
fn gather<T: Real>(
    parts: Vec<GroupGrads<T>>,
    dw_len: usize,
    need_dx: bool,
    need_dw: bool,
) -> GroupGrads<T> {
    let mut dx = need_dx.then(Vec::new);
    let mut dw = need_dw.then(|| vec![T::zero(); dw_len]);
    for (dx_i, dw_i) in parts {
        if let (Some(acc), Some(d)) = (dx.as_mut(), dx_i) {
            acc.extend(d);
        }
        if let (Some(acc), Some(d)) = (dw.as_mut(), dw_i) {
            acc.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
    }
    (dx, dw)
}

/// Gradients of [`conv2d_forward`] given `dout: [n, f, oh, ow]`. `cols` are the
/// lowered inputs kept by the forward pass, if any.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    n: usize,
    f: usize,
    x: &[T],
    w: &[T],
    dout: &[T],
    cols: Option<&[Vec<T>]>,
    need_dx: bool,
    need_dw: bool,
) -> LayerGrads<T> {
    let (p, patch, il) = (g.positions(), g.patch(), g.image_len());
    let parts = if direct(g, f) {
        par::map_range(n, |i| {
            direct_backward(
                g,
                f,
                &x[i * il..][..il],
                w,
                &dout[i * f * p..][..f * p],
                need_dx,
                need_dw,
            )
        })
    } else {
        // With stride 1 and fewer output than input channels, the input gradient is
        // cheaper as a correlation of `dout` with the flipped, transposed kernel.
        let flipped = (need_dx && g.stride == 1 && f < g.c && g.pad < g.k)
            .then(|| {
                let geom = ConvGeom::new(f, g.out_h(), g.out_w(), g.k, 1, g.k - 1 - g.pad).ok()?;
                let kk = g.k * g.k;
                let mut wt = vec![T::zero(); g.c * f * kk];
                for fo in 0..f {
                    for c in 0..g.c {
                        for t in 0..kk {
                            wt[(c * f + fo) * kk + (kk - 1 - t)] = w[(fo * g.c + c) * kk + t];
                        }
                    }
                }
                Some((geom, wt))
            })
            .flatten();
        par::map_range(n.div_ceil(GROUP), |gi| {
            let grp @ (_, ns) = groups(n)[gi];
            let dout_g = to_channel_major(dout, grp, f, p);
            let dw = need_dw.then(|| {
                let owned;
                let cols = match cols {
                    Some(c) => &c[gi],
                    None => {
                        owned = im2col_group(g, x, grp);
                        &owned
                    }
                };
                gemm_new(f, ns * p, patch, &dout_g, (ns * p, 1), cols, (1, ns * p))
            });
            let dx = need_dx.then(|| {
                if let Some((geom, wt)) = &flipped {
                    let plane = il / g.c;
                    let dcols = im2col_group(geom, dout, grp);
                    let prod = gemm_new(
                        g.c,
                        geom.patch(),
                        ns * plane,
                        wt,
                        (geom.patch(), 1),
                        &dcols,
                        (ns * plane, 1),
                    );
                    return from_channel_major(&prod, ns, g.c, plane, None);
                }
                let dcols = gemm_new(patch, f, ns * p, w, (1, patch), &dout_g, (ns * p, 1));
                let mut dx = vec![T::zero(); ns * il];
                for (s, dx_s) in dx.chunks_exact_mut(il).enumerate() {
                    col2im_from(g, &dcols[s * p..], ns * p, dx_s);
                }
                dx
            });
            (dx, dw)
        })
    };
    let (dx, dw) = gather(parts, f * patch, need_dx, need_dw);
    LayerGrads {
        dx,
        dw,
        db: channel_sums(dout, n, f, p),
    }
}

/// Transposed convolution: the adjoint of a `g`-convolution mapping `cout` channels
/// to `cin`. `g` describes the *output* image (`g.c = cout`); the input `x` is
/// `[n, cin, oh, ow]` in `g`'s output geometry, `w` is `[cin, cout, k, k]`, and `out`
/// is `[n, cout, g.h, g.w]`.
pub fn conv_transpose2d_forward<T: Real>(
    g: &ConvGeom,
    n: usize,
    cin: usize,
    x: &[T],
    w: &[T],
    b: &[T],
    out: &mut [T],
) {
    let (p, patch, ol) = (g.positions(), g.patch(), g.image_len());
    if ol == 0 {
        return;
    }
    let plane = g.h * g.w;
    par::for_each_chunk_mut(&mut out[..n * ol], GROUP * ol, |gi, out_g| {
        let grp @ (_, ns) = groups(n)[gi];
        let x_g = to_channel_major(x, grp, cin, p);
        let cols = gemm_new(patch, cin, ns * p, w, (1, patch), &x_g, (ns * p, 1));
        for (s, out_s) in out_g.chunks_exact_mut(ol).enumerate() {
            for (o, &bias) in out_s.chunks_mut(plane).zip(b) {
                o.iter_mut().for_each(|v| *v = bias);
            }
            col2im_from(g, &cols[s * p..], ns * p, out_s);
        }
    });
}

/// Gradients of [`conv_transpose2d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Real>(
    g: &ConvGeom,
    n: usize,
    cin: usize,
    x: &[T],
    w: &[T],
    dout: &[T],
    need_dx: bool,
    need_dw: bool,
) -> LayerGrads<T> {
    let (p, patch) = (g.positions(), g.patch());
    let parts = par::map_range(n.div_ceil(GROUP), |gi| {
        let grp @ (_, ns) = groups(n)[gi];
        let cols = im2col_group(g, dout, grp);
        let dx = need_dx.then(|| {
            let prod = gemm_new(cin, patch, ns * p, w, (patch, 1), &cols, (ns * p, 1));
            from_channel_major(&prod, ns, cin, p, None)
        });
        let dw = need_dw.then(|| {
            let x_g = to_channel_major(x, grp, cin, p);
            gemm_new(cin, ns * p, patch, &x_g, (ns * p, 1), &cols, (1, ns * p))
        });
        (dx, dw)
    });
    let (dx, dw) = gather(parts, cin * patch, need_dx, need_dw);
    LayerGrads {
        dx,
        dw,
        db: channel_sums(dout, n, g.c, g.h * g.w),
    }
}

/// 2×2 max pooling with floor semantics over `[planes, h, w]`. Returns the pooled
/// values and, per output, the flat input index of the maximum (first index on ties).
pub fn maxpool2_forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}
