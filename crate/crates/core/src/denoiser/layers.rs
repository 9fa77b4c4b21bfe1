//! Layer primitives for the U-Net: 3x3 same-padding convolution, dense
//! time projection, single-head self-attention over flattened spatial
//! positions, SiLU, 2x average pooling, and 2x nearest upsampling.
//!
//! Every primitive carries a hand-written backward pass; parameter
//! gradients accumulate into per-layer buffers until `zero_grad`.

use alloc::vec;
use alloc::vec::Vec;

use crate::batch::ImageBatch;
use crate::math;
use crate::rng::Rng;

/// Copies the zero-padded 3x3 neighbourhood of position `(y, x)` across
/// all channels into `patch`, laid out as `ic * 9 + ky * 3 + kx`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn gather_patch3(
    data: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    b: usize,
    y: usize,
    x: usize,
    patch: &mut [f64],
) {
    let hw = h * w;
    let base = b * channels * hw;
    for ic in 0..channels {
        let plane = &data[base + ic * hw..base + (ic + 1) * hw];
        let dst = &mut patch[ic * 9..ic * 9 + 9];
        for ky in 0..3usize {
            let iy = y as isize + ky as isize - 1;
            if iy < 0 || iy >= h as isize {
                dst[ky * 3] = 0.0;
                dst[ky * 3 + 1] = 0.0;
                dst[ky * 3 + 2] = 0.0;
                continue;
            }
            let row = &plane[iy as usize * w..iy as usize * w + w];
            for kx in 0..3usize {
                let ix = x as isize + kx as isize - 1;
                dst[ky * 3 + kx] = if ix < 0 || ix >= w as isize {
                    0.0
                } else {
                    row[ix as usize]
                };
            }
        }
    }
}

/// Fixed split of the batch into at most four contiguous chunks. The
/// chunk structure depends only on the batch size, so reductions over
/// chunks keep one summation order no matter how many threads run.
fn batch_chunks(bn: usize) -> Vec<(usize, usize)> {
    let chunks = bn.min(4);
    let base = bn / chunks;
    let extra = bn % chunks;
    let mut out = Vec::with_capacity(chunks);
    let mut start = 0;
    for i in 0..chunks {
        let len = base + usize::from(i < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

/// Runs independent jobs, on scoped threads when the standard library is
/// available and serially otherwise.
#[cfg(feature = "std")]
fn run_jobs<F: FnOnce() + Send>(jobs: Vec<F>) {
    if jobs.len() <= 1 {
        for job in jobs {
            job();
        }
        return;
    }
    std::thread::scope(|scope| {
        for job in jobs {
            scope.spawn(job);
        }
    });
}

#[cfg(not(feature = "std"))]
fn run_jobs<F: FnOnce() + Send>(jobs: Vec<F>) {
    for job in jobs {
        job();
    }
}

/// One batch-chunk of the 3x3 correlation; `out_chunk` holds exactly the
/// samples of `b_range`.
#[allow(clippy::too_many_arguments)]
fn correlate3_gemm_range(
    src_data: &[f64],
    cn: usize,
    h: usize,
    w: usize,
    b_range: (usize, usize),
    wt: &[f64],
    out_channels: usize,
    bias: Option<&[f64]>,
    out_chunk: &mut [f64],
) {
    let hw = h * w;
    let k_total = cn * 9;
    let mut patch = vec![0.0; k_total];
    let mut acc = vec![0.0; out_channels];
    for b in b_range.0..b_range.1 {
        let out_base = (b - b_range.0) * out_channels * hw;
        for y in 0..h {
            for x in 0..w {
                gather_patch3(src_data, cn, h, w, b, y, x, &mut patch);
                match bias {
                    Some(bias) => acc.copy_from_slice(bias),
                    None => acc.fill(0.0),
                }
                for (k, &a) in patch.iter().enumerate() {
                    let wrow = &wt[k * out_channels..(k + 1) * out_channels];
                    for (o, &wv) in acc.iter_mut().zip(wrow) {
                        *o += a * wv;
                    }
                }
                let pos = y * w + x;
                for (oc, &v) in acc.iter().enumerate() {
                    out_chunk[out_base + oc * hw + pos] = v;
                }
            }
        }
    }
}

/// Same-padded 3x3 correlation of `src` with a `(src_channels * 9,
/// out_channels)` weight matrix. The inner loop is a dense rank-1 update
/// over the output channels, and the batch is processed in parallel
/// chunks.
fn correlate3_gemm(
    src: &ImageBatch,
    wt: &[f64],
    out_channels: usize,
    bias: Option<&[f64]>,
) -> ImageBatch {
    let (bn, cn, h, w) = src.dims();
    debug_assert_eq!(wt.len(), cn * 9 * out_channels);
    let mut out = ImageBatch::zeros(bn, out_channels, h, w);
    let src_data = src.as_slice();
    let sample_len = out_channels * h * w;

    let ranges = batch_chunks(bn);
    let mut jobs = Vec::with_capacity(ranges.len());
    let mut rest = out.as_mut_slice();
    for &range in &ranges {
        let (chunk, tail) = rest.split_at_mut((range.1 - range.0) * sample_len);
        rest = tail;
        jobs.push(move || {
            correlate3_gemm_range(src_data, cn, h, w, range, wt, out_channels, bias, chunk);
        });
    }
    run_jobs(jobs);
    out
}

/// Weight gradient of one batch chunk: a freshly allocated
/// `(out_channels, in_channels * 9)` buffer to be reduced by the caller.
fn conv3_weight_grad_range(
    x_data: &[f64],
    gy_data: &[f64],
    cn: usize,
    out_channels: usize,
    h: usize,
    w: usize,
    b_range: (usize, usize),
) -> Vec<f64> {
    let hw = h * w;
    let k_total = cn * 9;
    let mut gw = vec![0.0; out_channels * k_total];
    let mut patch = vec![0.0; k_total];
    for b in b_range.0..b_range.1 {
        for y in 0..h {
            for x in 0..w {
                gather_patch3(x_data, cn, h, w, b, y, x, &mut patch);
                let pos = y * w + x;
                let gy_base = b * out_channels * hw;
                for oc in 0..out_channels {
                    let g = gy_data[gy_base + oc * hw + pos];
                    let grow = &mut gw[oc * k_total..(oc + 1) * k_total];
                    for (gw_v, &a) in grow.iter_mut().zip(&patch) {
                        *gw_v += g * a;
                    }
                }
            }
        }
    }
    gw
}

/// 3x3 convolution with same padding.
#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gw: Vec<f64>,
    pub gb: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, rng: &mut Rng) -> Self {
        let fan_in = (in_ch * k * k) as f64;
        let bound = 1.0 / math::sqrt(fan_in);
        let w = (0..out_ch * in_ch * k * k)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let b = (0..out_ch).map(|_| rng.uniform(-bound, bound)).collect();
        Conv2d {
            in_ch,
            out_ch,
            k,
            w,
            b,
            gw: vec![0.0; out_ch * in_ch * k * k],
            gb: vec![0.0; out_ch],
        }
    }

    pub fn forward(&self, x: &ImageBatch) -> ImageBatch {
        debug_assert_eq!(x.channels(), self.in_ch);
        debug_assert!(self.k == 1 || self.k == 3);
        if self.k == 1 {
            return self.forward_pointwise(x);
        }
        // Weight matrix transposed to (in_ch * 9, out_ch) so the inner
        // update runs over contiguous output channels.
        let k_total = self.in_ch * 9;
        let mut wt = alloc::vec![0.0; k_total * self.out_ch];
        for oc in 0..self.out_ch {
            for k in 0..k_total {
                wt[k * self.out_ch + oc] = self.w[oc * k_total + k];
            }
        }
        correlate3_gemm(x, &wt, self.out_ch, Some(&self.b))
    }

    fn forward_pointwise(&self, x: &ImageBatch) -> ImageBatch {
        let (bn, _, h, w) = x.dims();
        let mut out = ImageBatch::zeros(bn, self.out_ch, h, w);
        for b in 0..bn {
            for oc in 0..self.out_ch {
                let plane = out.plane_mut(b, oc);
                plane.fill(self.b[oc]);
                for ic in 0..self.in_ch {
                    let x_plane = x.plane(b, ic);
                    let wv = self.w[oc * self.in_ch + ic];
                    for (o, &v) in plane.iter_mut().zip(x_plane) {
                        *o += wv * v;
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &ImageBatch, gy: &ImageBatch) -> ImageBatch {
        if self.k == 1 {
            return self.backward_pointwise(x, gy);
        }
        let (bn, _, h, w) = x.dims();
        let k_total = self.in_ch * 9;

        for oc in 0..self.out_ch {
            for b in 0..bn {
                self.gb[oc] += gy.plane(b, oc).iter().sum::<f64>();
            }
        }

        // Input gradient: correlate gy with the 180-degree-flipped kernel,
        // with input and output channel roles swapped.
        let mut flipped = alloc::vec![0.0; self.out_ch * 9 * self.in_ch];
        for oc in 0..self.out_ch {
            for ic in 0..self.in_ch {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k_src = ic * 9 + (2 - ky) * 3 + (2 - kx);
                        let k_dst = oc * 9 + ky * 3 + kx;
                        flipped[k_dst * self.in_ch + ic] = self.w[oc * k_total + k_src];
                    }
                }
            }
        }
        let gx = correlate3_gemm(gy, &flipped, self.in_ch, None);

        // Weight gradient: rank-1 updates of the (out_ch, in_ch * 9)
        // gradient matrix, one partial per batch chunk, reduced in fixed
        // chunk order.
        let x_data = x.as_slice();
        let gy_data = gy.as_slice();
        let ranges = batch_chunks(bn);
        let mut partials: Vec<Vec<f64>> = ranges.iter().map(|_| Vec::new()).collect();
        let (in_ch, out_ch) = (self.in_ch, self.out_ch);
        let mut jobs = Vec::with_capacity(ranges.len());
        for (slot, &range) in partials.iter_mut().zip(&ranges) {
            jobs.push(move || {
                *slot = conv3_weight_grad_range(x_data, gy_data, in_ch, out_ch, h, w, range);
            });
        }
        run_jobs(jobs);
        for partial in &partials {
            for (gw, &p) in self.gw.iter_mut().zip(partial) {
                *gw += p;
            }
        }
        gx
    }

    fn backward_pointwise(&mut self, x: &ImageBatch, gy: &ImageBatch) -> ImageBatch {
        let (bn, _, _, _) = x.dims();
        let mut gx = ImageBatch::zeros(bn, self.in_ch, x.height(), x.width());
        for b in 0..bn {
            for oc in 0..self.out_ch {
                let gy_plane = gy.plane(b, oc);
                self.gb[oc] += gy_plane.iter().sum::<f64>();
                for ic in 0..self.in_ch {
                    let x_plane = x.plane(b, ic);
                    let gx_plane = gx.plane_mut(b, ic);
                    let widx = oc * self.in_ch + ic;
                    let wv = self.w[widx];
                    let mut gw_acc = 0.0;
                    for ((gxv, &g), &xv) in gx_plane.iter_mut().zip(gy_plane).zip(x_plane) {
                        *gxv += wv * g;
                        gw_acc += g * xv;
                    }
                    self.gw[widx] += gw_acc;
                }
            }
        }
        gx
    }

    pub fn zero_grad(&mut self) {
        self.gw.fill(0.0);
        self.gb.fill(0.0);
    }
}

/// Fully connected projection of the time encoding onto channel biases.
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gw: Vec<f64>,
    pub gb: Vec<f64>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / math::sqrt(in_dim as f64);
        let w = (0..out_dim * in_dim)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let b = (0..out_dim).map(|_| rng.uniform(-bound, bound)).collect();
        Dense {
            in_dim,
            out_dim,
            w,
            b,
            gw: vec![0.0; out_dim * in_dim],
            gb: vec![0.0; out_dim],
        }
    }

    /// `rows` is `(batch, in_dim)` row-major; output is `(batch, out_dim)`.
    pub fn forward(&self, rows: &[f64], batch: usize) -> Vec<f64> {
        let mut out = vec![0.0; batch * self.out_dim];
        for b in 0..batch {
            let x = &rows[b * self.in_dim..(b + 1) * self.in_dim];
            let y = &mut out[b * self.out_dim..(b + 1) * self.out_dim];
            for (o, yo) in y.iter_mut().enumerate() {
                let wr = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.b[o];
                for (&wv, &xv) in wr.iter().zip(x) {
                    acc += wv * xv;
                }
                *yo = acc;
            }
        }
        out
    }

    /// The time encoding is a leaf, so no input gradient is produced.
    pub fn backward(&mut self, rows: &[f64], batch: usize, gy: &[f64]) {
        for b in 0..batch {
            let x = &rows[b * self.in_dim..(b + 1) * self.in_dim];
            let g = &gy[b * self.out_dim..(b + 1) * self.out_dim];
            for (o, &go) in g.iter().enumerate() {
                self.gb[o] += go;
                let gwr = &mut self.gw[o * self.in_dim..(o + 1) * self.in_dim];
                for (gw, &xv) in gwr.iter_mut().zip(x) {
                    *gw += go * xv;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.gw.fill(0.0);
        self.gb.fill(0.0);
    }
}

/// Adds one bias per (sample, channel) across the spatial plane.
pub(crate) fn add_channel_bias(x: &ImageBatch, bias_rows: &[f64]) -> ImageBatch {
    let (bn, cn, _, _) = x.dims();
    debug_assert_eq!(bias_rows.len(), bn * cn);
    let mut out = x.clone();
    for b in 0..bn {
        for c in 0..cn {
            let bias = bias_rows[b * cn + c];
            for v in out.plane_mut(b, c) {
                *v += bias;
            }
        }
    }
    out
}

/// Gradient of the per-channel bias: sums over the spatial plane.
pub(crate) fn channel_bias_grad(gy: &ImageBatch) -> Vec<f64> {
    let (bn, cn, _, _) = gy.dims();
    let mut g = vec![0.0; bn * cn];
    for b in 0..bn {
        for c in 0..cn {
            g[b * cn + c] = gy.plane(b, c).iter().sum();
        }
    }
    g
}

pub(crate) fn silu_forward(x: &ImageBatch) -> ImageBatch {
    x.map(|v| v * math::sigmoid(v))
}

pub(crate) fn silu_backward(pre: &ImageBatch, gy: &ImageBatch) -> ImageBatch {
    pre.zip(gy, |v, g| {
        let s = math::sigmoid(v);
        g * (s * (1.0 + v * (1.0 - s)))
    })
}

/// 2x2 average pooling; height and width must be even.
pub(crate) fn avgpool2_forward(x: &ImageBatch) -> ImageBatch {
    let (bn, cn, h, w) = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = ImageBatch::zeros(bn, cn, oh, ow);
    for b in 0..bn {
        for c in 0..cn {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..oh {
                for xx in 0..ow {
                    let r0 = 2 * y * w + 2 * xx;
                    let r1 = r0 + w;
                    dst[y * ow + xx] = 0.25 * (src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1]);
                }
            }
        }
    }
    out
}

pub(crate) fn avgpool2_backward(gy: &ImageBatch) -> ImageBatch {
    let (bn, cn, oh, ow) = gy.dims();
    let (h, w) = (oh * 2, ow * 2);
    let mut gx = ImageBatch::zeros(bn, cn, h, w);
    for b in 0..bn {
        for c in 0..cn {
            let src = gy.plane(b, c);
            let dst = gx.plane_mut(b, c);
            for y in 0..oh {
                for xx in 0..ow {
                    let g = 0.25 * src[y * ow + xx];
                    let r0 = 2 * y * w + 2 * xx;
                    let r1 = r0 + w;
                    dst[r0] += g;
                    dst[r0 + 1] += g;
                    dst[r1] += g;
                    dst[r1 + 1] += g;
                }
            }
        }
    }
    gx
}

/// Nearest-neighbour 2x upsampling.
pub(crate) fn upsample2_forward(x: &ImageBatch) -> ImageBatch {
    let (bn, cn, h, w) = x.dims();
    let (oh, ow) = (h * 2, w * 2);
    let mut out = ImageBatch::zeros(bn, cn, oh, ow);
    for b in 0..bn {
        for c in 0..cn {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..h {
                for xx in 0..w {
                    let v = src[y * w + xx];
                    let r0 = 2 * y * ow + 2 * xx;
                    let r1 = r0 + ow;
                    dst[r0] = v;
                    dst[r0 + 1] = v;
                    dst[r1] = v;
                    dst[r1 + 1] = v;
                }
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(gy: &ImageBatch) -> ImageBatch {
    let (bn, cn, oh, ow) = gy.dims();
    let (h, w) = (oh / 2, ow / 2);
    let mut gx = ImageBatch::zeros(bn, cn, h, w);
    for b in 0..bn {
        for c in 0..cn {
            let src = gy.plane(b, c);
            let dst = gx.plane_mut(b, c);
            for y in 0..h {
                for xx in 0..w {
                    let r0 = 2 * y * ow + 2 * xx;
                    let r1 = r0 + ow;
                    dst[y * w + xx] = src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1];
                }
            }
        }
    }
    gx
}

// Row-major matrix products used by the attention layer.

/// `(n x k) * (k x m)`.
fn mat_mul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        let cr = &mut c[i * m..(i + 1) * m];
        for (l, &av) in ar.iter().enumerate() {
            let br = &b[l * m..(l + 1) * m];
            for (cv, &bv) in cr.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `(n x k) * (m x k)^T`.
fn mat_mul_bt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let br = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in ar.iter().zip(br) {
                acc += av * bv;
            }
            c[i * m + j] = acc;
        }
    }
    c
}

/// `(k x n)^T * (k x m)`.
fn mat_mul_at(a: &[f64], b: &[f64], k: usize, n: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for l in 0..k {
        let ar = &a[l * n..(l + 1) * n];
        let br = &b[l * m..(l + 1) * m];
        for (i, &av) in ar.iter().enumerate() {
            let cr = &mut c[i * m..(i + 1) * m];
            for (cv, &bv) in cr.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn softmax_rows(s: &mut [f64], n: usize, m: usize) {
    for i in 0..n {
        let row = &mut s[i * m..(i + 1) * m];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Single-head self-attention over flattened spatial positions with a
/// residual connection: `out = x + softmax(Q K^T / sqrt(C)) V Wo`.
#[derive(Debug, Clone)]
pub(crate) struct Attention {
    pub dim: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub gwq: Vec<f64>,
    pub gwk: Vec<f64>,
    pub gwv: Vec<f64>,
    pub gwo: Vec<f64>,
}

/// Per-sample activations the attention backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct AttnCache {
    pub tokens: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
    pub n: usize,
}

impl Attention {
    pub fn new(dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / math::sqrt(dim as f64);
        let mk = |rng: &mut Rng| -> Vec<f64> {
            (0..dim * dim).map(|_| rng.uniform(-bound, bound)).collect()
        };
        Attention {
            dim,
            wq: mk(rng),
            wk: mk(rng),
            wv: mk(rng),
            wo: mk(rng),
            gwq: vec![0.0; dim * dim],
            gwk: vec![0.0; dim * dim],
            gwv: vec![0.0; dim * dim],
            gwo: vec![0.0; dim * dim],
        }
    }

    /// Channel-major plane data -> token-major `(n, dim)` matrix.
    fn to_tokens(x: &ImageBatch, b: usize) -> Vec<f64> {
        let (_, cn, h, w) = x.dims();
        let n = h * w;
        let mut t = vec![0.0; n * cn];
        for c in 0..cn {
            let plane = x.plane(b, c);
            for (i, &v) in plane.iter().enumerate() {
                t[i * cn + c] = v;
            }
        }
        t
    }

    fn from_tokens(tokens: &[f64], out: &mut ImageBatch, b: usize) {
        let (_, cn, h, w) = out.dims();
        let n = h * w;
        for c in 0..cn {
            let plane = out.plane_mut(b, c);
            for (i, v) in plane.iter_mut().enumerate() {
                *v = tokens[i * cn + c];
            }
        }
        debug_assert_eq!(tokens.len(), n * cn);
    }

    pub fn forward(&self, x: &ImageBatch, want_cache: bool) -> (ImageBatch, Vec<AttnCache>) {
        let (bn, cn, h, w) = x.dims();
        debug_assert_eq!(cn, self.dim);
        let n = h * w;
        let scale = 1.0 / math::sqrt(cn as f64);
        let mut out = ImageBatch::zeros(bn, cn, h, w);
        let mut caches = Vec::new();
        for b in 0..bn {
            let tokens = Self::to_tokens(x, b);
            let q = mat_mul(&tokens, &self.wq, n, cn, cn);
            let k = mat_mul(&tokens, &self.wk, n, cn, cn);
            let v = mat_mul(&tokens, &self.wv, n, cn, cn);
            let mut a = mat_mul_bt(&q, &k, n, cn, n);
            for s in a.iter_mut() {
                *s *= scale;
            }
            softmax_rows(&mut a, n, n);
            let y = mat_mul(&a, &v, n, n, cn);
            let o = mat_mul(&y, &self.wo, n, cn, cn);
            let mut res = tokens.clone();
            for (r, &ov) in res.iter_mut().zip(&o) {
                *r += ov;
            }
            Self::from_tokens(&res, &mut out, b);
            if want_cache {
                caches.push(AttnCache {
                    tokens,
                    q,
                    k,
                    v,
                    a,
                    y,
                    n,
                });
            }
        }
        (out, caches)
    }

    pub fn backward(&mut self, caches: &[AttnCache], gy: &ImageBatch) -> ImageBatch {
        let (bn, cn, h, w) = gy.dims();
        let scale = 1.0 / math::sqrt(cn as f64);
        let mut gx = ImageBatch::zeros(bn, cn, h, w);
        for (b, cache) in caches.iter().enumerate().take(bn) {
            let n = cache.n;
            let g_out = Self::to_tokens(gy, b);
            // Residual branch.
            let mut g_tokens = g_out.clone();
            // g_y = g_out * Wo^T; g_wo += Y^T g_out.
            let g_y = mat_mul_bt(&g_out, &self.wo, n, cn, cn);
            for (gw, v) in self
                .gwo
                .iter_mut()
                .zip(mat_mul_at(&cache.y, &g_out, n, cn, cn))
            {
                *gw += v;
            }
            // g_a = g_y * V^T; g_v = A^T g_y.
            let g_a = mat_mul_bt(&g_y, &cache.v, n, cn, n);
            let g_v = mat_mul_at(&cache.a, &g_y, n, n, cn);
            // Softmax backward, row-wise.
            let mut g_s = vec![0.0; n * n];
            for i in 0..n {
                let a_row = &cache.a[i * n..(i + 1) * n];
                let ga_row = &g_a[i * n..(i + 1) * n];
                let dot: f64 = a_row.iter().zip(ga_row).map(|(&a, &g)| a * g).sum();
                let gs_row = &mut g_s[i * n..(i + 1) * n];
                for ((gs, &a), &g) in gs_row.iter_mut().zip(a_row).zip(ga_row) {
                    *gs = a * (g - dot);
                }
            }
            for v in g_s.iter_mut() {
                *v *= scale;
            }
            // g_q = g_s K, g_k = g_s^T Q.
            let g_q = mat_mul(&g_s, &cache.k, n, n, cn);
            let g_k = mat_mul_at(&g_s, &cache.q, n, n, cn);
            // Projections back to tokens and weight grads.
            for (gt, v) in g_tokens
                .iter_mut()
                .zip(mat_mul_bt(&g_q, &self.wq, n, cn, cn))
            {
                *gt += v;
            }
            for (gt, v) in g_tokens
                .iter_mut()
                .zip(mat_mul_bt(&g_k, &self.wk, n, cn, cn))
            {
                *gt += v;
            }
            for (gt, v) in g_tokens
                .iter_mut()
                .zip(mat_mul_bt(&g_v, &self.wv, n, cn, cn))
            {
                *gt += v;
            }
            for (gw, v) in self
                .gwq
                .iter_mut()
                .zip(mat_mul_at(&cache.tokens, &g_q, n, cn, cn))
            {
                *gw += v;
            }
            for (gw, v) in self
                .gwk
                .iter_mut()
                .zip(mat_mul_at(&cache.tokens, &g_k, n, cn, cn))
            {
                *gw += v;
            }
            for (gw, v) in self
                .gwv
                .iter_mut()
                .zip(mat_mul_at(&cache.tokens, &g_v, n, cn, cn))
            {
                *gw += v;
            }
            Self::from_tokens(&g_tokens, &mut gx, b);
        }
        gx
    }

    pub fn zero_grad(&mut self) {
        self.gwq.fill(0.0);
        self.gwk.fill(0.0);
        self.gwv.fill(0.0);
        self.gwo.fill(0.0);
    }
}
