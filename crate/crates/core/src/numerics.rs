//! Dense 3-D tensors and the hand-derived forward/adjoint passes used by the
//! descriptor network: convolution, ReLU, global average pooling, l2
//! normalization and bilinear resampling.
//!
//! Every operation is a pure function of its inputs. Gradients are written
//! out per operation and chained explicitly by callers; there is no tape.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid shape {width}x{height}x{channels} for {len} samples")]
    InvalidShape {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
    #[error("invalid convolution layer: {0}")]
    InvalidLayer(String),
    #[error("degenerate vector: norm {norm:e} is below 1e-12")]
    DegenerateNorm { norm: f64 },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Dense `width x height x channels` array stored row-major in `(y, x, c)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(
            width >= 1 && height >= 1 && channels >= 1,
            "tensor dims must be >= 1"
        );
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 || data.len() != width * height * channels {
            return Err(NumericsError::InvalidShape {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { op: "from_vec" });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a tensor by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let i = t.index(x, y, c);
                    t.data[i] = f(x, y, c);
                }
            }
        }
        t
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_dims(&self, other: &Tensor) -> bool {
        self.dims() == other.dims()
    }

    pub fn check_same_dims(&self, other: &Tensor) -> Result<()> {
        check_axis("width", self.width, other.width)?;
        check_axis("height", self.height, other.height)?;
        check_axis("channels", self.channels, other.channels)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Squared Euclidean distance between two equally shaped tensors.
    pub fn sq_distance(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn l2_distance(&self, other: &Tensor) -> f64 {
        self.sq_distance(other).sqrt()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

#[inline]
fn check_axis(axis: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        Err(NumericsError::DimensionMismatch {
            axis,
            expected,
            actual,
        })
    } else {
        Ok(())
    }
}

fn ensure_finite(t: Tensor, op: &'static str) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(NumericsError::NonFinite { op })
    }
}

/// Square-kernel 2-D convolution with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    out_ch: usize,
    in_ch: usize,
    k: usize,
    stride: usize,
    padding: usize,
    /// `(out, in, ky, kx)` order.
    kernels: Vec<f64>,
    bias: Vec<f64>,
    /// `(ky, kx, in, out)` order, so the innermost loop walks output channels.
    packed: Vec<f64>,
}

impl ConvLayer {
    pub fn new(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        kernels: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if out_ch == 0 || in_ch == 0 {
            return Err(NumericsError::InvalidLayer("channel counts must be >= 1".into()));
        }
        if k == 0 || k.is_multiple_of(2) {
            return Err(NumericsError::InvalidLayer(format!(
                "kernel size {k} must be odd"
            )));
        }
        if stride == 0 {
            return Err(NumericsError::InvalidLayer("stride must be >= 1".into()));
        }
        check_axis("kernels", out_ch * in_ch * k * k, kernels.len())?;
        check_axis("bias", out_ch, bias.len())?;
        if kernels.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(NumericsError::InvalidLayer("non-finite weight".into()));
        }
        let mut packed = vec![0.0; kernels.len()];
        for o in 0..out_ch {
            for i in 0..in_ch {
                for ky in 0..k {
                    for kx in 0..k {
                        packed[((ky * k + kx) * in_ch + i) * out_ch + o] =
                            kernels[((o * in_ch + i) * k + ky) * k + kx];
                    }
                }
            }
        }
        Ok(Self {
            out_ch,
            in_ch,
            k,
            stride,
            padding,
            kernels,
            bias,
            packed,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Weight at `(out, in, ky, kx)`.
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.kernels[((o * self.in_ch + i) * self.k + ky) * self.k + kx]
    }

    /// Output spatial extent for an input extent, if the layer fits.
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.k {
            return None;
        }
        Some((padded - self.k) / self.stride + 1)
    }

    fn output_dims(&self, input: &Tensor) -> Result<(usize, usize)> {
        check_axis("channels", self.in_ch, input.channels)?;
        let ow = self
            .output_extent(input.width)
            .ok_or(NumericsError::DimensionMismatch {
                axis: "width",
                expected: self.k,
                actual: input.width + 2 * self.padding,
            })?;
        let oh = self
            .output_extent(input.height)
            .ok_or(NumericsError::DimensionMismatch {
                axis: "height",
                expected: self.k,
                actual: input.height + 2 * self.padding,
            })?;
        Ok((ow, oh))
    }

    /// Input coordinate for an output coordinate and kernel tap, if inside the image.
    #[inline]
    fn source(&self, out: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + tap) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

pub fn conv2d_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let (ow, oh) = layer.output_dims(input)?;
    let (oc_n, ic_n, k) = (layer.out_ch, layer.in_ch, layer.k);
    let mut out = Tensor::zeros(ow, oh, oc_n);
    for oy in 0..oh {
        for ox in 0..ow {
            let base = (oy * ow + ox) * oc_n;
            let acc = &mut out.data[base..base + oc_n];
            acc.copy_from_slice(&layer.bias);
            for ky in 0..k {
                let Some(iy) = layer.source(oy, ky, input.height) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = layer.source(ox, kx, input.width) else {
                        continue;
                    };
                    let px = &input.data[(iy * input.width + ix) * ic_n..][..ic_n];
                    let taps = &layer.packed[(ky * k + kx) * ic_n * oc_n..][..ic_n * oc_n];
                    for (ic, &v) in px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let w = &taps[ic * oc_n..][..oc_n];
                        for (a, &wv) in acc.iter_mut().zip(w) {
                            *a += v * wv;
                        }
                    }
                }
            }
        }
    }
    ensure_finite(out, "conv2d_forward")
}

/// Gradient of `<upstream, conv2d_forward(input, layer)>` with respect to `input`.
pub fn conv2d_input_grad(input: &Tensor, layer: &ConvLayer, upstream: &Tensor) -> Result<Tensor> {
    let (ow, oh) = layer.output_dims(input)?;
    check_axis("width", ow, upstream.width)?;
    check_axis("height", oh, upstream.height)?;
    check_axis("channels", layer.out_ch, upstream.channels)?;
    let (oc_n, ic_n, k) = (layer.out_ch, layer.in_ch, layer.k);
    let mut grad = Tensor::zeros(input.width, input.height, ic_n);
    for oy in 0..oh {
        for ox in 0..ow {
            let up = &upstream.data[(oy * ow + ox) * oc_n..][..oc_n];
            if up.iter().all(|&u| u == 0.0) {
                continue;
            }
            for ky in 0..k {
                let Some(iy) = layer.source(oy, ky, input.height) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = layer.source(ox, kx, input.width) else {
                        continue;
                    };
                    let taps = &layer.packed[(ky * k + kx) * ic_n * oc_n..][..ic_n * oc_n];
                    let g = &mut grad.data[(iy * input.width + ix) * ic_n..][..ic_n];
                    for (ic, gv) in g.iter_mut().enumerate() {
                        let w = &taps[ic * oc_n..][..oc_n];
                        *gv += w.iter().zip(up).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
    ensure_finite(grad, "conv2d_input_grad")
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes `upstream` where `input > 0`; the subgradient at exactly zero is zero.
pub fn relu_grad(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    input.check_same_dims(upstream)?;
    let mut g = upstream.clone();
    for (gv, &x) in g.data.iter_mut().zip(&input.data) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Per-channel spatial mean, returned as a `1 x 1 x channels` tensor.
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let c = input.channels;
    let mut out = vec![0.0; c];
    for px in input.data.chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let n = (input.width * input.height) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Tensor {
        width: 1,
        height: 1,
        channels: c,
        data: out,
    }
}

pub fn global_avg_pool_grad(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    check_axis("channels", input.channels, upstream.channels)?;
    check_axis("width", 1, upstream.width)?;
    check_axis("height", 1, upstream.height)?;
    let n = (input.width * input.height) as f64;
    let scaled: Vec<f64> = upstream.data.iter().map(|u| u / n).collect();
    let mut g = Tensor::zeros(input.width, input.height, input.channels);
    for px in g.data.chunks_exact_mut(input.channels) {
        px.copy_from_slice(&scaled);
    }
    Ok(g)
}

pub fn l2_norm(v: &Tensor) -> f64 {
    v.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &Tensor) -> Result<Tensor> {
    let norm = l2_norm(v);
    if !(norm > 1e-12) {
        return Err(NumericsError::DegenerateNorm { norm });
    }
    Ok(v.map(|x| x / norm))
}

/// Applies the normalization Jacobian `(I - u u^T) / |v|` to `upstream`.
pub fn l2_normalize_grad(v: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    v.check_same_dims(upstream)?;
    let norm = l2_norm(v);
    if !(norm > 1e-12) {
        return Err(NumericsError::DegenerateNorm { norm });
    }
    let proj: f64 = v.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum::<f64>() / norm;
    let mut g = upstream.clone();
    for (gv, &x) in g.data.iter_mut().zip(&v.data) {
        *gv = (*gv - (x / norm) * proj) / norm;
    }
    ensure_finite(g, "l2_normalize_grad")
}

/// One axis of a bilinear resampling: the two source indices and weights
/// that feed an output coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisTap {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: f64,
    pub w_hi: f64,
}

/// Source taps for resampling an axis of length `input` to length `output`.
///
/// Output sample `i` sits at source coordinate `(i + 0.5) * input / output - 0.5`
/// (pixel-center alignment), clamped to `[0, input - 1]`.
pub fn axis_taps(input: usize, output: usize) -> Vec<AxisTap> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            if input == output {
                return AxisTap {
                    lo: i,
                    hi: i,
                    w_lo: 1.0,
                    w_hi: 0.0,
                };
            }
            let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            let frac = src - lo as f64;
            AxisTap {
                lo,
                hi,
                w_lo: 1.0 - frac,
                w_hi: frac,
            }
        })
        .collect()
}

pub fn bilinear_resize(input: &Tensor, out_w: usize, out_h: usize) -> Tensor {
    assert!(out_w >= 1 && out_h >= 1, "resize target must be >= 1");
    if out_w == input.width && out_h == input.height {
        return input.clone();
    }
    let xs = axis_taps(input.width, out_w);
    let ys = axis_taps(input.height, out_h);
    let c = input.channels;
    let mut out = Tensor::zeros(out_w, out_h, c);
    for (oy, ty) in ys.iter().enumerate() {
        for (ox, tx) in xs.iter().enumerate() {
            let corners = [
                (tx.lo, ty.lo, tx.w_lo * ty.w_lo),
                (tx.hi, ty.lo, tx.w_hi * ty.w_lo),
                (tx.lo, ty.hi, tx.w_lo * ty.w_hi),
                (tx.hi, ty.hi, tx.w_hi * ty.w_hi),
            ];
            let dst = (oy * out_w + ox) * c;
            for (sx, sy, w) in corners {
                let src = (sy * input.width + sx) * c;
                for ch in 0..c {
                    out.data[dst + ch] += w * input.data[src + ch];
                }
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_resize`]: scatters `upstream` back onto the input grid.
pub fn bilinear_resize_grad(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    check_axis("channels", input.channels, upstream.channels)?;
    if upstream.width == input.width && upstream.height == input.height {
        return Ok(upstream.clone());
    }
    let xs = axis_taps(input.width, upstream.width);
    let ys = axis_taps(input.height, upstream.height);
    let c = input.channels;
    let mut g = Tensor::zeros(input.width, input.height, c);
    for (oy, ty) in ys.iter().enumerate() {
        for (ox, tx) in xs.iter().enumerate() {
            let corners = [
                (tx.lo, ty.lo, tx.w_lo * ty.w_lo),
                (tx.hi, ty.lo, tx.w_hi * ty.w_lo),
                (tx.lo, ty.hi, tx.w_lo * ty.w_hi),
                (tx.hi, ty.hi, tx.w_hi * ty.w_hi),
            ];
            let src = (oy * upstream.width + ox) * c;
            for (sx, sy, w) in corners {
                let dst = (sy * input.width + sx) * c;
                for ch in 0..c {
                    g.data[dst + ch] += w * upstream.data[src + ch];
                }
            }
        }
    }
    Ok(g)
}

/// SplitMix64 stream; the deterministic source behind weight initialization
/// and procedural images.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn tensor(&mut self, width: usize, height: usize, channels: usize, lo: f64, hi: f64) -> Tensor {
        let mut t = Tensor::zeros(width, height, channels);
        for v in t.data_mut() {
            *v = self.uniform(lo, hi);
        }
        t
    }
}
