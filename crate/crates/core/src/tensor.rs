//! Dense kernels over channel-major feature maps and token matrices.
//!
//! Everything here is a pure function of its inputs and runs single-threaded
//! in a fixed accumulation order, so repeated calls are bitwise identical.

use crate::error::{Error, Result};

/// Default epsilon for instance and layer normalization.
pub const NORM_EPS: f64 = 1e-5;

/// A `channels × height × width` grid of reals, row-major by (channel, row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::input(format!(
                "feature map dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::input(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(FeatureMap { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        FeatureMap { channels, height, width, data: vec![value; channels * height * width] }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn zip_with(&self, other: &FeatureMap, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<FeatureMap> {
        if !self.same_shape(other) {
            return Err(Error::config(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(FeatureMap { data, ..*self })
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &FeatureMap) -> Result<FeatureMap> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &FeatureMap) -> Result<FeatureMap> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    /// Copy of the spatial window `[top, top+h) × [left, left+w)` over all channels.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> FeatureMap {
        assert!(top + h <= self.height && left + w <= self.width, "crop out of bounds");
        let mut out = FeatureMap::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                let src = self.index(c, top + y, left);
                let dst = out.index(c, y, 0);
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        out
    }
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::config(format!(
            "concat: spatial mismatch {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(FeatureMap { channels: a.channels + b.channels, height: a.height, width: a.width, data })
}

/// Per-channel population (mean, std).
pub fn channel_stats(x: &FeatureMap) -> Vec<(f64, f64)> {
    (0..x.channels).map(|c| mean_std(x.channel(c))).collect()
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|&a| (a - mean) * (a - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// gemm

/// `c (m×n) = beta·c + a (m×k) · b (k×n)` with arbitrary element strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs out of bounds");
        assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs out of bounds");
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: output out of bounds");
    // SAFETY: every index touched by dgemm is bounded by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

// ---------------------------------------------------------------------------
// convolution

/// A 3×3 convolution with padding 1.
///
/// For [`conv2d`] the weights are laid out `out × in × 3 × 3`. For
/// [`conv_transpose2d`] the layout is `in × out × 3 × 3`, so a transposed
/// spec whose `in_channels` equals a forward spec's `out_channels` can share
/// the forward weight buffer and computes its exact adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::config("conv channels must be positive"));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::config(format!("conv stride must be 1 or 2, got {stride}")));
        }
        if weights.len() != in_channels * out_channels * TAPS {
            return Err(Error::config(format!(
                "conv weights: expected {} values, got {}",
                in_channels * out_channels * TAPS,
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::config(format!(
                "conv bias: expected {out_channels} values, got {}",
                bias.len()
            )));
        }
        Ok(ConvSpec { in_channels, out_channels, stride, weights, bias })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            stride,
            weights: vec![0.0; in_channels * out_channels * TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    /// Center tap 1 on matching channels, zero elsewhere.
    pub fn identity(channels: usize) -> Self {
        let mut spec = ConvSpec::zeros(channels, channels, 1);
        for c in 0..channels {
            spec.weights[(c * channels + c) * TAPS + 4] = 1.0;
        }
        spec
    }

    /// Same weights and bias, different stride.
    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }
}

/// Spatial output size of a stride-`s` 3×3 convolution with padding 1.
#[inline]
pub fn conv_out_size(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

/// Direct 3×3 convolution with zero padding 1.
pub fn conv2d(x: &FeatureMap, spec: &ConvSpec) -> Result<FeatureMap> {
    if spec.in_channels != x.channels {
        return Err(Error::config(format!(
            "conv2d: spec expects {} input channels, map has {}",
            spec.in_channels, x.channels
        )));
    }
    let s = spec.stride;
    let (ci, co) = (spec.in_channels, spec.out_channels);
    let (h, w) = (x.height, x.width);
    let (ho, wo) = (conv_out_size(h, s), conv_out_size(w, s));
    let p = ho * wo;

    let mut out = FeatureMap::zeros(co, ho, wo);
    for (o, &b) in spec.bias.iter().enumerate() {
        out.channel_mut(o).fill(b);
    }

    let mut gather = vec![0.0; ci * p];
    for ki in 0..KERNEL {
        for kj in 0..KERNEL {
            for c in 0..ci {
                let plane = x.channel(c);
                let dst = &mut gather[c * p..(c + 1) * p];
                for oy in 0..ho {
                    let row = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = (oy * s + ki) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, r) in row.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - 1;
                        *r = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
            let tap = ki * KERNEL + kj;
            gemm(
                co,
                ci,
                p,
                &spec.weights[tap..],
                ci * TAPS,
                TAPS,
                &gather,
                p,
                1,
                1.0,
                &mut out.data,
                p,
                1,
            );
        }
    }
    Ok(out)
}

/// Stride-2 3×3 transposed convolution, padding 1, output padding 1.
///
/// The output is exactly twice the input in each spatial dimension, and the
/// map is the adjoint of a stride-2 [`conv2d`] sharing the same weight buffer.
pub fn conv_transpose2d(x: &FeatureMap, spec: &ConvSpec) -> Result<FeatureMap> {
    if spec.in_channels != x.channels {
        return Err(Error::config(format!(
            "conv_transpose2d: spec expects {} input channels, map has {}",
            spec.in_channels, x.channels
        )));
    }
    if spec.stride != 2 {
        return Err(Error::config(format!(
            "conv_transpose2d supports stride 2 only, got {}",
            spec.stride
        )));
    }
    let (ci, co) = (spec.in_channels, spec.out_channels);
    let (h, w) = (x.height, x.width);
    let (ho, wo) = (2 * h, 2 * w);
    let p = h * w;

    let mut out = FeatureMap::zeros(co, ho, wo);
    for (o, &b) in spec.bias.iter().enumerate() {
        out.channel_mut(o).fill(b);
    }

    let mut contrib = vec![0.0; co * p];
    for ki in 0..KERNEL {
        for kj in 0..KERNEL {
            let tap = ki * KERNEL + kj;
            gemm(
                co,
                ci,
                p,
                &spec.weights[tap..],
                TAPS,
                co * TAPS,
                &x.data,
                p,
                1,
                0.0,
                &mut contrib,
                p,
                1,
            );
            for o in 0..co {
                let src = &contrib[o * p..(o + 1) * p];
                let dst = out.channel_mut(o);
                for iy in 0..h {
                    let oy = (2 * iy + ki) as isize - 1;
                    if oy < 0 || oy >= ho as isize {
                        continue;
                    }
                    let drow = &mut dst[oy as usize * wo..(oy as usize + 1) * wo];
                    for ix in 0..w {
                        let ox = (2 * ix + kj) as isize - 1;
                        if ox >= 0 && ox < wo as isize {
                            drow[ox as usize] += src[iy * w + ix];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// interpolation

/// Source coordinate of output sample `i` under the half-pixel convention.
#[inline]
fn source_coord(i: usize, factor: usize) -> f64 {
    (i as f64 + 0.5) / factor as f64 - 0.5
}

/// Bilinear upsampling by an integer factor, align-corners false.
pub fn bilinear_upsample(x: &FeatureMap, factor: usize) -> Result<FeatureMap> {
    if factor == 0 {
        return Err(Error::config("upsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (h, w) = (x.height, x.width);
    let (ho, wo) = (h * factor, w * factor);
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let src = source_coord(i, factor).max(0.0);
                let i0 = (src.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = taps(h, ho);
    let xs = taps(w, wo);
    let mut out = FeatureMap::zeros(x.channels, ho, wo);
    for c in 0..x.channels {
        let plane = x.channel(c);
        let dst = out.channel_mut(c);
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - lx) + plane[y0 * w + x1] * lx;
                let bot = plane[y1 * w + x0] * (1.0 - lx) + plane[y1 * w + x1] * lx;
                dst[oy * wo + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    Ok(out)
}

fn cubic_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.75;
    let near = |d: f64| ((A + 2.0) * d - (A + 3.0)) * d * d + 1.0;
    let far = |d: f64| ((A * d - 5.0 * A) * d + 8.0 * A) * d - 4.0 * A;
    [far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)]
}

/// Bicubic upsampling (cubic convolution, a = -0.75), align-corners false,
/// borders replicated.
pub fn bicubic_upsample(x: &FeatureMap, factor: usize) -> Result<FeatureMap> {
    if factor == 0 {
        return Err(Error::config("upsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (h, w) = (x.height, x.width);
    let (ho, wo) = (h * factor, w * factor);
    let taps = |n_in: usize, n_out: usize| -> Vec<([usize; 4], [f64; 4])> {
        (0..n_out)
            .map(|i| {
                let src = source_coord(i, factor);
                let base = src.floor();
                let wts = cubic_weights(src - base);
                let mut idx = [0usize; 4];
                for (k, slot) in idx.iter_mut().enumerate() {
                    *slot = (base as isize - 1 + k as isize).clamp(0, n_in as isize - 1) as usize;
                }
                (idx, wts)
            })
            .collect()
    };
    let ys = taps(h, ho);
    let xs = taps(w, wo);
    let mut out = FeatureMap::zeros(x.channels, ho, wo);
    let mut rows = vec![0.0; h * wo];
    for c in 0..x.channels {
        let plane = x.channel(c);
        // horizontal pass
        for y in 0..h {
            for (ox, (xi, xw)) in xs.iter().enumerate() {
                rows[y * wo + ox] = (0..4).map(|k| plane[y * w + xi[k]] * xw[k]).sum();
            }
        }
        let dst = out.channel_mut(c);
        for (oy, (yi, yw)) in ys.iter().enumerate() {
            for ox in 0..wo {
                dst[oy * wo + ox] = (0..4).map(|k| rows[yi[k] * wo + ox] * yw[k]).sum();
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// normalization

/// Per-channel normalization to zero mean and unit population std.
pub fn instance_norm(x: &FeatureMap, epsilon: f64) -> Result<FeatureMap> {
    if epsilon <= 0.0 {
        return Err(Error::config("instance_norm epsilon must be positive"));
    }
    let mut out = x.clone();
    for c in 0..x.channels {
        let (mean, std) = mean_std(x.channel(c));
        let inv = 1.0 / (std * std + epsilon).sqrt();
        for v in out.channel_mut(c) {
            *v = (*v - mean) * inv;
        }
    }
    Ok(out)
}

/// Row-major `rows × cols` matrix; token matrices use one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::input(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Normalizes every token over its feature dimension, then applies `gain`/`bias`.
pub fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64], epsilon: f64) -> Result<Matrix> {
    if gain.len() != x.cols || bias.len() != x.cols {
        return Err(Error::config(format!(
            "layer_norm: affine length {}/{} does not match dim {}",
            gain.len(),
            bias.len(),
            x.cols
        )));
    }
    if epsilon <= 0.0 {
        return Err(Error::config("layer_norm epsilon must be positive"));
    }
    let mut out = x.clone();
    for r in 0..x.rows {
        let (mean, std) = mean_std(x.row(r));
        let inv = 1.0 / (std * std + epsilon).sqrt();
        for ((v, &g), &b) in out.row_mut(r).iter_mut().zip(gain).zip(bias) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(x: &mut Matrix) {
    for r in 0..x.rows {
        let row = x.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::config(format!(
            "matmul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(a.rows, a.cols, b.cols, &a.data, a.cols, 1, &b.data, b.cols, 1, 0.0, &mut out.data, b.cols, 1);
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::config(format!(
            "matmul_transposed: {}x{} times ({}x{})^T",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    gemm(a.rows, a.cols, b.rows, &a.data, a.cols, 1, &b.data, 1, b.cols, 0.0, &mut out.data, b.rows, 1);
    Ok(out)
}

/// Fully connected layer: `x · weightᵀ + bias` with `weight` laid out `out × in`.
pub fn linear(x: &Matrix, weight: &[f64], bias: &[f64]) -> Result<Matrix> {
    let in_dim = x.cols;
    let out_dim = bias.len();
    if weight.len() != in_dim * out_dim {
        return Err(Error::config(format!(
            "linear: weight has {} values, expected {out_dim}x{in_dim}",
            weight.len()
        )));
    }
    let mut out = Matrix::zeros(x.rows, out_dim);
    for r in 0..x.rows {
        out.row_mut(r).copy_from_slice(bias);
    }
    gemm(x.rows, in_dim, out_dim, &x.data, in_dim, 1, weight, 1, in_dim, 1.0, &mut out.data, out_dim, 1);
    Ok(out)
}

/// Feature map → `(H·W) × C` token matrix.
pub fn to_tokens(x: &FeatureMap) -> Matrix {
    let n = x.plane_len();
    let mut m = Matrix::zeros(n, x.channels);
    for c in 0..x.channels {
        for (p, &v) in x.channel(c).iter().enumerate() {
            m.data[p * x.channels + c] = v;
        }
    }
    m
}

/// Inverse of [`to_tokens`].
pub fn from_tokens(m: &Matrix, height: usize, width: usize) -> Result<FeatureMap> {
    if m.rows != height * width {
        return Err(Error::config(format!(
            "from_tokens: {} tokens cannot fill {height}x{width}",
            m.rows
        )));
    }
    let mut x = FeatureMap::zeros(m.cols, height, width);
    for c in 0..m.cols {
        let ch = x.channel_mut(c);
        for (p, v) in ch.iter_mut().enumerate() {
            *v = m.data[p * m.cols + c];
        }
    }
    Ok(x)
}

/// Reflection index into `[0, n)` without repeating the edge sample.
///
/// Indices beyond one reflection keep bouncing, so any padding amount is valid.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Pads bottom/right by reflection up to `height × width`.
pub fn pad_reflect(x: &FeatureMap, height: usize, width: usize) -> FeatureMap {
    assert!(height >= x.height && width >= x.width, "pad_reflect cannot shrink");
    if height == x.height && width == x.width {
        return x.clone();
    }
    let mut out = FeatureMap::zeros(x.channels, height, width);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..height {
            let sy = reflect_index(y as isize, x.height);
            for xx in 0..width {
                let sx = reflect_index(xx as isize, x.width);
                dst[y * width + xx] = src[sy * x.width + sx];
            }
        }
    }
    out
}

/// Cyclic shift: `out[y][x] = in[(y - dy) mod H][(x - dx) mod W]`.
pub fn roll(x: &FeatureMap, dy: isize, dx: isize) -> FeatureMap {
    if dy == 0 && dx == 0 {
        return x.clone();
    }
    let (h, w) = (x.height, x.width);
    let mut out = FeatureMap::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
            for xx in 0..w {
                let sx = (xx as isize - dx).rem_euclid(w as isize) as usize;
                dst[y * w + xx] = src[sy * w + sx];
            }
        }
    }
    out
}
