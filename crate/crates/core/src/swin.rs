//! Shifted-window transformer layers, residual blocks and groups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    self, conv2d, from_tokens, layer_norm, linear, pad_reflect, roll, softmax_in_place, to_tokens,
    ConvSpec, FeatureMap, Matrix, NORM_EPS,
};
use crate::weights::{take_conv, ParamKind, ParamSource};

/// Logit assigned to token pairs that straddle a shifted-window boundary.
pub const MASK_LOGIT: f64 = -1e9;

/// One transformer layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StlConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub window: usize,
    pub shift: usize,
    pub mlp_ratio: f64,
}

impl StlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_heads == 0 || self.window == 0 {
            return Err(Error::config("embed_dim, num_heads and window must be positive"));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.shift != 0 && self.shift != self.window / 2 {
            return Err(Error::config(format!(
                "shift must be 0 or window/2 = {}, got {}",
                self.window / 2,
                self.shift
            )));
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(Error::config("mlp_ratio must be positive"));
        }
        if self.hidden_dim() == 0 {
            return Err(Error::config("mlp hidden width rounds to zero"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn hidden_dim(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    /// Side of the relative position bias table.
    pub fn bias_side(&self) -> usize {
        2 * self.window - 1
    }
}

/// A group of residual blocks. Even layers inside a block use plain windows,
/// odd layers shift by half a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StgConfig {
    pub num_rstb: usize,
    pub stl_per_rstb: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub window: usize,
    pub mlp_ratio: f64,
}

impl Default for StgConfig {
    fn default() -> Self {
        StgConfig { num_rstb: 4, stl_per_rstb: 6, embed_dim: 32, num_heads: 4, window: 8, mlp_ratio: 2.0 }
    }
}

impl StgConfig {
    pub fn layer(&self, index: usize) -> StlConfig {
        StlConfig {
            embed_dim: self.embed_dim,
            num_heads: self.num_heads,
            window: self.window,
            shift: if index % 2 == 0 { 0 } else { self.window / 2 },
            mlp_ratio: self.mlp_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_rstb == 0 || self.stl_per_rstb == 0 {
            return Err(Error::config("num_rstb and stl_per_rstb must be positive"));
        }
        self.layer(1).validate()
    }
}

// ---------------------------------------------------------------------------
// weights

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn take(src: &mut dyn ParamSource, prefix: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Linear {
            weight: src.take(&format!("{prefix}.weight"), &[out_dim, in_dim], ParamKind::Weight)?,
            bias: src.take(&format!("{prefix}.bias"), &[out_dim], ParamKind::Bias)?,
        })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        linear(x, &self.weight, &self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormAffine {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl NormAffine {
    pub fn take(src: &mut dyn ParamSource, prefix: &str, dim: usize) -> Result<Self> {
        Ok(NormAffine {
            gain: src.take(&format!("{prefix}.weight"), &[dim], ParamKind::NormGain)?,
            bias: src.take(&format!("{prefix}.bias"), &[dim], ParamKind::Bias)?,
        })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        layer_norm(x, &self.gain, &self.bias, NORM_EPS)
    }
}

/// Per-head bias indexed by relative offset inside a window.
///
/// Stored `(2w-1)² × heads`; entry `((dr + w - 1)·(2w - 1) + dc + w - 1)·heads + h`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeBiasTable {
    pub window: usize,
    pub heads: usize,
    pub values: Vec<f64>,
}

impl RelativeBiasTable {
    pub fn lookup(&self, head: usize, a: (usize, usize), b: (usize, usize)) -> f64 {
        let w = self.window as isize;
        let dr = a.0 as isize - b.0 as isize + w - 1;
        let dc = a.1 as isize - b.1 as isize + w - 1;
        let side = 2 * w - 1;
        self.values[((dr * side + dc) as usize) * self.heads + head]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StlWeights {
    pub norm1: NormAffine,
    pub qkv: Linear,
    pub proj: Linear,
    pub rel_bias: RelativeBiasTable,
    pub norm2: NormAffine,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl StlWeights {
    pub fn take(src: &mut dyn ParamSource, prefix: &str, cfg: &StlConfig) -> Result<Self> {
        let c = cfg.embed_dim;
        let side = cfg.bias_side();
        Ok(StlWeights {
            norm1: NormAffine::take(src, &format!("{prefix}.norm1"), c)?,
            qkv: Linear::take(src, &format!("{prefix}.attn.qkv"), c, 3 * c)?,
            proj: Linear::take(src, &format!("{prefix}.attn.proj"), c, c)?,
            rel_bias: RelativeBiasTable {
                window: cfg.window,
                heads: cfg.num_heads,
                values: src.take(
                    &format!("{prefix}.attn.relative_position_bias_table"),
                    &[side * side, cfg.num_heads],
                    ParamKind::Weight,
                )?,
            },
            norm2: NormAffine::take(src, &format!("{prefix}.norm2"), c)?,
            fc1: Linear::take(src, &format!("{prefix}.mlp.fc1"), c, cfg.hidden_dim())?,
            fc2: Linear::take(src, &format!("{prefix}.mlp.fc2"), cfg.hidden_dim(), c)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RstbWeights {
    pub layers: Vec<StlWeights>,
    pub conv: ConvSpec,
}

impl RstbWeights {
    pub fn take(src: &mut dyn ParamSource, prefix: &str, cfg: &StgConfig) -> Result<Self> {
        let layers = (0..cfg.stl_per_rstb)
            .map(|j| StlWeights::take(src, &format!("{prefix}.stl{j}"), &cfg.layer(j)))
            .collect::<Result<_>>()?;
        let conv = take_conv(src, &format!("{prefix}.conv"), cfg.embed_dim, cfg.embed_dim, 1)?;
        Ok(RstbWeights { layers, conv })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StgWeights {
    pub blocks: Vec<RstbWeights>,
    pub conv: ConvSpec,
}

impl StgWeights {
    pub fn take(src: &mut dyn ParamSource, prefix: &str, cfg: &StgConfig) -> Result<Self> {
        let blocks = (0..cfg.num_rstb)
            .map(|i| RstbWeights::take(src, &format!("{prefix}.rstb{i}"), cfg))
            .collect::<Result<_>>()?;
        let conv = take_conv(src, &format!("{prefix}.conv"), cfg.embed_dim, cfg.embed_dim, 1)?;
        Ok(StgWeights { blocks, conv })
    }
}

// ---------------------------------------------------------------------------
// windows

/// Geometry needed to undo [`window_partition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub window: usize,
}

impl WindowGeometry {
    pub fn new(channels: usize, height: usize, width: usize, window: usize) -> Self {
        WindowGeometry {
            channels,
            height,
            width,
            padded_height: height.div_ceil(window) * window,
            padded_width: width.div_ceil(window) * window,
            window,
        }
    }

    pub fn windows_down(&self) -> usize {
        self.padded_height / self.window
    }

    pub fn windows_across(&self) -> usize {
        self.padded_width / self.window
    }

    pub fn count(&self) -> usize {
        self.windows_down() * self.windows_across()
    }
}

/// Splits a map into `window × window` token matrices (row-major windows,
/// row-major tokens inside each), reflection-padding bottom/right first.
pub fn window_partition(x: &FeatureMap, window: usize) -> Result<(Vec<Matrix>, WindowGeometry)> {
    if window == 0 {
        return Err(Error::config("window must be positive"));
    }
    let geom = WindowGeometry::new(x.channels, x.height, x.width, window);
    let padded = pad_reflect(x, geom.padded_height, geom.padded_width);
    let c = x.channels;
    let mut out = Vec::with_capacity(geom.count());
    for wr in 0..geom.windows_down() {
        for wc in 0..geom.windows_across() {
            let mut m = Matrix::zeros(window * window, c);
            for r in 0..window {
                for col in 0..window {
                    let row = m.row_mut(r * window + col);
                    for (ch, v) in row.iter_mut().enumerate() {
                        *v = padded.get(ch, wr * window + r, wc * window + col);
                    }
                }
            }
            out.push(m);
        }
    }
    Ok((out, geom))
}

/// Reassembles windows and crops back to the original size.
pub fn window_merge(windows: &[Matrix], geom: &WindowGeometry) -> Result<FeatureMap> {
    if windows.len() != geom.count() {
        return Err(Error::config(format!(
            "window_merge: expected {} windows, got {}",
            geom.count(),
            windows.len()
        )));
    }
    let w = geom.window;
    let mut out = FeatureMap::zeros(geom.channels, geom.height, geom.width);
    for (k, m) in windows.iter().enumerate() {
        if m.rows != w * w || m.cols != geom.channels {
            return Err(Error::config("window_merge: window matrix has wrong shape"));
        }
        let (wr, wc) = (k / geom.windows_across(), k % geom.windows_across());
        for r in 0..w {
            let y = wr * w + r;
            if y >= geom.height {
                break;
            }
            for col in 0..w {
                let x = wc * w + col;
                if x >= geom.width {
                    break;
                }
                for (ch, &v) in m.row(r * w + col).iter().enumerate() {
                    out.set(ch, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

/// Region label of a coordinate on the shifted, padded grid. Tokens with
/// different labels were not neighbours before the cyclic shift.
fn shift_region(p: usize, size: usize, window: usize, shift: usize) -> usize {
    if p < size - window {
        0
    } else if p < size - shift {
        1
    } else {
        2
    }
}

/// Windowed multi-head self-attention over a normalized token map
/// (`C × H × W` already padded to multiples of the window), including the
/// cyclic shift, masking and output projection.
fn windowed_attention(x: &FeatureMap, cfg: &StlConfig, w: &StlWeights) -> Result<FeatureMap> {
    let win = cfg.window;
    let shift = cfg.shift;
    let (hp, wp) = (x.height, x.width);
    let shifted = roll(x, -(shift as isize), -(shift as isize));
    let (windows, geom) = window_partition(&shifted, win)?;
    let heads = cfg.num_heads;
    let hd = cfg.head_dim();
    let c = cfg.embed_dim;
    let scale = 1.0 / (hd as f64).sqrt();
    let n = win * win;

    // Bias and mask depend only on token pairs, so build them once per window kind.
    let mut bias = vec![0.0; heads * n * n];
    for h in 0..heads {
        for i in 0..n {
            for j in 0..n {
                bias[(h * n + i) * n + j] = w.rel_bias.lookup(h, (i / win, i % win), (j / win, j % win));
            }
        }
    }

    let mut outputs = Vec::with_capacity(windows.len());
    let mut logits = Matrix::zeros(n, n);
    for (k, tokens) in windows.iter().enumerate() {
        let (wr, wc) = (k / geom.windows_across(), k % geom.windows_across());
        let labels: Option<Vec<usize>> = (shift > 0).then(|| {
            (0..n)
                .map(|i| {
                    let y = wr * win + i / win;
                    let xx = wc * win + i % win;
                    3 * shift_region(y, hp, win, shift) + shift_region(xx, wp, win, shift)
                })
                .collect()
        });
        let qkv = w.qkv.apply(tokens)?;
        let mut attended = Matrix::zeros(n, c);
        for h in 0..heads {
            let q_off = h * hd;
            let k_off = c + h * hd;
            let v_off = 2 * c + h * hd;
            for i in 0..n {
                let qi = &qkv.row(i)[q_off..q_off + hd];
                let row = logits.row_mut(i);
                for (j, slot) in row.iter_mut().enumerate() {
                    let kj = &qkv.row(j)[k_off..k_off + hd];
                    let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                    let mut v = dot * scale + bias[(h * n + i) * n + j];
                    if let Some(l) = &labels {
                        if l[i] != l[j] {
                            v += MASK_LOGIT;
                        }
                    }
                    *slot = v;
                }
            }
            softmax_in_place(&mut logits);
            for i in 0..n {
                let probs = logits.row(i);
                let out = &mut attended.row_mut(i)[h * hd..(h + 1) * hd];
                for (j, &p) in probs.iter().enumerate() {
                    let vj = &qkv.row(j)[v_off..v_off + hd];
                    for (o, &v) in out.iter_mut().zip(vj) {
                        *o += p * v;
                    }
                }
            }
        }
        outputs.push(w.proj.apply(&attended)?);
    }
    let merged = window_merge(&outputs, &geom)?;
    Ok(roll(&merged, shift as isize, shift as isize))
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// One pre-norm transformer layer:
/// `x += proj(W-MSA(LN(x)))`, then `x += fc2(gelu(fc1(LN(x))))`.
pub fn stl_forward(x: &FeatureMap, cfg: &StlConfig, w: &StlWeights) -> Result<FeatureMap> {
    cfg.validate()?;
    if x.channels != cfg.embed_dim {
        return Err(Error::config(format!(
            "stl: map has {} channels, embed_dim is {}",
            x.channels, cfg.embed_dim
        )));
    }
    let (h, wd) = (x.height, x.width);
    let tokens = to_tokens(x);

    let normed = from_tokens(&w.norm1.apply(&tokens)?, h, wd)?;
    let geom = WindowGeometry::new(x.channels, h, wd, cfg.window);
    let padded = pad_reflect(&normed, geom.padded_height, geom.padded_width);
    let attn = windowed_attention(&padded, cfg, w)?.crop(0, 0, h, wd);
    let attn_tokens = to_tokens(&attn);

    let mut t = tokens;
    for (a, b) in t.data.iter_mut().zip(&attn_tokens.data) {
        *a += b;
    }

    let mut hidden = w.fc1.apply(&w.norm2.apply(&t)?)?;
    for v in hidden.data.iter_mut() {
        *v = gelu(*v);
    }
    let mlp = w.fc2.apply(&hidden)?;
    for (a, b) in t.data.iter_mut().zip(&mlp.data) {
        *a += b;
    }
    from_tokens(&t, h, wd)
}

/// Residual block: `conv(STL_n(...STL_1(x))) + x`.
pub fn rstb_forward(x: &FeatureMap, cfg: &StgConfig, w: &RstbWeights) -> Result<FeatureMap> {
    if w.conv.in_channels != x.channels || w.conv.out_channels != x.channels {
        return Err(Error::config("rstb: trailing conv must preserve channel count"));
    }
    let mut f = x.clone();
    for (j, layer) in w.layers.iter().enumerate() {
        f = stl_forward(&f, &cfg.layer(j), layer)?;
    }
    conv2d(&f, &w.conv)?.add(x)
}

/// Group of residual blocks with a trailing conv and a group-level residual.
pub fn stg_forward(x: &FeatureMap, cfg: &StgConfig, w: &StgWeights) -> Result<FeatureMap> {
    cfg.validate()?;
    if w.conv.in_channels != x.channels || w.conv.out_channels != x.channels {
        return Err(Error::config("stg: trailing conv must preserve channel count"));
    }
    let mut f = x.clone();
    for block in &w.blocks {
        f = rstb_forward(&f, cfg, block)?;
    }
    conv2d(&f, &w.conv)?.add(x)
}

/// Attention probabilities of one window and head, exposed for inspection.
///
/// `tokens` are the already normalized tokens of a single window; `labels`
/// optionally assigns a shift region to each token for masking.
pub fn window_attention_probs(
    tokens: &Matrix,
    cfg: &StlConfig,
    w: &StlWeights,
    head: usize,
    labels: Option<&[usize]>,
) -> Result<Matrix> {
    let n = cfg.window * cfg.window;
    if tokens.rows != n {
        return Err(Error::config("window_attention_probs expects one full window"));
    }
    let hd = cfg.head_dim();
    let c = cfg.embed_dim;
    let qkv = w.qkv.apply(tokens)?;
    let mut logits = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let q = &qkv.row(i)[head * hd..(head + 1) * hd];
            let k = &qkv.row(j)[c + head * hd..c + (head + 1) * hd];
            let mut v = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt()
                + w.rel_bias.lookup(head, (i / cfg.window, i % cfg.window), (j / cfg.window, j % cfg.window));
            if let Some(l) = labels {
                if l[i] != l[j] {
                    v += MASK_LOGIT;
                }
            }
            logits.data[i * n + j] = v;
        }
    }
    Ok(tensor::softmax(&logits))
}
