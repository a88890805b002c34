//! Training objective (pixel L1 plus k-space data consistency), its analytic
//! gradient with respect to the SR image, and evaluation metrics.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::kspace::{fft2_centered, ifft2_centered, ImagePlane, KSpaceGrid, SamplingMask};

/// PSNR reported when the MSE falls below [`PSNR_MSE_FLOOR`].
pub const PSNR_CAP: f64 = 100.0;
pub const PSNR_MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Confidence in the acquired samples; `Infinite` replaces them outright.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    Finite(f64),
    Infinite,
}

impl NoiseLevel {
    /// Scale applied to `K_SR - K_HR` on a sampled bin after replacement.
    fn residual_scale(self) -> f64 {
        match self {
            NoiseLevel::Infinite => 0.0,
            NoiseLevel::Finite(n) => 1.0 / (1.0 + n),
        }
    }
}

impl Serialize for NoiseLevel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NoiseLevel::Infinite => s.serialize_str("infinite"),
            NoiseLevel::Finite(n) => s.serialize_f64(*n),
        }
    }
}

impl<'de> Deserialize<'de> for NoiseLevel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) if n >= 0.0 && n.is_finite() => Ok(NoiseLevel::Finite(n)),
            Raw::Num(n) => Err(serde::de::Error::custom(format!("noise level must be >= 0, got {n}"))),
            Raw::Text(t) if t.eq_ignore_ascii_case("infinite") || t.eq_ignore_ascii_case("inf") => {
                Ok(NoiseLevel::Infinite)
            }
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unknown noise level {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_dc: f64,
    pub noise_level: NoiseLevel,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_rec: 1.0, lambda_dc: 0.0001, noise_level: NoiseLevel::Infinite }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_rec: f64,
    pub l_dc: f64,
    pub l_full: f64,
    pub gradient: Option<ImagePlane>,
}

fn check_same(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    if !a.same_size(b) {
        return Err(Error::input(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

fn check_mask(img: &ImagePlane, mask: &SamplingMask) -> Result<()> {
    if img.height != mask.height || img.width != mask.width {
        return Err(Error::input(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height, mask.width, img.height, img.width
        )));
    }
    Ok(())
}

/// Mean absolute pixel difference.
pub fn rec_loss(i_sr: &ImagePlane, i_hr: &ImagePlane) -> Result<f64> {
    check_same(i_sr, i_hr)?;
    let sum: f64 = i_sr.data.iter().zip(&i_hr.data).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / i_sr.data.len() as f64)
}

/// Data-consistency replacement: sampled bins become `(K_SR + n·K_HR)/(1 + n)`
/// (exactly `K_HR` for infinite `n`), unsampled bins keep `K_SR`.
pub fn dc_replace(k_sr: &KSpaceGrid, k_hr: &KSpaceGrid, mask: &SamplingMask, n: NoiseLevel) -> Result<KSpaceGrid> {
    if !k_sr.same_size(k_hr) || k_sr.height != mask.height || k_sr.width != mask.width {
        return Err(Error::input("k-space grids and mask must share one size"));
    }
    let data = k_sr
        .data
        .iter()
        .zip(&k_hr.data)
        .zip(&mask.data)
        .map(|((&sr, &hr), &sampled)| {
            if !sampled {
                sr
            } else {
                match n {
                    NoiseLevel::Infinite => hr,
                    NoiseLevel::Finite(n) => (sr + hr * n) / (1.0 + n),
                }
            }
        })
        .collect();
    Ok(KSpaceGrid { height: k_sr.height, width: k_sr.width, data })
}

/// Mean over all bins of `|K_DC - K_HR|²`.
pub fn dc_loss(i_sr: &ImagePlane, i_hr: &ImagePlane, mask: &SamplingMask, n: NoiseLevel) -> Result<f64> {
    check_same(i_sr, i_hr)?;
    check_mask(i_sr, mask)?;
    let k_sr = fft2_centered(i_sr);
    let k_hr = fft2_centered(i_hr);
    let k_dc = dc_replace(&k_sr, &k_hr, mask, n)?;
    let sum: f64 = k_dc.data.iter().zip(&k_hr.data).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(sum / k_dc.data.len() as f64)
}

/// `λ_rec·L_rec + λ_dc·L_dc`, without a gradient.
pub fn full_loss(i_sr: &ImagePlane, i_hr: &ImagePlane, mask: &SamplingMask, w: &LossWeights) -> Result<LossReport> {
    let l_rec = rec_loss(i_sr, i_hr)?;
    let l_dc = dc_loss(i_sr, i_hr, mask, w.noise_level)?;
    Ok(LossReport { l_rec, l_dc, l_full: combine(w, l_rec, l_dc), gradient: None })
}

#[inline]
fn combine(w: &LossWeights, l_rec: f64, l_dc: f64) -> f64 {
    w.lambda_rec * l_rec + w.lambda_dc * l_dc
}

/// Loss report including `∂L_full/∂I_SR`.
pub fn full_loss_with_gradient(
    i_sr: &ImagePlane,
    i_hr: &ImagePlane,
    mask: &SamplingMask,
    w: &LossWeights,
) -> Result<LossReport> {
    let mut report = full_loss(i_sr, i_hr, mask, w)?;
    report.gradient = Some(loss_gradient(i_sr, i_hr, mask, w)?);
    Ok(report)
}

/// Analytic gradient of the full objective with respect to `I_SR`.
///
/// The L1 term contributes `sign(I_SR - I_HR)/(H·W)` (zero at ties). The
/// data-consistency term is `(1/HW)·Σ_b w_b·|F(I_SR - I_HR)|_b²` with
/// `w_b = 1` off the mask and `1/(1+n)²` on it, whose gradient is
/// `2·Re(F⁻¹(w ⊙ F(I_SR - I_HR)))` with the normalized inverse.
pub fn loss_gradient(i_sr: &ImagePlane, i_hr: &ImagePlane, mask: &SamplingMask, w: &LossWeights) -> Result<ImagePlane> {
    check_same(i_sr, i_hr)?;
    check_mask(i_sr, mask)?;
    let hw = i_sr.data.len() as f64;
    let diff: Vec<f64> = i_sr.data.iter().zip(&i_hr.data).map(|(a, b)| a - b).collect();

    let mut grad: Vec<f64> = diff
        .iter()
        .map(|&d| {
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            w.lambda_rec * s / hw
        })
        .collect();

    if w.lambda_dc != 0.0 {
        let d_img = ImagePlane { height: i_sr.height, width: i_sr.width, data: diff };
        let mut k = fft2_centered(&d_img);
        let on_mask = w.noise_level.residual_scale().powi(2);
        for (v, &sampled) in k.data.iter_mut().zip(&mask.data) {
            if sampled {
                *v *= on_mask;
            }
        }
        let back = ifft2_centered(&k);
        for (g, c) in grad.iter_mut().zip(&back.data) {
            *g += w.lambda_dc * 2.0 * c.re;
        }
    }
    ImagePlane::new(i_sr.height, i_sr.width, grad)
}

// ---------------------------------------------------------------------------
// metrics

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

pub fn rmse(i_sr: &ImagePlane, i_hr: &ImagePlane) -> Result<f64> {
    Ok(mse(i_sr, i_hr)?.sqrt())
}

/// `10·log10(max²/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(i_sr: &ImagePlane, i_hr: &ImagePlane, max_value: f64) -> Result<f64> {
    let m = mse(i_sr, i_hr)?;
    if m < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (max_value * max_value / m).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filter over valid positions only.
fn filter_valid(data: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..k).map(|i| data[y * w + x + i] * g[i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..k).map(|i| rows[(y + i) * wo + x] * g[i]).sum();
        }
    }
    out
}

/// Single-scale SSIM, Gaussian window 11 / σ 1.5, dynamic range 1.
pub fn ssim(i_sr: &ImagePlane, i_hr: &ImagePlane) -> Result<f64> {
    ssim_with_range(i_sr, i_hr, 1.0)
}

pub fn ssim_with_range(i_sr: &ImagePlane, i_hr: &ImagePlane, max_value: f64) -> Result<f64> {
    check_same(i_sr, i_hr)?;
    let (h, w) = (i_sr.height, i_sr.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::input(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let c1 = (0.01 * max_value).powi(2);
    let c2 = (0.03 * max_value).powi(2);
    let g = gaussian_window();
    let x = &i_sr.data;
    let y = &i_hr.data;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, h, w, &g);
    let my = filter_valid(y, h, w, &g);
    let mxx = filter_valid(&xx, h, w, &g);
    let myy = filter_valid(&yy, h, w, &g);
    let mxy = filter_valid(&xy, h, w, &g);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cov = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}
