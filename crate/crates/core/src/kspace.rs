//! Centered 2-D Fourier transforms, central low-frequency masks, and the
//! crop/embed pair that turns HR images into LR grids and back.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Real magnitude image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input("image dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::input(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite pixel at index {i}")));
        }
        Ok(ImagePlane { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ImagePlane { height, width, data: vec![0.0; height * width] }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ImagePlane { height, width, data: vec![value; height * width] }
    }

    /// Scales raw magnitudes into `[0, 1]` by the maximum absolute value.
    pub fn normalized(height: usize, width: usize, raw: &[f64]) -> Result<Self> {
        let max = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let data = if max > 0.0 { raw.iter().map(|v| v.abs() / max).collect() } else { raw.to_vec() };
        ImagePlane::new(height, width, data)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_size(&self, other: &ImagePlane) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap { channels: 1, height: self.height, width: self.width, data: self.data.clone() }
    }

    pub fn from_feature_map(x: &FeatureMap) -> Result<Self> {
        if x.channels != 1 {
            return Err(Error::config(format!("image needs one channel, got {}", x.channels)));
        }
        ImagePlane::new(x.height, x.width, x.data.clone())
    }

    /// Values clamped into `[0, 1]`, as written to disk.
    pub fn clamped(&self) -> ImagePlane {
        ImagePlane { data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(), ..*self }
    }
}

/// Complex grid in centered layout: the zero frequency sits at `(H/2, W/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl KSpaceGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        KSpaceGrid { height, width, data: vec![Complex64::new(0.0, 0.0); height * width] }
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> Complex64 {
        self.data[a * self.width + b]
    }

    pub fn same_size(&self, other: &KSpaceGrid) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Image-domain complex grid, the output of [`ifft2_centered`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn magnitude(&self) -> ImagePlane {
        ImagePlane { height: self.height, width: self.width, data: self.data.iter().map(|c| c.norm()).collect() }
    }

    pub fn real(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }
}

/// Boolean grid; `true` marks a retained (sampled) frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl SamplingMask {
    #[inline]
    pub fn get(&self, a: usize, b: usize) -> bool {
        self.data[a * self.width + b]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }
}

/// Unnormalized 2-D DFT of a row-major buffer, in place.
fn fft2_raw(height: usize, width: usize, buf: &mut [Complex64], direction: FftDirection) {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft(width, direction);
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(height, direction);
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for (y, c) in col.iter_mut().enumerate() {
            *c = buf[y * width + x];
        }
        col_fft.process(&mut col);
        for (y, c) in col.iter().enumerate() {
            buf[y * width + x] = *c;
        }
    }
}

/// Standard layout → centered layout.
fn fftshift(height: usize, width: usize, buf: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); buf.len()];
    for a in 0..height {
        let ca = (a + height / 2) % height;
        for b in 0..width {
            let cb = (b + width / 2) % width;
            out[ca * width + cb] = buf[a * width + b];
        }
    }
    out
}

/// Centered layout → standard layout.
fn ifftshift(height: usize, width: usize, buf: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); buf.len()];
    for a in 0..height {
        let ca = (a + height / 2) % height;
        for b in 0..width {
            let cb = (b + width / 2) % width;
            out[a * width + b] = buf[ca * width + cb];
        }
    }
    out
}

/// Unnormalized forward transform of a complex image, centered output.
pub fn fft2_centered_complex(height: usize, width: usize, data: &[Complex64]) -> KSpaceGrid {
    let mut buf = data.to_vec();
    fft2_raw(height, width, &mut buf, FftDirection::Forward);
    KSpaceGrid { height, width, data: fftshift(height, width, &buf) }
}

/// Unnormalized forward transform, DC moved to the grid center.
pub fn fft2_centered(x: &ImagePlane) -> KSpaceGrid {
    let data: Vec<Complex64> = x.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_centered_complex(x.height, x.width, &data)
}

/// Inverse of [`fft2_centered`], normalized by `1/(H·W)`.
pub fn ifft2_centered(k: &KSpaceGrid) -> ComplexImage {
    let mut buf = ifftshift(k.height, k.width, &k.data);
    fft2_raw(k.height, k.width, &mut buf, FftDirection::Inverse);
    let norm = 1.0 / (k.height * k.width) as f64;
    for v in buf.iter_mut() {
        *v *= norm;
    }
    ComplexImage { height: k.height, width: k.width, data: buf }
}

fn check_factor(height: usize, width: usize, uf: usize) -> Result<()> {
    if uf == 0 {
        return Err(Error::input("upsampling factor must be >= 1"));
    }
    if height % uf != 0 || width % uf != 0 {
        return Err(Error::input(format!(
            "image size {height}x{width} must be divisible by the upsampling factor {uf}"
        )));
    }
    Ok(())
}

/// Top-left corner of the retained central block.
fn block_origin(height: usize, width: usize, uf: usize) -> (usize, usize) {
    let (h, w) = (height / uf, width / uf);
    (height / 2 - h / 2, width / 2 - w / 2)
}

/// Marks the central `(H/uf) × (W/uf)` block of a centered spectrum.
pub fn central_mask(height: usize, width: usize, uf: usize) -> Result<SamplingMask> {
    check_factor(height, width, uf)?;
    let (h, w) = (height / uf, width / uf);
    let (r0, c0) = block_origin(height, width, uf);
    let mut data = vec![false; height * width];
    for a in r0..r0 + h {
        data[a * width + c0..a * width + c0 + w].fill(true);
    }
    Ok(SamplingMask { height, width, data })
}

/// Keeps only the central low-frequency block of the HR spectrum and returns
/// the magnitude of its inverse transform on the small `(H/uf) × (W/uf)` grid.
///
/// The block is scaled by `1/uf²`, so constant images keep their value.
pub fn degrade(hr: &ImagePlane, uf: usize) -> Result<ImagePlane> {
    check_factor(hr.height, hr.width, uf)?;
    if uf == 1 {
        return Ok(hr.clone());
    }
    let k = fft2_centered(hr);
    let (h, w) = (hr.height / uf, hr.width / uf);
    let (r0, c0) = block_origin(hr.height, hr.width, uf);
    let scale = 1.0 / (uf * uf) as f64;
    let mut small = KSpaceGrid::zeros(h, w);
    for a in 0..h {
        for b in 0..w {
            small.data[a * w + b] = k.get(r0 + a, c0 + b) * scale;
        }
    }
    Ok(ifft2_centered(&small).magnitude())
}

/// Embeds the LR spectrum in the center of a zero HR spectrum (scaled by
/// `uf²`) and returns the magnitude of the inverse transform.
pub fn zero_fill_upsample(lr: &ImagePlane, uf: usize) -> Result<ImagePlane> {
    if uf == 0 {
        return Err(Error::input("upsampling factor must be >= 1"));
    }
    if uf == 1 {
        return Ok(lr.clone());
    }
    let small = fft2_centered(lr);
    let (height, width) = (lr.height * uf, lr.width * uf);
    let (r0, c0) = block_origin(height, width, uf);
    let scale = (uf * uf) as f64;
    let mut big = KSpaceGrid::zeros(height, width);
    for a in 0..lr.height {
        for b in 0..lr.width {
            big.data[(r0 + a) * width + c0 + b] = small.get(a, b) * scale;
        }
    }
    Ok(ifft2_centered(&big).magnitude())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_has_zero_spectrum() {
        let k = fft2_centered(&ImagePlane::zeros(4, 6));
        assert!(k.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn constant_image_concentrates_at_center() {
        let k = fft2_centered(&ImagePlane::filled(8, 8, 0.3));
        for a in 0..8 {
            for b in 0..8 {
                let v = k.get(a, b);
                if (a, b) == (4, 4) {
                    assert!((v.re - 0.3 * 64.0).abs() < 1e-12 && v.im.abs() < 1e-12);
                } else {
                    assert!(v.norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn odd_sizes_round_trip() {
        let img = ImagePlane::new(3, 5, (0..15).map(|i| i as f64 / 15.0).collect()).unwrap();
        let back = ifft2_centered(&fft2_centered(&img)).real();
        for (a, b) in back.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_fractions() {
        let m = central_mask(256, 256, 2).unwrap();
        assert_eq!(m.count(), 128 * 128);
        assert_eq!(m.fraction(), 0.25);
        assert!(m.get(64, 64) && m.get(191, 191) && !m.get(63, 64) && !m.get(192, 100));
        assert_eq!(central_mask(256, 256, 4).unwrap().fraction(), 0.0625);
        assert!(central_mask(8, 8, 1).unwrap().data.iter().all(|&b| b));
        assert!(matches!(central_mask(10, 8, 4), Err(Error::Input(_))));
    }

    #[test]
    fn degrade_keeps_constants_and_shapes() {
        let lr = degrade(&ImagePlane::filled(32, 32, 0.5), 4).unwrap();
        assert_eq!((lr.height, lr.width), (8, 8));
        assert!(lr.data.iter().all(|v| (v - 0.5).abs() < 1e-6));
        let hr = zero_fill_upsample(&ImagePlane::filled(4, 4, 0.7), 4).unwrap();
        assert_eq!((hr.height, hr.width), (16, 16));
        assert!(hr.data.iter().all(|v| (v - 0.7).abs() < 1e-6));
        assert!(matches!(degrade(&ImagePlane::zeros(10, 12), 4), Err(Error::Input(_))));
    }

    #[test]
    fn factor_one_is_a_copy() {
        let img = ImagePlane::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(degrade(&img, 1).unwrap(), img);
        assert_eq!(zero_fill_upsample(&img, 1).unwrap(), img);
    }

    #[test]
    fn image_rejects_non_finite() {
        assert!(ImagePlane::new(1, 2, vec![0.0, f64::NAN]).is_err());
    }
}
