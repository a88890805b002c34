#![allow(dead_code)]

use mcsr_core::kspace::ImagePlane;
use mcsr_core::tensor::{ConvSpec, FeatureMap};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn feature_map(rng: &mut StdRng, c: usize, h: usize, w: usize) -> FeatureMap {
    let data = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMap::new(c, h, w, data).unwrap()
}

pub fn image(rng: &mut StdRng, h: usize, w: usize) -> ImagePlane {
    let data = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    ImagePlane::new(h, w, data).unwrap()
}

pub fn conv(rng: &mut StdRng, cin: usize, cout: usize, stride: usize) -> ConvSpec {
    let w = (0..cout * cin * 9).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let b = (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
    ConvSpec::new(cin, cout, stride, w, b).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Zero-padded 3x3 correlation written out term by term.
pub fn naive_conv(x: &FeatureMap, s: &ConvSpec) -> FeatureMap {
    let oh = x.height.div_ceil(s.stride);
    let ow = x.width.div_ceil(s.stride);
    let mut out = FeatureMap::zeros(s.out_channels, oh, ow);
    for o in 0..s.out_channels {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = s.bias[o];
                for i in 0..s.in_channels {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = (y * s.stride + ky) as isize - 1;
                            let sx = (xx * s.stride + kx) as isize - 1;
                            if sy >= 0 && sx >= 0 && (sy as usize) < x.height && (sx as usize) < x.width {
                                acc += s.weights[((o * s.in_channels + i) * 3 + ky) * 3 + kx]
                                    * x.get(i, sy as usize, sx as usize);
                            }
                        }
                    }
                }
                out.set(o, y, xx, acc);
            }
        }
    }
    out
}
pub mod oracles;

/// Stride-2 transposed conv (weights `in × out × 3 × 3`) by scattering each input.
pub fn naive_conv_transpose(x: &FeatureMap, s: &ConvSpec) -> FeatureMap {
    let (oh, ow) = (2 * x.height, 2 * x.width);
    let mut out = FeatureMap::zeros(s.out_channels, oh, ow);
    for o in 0..s.out_channels {
        out.channel_mut(o).fill(s.bias[o]);
    }
    for i in 0..s.in_channels {
        for y in 0..x.height {
            for xx in 0..x.width {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let ty = (2 * y + ky) as isize - 1;
                        let tx = (2 * xx + kx) as isize - 1;
                        if ty < 0 || tx < 0 || ty as usize >= oh || tx as usize >= ow {
                            continue;
                        }
                        for o in 0..s.out_channels {
                            let wv = s.weights[((i * s.out_channels + o) * 3 + ky) * 3 + kx];
                            let cur = out.get(o, ty as usize, tx as usize);
                            out.set(o, ty as usize, tx as usize, cur + wv * x.get(i, y, xx));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Per-channel population mean and standard deviation.
pub fn stats(x: &FeatureMap) -> Vec<(f64, f64)> {
    (0..x.channels)
        .map(|c| {
            let v = x.channel(c);
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64;
            (m, var.sqrt())
        })
        .collect()
}

pub fn stack(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    let mut data = a.data.clone();
    data.extend_from_slice(&b.data);
    FeatureMap::new(a.channels + b.channels, a.height, a.width, data).unwrap()
}

pub fn zip_with(a: &FeatureMap, b: &FeatureMap, f: impl Fn(f64, f64) -> f64) -> FeatureMap {
    assert_eq!(a.shape(), b.shape());
    FeatureMap::new(a.channels, a.height, a.width, a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect())
        .unwrap()
}
