//! Brute-force reference implementations used as test oracles.
#![allow(dead_code)]

use mcsr_core::kspace::ImagePlane;
use mcsr_core::matching::MatchConfig;
use mcsr_core::tensor::FeatureMap;

/// Mirror index for the bottom/right padding (one reflection).
fn mirror(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * n - 2 - i
    }
}

fn padded_get(f: &FeatureMap, c: usize, y: usize, x: usize) -> f64 {
    f.get(c, mirror(y, f.height), mirror(x, f.width))
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt().max(1e-8) * nb.sqrt().max(1e-8))
}

fn block(f: &FeatureMap, top: usize, left: usize, h: usize, w: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(f.channels * h * w);
    for c in 0..f.channels {
        for dy in 0..h {
            for dx in 0..w {
                v.push(padded_get(f, c, top + dy, left + dx));
            }
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePatch {
    pub origin: (usize, usize),
    pub center: (usize, usize),
    pub ref_origin: (usize, usize),
    pub index: Vec<(usize, usize)>,
    pub similarity: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OracleMatch {
    pub padded: (usize, usize),
    pub patches: Vec<OraclePatch>,
}

/// Exhaustive matching straight from the definitions. Candidates within
/// 1e-12 of the best so far count as ties and lose to the earlier one.
pub fn oracle_match(tar: &FeatureMap, refr: &FeatureMap, cfg: &MatchConfig) -> OracleMatch {
    let (ph, pw, cs, rs) = (cfg.patch_h, cfg.patch_w, cfg.center_size, cfg.region_size);
    let rows = tar.height.div_ceil(ph);
    let cols = tar.width.div_ceil(pw);
    let (hp, wp) = (rows * ph, cols * pw);
    let (ty, tx) = ((ph - cs) / 2, (pw - cs) / 2);
    let mut patches = Vec::new();
    for n in 0..rows * cols {
        let origin = ((n / cols) * ph, (n % cols) * pw);
        let template = block(tar, origin.0 + ty, origin.1 + tx, cs, cs);
        let mut best = (0, 0);
        let mut best_sim = f64::NEG_INFINITY;
        for r in 0..=hp - cs {
            for c in 0..=wp - cs {
                let s = cos(&template, &block(refr, r, c, cs, cs));
                if s > best_sim + 1e-12 {
                    best_sim = s;
                    best = (r, c);
                }
            }
        }
        let center = (best.0 + cs / 2, best.1 + cs / 2);
        let oy = (center.0 as isize - (ty + cs / 2) as isize).clamp(0, (hp - ph) as isize) as usize;
        let ox = (center.1 as isize - (tx + cs / 2) as isize).clamp(0, (wp - pw) as isize) as usize;
        let (gh, gw) = (ph - rs + 1, pw - rs + 1);
        let mut index = Vec::new();
        let mut similarity = Vec::new();
        for z in 0..gh * gw {
            let a = block(tar, origin.0 + z / gw, origin.1 + z % gw, rs, rs);
            let mut bg = (0, 0);
            let mut bs = f64::NEG_INFINITY;
            for g in 0..gh * gw {
                let s = cos(&a, &block(refr, oy + g / gw, ox + g % gw, rs, rs));
                if s > bs + 1e-12 {
                    bs = s;
                    bg = (g / gw, g % gw);
                }
            }
            index.push(bg);
            similarity.push(bs);
        }
        patches.push(OraclePatch { origin, center, ref_origin: (oy, ox), index, similarity });
    }
    OracleMatch { padded: (hp, wp), patches }
}

/// Matched features at the LR scale: averaged region copies weighted by the
/// averaged region similarity.
pub fn oracle_matched_lr(m: &OracleMatch, refr: &FeatureMap, cfg: &MatchConfig) -> FeatureMap {
    let c = refr.channels;
    let (ph, pw, rs) = (cfg.patch_h, cfg.patch_w, cfg.region_size);
    let gw = pw - rs + 1;
    let mut out = FeatureMap::zeros(c, refr.height, refr.width);
    for p in &m.patches {
        let mut acc = vec![0.0; c * ph * pw];
        let mut visits = vec![0.0; ph * pw];
        let mut sim = vec![0.0; ph * pw];
        for (z, (&(gr, gc), &s)) in p.index.iter().zip(&p.similarity).enumerate() {
            let (zr, zc) = (z / gw, z % gw);
            let s = if cfg.clamp_similarity { s.clamp(0.0, 1.0) } else { s };
            for dy in 0..rs {
                for dx in 0..rs {
                    let i = (zr + dy) * pw + zc + dx;
                    visits[i] += 1.0;
                    sim[i] += s;
                    for ch in 0..c {
                        acc[ch * ph * pw + i] +=
                            padded_get(refr, ch, p.ref_origin.0 + gr + dy, p.ref_origin.1 + gc + dx);
                    }
                }
            }
        }
        for y in 0..ph {
            for x in 0..pw {
                let (oy, ox) = (p.origin.0 + y, p.origin.1 + x);
                if oy >= refr.height || ox >= refr.width {
                    continue;
                }
                let i = y * pw + x;
                for ch in 0..c {
                    out.set(ch, oy, ox, acc[ch * ph * pw + i] / visits[i] * (sim[i] / visits[i]));
                }
            }
        }
    }
    out
}

/// Centered DFT by direct summation: DC at `(H/2, W/2)`.
pub fn naive_centered_dft(img: &ImagePlane) -> Vec<(f64, f64)> {
    let (h, w) = (img.height, img.width);
    let mut out = Vec::with_capacity(h * w);
    for a in 0..h {
        for b in 0..w {
            let ka = a as f64 - (h / 2) as f64;
            let kb = b as f64 - (w / 2) as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let t = -2.0 * std::f64::consts::PI * (ka * y as f64 / h as f64 + kb * x as f64 / w as f64);
                    let v = img.get(y, x);
                    re += v * t.cos();
                    im += v * t.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}

/// Data-consistency loss written as a restricted sum over bins:
/// off the mask `|ΔK|²`, on the mask `|ΔK|²/(1+n)²` (zero for infinite `n`).
pub fn restricted_sum_dc(sr: &ImagePlane, hr: &ImagePlane, uf: usize, n: Option<f64>) -> f64 {
    let ks = naive_centered_dft(sr);
    let kh = naive_centered_dft(hr);
    let (h, w) = (sr.height, sr.width);
    let (bh, bw) = (h / uf, w / uf);
    let (r0, c0) = (h / 2 - bh / 2, w / 2 - bw / 2);
    let mut total = 0.0;
    for a in 0..h {
        for b in 0..w {
            let (dr, di) = (ks[a * w + b].0 - kh[a * w + b].0, ks[a * w + b].1 - kh[a * w + b].1);
            let e = dr * dr + di * di;
            let sampled = a >= r0 && a < r0 + bh && b >= c0 && b < c0 + bw;
            total += match (sampled, n) {
                (false, _) => e,
                (true, None) => 0.0,
                (true, Some(n)) => e / ((1.0 + n) * (1.0 + n)),
            };
        }
    }
    total / (h * w) as f64
}

/// SSIM from centered local moments over every valid 11×11 window.
pub fn sliding_ssim(x: &ImagePlane, y: &ImagePlane) -> f64 {
    let k = 11usize;
    let sigma = 1.5f64;
    let mut g = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            g[i * k + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let z: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= z);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (h, w) = (x.height, x.width);
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=h - k {
        for left in 0..=w - k {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    mx += g[i * k + j] * x.get(top + i, left + j);
                    my += g[i * k + j] * y.get(top + i, left + j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let a = x.get(top + i, left + j) - mx;
                    let b = y.get(top + i, left + j) - my;
                    vx += g[i * k + j] * a * a;
                    vy += g[i * k + j] * b * b;
                    cxy += g[i * k + j] * a * b;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}
