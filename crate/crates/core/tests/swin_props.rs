mod common;

use common::*;
use mcsr_core::swin::{
    rstb_forward, stg_forward, stl_forward, window_attention_probs, RstbWeights, StgConfig, StgWeights, StlConfig,
    StlWeights,
};
use mcsr_core::tensor::{conv2d, to_tokens, FeatureMap, Matrix};
use mcsr_core::weights::{RandomSource, ZeroSource};
use proptest::prelude::*;

fn reflect(i: usize, n: usize) -> usize {
    let period = 2 * (n - 1).max(1);
    let m = i % period;
    if n == 1 {
        0
    } else if m < n {
        m
    } else {
        period - m
    }
}

fn norm_token(v: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    v.iter()
        .zip(g)
        .zip(b)
        .map(|((x, g), b)| (x - mean) / (var + 1e-5).sqrt() * g + b)
        .collect()
}

fn affine(v: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, bias)| bias + v.iter().enumerate().map(|(i, x)| w[o * v.len() + i] * x).sum::<f64>())
        .collect()
}

fn label(p: usize, size: usize, win: usize, shift: usize) -> usize {
    if p < size - win {
        0
    } else if p < size - shift {
        1
    } else {
        2
    }
}

/// Token-by-token transformer layer on the padded, shifted grid.
fn naive_stl(x: &FeatureMap, cfg: &StlConfig, w: &StlWeights) -> FeatureMap {
    let (c, h, wd) = x.shape();
    let win = cfg.window;
    let s = cfg.shift;
    let hp = h.div_ceil(win) * win;
    let wp = wd.div_ceil(win) * win;
    let tok = |y: usize, xx: usize| (0..c).map(|ch| x.get(ch, y, xx)).collect::<Vec<_>>();
    // normalized token at each shifted-grid position
    let at = |yr: usize, xr: usize| {
        let (y, xx) = ((yr + s) % hp, (xr + s) % wp);
        norm_token(&tok(reflect(y, h), reflect(xx, wd)), &w.norm1.gain, &w.norm1.bias)
    };
    let hd = cfg.head_dim();
    let mut out = x.clone();
    for y in 0..h {
        for xx in 0..wd {
            // position on the shifted grid
            let yr = (y + hp - s) % hp;
            let xr = (xx + wp - s) % wp;
            let (oy, ox) = (yr / win * win, xr / win * win);
            let qi = affine(&at(yr, xr), &w.qkv.weight, &w.qkv.bias);
            let mut attended = vec![0.0; c];
            for head in 0..cfg.num_heads {
                let mut logits = Vec::new();
                let mut values = Vec::new();
                for jy in oy..oy + win {
                    for jx in ox..ox + win {
                        let kj = affine(&at(jy, jx), &w.qkv.weight, &w.qkv.bias);
                        let mut l = (0..hd).map(|d| qi[head * hd + d] * kj[c + head * hd + d]).sum::<f64>()
                            / (hd as f64).sqrt();
                        let dr = (yr - oy) as isize - (jy - oy) as isize + win as isize - 1;
                        let dc = (xr - ox) as isize - (jx - ox) as isize + win as isize - 1;
                        l += w.rel_bias.values[(dr as usize * (2 * win - 1) + dc as usize) * cfg.num_heads + head];
                        if s > 0
                            && (label(yr, hp, win, s) != label(jy, hp, win, s)
                                || label(xr, wp, win, s) != label(jx, wp, win, s))
                        {
                            l += -1e9;
                        }
                        logits.push(l);
                        values.push(kj[2 * c + head * hd..2 * c + (head + 1) * hd].to_vec());
                    }
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for (p, v) in e.iter().zip(&values) {
                    for d in 0..hd {
                        attended[head * hd + d] += p / z * v[d];
                    }
                }
            }
            let a = affine(&attended, &w.proj.weight, &w.proj.bias);
            let t: Vec<f64> = tok(y, xx).iter().zip(&a).map(|(u, v)| u + v).collect();
            let hidden: Vec<f64> = affine(&norm_token(&t, &w.norm2.gain, &w.norm2.bias), &w.fc1.weight, &w.fc1.bias)
                .into_iter()
                .map(|v| 0.5 * v * (1.0 + libm_erf(v / std::f64::consts::SQRT_2)))
                .collect();
            let m = affine(&hidden, &w.fc2.weight, &w.fc2.bias);
            for ch in 0..c {
                out.set(ch, y, xx, t[ch] + m[ch]);
            }
        }
    }
    out
}

/// erf via its Maclaurin series, adequate for the small activations here.
fn libm_erf(x: f64) -> f64 {
    if x.abs() > 3.0 {
        return x.signum() * (1.0 - erfc_large(x.abs()));
    }
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

fn erfc_large(x: f64) -> f64 {
    // continued fraction, Lentz
    let mut f = x;
    for k in (1..60).rev() {
        f = x + (k as f64 / 2.0) / f;
    }
    (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}

fn small_cfg(window: usize) -> StgConfig {
    StgConfig { num_rstb: 2, stl_per_rstb: 2, embed_dim: 4, num_heads: 2, window, mlp_ratio: 1.5 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stl_matches_token_oracle(
        h in 1usize..10, w in 1usize..10, window in 2usize..5, shifted in any::<bool>(), seed in any::<u64>()
    ) {
        let g = small_cfg(window);
        let cfg = g.layer(if shifted { 1 } else { 0 });
        let mut r = rng(seed);
        let x = feature_map(&mut r, 4, h, w);
        let weights = StlWeights::take(&mut RandomSource::with_scale(seed, 0.5), "l", &cfg).unwrap();
        let got = stl_forward(&x, &cfg, &weights).unwrap();
        let want = naive_stl(&x, &cfg, &weights);
        prop_assert!(max_abs_diff(&got.data, &want.data) < 1e-9, "diff {}", max_abs_diff(&got.data, &want.data));
    }

    #[test]
    fn shapes_are_preserved(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let cfg = small_cfg(4);
        let mut r = rng(seed);
        let x = feature_map(&mut r, 4, h, w);
        let weights = StgWeights::take(&mut RandomSource::new(seed), "g", &cfg).unwrap();
        prop_assert_eq!(stg_forward(&x, &cfg, &weights).unwrap().shape(), x.shape());
    }

    #[test]
    fn zero_weights_give_exact_identity(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let cfg = small_cfg(4);
        let mut r = rng(seed);
        let x = feature_map(&mut r, 4, h, w);
        let stl = StlWeights::take(&mut ZeroSource, "l", &cfg.layer(1)).unwrap();
        prop_assert_eq!(stl_forward(&x, &cfg.layer(1), &stl).unwrap(), x.clone());
        let rstb = RstbWeights::take(&mut ZeroSource, "b", &cfg).unwrap();
        prop_assert_eq!(rstb_forward(&x, &cfg, &rstb).unwrap(), x.clone());
        let stg = StgWeights::take(&mut ZeroSource, "g", &cfg).unwrap();
        prop_assert_eq!(stg_forward(&x, &cfg, &stg).unwrap(), x);
    }

    #[test]
    fn attention_rows_sum_to_one(seed in any::<u64>(), head in 0usize..2) {
        let cfg = small_cfg(4).layer(1);
        let mut r = rng(seed);
        let weights = StlWeights::take(&mut RandomSource::with_scale(seed, 1.0), "l", &cfg).unwrap();
        let tokens = to_tokens(&feature_map(&mut r, 4, 4, 4));
        let labels: Vec<usize> = (0..16).map(|i| (i / 4 >= 2) as usize * 3 + (i % 4 >= 2) as usize).collect();
        for l in [None, Some(labels.as_slice())] {
            let p: Matrix = window_attention_probs(&tokens, &cfg, &weights, head, l).unwrap();
            for i in 0..16 {
                let s: f64 = p.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
                if let Some(l) = l {
                    for j in 0..16 {
                        if l[i] != l[j] {
                            prop_assert!(p.row(i)[j] < 1e-12);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn unshifted_layer_is_window_local() {
    let cfg = small_cfg(4).layer(0);
    let mut r = rng(9);
    let x = feature_map(&mut r, 4, 8, 12);
    let weights = StlWeights::take(&mut RandomSource::with_scale(2, 0.5), "l", &cfg).unwrap();
    let base = stl_forward(&x, &cfg, &weights).unwrap();
    for &(py, px) in &[(0usize, 0usize), (5, 6), (7, 11), (3, 4)] {
        let mut y = x.clone();
        y.set(1, py, px, x.get(1, py, px) + 0.7);
        let out = stl_forward(&y, &cfg, &weights).unwrap();
        for c in 0..4 {
            for yy in 0..8 {
                for xx in 0..12 {
                    let same_window = yy / 4 == py / 4 && xx / 4 == px / 4;
                    let changed = out.get(c, yy, xx) != base.get(c, yy, xx);
                    assert!(same_window || !changed, "pixel ({py},{px}) leaked into ({yy},{xx})");
                }
            }
        }
        // the perturbation does reach other tokens of its own window
        let oy = py / 4 * 4;
        let ox = px / 4 * 4;
        let other = if (oy, ox) == (py, px) { (oy + 1, ox) } else { (oy, ox) };
        assert_ne!(out.get(0, other.0, other.1), base.get(0, other.0, other.1));
    }
}

#[test]
fn group_composes_blocks_and_conv() {
    let cfg = small_cfg(4);
    let mut r = rng(10);
    let x = feature_map(&mut r, 4, 9, 7);
    let w = StgWeights::take(&mut RandomSource::with_scale(3, 0.3), "g", &cfg).unwrap();
    let mut f = x.clone();
    for block in &w.blocks {
        let mut t = f.clone();
        for (j, layer) in block.layers.iter().enumerate() {
            t = naive_stl(&t, &cfg.layer(j), layer);
        }
        f = conv2d(&t, &block.conv).unwrap().add(&f).unwrap();
    }
    let want = conv2d(&f, &w.conv).unwrap().add(&x).unwrap();
    let got = stg_forward(&x, &cfg, &w).unwrap();
    assert!(max_abs_diff(&got.data, &want.data) < 1e-9);
}

#[test]
fn forward_is_deterministic() {
    let cfg = small_cfg(4);
    let mut r = rng(11);
    let x = feature_map(&mut r, 4, 10, 10);
    let w = StgWeights::take(&mut RandomSource::new(5), "g", &cfg).unwrap();
    assert_eq!(stg_forward(&x, &cfg, &w).unwrap(), stg_forward(&x, &cfg, &w).unwrap());
}
