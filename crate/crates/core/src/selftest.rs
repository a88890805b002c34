//! Quick built-in checks of every stage against small independent oracles.

use crate::aggregation::{jrfab_forward, sab_forward, JrfabWeights, MabConfig, SabParams, StatsSource};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::kspace::{central_mask, degrade, fft2_centered, ifft2_centered, zero_fill_upsample, ImagePlane};
use crate::loss::{full_loss, loss_gradient, psnr, ssim, LossWeights, NoiseLevel};
use crate::matching::{coarse_match, partition_patches, MatchConfig};
use crate::pyramid::{extract_reference_pyramid, BranchWeights, PyramidConfig, PyramidWeights};
use crate::swin::{stg_forward, StgConfig, StgWeights};
use crate::tensor::{channel_stats, conv2d, conv_transpose2d, ConvSpec, FeatureMap};
use crate::weights::{Lcg, RandomSource, ZeroSource};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleReport {
    pub module: &'static str,
    pub checks: Vec<CheckResult>,
}

impl ModuleReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestReport {
    pub modules: Vec<ModuleReport>,
}

impl SelfTestReport {
    pub fn all_passed(&self) -> bool {
        self.modules.iter().all(|m| m.passed() == m.checks.len())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for m in &self.modules {
            s.push_str(&format!("{}: {}/{} passed\n", m.module, m.passed(), m.checks.len()));
            for c in m.checks.iter().filter(|c| !c.passed) {
                s.push_str(&format!("  FAIL {}: {}\n", c.name, c.detail));
            }
        }
        s
    }
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult { name, passed: false, detail: e.to_string() },
    }
}

fn within(err: f64, tol: f64) -> (bool, String) {
    (err <= tol, format!("error {err:.3e} (tolerance {tol:.1e})"))
}

fn noise_map(rng: &mut Lcg, c: usize, h: usize, w: usize) -> FeatureMap {
    let data = (0..c * h * w).map(|_| rng.next_symmetric()).collect();
    FeatureMap::new(c, h, w, data).expect("finite")
}

fn noise_image(rng: &mut Lcg, h: usize, w: usize) -> ImagePlane {
    let data = (0..h * w).map(|_| 0.5 + 0.5 * rng.next_symmetric()).collect();
    ImagePlane::new(h, w, data).expect("finite")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn naive_conv(x: &FeatureMap, s: &ConvSpec) -> FeatureMap {
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
                            if sy < 0 || sx < 0 || sy >= x.height as isize || sx >= x.width as isize {
                                continue;
                            }
                            acc += s.weights[((o * s.in_channels + i) * 3 + ky) * 3 + kx]
                                * x.get(i, sy as usize, sx as usize);
                        }
                    }
                }
                out.set(o, y, xx, acc);
            }
        }
    }
    out
}

fn random_conv(rng: &mut Lcg, cin: usize, cout: usize, stride: usize) -> ConvSpec {
    let w = (0..cout * cin * 9).map(|_| rng.next_symmetric()).collect();
    let b = (0..cout).map(|_| rng.next_symmetric()).collect();
    ConvSpec::new(cin, cout, stride, w, b).expect("valid conv")
}

fn tensor_checks() -> ModuleReport {
    let mut rng = Lcg::new(11);
    let checks = vec![
        check("conv2d matches direct sum", || {
            let x = noise_map(&mut rng, 3, 9, 7);
            let s = random_conv(&mut rng, 3, 4, 1);
            let s2 = s.clone().with_stride(2);
            let e1 = max_abs_diff(&conv2d(&x, &s)?.data, &naive_conv(&x, &s).data);
            let e2 = max_abs_diff(&conv2d(&x, &s2)?.data, &naive_conv(&x, &s2).data);
            Ok(within(e1.max(e2), 1e-10))
        }),
        check("transposed conv is the adjoint", || {
            let x = noise_map(&mut rng, 3, 8, 8);
            let y = noise_map(&mut rng, 2, 4, 4);
            let mut s = random_conv(&mut rng, 3, 2, 2);
            s.bias = vec![0.0; 2];
            let mut t = s.clone();
            t.in_channels = 2;
            t.out_channels = 3;
            t.bias = vec![0.0; 3];
            let lhs: f64 = conv2d(&x, &s)?.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data.iter().zip(&conv_transpose2d(&y, &t)?.data).map(|(a, b)| a * b).sum();
            Ok(within((lhs - rhs).abs() / lhs.abs().max(1.0), 1e-10))
        }),
    ];
    ModuleReport { module: "tensor-ops", checks }
}

fn small_stg() -> StgConfig {
    StgConfig { num_rstb: 1, stl_per_rstb: 2, embed_dim: 8, num_heads: 2, window: 4, mlp_ratio: 2.0 }
}

fn swin_checks() -> ModuleReport {
    let mut rng = Lcg::new(12);
    let cfg = small_stg();
    let checks = vec![
        check("zero-weight group is the identity", || {
            let x = noise_map(&mut rng, 8, 10, 9);
            let w = StgWeights::take(&mut ZeroSource, "stg", &cfg)?;
            Ok(within(max_abs_diff(&stg_forward(&x, &cfg, &w)?.data, &x.data), 1e-12))
        }),
        check("group is deterministic and finite", || {
            let x = noise_map(&mut rng, 8, 8, 8);
            let w = StgWeights::take(&mut RandomSource::new(4), "stg", &cfg)?;
            let a = stg_forward(&x, &cfg, &w)?;
            let b = stg_forward(&x, &cfg, &w)?;
            Ok((a == b && a.is_finite(), "repeat run differs or is not finite".into()))
        }),
    ];
    ModuleReport { module: "swin-backbone", checks }
}

fn pyramid_checks() -> ModuleReport {
    let stg = small_stg();
    let checks = vec![check("level shapes for uf 4", || {
        let cfg = PyramidConfig { uf: 4, stg, level_rstb: false };
        let branch = BranchWeights::take(&mut RandomSource::new(1), "ref", &stg)?;
        let pw = PyramidWeights::take(&mut RandomSource::new(2), &cfg)?;
        let img = ImagePlane::filled(32, 32, 0.5);
        let p = extract_reference_pyramid(&img, &branch, &pw, &cfg)?;
        let shapes: Vec<_> = p.levels.iter().map(|l| l.shape()).collect();
        let want = vec![(8, 8, 8), (8, 16, 16), (8, 32, 32)];
        Ok((shapes == want, format!("got {shapes:?}")))
    })];
    ModuleReport { module: "pyramid-extractor", checks }
}

fn matching_checks() -> ModuleReport {
    let mut rng = Lcg::new(13);
    let cfg = MatchConfig::default();
    let checks = vec![check("self-match finds every patch", || {
        let f = noise_map(&mut rng, 4, 26, 26);
        let grid = partition_patches(&f, &cfg)?;
        let (cy, cx) = cfg.center_offset();
        let mut worst = 0.0f64;
        let mut ok = true;
        for n in 0..grid.geometry.count() {
            let m = coarse_match(&grid.patch(n), &grid.padded, &cfg)?;
            let (oy, ox) = grid.geometry.origin(n);
            ok &= m.center == (oy + cy, ox + cx);
            worst = worst.max((1.0 - m.similarity).abs());
        }
        Ok((ok && worst <= 1e-4, format!("similarity error {worst:.3e}")))
    })];
    ModuleReport { module: "context-matching", checks }
}

fn aggregation_checks() -> ModuleReport {
    let mut rng = Lcg::new(14);
    let checks = vec![
        check("SAB transfers target statistics", || {
            let cfg = MabConfig::for_level(1, 4, StatsSource::Pre);
            let params = SabParams::take(&mut ZeroSource, "sab", &cfg)?;
            let x = noise_map(&mut rng, 4, 8, 8);
            let fm = noise_map(&mut rng, 4, 8, 8).map(|v| 3.0 * v + 1.0);
            let out = sab_forward(&x, &fm, &params, &cfg)?;
            let err = channel_stats(&out)
                .iter()
                .zip(channel_stats(&x))
                .map(|((m1, s1), (m2, s2))| (m1 - m2).abs().max((s1 - s2).abs()))
                .fold(0.0, f64::max);
            Ok(within(err, 1e-4))
        }),
        check("JRFAB with zero weights reduces to its inputs", || {
            let cfg = MabConfig::for_level(2, 4, StatsSource::Pre);
            let mut w = JrfabWeights::take(&mut ZeroSource, "jrfab", &cfg)?;
            // fuse = identity on the first half of the concatenation
            let mut fuse = ConvSpec::zeros(8, 4, 1);
            for c in 0..4 {
                fuse.weights[(c * 8 + c) * 9 + 4] = 1.0;
            }
            w.fuse = fuse;
            let f_hat = noise_map(&mut rng, 4, 8, 8);
            let x = noise_map(&mut rng, 4, 4, 4);
            let out = jrfab_forward(&f_hat, &x, &w, &cfg)?;
            Ok(within(max_abs_diff(&out.data, &f_hat.data), 1e-12))
        }),
    ];
    ModuleReport { module: "aggregation", checks }
}

fn kspace_checks() -> ModuleReport {
    let mut rng = Lcg::new(15);
    let checks = vec![
        check("mask fractions", || {
            let f2 = central_mask(16, 16, 2)?.fraction();
            let f4 = central_mask(16, 16, 4)?.fraction();
            Ok(within((f2 - 0.25).abs().max((f4 - 0.0625).abs()), 1e-12))
        }),
        check("centered transform round trip", || {
            let x = noise_image(&mut rng, 12, 10);
            let back = ifft2_centered(&fft2_centered(&x)).real();
            Ok(within(max_abs_diff(&back, &x.data), 1e-10))
        }),
        check("band-limited degrade and zero-fill round trip", || {
            let hr = ImagePlane::new(
                16,
                16,
                (0..256)
                    .map(|i| {
                        let (y, x) = ((i / 16) as f64, (i % 16) as f64);
                        let t = std::f64::consts::TAU / 16.0;
                        0.5 + 0.1 * (t * y).cos() + 0.1 * (t * (x - y)).sin()
                    })
                    .collect(),
            )?;
            let back = zero_fill_upsample(&degrade(&hr, 4)?, 4)?;
            Ok(within(max_abs_diff(&back.data, &hr.data), 1e-5))
        }),
    ];
    ModuleReport { module: "kspace-pipeline", checks }
}

fn loss_checks() -> ModuleReport {
    let mut rng = Lcg::new(16);
    let checks = vec![
        check("identical images give capped PSNR and unit SSIM", || {
            let a = noise_image(&mut rng, 16, 16);
            let p = psnr(&a, &a, 1.0)?;
            let s = ssim(&a, &a)?;
            Ok(within((p - 100.0).abs().max((s - 1.0).abs()), 1e-9))
        }),
        check("gradient matches central differences", || {
            let hr = noise_image(&mut rng, 8, 8);
            let mut sr = noise_image(&mut rng, 8, 8);
            let mask = central_mask(8, 8, 2)?;
            let w = LossWeights { lambda_rec: 1.0, lambda_dc: 0.5, noise_level: NoiseLevel::Finite(1.0) };
            let g = loss_gradient(&sr, &hr, &mask, &w)?;
            let h = 1e-6;
            let mut worst = 0.0f64;
            for i in [0usize, 9, 27, 63] {
                let orig = sr.data[i];
                sr.data[i] = orig + h;
                let up = full_loss(&sr, &hr, &mask, &w)?.l_full;
                sr.data[i] = orig - h;
                let down = full_loss(&sr, &hr, &mask, &w)?.l_full;
                sr.data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((fd - g.data[i]).abs() / g.data[i].abs().max(1e-3));
            }
            Ok(within(worst, 1e-4))
        }),
    ];
    ModuleReport { module: "losses-metrics", checks }
}

fn config_checks() -> ModuleReport {
    let checks = vec![check("default config JSON round trip", || {
        let cfg = ModelConfig::default();
        Ok((ModelConfig::from_json(&cfg.to_json())? == cfg, "round trip differs".into()))
    })];
    ModuleReport { module: "config", checks }
}

pub fn run_selftest() -> SelfTestReport {
    SelfTestReport {
        modules: vec![
            tensor_checks(),
            swin_checks(),
            pyramid_checks(),
            matching_checks(),
            aggregation_checks(),
            kspace_checks(),
            loss_checks(),
            config_checks(),
        ],
    }
}
