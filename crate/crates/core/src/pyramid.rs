//! Branch feature extractors: LR features for the target and reference-LR
//! branches, and a coarse-to-fine feature pyramid for the HR reference.

use crate::error::{Error, Result};
use crate::kspace::ImagePlane;
use crate::swin::{rstb_forward, stg_forward, RstbWeights, StgConfig, StgWeights};
use crate::tensor::{conv2d, ConvSpec, FeatureMap};
use crate::weights::{take_conv, ParamSource};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidConfig {
    /// Upsampling factor; the pyramid has `log2(uf) + 1` levels.
    pub uf: usize,
    pub stg: StgConfig,
    /// Insert one residual block after each stride-2 downsampling conv.
    pub level_rstb: bool,
}

impl PyramidConfig {
    pub fn num_levels(&self) -> Result<usize> {
        num_levels(self.uf)
    }
}

/// `log2(uf) + 1` for power-of-two factors.
pub fn num_levels(uf: usize) -> Result<usize> {
    if uf == 0 || !uf.is_power_of_two() {
        return Err(Error::config(format!("upsampling factor must be a power of two, got {uf}")));
    }
    Ok(uf.trailing_zeros() as usize + 1)
}

/// Levels ordered coarse to fine; level `i` (0-based here) is `2^i` times the LR grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn coarsest(&self) -> &FeatureMap {
        &self.levels[0]
    }

    pub fn finest(&self) -> &FeatureMap {
        &self.levels[self.levels.len() - 1]
    }
}

/// Shallow lift from one image channel to `C` feature channels, then a group.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchWeights {
    pub shallow: ConvSpec,
    pub stg: StgWeights,
}

impl BranchWeights {
    pub fn take(src: &mut dyn ParamSource, branch: &str, cfg: &StgConfig) -> Result<Self> {
        Ok(BranchWeights {
            shallow: take_conv(src, &format!("shallow.{branch}"), 1, cfg.embed_dim, 1)?,
            stg: StgWeights::take(src, &format!("stg.{branch}"), cfg)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidWeights {
    /// Stride-2 convs, finest first: `downs[0]` maps level L to level L-1.
    pub downs: Vec<ConvSpec>,
    /// One block per coarser level, same order as `downs`, when enabled.
    pub level_blocks: Option<Vec<RstbWeights>>,
}

impl PyramidWeights {
    pub fn take(src: &mut dyn ParamSource, cfg: &PyramidConfig) -> Result<Self> {
        let c = cfg.stg.embed_dim;
        let n = cfg.num_levels()? - 1;
        let downs = (0..n)
            .map(|k| take_conv(src, &format!("pyramid.down{k}"), c, c, 2))
            .collect::<Result<Vec<_>>>()?;
        let level_blocks = if cfg.level_rstb {
            Some(
                (0..n)
                    .map(|k| RstbWeights::take(src, &format!("pyramid.level{k}.rstb"), &cfg.stg))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(PyramidWeights { downs, level_blocks })
    }
}

/// Shallow conv plus group at the input resolution.
pub fn extract_lr_features(lr_image: &ImagePlane, w: &BranchWeights, cfg: &StgConfig) -> Result<FeatureMap> {
    let lifted = conv2d(&lr_image.to_feature_map(), &w.shallow)?;
    stg_forward(&lifted, cfg, &w.stg)
}

/// Full-resolution features of the HR reference, then repeated stride-2
/// downsampling down to the LR grid. Returned coarse → fine.
pub fn extract_reference_pyramid(
    ref_image: &ImagePlane,
    branch: &BranchWeights,
    pyramid: &PyramidWeights,
    cfg: &PyramidConfig,
) -> Result<FeaturePyramid> {
    let levels = cfg.num_levels()?;
    let div = 1usize << (levels - 1);
    if ref_image.height % div != 0 || ref_image.width % div != 0 {
        return Err(Error::input(format!(
            "reference size {}x{} must be divisible by {div} for {levels} pyramid levels",
            ref_image.height, ref_image.width
        )));
    }
    if pyramid.downs.len() != levels - 1 {
        return Err(Error::config("pyramid weights do not match the number of levels"));
    }
    let finest = extract_lr_features(ref_image, branch, &cfg.stg)?;
    let mut fine_to_coarse = vec![finest];
    for (k, down) in pyramid.downs.iter().enumerate() {
        let mut next = conv2d(fine_to_coarse.last().unwrap(), down)?;
        if let Some(blocks) = &pyramid.level_blocks {
            next = rstb_forward(&next, &cfg.stg, &blocks[k])?;
        }
        fine_to_coarse.push(next);
    }
    fine_to_coarse.reverse();
    Ok(FeaturePyramid { levels: fine_to_coarse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{RandomSource, ZeroSource};

    fn small_cfg(uf: usize) -> PyramidConfig {
        PyramidConfig {
            uf,
            stg: StgConfig { num_rstb: 1, stl_per_rstb: 2, embed_dim: 4, num_heads: 2, window: 4, mlp_ratio: 2.0 },
            level_rstb: false,
        }
    }

    fn image(h: usize, w: usize) -> ImagePlane {
        ImagePlane::new(h, w, (0..h * w).map(|i| ((i * 13) % 17) as f64 / 17.0).collect()).unwrap()
    }

    #[test]
    fn level_counts() {
        assert_eq!(num_levels(1).unwrap(), 1);
        assert_eq!(num_levels(2).unwrap(), 2);
        assert_eq!(num_levels(4).unwrap(), 3);
        assert!(num_levels(3).is_err());
    }

    #[test]
    fn pyramid_shapes() {
        for (uf, size, expect) in [(2, 16, vec![8, 16]), (4, 32, vec![8, 16, 32])] {
            let cfg = small_cfg(uf);
            let mut src = RandomSource::new(1);
            let b = BranchWeights::take(&mut src, "ref", &cfg.stg).unwrap();
            let p = PyramidWeights::take(&mut src, &cfg).unwrap();
            let pyr = extract_reference_pyramid(&image(size, size), &b, &p, &cfg).unwrap();
            let sizes: Vec<usize> = pyr.levels.iter().map(|l| l.height).collect();
            assert_eq!(sizes, expect);
            assert!(pyr.levels.iter().all(|l| l.channels == 4 && l.width == l.height));
        }
    }

    #[test]
    fn level_blocks_keep_shapes() {
        let mut cfg = small_cfg(4);
        cfg.level_rstb = true;
        let mut src = RandomSource::new(2);
        let b = BranchWeights::take(&mut src, "ref", &cfg.stg).unwrap();
        let p = PyramidWeights::take(&mut src, &cfg).unwrap();
        assert_eq!(p.level_blocks.as_ref().unwrap().len(), 2);
        let pyr = extract_reference_pyramid(&image(32, 32), &b, &p, &cfg).unwrap();
        assert_eq!(pyr.coarsest().height, 8);
    }

    #[test]
    fn indivisible_reference_is_input_error() {
        let cfg = small_cfg(4);
        let b = BranchWeights::take(&mut ZeroSource, "ref", &cfg.stg).unwrap();
        let p = PyramidWeights::take(&mut ZeroSource, &cfg).unwrap();
        assert!(matches!(
            extract_reference_pyramid(&image(30, 32), &b, &p, &cfg),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_image_zero_biases_gives_zero_levels() {
        let cfg = small_cfg(4);
        let mut src = RandomSource::new(9);
        let mut b = BranchWeights::take(&mut src, "ref", &cfg.stg).unwrap();
        let mut p = PyramidWeights::take(&mut src, &cfg).unwrap();
        // biases zero everywhere the zero signal could pick up an offset
        b.shallow.bias.fill(0.0);
        b.stg.conv.bias.fill(0.0);
        for blk in &mut b.stg.blocks {
            blk.conv.bias.fill(0.0);
            for l in &mut blk.layers {
                l.qkv.bias.fill(0.0);
                l.proj.bias.fill(0.0);
                l.fc1.bias.fill(0.0);
                l.fc2.bias.fill(0.0);
                l.norm1.bias.fill(0.0);
                l.norm2.bias.fill(0.0);
            }
        }
        for d in &mut p.downs {
            d.bias.fill(0.0);
        }
        let pyr = extract_reference_pyramid(&ImagePlane::zeros(32, 32), &b, &p, &cfg).unwrap();
        assert!(pyr.levels.iter().all(|l| l.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn lr_branch_with_zero_group_is_shallow_lift() {
        let cfg = small_cfg(2);
        let mut b = BranchWeights::take(&mut ZeroSource, "tar_lr", &cfg.stg).unwrap();
        b.shallow = take_conv(&mut RandomSource::new(4), "s", 1, 4, 1).unwrap();
        let img = image(8, 8);
        let f = extract_lr_features(&img, &b, &cfg.stg).unwrap();
        assert_eq!(f, conv2d(&img.to_feature_map(), &b.shallow).unwrap());
    }
}
