//! Multi-scale aggregation: spatial adaptation of matched reference features
//! onto the target statistics, joint residual refinement of both streams, the
//! level-by-level upsampling chain, and the reconstruction head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::ImagePlane;
use crate::matching::MatchedPyramid;
use crate::tensor::{
    bicubic_upsample, channel_stats, concat_channels, conv2d, conv_transpose2d, instance_norm, ConvSpec,
    FeatureMap, NORM_EPS,
};
use crate::weights::{take_conv, take_conv_transpose, ParamSource};

/// Which target features supply the per-channel (mean, std) in SAB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    #[default]
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MabConfig {
    /// 1-based scale index; level 1 works at the LR scale.
    pub level: usize,
    pub upsample: bool,
    pub channels: usize,
    pub stats_source: StatsSource,
}

impl MabConfig {
    pub fn for_level(level: usize, channels: usize, stats_source: StatsSource) -> Self {
        MabConfig { level, upsample: level > 1, channels, stats_source }
    }

    fn validate(&self) -> Result<()> {
        if self.level == 0 {
            return Err(Error::config("MAB levels are 1-based"));
        }
        if self.upsample != (self.level > 1) {
            return Err(Error::config(format!(
                "MAB level {} must {}upsample",
                self.level,
                if self.level > 1 { "" } else { "not " }
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SabParams {
    /// Stride-2 transposed conv; absent at level 1.
    pub upsample: Option<ConvSpec>,
    pub conv_alpha: ConvSpec,
    pub conv_beta: ConvSpec,
    pub epsilon: f64,
}

impl SabParams {
    pub fn take(src: &mut dyn ParamSource, prefix: &str, cfg: &MabConfig) -> Result<Self> {
        let c = cfg.channels;
        let upsample = if cfg.upsample {
            Some(take_conv_transpose(src, &format!("{prefix}.upsample"), c, c)?)
        } else {
            None
        };
        Ok(SabParams {
            upsample,
            conv_alpha: take_conv(src, &format!("{prefix}.alpha"), 2 * c, c, 1)?,
            conv_beta: take_conv(src, &format!("{prefix}.beta"), 2 * c, c, 1)?,
            epsilon: NORM_EPS,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JrfabWeights {
    /// Stride-2 conv (stride 1 at level 1), shared by both branches.
    pub conv: ConvSpec,
    /// Up-projection of the reference branch residual.
    pub convt_ref: ConvSpec,
    /// Up-projection of the target branch.
    pub convt_tar: ConvSpec,
    /// Stride-1 fusion of the concatenated branches, `2C → C`.
    pub fuse: ConvSpec,
}

impl JrfabWeights {
    pub fn take(src: &mut dyn ParamSource, prefix: &str, cfg: &MabConfig) -> Result<Self> {
        let c = cfg.channels;
        let (conv, convt_ref, convt_tar) = if cfg.upsample {
            (
                take_conv(src, &format!("{prefix}.conv"), c, c, 2)?,
                take_conv_transpose(src, &format!("{prefix}.convt_ref"), c, c)?,
                take_conv_transpose(src, &format!("{prefix}.convt_tar"), c, c)?,
            )
        } else {
            (
                take_conv(src, &format!("{prefix}.conv"), c, c, 1)?,
                take_conv(src, &format!("{prefix}.convt_ref"), c, c, 1)?,
                take_conv(src, &format!("{prefix}.convt_tar"), c, c, 1)?,
            )
        };
        Ok(JrfabWeights { conv, convt_ref, convt_tar, fuse: take_conv(src, &format!("{prefix}.fuse"), 2 * c, c, 1)? })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MabWeights {
    pub config: MabConfig,
    pub sab: SabParams,
    pub jrfab: JrfabWeights,
}

impl MabWeights {
    pub fn take(src: &mut dyn ParamSource, cfg: MabConfig) -> Result<Self> {
        let prefix = format!("mab{}", cfg.level);
        Ok(MabWeights {
            config: cfg,
            sab: SabParams::take(src, &format!("{prefix}.sab"), &cfg)?,
            jrfab: JrfabWeights::take(src, &format!("{prefix}.jrfab"), &cfg)?,
        })
    }
}

fn upsample_target(x_tar: &FeatureMap, params: &SabParams, cfg: &MabConfig) -> Result<FeatureMap> {
    match (&params.upsample, cfg.upsample) {
        (Some(up), true) => conv_transpose2d(x_tar, up),
        (None, false) => Ok(x_tar.clone()),
        _ => Err(Error::config("SAB upsampling weights do not match the MAB level")),
    }
}

/// Spatial adaptation: `IN(f_m)·α + β` with `α = σ_tar·(1 + conv_α)`,
/// `β = μ_tar + conv_β`, both convs reading `concat(up(x_tar), f_m)`.
pub fn sab_forward(x_tar: &FeatureMap, f_m: &FeatureMap, params: &SabParams, cfg: &MabConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let x_up = upsample_target(x_tar, params, cfg)?;
    if !x_up.same_shape(f_m) {
        return Err(Error::config(format!(
            "SAB: target features {:?} (after upsampling) do not match matched features {:?}",
            x_up.shape(),
            f_m.shape()
        )));
    }
    let cat = concat_channels(&x_up, f_m)?;
    let raw_alpha = conv2d(&cat, &params.conv_alpha)?;
    let raw_beta = conv2d(&cat, &params.conv_beta)?;
    let stats = match cfg.stats_source {
        StatsSource::Pre => channel_stats(x_tar),
        StatsSource::Post => channel_stats(&x_up),
    };
    let mut out = instance_norm(f_m, params.epsilon)?;
    for (c, &(mean, std)) in stats.iter().enumerate() {
        let a = raw_alpha.channel(c);
        let b = raw_beta.channel(c);
        for ((v, &ra), &rb) in out.channel_mut(c).iter_mut().zip(a).zip(b) {
            *v = *v * (std * (1.0 + ra)) + (mean + rb);
        }
    }
    Ok(out)
}

/// Joint residual aggregation of the adapted reference features `f_hat`
/// (at the output scale) and the target features `x_tar` (at the input scale).
pub fn jrfab_forward(f_hat: &FeatureMap, x_tar: &FeatureMap, w: &JrfabWeights, cfg: &MabConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let up = |m: &FeatureMap, spec: &ConvSpec| {
        if cfg.upsample {
            conv_transpose2d(m, spec)
        } else {
            conv2d(m, spec)
        }
    };
    let down = conv2d(f_hat, &w.conv)?;
    if !down.same_shape(x_tar) {
        return Err(Error::config(format!(
            "JRFAB: Conv(f_hat) {:?} does not match target features {:?}",
            down.shape(),
            x_tar.shape()
        )));
    }
    let ref_branch = f_hat.add(&up(&down.sub(x_tar)?, &w.convt_ref)?)?;
    let tar_branch = up(&x_tar.add(&x_tar.sub(&down)?)?, &w.convt_tar)?;
    conv2d(&concat_channels(&ref_branch, &tar_branch)?, &w.fuse)
}

/// One aggregation block: SAB followed by JRFAB.
pub fn mab_forward(x: &FeatureMap, f_m: &FeatureMap, w: &MabWeights) -> Result<FeatureMap> {
    let f_hat = sab_forward(x, f_m, &w.sab, &w.config)?;
    jrfab_forward(&f_hat, x, &w.jrfab, &w.config)
}

/// Aggregates matched features level by level, coarse to fine.
pub fn mab_chain(f_tar_lr: &FeatureMap, matched: &MatchedPyramid, blocks: &[MabWeights]) -> Result<FeatureMap> {
    if blocks.len() != matched.levels.len() {
        return Err(Error::config(format!(
            "{} aggregation blocks for {} matched levels",
            blocks.len(),
            matched.levels.len()
        )));
    }
    let mut x = f_tar_lr.clone();
    for (i, (f_m, w)) in matched.levels.iter().zip(blocks).enumerate() {
        if w.config.level != i + 1 {
            return Err(Error::config("aggregation blocks are out of order"));
        }
        let u = 1usize << i;
        if f_m.height != f_tar_lr.height * u || f_m.width != f_tar_lr.width * u {
            return Err(Error::config(format!("matched level {} is not at scale {u}", i + 1)));
        }
        x = mab_forward(&x, f_m, w)?;
    }
    Ok(x)
}

/// `conv(x)` plus, when enabled, the bicubic upsampled LR image.
pub fn reconstruct(
    x_hr: &FeatureMap,
    lr_image: &ImagePlane,
    head: &ConvSpec,
    uf: usize,
    global_residual: bool,
) -> Result<ImagePlane> {
    let mut out = conv2d(x_hr, head)?;
    if out.channels != 1 {
        return Err(Error::config("reconstruction head must produce one channel"));
    }
    if global_residual {
        let base = bicubic_upsample(&lr_image.to_feature_map(), uf)?;
        out = out.add(&base).map_err(|_| {
            Error::config(format!(
                "HR features {}x{} do not match LR {}x{} upsampled by {uf}",
                x_hr.height, x_hr.width, lr_image.height, lr_image.width
            ))
        })?;
    }
    ImagePlane::from_feature_map(&out)
}
