//! End-to-end model: feature extraction, matching, aggregation, reconstruction.

use crate::aggregation::{mab_chain, reconstruct, MabConfig, MabWeights};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::kspace::{degrade, ImagePlane};
use crate::matching::{match_all, MatchResult};
use crate::pyramid::{extract_lr_features, extract_reference_pyramid, BranchWeights, PyramidWeights};
use crate::tensor::ConvSpec;
use crate::weights::{take_conv, ParamSource, RandomSource, Recording, StoreSource, WeightStore};

pub const SHARED_BRANCH: &str = "shared";
pub const BRANCHES: [&str; 3] = ["tar_lr", "ref_lr", "ref"];

#[derive(Debug, Clone, PartialEq)]
pub enum Branches {
    Shared(BranchWeights),
    Separate { tar_lr: BranchWeights, ref_lr: BranchWeights, reference: BranchWeights },
}

impl Branches {
    pub fn tar_lr(&self) -> &BranchWeights {
        match self {
            Branches::Shared(b) => b,
            Branches::Separate { tar_lr, .. } => tar_lr,
        }
    }

    pub fn ref_lr(&self) -> &BranchWeights {
        match self {
            Branches::Shared(b) => b,
            Branches::Separate { ref_lr, .. } => ref_lr,
        }
    }

    pub fn reference(&self) -> &BranchWeights {
        match self {
            Branches::Shared(b) => b,
            Branches::Separate { reference, .. } => reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub branches: Branches,
    pub pyramid: PyramidWeights,
    /// Levels 1..=L in order.
    pub mabs: Vec<MabWeights>,
    pub head: ConvSpec,
}

impl ModelWeights {
    pub fn build(cfg: &ModelConfig, src: &mut dyn ParamSource) -> Result<Self> {
        cfg.validate()?;
        let branches = if cfg.share_stg_weights {
            Branches::Shared(BranchWeights::take(src, SHARED_BRANCH, &cfg.stg)?)
        } else {
            Branches::Separate {
                tar_lr: BranchWeights::take(src, BRANCHES[0], &cfg.stg)?,
                ref_lr: BranchWeights::take(src, BRANCHES[1], &cfg.stg)?,
                reference: BranchWeights::take(src, BRANCHES[2], &cfg.stg)?,
            }
        };
        let pyramid = PyramidWeights::take(src, &cfg.pyramid())?;
        let mabs = (1..=cfg.num_levels()?)
            .map(|level| MabWeights::take(src, MabConfig::for_level(level, cfg.channels, cfg.sab_stats_source)))
            .collect::<Result<Vec<_>>>()?;
        let head = take_conv(src, "head", cfg.channels, 1, 1)?;
        Ok(ModelWeights { branches, pyramid, mabs, head })
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub sr: ImagePlane,
    pub matches: MatchResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: ModelWeights,
}

impl Model {
    pub fn from_source(config: ModelConfig, src: &mut dyn ParamSource) -> Result<Self> {
        let weights = ModelWeights::build(&config, src)?;
        Ok(Model { config, weights })
    }

    /// Seeded initialization.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::from_source(config, &mut RandomSource::new(seed))
    }

    /// Loads every parameter from `store`; missing names are reported before
    /// names the model never reads.
    pub fn from_store(config: ModelConfig, store: &WeightStore) -> Result<Self> {
        let mut src = StoreSource::new(store);
        let weights = ModelWeights::build(&config, &mut src)?;
        src.finish()?;
        Ok(Model { config, weights })
    }

    /// The seeded weights for `config` as a weight store.
    pub fn random_store(config: &ModelConfig, seed: u64) -> Result<WeightStore> {
        let mut rec = Recording::new(RandomSource::new(seed));
        ModelWeights::build(config, &mut rec)?;
        Ok(rec.store)
    }

    fn check_inputs(&self, tar_lr: &ImagePlane, ref_hr: &ImagePlane) -> Result<()> {
        let uf = self.config.uf;
        if tar_lr.height * uf != ref_hr.height || tar_lr.width * uf != ref_hr.width {
            return Err(Error::input(format!(
                "reference {}x{} must be the target {}x{} scaled by {uf}",
                ref_hr.height, ref_hr.width, tar_lr.height, tar_lr.width
            )));
        }
        Ok(())
    }

    pub fn forward_full(&self, tar_lr: &ImagePlane, ref_hr: &ImagePlane) -> Result<ForwardOutput> {
        self.check_inputs(tar_lr, ref_hr)?;
        let cfg = &self.config;
        let w = &self.weights;
        let ref_lr = degrade(ref_hr, cfg.uf)?;
        let f_tar = extract_lr_features(tar_lr, w.branches.tar_lr(), &cfg.stg)?;
        let f_ref_lr = extract_lr_features(&ref_lr, w.branches.ref_lr(), &cfg.stg)?;
        let pyramid = extract_reference_pyramid(ref_hr, w.branches.reference(), &w.pyramid, &cfg.pyramid())?;
        let (matches, matched) = match_all(&f_tar, &f_ref_lr, &pyramid, &cfg.matching)?;
        let x_hr = mab_chain(&f_tar, &matched, &w.mabs)?;
        let sr = reconstruct(&x_hr, tar_lr, &w.head, cfg.uf, cfg.global_residual)?;
        Ok(ForwardOutput { sr, matches })
    }

    pub fn forward(&self, tar_lr: &ImagePlane, ref_hr: &ImagePlane) -> Result<ImagePlane> {
        Ok(self.forward_full(tar_lr, ref_hr)?.sr)
    }

    /// Runs only the LR-grid matching stage.
    pub fn match_debug(&self, tar_lr: &ImagePlane, ref_hr: &ImagePlane) -> Result<MatchResult> {
        self.check_inputs(tar_lr, ref_hr)?;
        let cfg = &self.config;
        let ref_lr = degrade(ref_hr, cfg.uf)?;
        let f_tar = extract_lr_features(tar_lr, self.weights.branches.tar_lr(), &cfg.stg)?;
        let f_ref_lr = extract_lr_features(&ref_lr, self.weights.branches.ref_lr(), &cfg.stg)?;
        crate::matching::find_matches(&f_tar, &f_ref_lr, &cfg.matching)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swin::StgConfig;

    fn small() -> ModelConfig {
        ModelConfig {
            uf: 2,
            channels: 8,
            stg: StgConfig { num_rstb: 1, stl_per_rstb: 2, embed_dim: 8, num_heads: 2, window: 4, mlp_ratio: 2.0 },
            ..Default::default()
        }
    }

    #[test]
    fn store_round_trip_matches_random() {
        let cfg = small();
        let store = Model::random_store(&cfg, 3).unwrap();
        let a = Model::random(cfg, 3).unwrap();
        let b = Model::from_store(cfg, &store).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_and_unknown_weights() {
        let cfg = small();
        let store = Model::random_store(&cfg, 1).unwrap();
        let mut extra = store.clone();
        extra.insert("bogus", crate::weights::Tensor { dims: vec![1], values: vec![0.0] });
        assert!(matches!(Model::from_store(cfg, &extra), Err(Error::UnknownWeights(_))));
        let mut trimmed = WeightStore::new();
        for (n, t) in store.iter().skip(1) {
            trimmed.insert(n, t.clone());
        }
        assert!(matches!(Model::from_store(cfg, &trimmed), Err(Error::MissingWeights(_))));
    }

    #[test]
    fn shared_branch_names() {
        let cfg = ModelConfig { share_stg_weights: true, ..small() };
        let store = Model::random_store(&cfg, 0).unwrap();
        assert!(store.names().any(|n| n.starts_with("stg.shared")));
        assert!(!store.names().any(|n| n.starts_with("stg.ref")));
    }

    #[test]
    fn forward_shapes_and_size_check() {
        let cfg = small();
        let m = Model::random(cfg, 0).unwrap();
        let tar = ImagePlane::filled(16, 16, 0.5);
        let reference = ImagePlane::filled(32, 32, 0.25);
        let out = m.forward(&tar, &reference).unwrap();
        assert_eq!((out.height, out.width), (32, 32));
        assert!(out.data.iter().all(|v| v.is_finite()));
        let bad = ImagePlane::filled(30, 32, 0.25);
        assert!(matches!(m.forward(&tar, &bad), Err(Error::Input(_))));
    }
}
