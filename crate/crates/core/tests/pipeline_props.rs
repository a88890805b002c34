mod common;

use common::*;
use mcsr_core::aggregation::{mab_chain, reconstruct};
use mcsr_core::kspace::{degrade, ImagePlane};
use mcsr_core::matching::match_all;
use mcsr_core::pyramid::{extract_lr_features, extract_reference_pyramid, BranchWeights, PyramidConfig, PyramidWeights};
use mcsr_core::swin::StgConfig;
use mcsr_core::tensor::conv2d;
use mcsr_core::weights::RandomSource;
use mcsr_core::{Model, ModelConfig};

fn small(uf: usize) -> ModelConfig {
    ModelConfig {
        uf,
        channels: 8,
        stg: StgConfig { num_rstb: 1, stl_per_rstb: 2, embed_dim: 8, num_heads: 2, window: 4, mlp_ratio: 2.0 },
        ..Default::default()
    }
}

#[test]
fn pyramid_levels_are_geometric() {
    let stg = small(4).stg;
    for (uf, level_rstb) in [(2usize, false), (4, false), (4, true), (8, false)] {
        let cfg = PyramidConfig { uf, stg, level_rstb };
        let branch = BranchWeights::take(&mut RandomSource::new(1), "ref", &stg).unwrap();
        let pw = PyramidWeights::take(&mut RandomSource::new(2), &cfg).unwrap();
        let mut r = rng(uf as u64);
        let img = image(&mut r, 8 * uf, 6 * uf);
        let p = extract_reference_pyramid(&img, &branch, &pw, &cfg).unwrap();
        assert_eq!(p.levels.len(), uf.trailing_zeros() as usize + 1);
        for (i, l) in p.levels.iter().enumerate() {
            assert_eq!(l.shape(), (8, 8 << i, 6 << i));
        }
        // coarsest level sits on the LR grid of the degraded reference
        let lr = degrade(&img, uf).unwrap();
        let f_lr = extract_lr_features(&lr, &branch, &stg).unwrap();
        assert_eq!(f_lr.shape(), p.coarsest().shape());
        // finest level is the full-resolution branch output; each coarser one a strided conv of it
        assert_eq!(p.finest(), &extract_lr_features(&img, &branch, &stg).unwrap());
        if !level_rstb {
            let n = p.levels.len();
            for k in 0..n - 1 {
                let want = conv2d(&p.levels[n - 1 - k], &pw.downs[k]).unwrap();
                assert_eq!(p.levels[n - 2 - k], want);
            }
        }
    }
}

#[test]
fn forward_equals_stage_composition() {
    for uf in [2usize, 4] {
        let cfg = small(uf);
        let m = Model::random(cfg, 11).unwrap();
        let mut r = rng(uf as u64);
        let tar = image(&mut r, 16, 16);
        let refr = image(&mut r, 16 * uf, 16 * uf);
        let w = &m.weights;
        let f_tar = extract_lr_features(&tar, w.branches.tar_lr(), &cfg.stg).unwrap();
        let f_ref_lr = extract_lr_features(&degrade(&refr, uf).unwrap(), w.branches.ref_lr(), &cfg.stg).unwrap();
        let pyr = extract_reference_pyramid(&refr, w.branches.reference(), &w.pyramid, &cfg.pyramid()).unwrap();
        let (_, matched) = match_all(&f_tar, &f_ref_lr, &pyr, &cfg.matching).unwrap();
        let x = mab_chain(&f_tar, &matched, &w.mabs).unwrap();
        let want = reconstruct(&x, &tar, &w.head, uf, true).unwrap();
        assert_eq!(m.forward(&tar, &refr).unwrap(), want);
    }
}

#[test]
fn seeded_forward_is_finite_and_reproducible() {
    let mut r = rng(7);
    let tar = image(&mut r, 16, 16);
    let refr = image(&mut r, 64, 64);
    for seed in 0..10u64 {
        let cfg = ModelConfig { seed, ..small(4) };
        let a = Model::random(cfg, seed).unwrap().forward(&tar, &refr).unwrap();
        let b = Model::random(cfg, seed).unwrap().forward(&tar, &refr).unwrap();
        assert_eq!((a.height, a.width), (64, 64));
        assert!(a.data.iter().all(|v| v.is_finite()));
        assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn saved_weights_reload_to_the_same_model() {
    let cfg = small(2);
    let store = Model::random_store(&cfg, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.mcsrw");
    store.save(&path).unwrap();
    let loaded = Model::from_store(cfg, &mcsr_core::WeightStore::load(&path).unwrap()).unwrap();
    assert_eq!(loaded, Model::random(cfg, 5).unwrap());
}

#[test]
fn match_debug_line_count() {
    let cfg = small(2);
    let m = Model::random(cfg, 1).unwrap();
    let img = ImagePlane::new(32, 32, (0..1024).map(|i| ((i * 37) % 101) as f64 / 100.0).collect()).unwrap();
    let tar = degrade(&img, 2).unwrap();
    let text = m.match_debug(&tar, &img).unwrap().to_text();
    let patches = 16usize.div_ceil(13).pow(2);
    assert_eq!(text.lines().count(), patches * 11 * 11);
}
