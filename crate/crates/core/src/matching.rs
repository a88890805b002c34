//! Multi-scale contextual matching.
//!
//! Target LR features are cut into non-overlapping patches. For every patch
//! the central template is searched exhaustively over the reference LR
//! features (cosine similarity, stride 1) to locate a reference patch. Inside
//! that pair of patches every `r × r` target region is matched against every
//! reference region, giving an index map and a similarity map. Those maps are
//! then replayed on each level of the reference pyramid: matched regions are
//! copied into the target layout, overlaps averaged by visit count, and the
//! result is weighted by the (bilinearly upsampled) similarity.
//!
//! All searches are exhaustive and ties resolve to the smallest row-major index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyramid::FeaturePyramid;
use crate::tensor::{bilinear_upsample, pad_reflect, FeatureMap};

/// Epsilon applied to both vector norms in every cosine similarity.
pub const SIMILARITY_EPS: f64 = 1e-8;

/// Similarities closer than this count as a tie; the first candidate in
/// raster order keeps the slot. Mirrored windows in the reflect padding tie
/// exactly and would otherwise be decided by summation order.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchConfig {
    pub patch_w: usize,
    pub patch_h: usize,
    pub center_size: usize,
    pub region_size: usize,
    /// Clamp similarities to `[0, 1]` before they weight matched features.
    pub clamp_similarity: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { patch_w: 13, patch_h: 13, center_size: 7, region_size: 3, clamp_similarity: false }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_w == 0 || self.patch_h == 0 || self.center_size == 0 || self.region_size == 0 {
            return Err(Error::config("patch, center and region sizes must be positive"));
        }
        let min_side = self.patch_w.min(self.patch_h);
        if self.center_size > min_side {
            return Err(Error::config(format!(
                "center_size {} exceeds patch side {min_side}",
                self.center_size
            )));
        }
        if self.region_size > min_side {
            return Err(Error::config(format!(
                "region_size {} exceeds patch side {min_side}",
                self.region_size
            )));
        }
        Ok(())
    }

    /// Offset of the template's top-left corner inside a patch.
    pub fn template_offset(&self) -> (usize, usize) {
        ((self.patch_h - self.center_size) / 2, (self.patch_w - self.center_size) / 2)
    }

    /// Offset of a patch's center (the template center) from its top-left corner.
    pub fn center_offset(&self) -> (usize, usize) {
        let (ty, tx) = self.template_offset();
        (ty + self.center_size / 2, tx + self.center_size / 2)
    }

    /// Region positions per patch, rows × cols.
    pub fn region_grid(&self) -> (usize, usize) {
        (self.patch_h - self.region_size + 1, self.patch_w - self.region_size + 1)
    }
}

/// Cosine similarity with the norm guard used throughout matching.
#[inline]
pub fn cosine(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    dot / (norm_a.max(SIMILARITY_EPS) * norm_b.max(SIMILARITY_EPS))
}

/// Whether a later candidate replaces the current best.
#[inline]
pub fn beats(sim: f64, best: f64) -> bool {
    sim > best + TIE_TOLERANCE
}

// ---------------------------------------------------------------------------
// patch grid

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGeometry {
    pub fn new(height: usize, width: usize, cfg: &MatchConfig) -> Result<Self> {
        cfg.validate()?;
        let rows = height.div_ceil(cfg.patch_h);
        let cols = width.div_ceil(cfg.patch_w);
        let (ph, pw) = (rows * cfg.patch_h, cols * cfg.patch_w);
        // one reflection must cover the padding
        if ph - height >= height || pw - width >= width {
            return Err(Error::config(format!(
                "patch {}x{} is too large for a {height}x{width} feature map",
                cfg.patch_h, cfg.patch_w
            )));
        }
        Ok(PatchGeometry {
            height,
            width,
            padded_height: ph,
            padded_width: pw,
            patch_h: cfg.patch_h,
            patch_w: cfg.patch_w,
            rows,
            cols,
        })
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn origin(&self, n: usize) -> (usize, usize) {
        ((n / self.cols) * self.patch_h, (n % self.cols) * self.patch_w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub padded: FeatureMap,
    pub geometry: PatchGeometry,
}

impl PatchGrid {
    pub fn patch(&self, n: usize) -> FeatureMap {
        let (y, x) = self.geometry.origin(n);
        self.padded.crop(y, x, self.geometry.patch_h, self.geometry.patch_w)
    }

    pub fn patches(&self) -> Vec<FeatureMap> {
        (0..self.geometry.count()).map(|n| self.patch(n)).collect()
    }
}

/// Reflection-pads to whole patches and records the grid.
pub fn partition_patches(f: &FeatureMap, cfg: &MatchConfig) -> Result<PatchGrid> {
    let geometry = PatchGeometry::new(f.height, f.width, cfg)?;
    let padded = pad_reflect(f, geometry.padded_height, geometry.padded_width);
    Ok(PatchGrid { padded, geometry })
}

/// Places patches back on the padded grid and crops to the original size.
pub fn merge_patches(patches: &[FeatureMap], geom: &PatchGeometry) -> Result<FeatureMap> {
    if patches.len() != geom.count() {
        return Err(Error::config(format!("expected {} patches, got {}", geom.count(), patches.len())));
    }
    let channels = patches[0].channels;
    let mut padded = FeatureMap::zeros(channels, geom.padded_height, geom.padded_width);
    for (n, p) in patches.iter().enumerate() {
        if p.shape() != (channels, geom.patch_h, geom.patch_w) {
            return Err(Error::config("patch has the wrong shape"));
        }
        paste(&mut padded, p, geom.origin(n));
    }
    Ok(padded.crop(0, 0, geom.height, geom.width))
}

fn paste(dst: &mut FeatureMap, src: &FeatureMap, (top, left): (usize, usize)) {
    for c in 0..src.channels {
        for y in 0..src.height {
            let s = src.index(c, y, 0);
            let d = dst.index(c, top + y, left);
            dst.data[d..d + src.width].copy_from_slice(&src.data[s..s + src.width]);
        }
    }
}

// ---------------------------------------------------------------------------
// coarse search

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseMatch {
    /// Center of the best template window on the reference LR grid.
    pub center: (usize, usize),
    pub similarity: f64,
}

/// Squared-norm table of every `size × size` window (all channels) of a map.
struct WindowNorms {
    size: usize,
    rows: usize,
    cols: usize,
    norms: Vec<f64>,
}

impl WindowNorms {
    fn new(f: &FeatureMap, size: usize) -> Self {
        let rows = f.height - size + 1;
        let cols = f.width - size + 1;
        let mut norms = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = 0.0;
                for ch in 0..f.channels {
                    for dy in 0..size {
                        let row = &f.data[f.index(ch, r + dy, c)..f.index(ch, r + dy, c) + size];
                        acc += row.iter().map(|v| v * v).sum::<f64>();
                    }
                }
                norms[r * cols + c] = acc.sqrt();
            }
        }
        WindowNorms { size, rows, cols, norms }
    }
}

fn search_template(template: &FeatureMap, f_ref: &FeatureMap, norms: &WindowNorms) -> CoarseMatch {
    let size = norms.size;
    let t_norm = template.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut best = (0usize, 0usize);
    let mut best_sim = f64::NEG_INFINITY;
    for r in 0..norms.rows {
        for c in 0..norms.cols {
            let mut dot = 0.0;
            for ch in 0..template.channels {
                for dy in 0..size {
                    let t = &template.data[template.index(ch, dy, 0)..template.index(ch, dy, 0) + size];
                    let start = f_ref.index(ch, r + dy, c);
                    let s = &f_ref.data[start..start + size];
                    dot += t.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let sim = cosine(dot, t_norm, norms.norms[r * norms.cols + c]);
            if beats(sim, best_sim) {
                best_sim = sim;
                best = (r, c);
            }
        }
    }
    CoarseMatch { center: (best.0 + size / 2, best.1 + size / 2), similarity: best_sim }
}

fn check_template_fits(f_ref: &FeatureMap, cfg: &MatchConfig) -> Result<()> {
    if cfg.center_size > f_ref.height || cfg.center_size > f_ref.width {
        return Err(Error::config(format!(
            "center template {} does not fit in a {}x{} reference map",
            cfg.center_size, f_ref.height, f_ref.width
        )));
    }
    Ok(())
}

/// Finds the reference position whose `center_size²` window best matches the
/// central template of `tar_patch`.
pub fn coarse_match(tar_patch: &FeatureMap, f_ref_lr: &FeatureMap, cfg: &MatchConfig) -> Result<CoarseMatch> {
    cfg.validate()?;
    check_patch(tar_patch, cfg)?;
    check_template_fits(f_ref_lr, cfg)?;
    if tar_patch.channels != f_ref_lr.channels {
        return Err(Error::config("target patch and reference map differ in channels"));
    }
    let (ty, tx) = cfg.template_offset();
    let template = tar_patch.crop(ty, tx, cfg.center_size, cfg.center_size);
    let norms = WindowNorms::new(f_ref_lr, cfg.center_size);
    Ok(search_template(&template, f_ref_lr, &norms))
}

/// Top-left of the `patch_h × patch_w` reference patch centered at `center`,
/// clamped into a `height × width` map.
pub fn reference_patch_origin(
    center: (usize, usize),
    height: usize,
    width: usize,
    cfg: &MatchConfig,
) -> (usize, usize) {
    let (oy, ox) = cfg.center_offset();
    let y = (center.0 as isize - oy as isize).clamp(0, (height - cfg.patch_h) as isize) as usize;
    let x = (center.1 as isize - ox as isize).clamp(0, (width - cfg.patch_w) as isize) as usize;
    (y, x)
}

fn check_patch(p: &FeatureMap, cfg: &MatchConfig) -> Result<()> {
    if p.height != cfg.patch_h || p.width != cfg.patch_w {
        return Err(Error::config(format!(
            "patch is {}x{}, configured {}x{}",
            p.height, p.width, cfg.patch_h, cfg.patch_w
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// region matching

/// Index and similarity maps of one patch pair, row-major over target regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMatch {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Best reference region position (row, col) inside the reference patch.
    pub index: Vec<(usize, usize)>,
    pub similarity: Vec<f64>,
}

/// Flattened `(channel, dy, dx)` vectors of every region plus their norms.
fn region_vectors(p: &FeatureMap, r: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let gh = p.height - r + 1;
    let gw = p.width - r + 1;
    let dim = p.channels * r * r;
    let mut vecs = Vec::with_capacity(gh * gw * dim);
    let mut norms = Vec::with_capacity(gh * gw);
    for y in 0..gh {
        for x in 0..gw {
            let start = vecs.len();
            for c in 0..p.channels {
                for dy in 0..r {
                    let s = p.index(c, y + dy, x);
                    vecs.extend_from_slice(&p.data[s..s + r]);
                }
            }
            norms.push(vecs[start..].iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    (vecs, norms, dim)
}

/// Matches every target region against every reference region.
pub fn region_match(tar_patch: &FeatureMap, ref_patch: &FeatureMap, cfg: &MatchConfig) -> Result<RegionMatch> {
    cfg.validate()?;
    check_patch(tar_patch, cfg)?;
    check_patch(ref_patch, cfg)?;
    if tar_patch.channels != ref_patch.channels {
        return Err(Error::config("patches differ in channels"));
    }
    let r = cfg.region_size;
    let (gh, gw) = cfg.region_grid();
    let (tv, tn, dim) = region_vectors(tar_patch, r);
    let (rv, rn, _) = region_vectors(ref_patch, r);
    let count = gh * gw;
    let mut index = Vec::with_capacity(count);
    let mut similarity = Vec::with_capacity(count);
    for z in 0..count {
        let a = &tv[z * dim..(z + 1) * dim];
        let mut best = 0usize;
        let mut best_sim = f64::NEG_INFINITY;
        for g in 0..count {
            let b = &rv[g * dim..(g + 1) * dim];
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let sim = cosine(dot, tn[z], rn[g]);
            if beats(sim, best_sim) {
                best_sim = sim;
                best = g;
            }
        }
        index.push((best / gw, best % gw));
        similarity.push(best_sim);
    }
    Ok(RegionMatch { grid_h: gh, grid_w: gw, index, similarity })
}

// ---------------------------------------------------------------------------
// results and mapping

/// Everything matched for one target patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatch {
    pub target_origin: (usize, usize),
    pub ref_center: (usize, usize),
    /// Top-left of the clamped reference patch on the padded reference LR grid.
    pub ref_origin: (usize, usize),
    pub regions: RegionMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub geometry: PatchGeometry,
    pub config: MatchConfig,
    pub patches: Vec<PatchMatch>,
}

impl MatchResult {
    /// One line per (patch, target region): `n z_row z_col g_row g_col similarity`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (n, p) in self.patches.iter().enumerate() {
            let gw = p.regions.grid_w;
            for (z, (&(gr, gc), &sim)) in p.regions.index.iter().zip(&p.regions.similarity).enumerate() {
                s.push_str(&format!("{n} {} {} {gr} {gc} {sim:.6}\n", z / gw, z % gw));
            }
        }
        s
    }
}

/// Matched reference features, coarse → fine, aligned with the pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPyramid {
    pub levels: Vec<FeatureMap>,
}

/// Patch partition, coarse search and region matching on the LR grids.
pub fn find_matches(f_tar_lr: &FeatureMap, f_ref_lr: &FeatureMap, cfg: &MatchConfig) -> Result<MatchResult> {
    if !f_tar_lr.same_shape(f_ref_lr) {
        return Err(Error::config(format!(
            "target LR features {:?} and reference LR features {:?} differ in shape",
            f_tar_lr.shape(),
            f_ref_lr.shape()
        )));
    }
    let grid = partition_patches(f_tar_lr, cfg)?;
    let geom = grid.geometry;
    let ref_padded = pad_reflect(f_ref_lr, geom.padded_height, geom.padded_width);
    check_template_fits(&ref_padded, cfg)?;
    let norms = WindowNorms::new(&ref_padded, cfg.center_size);
    let (ty, tx) = cfg.template_offset();

    let mut patches = Vec::with_capacity(geom.count());
    for n in 0..geom.count() {
        let tar_patch = grid.patch(n);
        let template = tar_patch.crop(ty, tx, cfg.center_size, cfg.center_size);
        let coarse = search_template(&template, &ref_padded, &norms);
        let ref_origin = reference_patch_origin(coarse.center, geom.padded_height, geom.padded_width, cfg);
        let ref_patch = ref_padded.crop(ref_origin.0, ref_origin.1, cfg.patch_h, cfg.patch_w);
        let regions = region_match(&tar_patch, &ref_patch, cfg)?;
        patches.push(PatchMatch { target_origin: geom.origin(n), ref_center: coarse.center, ref_origin, regions });
    }
    Ok(MatchResult { geometry: geom, config: *cfg, patches })
}

/// Replays the matches on pyramid level `level` (0-based, scale `2^level`).
pub fn map_to_scale(result: &MatchResult, pyramid: &FeaturePyramid, level: usize) -> Result<FeatureMap> {
    let feats = pyramid.levels.get(level).ok_or_else(|| {
        Error::config(format!("pyramid level {level} out of range (have {})", pyramid.num_levels()))
    })?;
    let geom = &result.geometry;
    let cfg = &result.config;
    let u = 1usize << level;
    if feats.height != geom.height * u || feats.width != geom.width * u {
        return Err(Error::config(format!(
            "pyramid level {level} is {}x{}, expected {}x{}",
            feats.height,
            feats.width,
            geom.height * u,
            geom.width * u
        )));
    }
    let padded = pad_reflect(feats, geom.padded_height * u, geom.padded_width * u);
    let c = feats.channels;
    let (ph, pw) = (cfg.patch_h * u, cfg.patch_w * u);
    let side = cfg.region_size * u;
    let mut out = FeatureMap::zeros(c, geom.padded_height * u, geom.padded_width * u);

    for p in &result.patches {
        let rm = &p.regions;
        let mut acc = FeatureMap::zeros(c, ph, pw);
        let mut visits = vec![0u32; ph * pw];
        let mut sim_acc = FeatureMap::zeros(1, cfg.patch_h, cfg.patch_w);
        let mut sim_visits = vec![0u32; cfg.patch_h * cfg.patch_w];
        for (z, (&(gr, gc), &s)) in rm.index.iter().zip(&rm.similarity).enumerate() {
            let (zr, zc) = (z / rm.grid_w, z % rm.grid_w);
            let src_y = (p.ref_origin.0 + gr) * u;
            let src_x = (p.ref_origin.1 + gc) * u;
            let (dst_y, dst_x) = (zr * u, zc * u);
            for ch in 0..c {
                for dy in 0..side {
                    let s0 = padded.index(ch, src_y + dy, src_x);
                    let d0 = acc.index(ch, dst_y + dy, dst_x);
                    for (d, v) in acc.data[d0..d0 + side].iter_mut().zip(&padded.data[s0..s0 + side]) {
                        *d += v;
                    }
                }
            }
            for dy in 0..side {
                for v in &mut visits[(dst_y + dy) * pw + dst_x..(dst_y + dy) * pw + dst_x + side] {
                    *v += 1;
                }
            }
            let weight = if cfg.clamp_similarity { s.clamp(0.0, 1.0) } else { s };
            for dy in 0..cfg.region_size {
                for dx in 0..cfg.region_size {
                    let i = (zr + dy) * cfg.patch_w + zc + dx;
                    sim_acc.data[i] += weight;
                    sim_visits[i] += 1;
                }
            }
        }
        for (v, &n) in sim_acc.data.iter_mut().zip(&sim_visits) {
            *v /= n as f64;
        }
        let sim = bilinear_upsample(&sim_acc, u)?;
        for ch in 0..c {
            let plane = acc.channel_mut(ch);
            for ((v, &n), &s) in plane.iter_mut().zip(&visits).zip(&sim.data) {
                *v = *v / n as f64 * s;
            }
        }
        paste(&mut out, &acc, (p.target_origin.0 * u, p.target_origin.1 * u));
    }
    Ok(out.crop(0, 0, geom.height * u, geom.width * u))
}

/// Full matching: LR-grid search once, then mapping onto every pyramid level.
pub fn match_all(
    f_tar_lr: &FeatureMap,
    f_ref_lr: &FeatureMap,
    pyramid: &FeaturePyramid,
    cfg: &MatchConfig,
) -> Result<(MatchResult, MatchedPyramid)> {
    if pyramid.num_levels() == 0 {
        return Err(Error::config("empty pyramid"));
    }
    if !pyramid.coarsest().same_shape(f_tar_lr) {
        return Err(Error::config(format!(
            "coarsest pyramid level {:?} must match the LR features {:?}",
            pyramid.coarsest().shape(),
            f_tar_lr.shape()
        )));
    }
    let result = find_matches(f_tar_lr, f_ref_lr, cfg)?;
    let levels = (0..pyramid.num_levels())
        .map(|i| map_to_scale(&result, pyramid, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((result, MatchedPyramid { levels }))
}
