//! Handcrafted multi-level descriptor pyramid and the coarse correlation.
//!
//! A cell descriptor is an `n x n` grid of mean-removed, contrast-normalized
//! intensities followed by `m x m` centered 8-bin gradient-orientation
//! histograms weighted by gradient magnitude. On the coarse level the window
//! follows the characteristic scale around the cell (peak of the
//! difference-of-Gaussians energy over a scale band), so the same content
//! yields similar descriptors under a zoom. Finer levels use a fixed window
//! per level, optionally stretched by a factor supplied by the caller once
//! the relative scale of the two images is known.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Matrix, ScoreMatrix};
use crate::image::{sample_clamped, GrayImage};
use crate::synth::{level_to_full, COARSE_LEVEL};

const HIST_BINS: usize = 8;
/// Relative contrast below which a cell is flagged flat.
const FLAT_CONTRAST: f64 = 1e-3;
/// Score used for rows/columns of invalid descriptors.
const SENTINEL_SCORE: f64 = 0.0;

/// Tunables of the descriptor extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    /// Select the coarse window per cell from the scale-space response. When
    /// false the coarse level uses `fixed_sigma` like the finer ones.
    pub adaptive_scale: bool,
    /// Scale band for selection, in units of the coarse cell size.
    pub sigma_band: (f64, f64),
    /// Extent of the neighbourhood whose DoG energy drives scale selection,
    /// in units of the candidate scale (0 selects on the center alone).
    pub selection_radius: f64,
    /// Window scale of non-adaptive levels, in units of the level's cell size.
    pub fixed_sigma: f64,
    /// Side of the window spanned by the intensity samples, in units of four
    /// window scales.
    pub spacing: f64,
    /// Intensity samples per side on the coarse level.
    pub grid: usize,
    /// Orientation histograms per side on the coarse level.
    pub hist_cells: usize,
    /// Intensity samples per side on levels 0..=2.
    pub fine_grid: usize,
    /// Orientation histograms per side on levels 0..=2.
    pub fine_hist_cells: usize,
    /// Blur of the sampled layer, in units of the sample spacing.
    pub sample_blur: f64,
    /// Weight of the orientation histograms relative to the intensity block.
    pub hist_weight: f64,
    /// Levels to extract (subset of 0..=3).
    pub levels: Vec<u8>,
}

impl FeatureConfig {
    /// Descriptor length on the coarse level.
    pub fn dim(&self) -> usize {
        self.level_dim(COARSE_LEVEL)
    }

    pub fn level_dim(&self, level: u8) -> usize {
        let (n, m) = self.layout(level);
        n * n + HIST_BINS * m * m
    }

    fn layout(&self, level: u8) -> (usize, usize) {
        if level == COARSE_LEVEL {
            (self.grid, self.hist_cells)
        } else {
            (self.fine_grid, self.fine_hist_cells)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sigma_band;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::invalid(format!("scale band must satisfy 0 < lo < hi, got ({lo}, {hi})")));
        }
        for (name, v) in [
            ("selection radius", self.selection_radius),
            ("sample blur", self.sample_blur),
            ("histogram weight", self.hist_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("fixed sigma", self.fixed_sigma), ("spacing", self.spacing)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if [self.grid, self.hist_cells, self.fine_grid, self.fine_hist_cells].contains(&0) {
            return Err(Error::invalid("descriptor layout sizes must be at least 1"));
        }
        if let Some(&l) = self.levels.iter().find(|&&l| l > 3) {
            return Err(Error::invalid(format!("pyramid level must be 0..=3, got {l}")));
        }
        Ok(())
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            adaptive_scale: true,
            sigma_band: (0.25, 4.0),
            selection_radius: 2.0,
            fixed_sigma: 1.5,
            spacing: 1.0,
            grid: 8,
            hist_cells: 2,
            fine_grid: 4,
            fine_hist_cells: 1,
            sample_blur: 0.5,
            hist_weight: 0.7,
            levels: vec![0, 1, 2, 3],
        }
    }
}

/// Descriptor grids at levels 0..=3 (level `l` has resolution `W/2^l x H/2^l`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<Option<FeatureGrid>>,
    pub image_width: usize,
    pub image_height: usize,
}

impl FeaturePyramid {
    pub fn level(&self, l: u8) -> Option<&FeatureGrid> {
        self.levels.get(l as usize).and_then(|g| g.as_ref())
    }

    /// The coarse (level 3) grid.
    pub fn coarse(&self) -> Result<&FeatureGrid> {
        self.level(COARSE_LEVEL)
            .ok_or_else(|| Error::invalid("pyramid lacks the coarse level"))
    }
}

/// Gaussian scale space of one image.
struct ScaleSpace {
    width: usize,
    height: usize,
    layers: Vec<Vec<f64>>,
}

const SIGMA0: f64 = 0.8;
const STEPS_PER_OCTAVE: f64 = 3.0;

impl ScaleSpace {
    fn build(values: &[f64], width: usize, height: usize, sigma_max: f64) -> Self {
        let count = ((sigma_max / SIGMA0).log2() * STEPS_PER_OCTAVE).ceil() as usize + 2;
        let sigmas: Vec<f64> = (0..count)
            .map(|k| SIGMA0 * 2f64.powf(k as f64 / STEPS_PER_OCTAVE))
            .collect();
        let mut layers: Vec<Vec<f64>> = Vec::with_capacity(count);
        layers.push(gaussian_blur(values, width, height, SIGMA0));
        for k in 1..count {
            let inc = (sigmas[k].powi(2) - sigmas[k - 1].powi(2)).sqrt();
            let next = gaussian_blur(&layers[k - 1], width, height, inc);
            layers.push(next);
        }
        Self {
            width,
            height,
            layers,
        }
    }

    #[inline]
    fn sample(&self, k: usize, x: f64, y: f64) -> f64 {
        sample_clamped(&self.layers[k], self.width, self.height, x, y, |v| v)
    }

    /// Layer whose blur is closest (in log scale) to `sigma`.
    fn nearest_layer(&self, sigma: f64) -> usize {
        let k = ((sigma.max(SIGMA0) / SIGMA0).log2() * STEPS_PER_OCTAVE).round() as usize;
        k.min(self.layers.len() - 1)
    }

    /// Root of the Gaussian-weighted mean squared DoG response between layers
    /// `k` and `k + 1` on a 5x5 stencil of pitch `radius * sigma / 2`.
    fn dog_energy(&self, k: usize, x: f64, y: f64, radius: f64) -> f64 {
        let d = |px: f64, py: f64| self.sample(k + 1, px, py) - self.sample(k, px, py);
        if radius <= 0.0 {
            return d(x, y).abs();
        }
        let sigma = SIGMA0 * 2f64.powf((k as f64 + 0.5) / STEPS_PER_OCTAVE);
        let pitch = 0.5 * radius * sigma;
        let (mut acc, mut wsum) = (0.0, 0.0);
        for b in -2i32..=2 {
            for a in -2i32..=2 {
                let w = (-((a * a + b * b) as f64) / 4.5).exp();
                let v = d(x + a as f64 * pitch, y + b as f64 * pitch);
                acc += w * v * v;
                wsum += w;
            }
        }
        (acc / wsum).sqrt()
    }

    /// Characteristic scale of `(x, y)` within `[lo, hi]`: extremum of the
    /// difference-of-Gaussians magnitude, refined by a parabola in log-scale.
    fn characteristic_scale(&self, x: f64, y: f64, lo: f64, hi: f64, radius: f64) -> f64 {
        let k_lo = self.nearest_layer(lo);
        let k_hi = self.nearest_layer(hi).min(self.layers.len() - 2);
        if k_hi <= k_lo {
            return lo;
        }
        let dog: Vec<f64> = (k_lo..=k_hi)
            .map(|k| self.dog_energy(k, x, y, radius))
            .collect();
        let mut best = 0;
        for (n, &d) in dog.iter().enumerate() {
            if d > dog[best] {
                best = n;
            }
        }
        let mut offset = 0.0;
        if best > 0 && best + 1 < dog.len() {
            let (a, b, c) = (dog[best - 1], dog[best], dog[best + 1]);
            let den = a - 2.0 * b + c;
            if den < 0.0 {
                offset = (0.5 * (a - c) / den).clamp(-0.5, 0.5);
            }
        }
        // DoG between k and k+1 sits at the geometric mean of their scales.
        let k = (k_lo + best) as f64 + offset + 0.5;
        SIGMA0 * 2f64.powf(k / STEPS_PER_OCTAVE)
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; width * height];
    tmp.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let src = &values[y * width..(y + 1) * width];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                let xx = (x as i64 + t as i64 - r).clamp(0, width as i64 - 1) as usize;
                acc += kv * src[xx];
            }
            *out = acc;
        }
    });
    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (t, kv) in kernel.iter().enumerate() {
            let yy = (y as i64 + t as i64 - r).clamp(0, height as i64 - 1) as usize;
            let src = &tmp[yy * width..(yy + 1) * width];
            for (o, s) in row.iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    });
    out
}

/// Extracts the descriptor pyramid of an 8-bit image with default settings.
pub fn extract_pyramid(image: &GrayImage) -> Result<FeaturePyramid> {
    extract_pyramid_with(&image.to_f64(), image.width(), image.height(), &FeatureConfig::default())
}

/// Extracts the descriptor pyramid of a real-valued image.
pub fn extract_pyramid_with(
    values: &[f64],
    width: usize,
    height: usize,
    cfg: &FeatureConfig,
) -> Result<FeaturePyramid> {
    extract_pyramid_scaled(values, width, height, cfg, 1.0)
}

/// Like [`extract_pyramid_with`], with the fixed windows of non-adaptive
/// levels stretched by `window_scale`.
pub fn extract_pyramid_scaled(
    values: &[f64],
    width: usize,
    height: usize,
    cfg: &FeatureConfig,
    window_scale: f64,
) -> Result<FeaturePyramid> {
    check_input(values, width, height, cfg)?;
    if !(window_scale > 0.0 && window_scale.is_finite()) {
        return Err(Error::invalid(format!("window scale must be positive, got {window_scale}")));
    }
    let space = ScaleSpace::build(values, width, height, max_blur(cfg, &cfg.levels, window_scale));
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let dynamic_range = hi - lo;

    let mut levels = vec![None, None, None, None];
    for &l in &cfg.levels {
        levels[l as usize] = Some(extract_level(&space, l, dynamic_range, cfg, window_scale)?);
    }
    Ok(FeaturePyramid {
        levels,
        image_width: width,
        image_height: height,
    })
}

fn check_input(values: &[f64], width: usize, height: usize, cfg: &FeatureConfig) -> Result<()> {
    cfg.validate()?;
    if width == 0 || height == 0 || width % 8 != 0 || height % 8 != 0 {
        return Err(Error::invalid(format!(
            "image size {width}x{height} must be a positive multiple of 8"
        )));
    }
    if values.len() != width * height {
        return Err(Error::shape(format!(
            "image {width}x{height} needs {} values, got {}",
            width * height,
            values.len()
        )));
    }
    Ok(())
}

/// Largest blur any requested level samples. Selection looks one layer
/// above the band; descriptors sample at or below their window scale.
fn max_blur(cfg: &FeatureConfig, levels: &[u8], window_scale: f64) -> f64 {
    levels
        .iter()
        .map(|&l| {
            let cell = (1u32 << l) as f64;
            if l == COARSE_LEVEL && cfg.adaptive_scale {
                cfg.sigma_band.1 * cell * 1.3
            } else {
                cfg.fixed_sigma * window_scale * cell * 1.3
            }
        })
        .fold(2.0 * SIGMA0, f64::max)
}

fn cell_scale(space: &ScaleSpace, level: u8, x: f64, y: f64, cfg: &FeatureConfig, window_scale: f64) -> f64 {
    let cell = (1u32 << level) as f64;
    if level == COARSE_LEVEL && cfg.adaptive_scale {
        space.characteristic_scale(
            x,
            y,
            cfg.sigma_band.0 * cell,
            cfg.sigma_band.1 * cell,
            cfg.selection_radius,
        )
    } else {
        cfg.fixed_sigma * window_scale * cell
    }
}

fn extract_level(
    space: &ScaleSpace,
    level: u8,
    dynamic_range: f64,
    cfg: &FeatureConfig,
    window_scale: f64,
) -> Result<FeatureGrid> {
    let (lw, lh) = (space.width >> level, space.height >> level);
    let layout = cfg.layout(level);
    let cells: Vec<(Vec<f64>, bool)> = (0..lw * lh)
        .into_par_iter()
        .map(|idx| {
            let x = level_to_full((idx % lw) as f64, level);
            let y = level_to_full((idx / lw) as f64, level);
            let sigma = cell_scale(space, level, x, y, cfg, window_scale);
            describe(space, x, y, sigma, dynamic_range, layout, cfg)
        })
        .collect();
    let dim = cfg.level_dim(level);
    let mut data = Vec::with_capacity(lw * lh * dim);
    let mut valid = Vec::with_capacity(lw * lh);
    for (d, ok) in cells {
        data.extend_from_slice(&d);
        valid.push(ok);
    }
    FeatureGrid::with_validity(lh, lw, dim, data, valid)
}

/// Window scale chosen for each cell of `level`, in full-resolution pixels.
pub fn cell_scales(values: &[f64], width: usize, height: usize, level: u8, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    check_input(values, width, height, cfg)?;
    if level > 3 {
        return Err(Error::invalid(format!("pyramid level must be 0..=3, got {level}")));
    }
    let space = ScaleSpace::build(values, width, height, max_blur(cfg, &[level], 1.0));
    let (lw, lh) = (width >> level, height >> level);
    Ok((0..lw * lh)
        .into_par_iter()
        .map(|idx| {
            let x = level_to_full((idx % lw) as f64, level);
            let y = level_to_full((idx / lw) as f64, level);
            cell_scale(&space, level, x, y, cfg, 1.0)
        })
        .collect())
}

fn describe(
    space: &ScaleSpace,
    x: f64,
    y: f64,
    sigma: f64,
    dynamic_range: f64,
    (n, m): (usize, usize),
    cfg: &FeatureConfig,
) -> (Vec<f64>, bool) {
    let n_int = n * n;
    let dim = n_int + HIST_BINS * m * m;
    let mut desc = vec![0.0; dim];
    let step = cfg.spacing * sigma * 4.0 / n as f64;
    let k = space.nearest_layer(cfg.sample_blur * step);
    let half = 0.5 * (n as f64 - 1.0);

    let mut mean = 0.0;
    for j in 0..n {
        for i in 0..n {
            let sx = x + step * (i as f64 - half);
            let sy = y + step * (j as f64 - half);
            let val = space.sample(k, sx, sy);
            desc[i + n * j] = val;
            mean += val;
        }
    }
    mean /= n_int as f64;
    let mut energy = 0.0;
    for d in desc[..n_int].iter_mut() {
        *d -= mean;
        energy += *d * *d;
    }
    let contrast = (energy / n_int as f64).sqrt();
    if !(dynamic_range > 0.0) || contrast < FLAT_CONTRAST * dynamic_range {
        return (vec![0.0; dim], false);
    }
    let norm = energy.sqrt();
    desc[..n_int].iter_mut().for_each(|d| *d /= norm);

    // Orientation histograms over a 6x6 sampling of each of the
    // `hist_cells x hist_cells` sub-windows spanning 4 scales.
    let span = 4.0 * sigma * cfg.spacing;
    let gk = space.nearest_layer(0.5 * span / (6 * m) as f64);
    let h = (0.5 * span / (6 * m) as f64).max(0.5);
    let mut hist = vec![0.0f64; HIST_BINS * m * m];
    for j in 0..6 * m {
        for i in 0..6 * m {
            let sx = x + span * ((i as f64 + 0.5) / (6 * m) as f64 - 0.5);
            let sy = y + span * ((j as f64 + 0.5) / (6 * m) as f64 - 0.5);
            let gx = space.sample(gk, sx + h, sy) - space.sample(gk, sx - h, sy);
            let gy = space.sample(gk, sx, sy + h) - space.sample(gk, sx, sy - h);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag <= 0.0 {
                continue;
            }
            let cell = (i / 6) + m * (j / 6);
            let bins = &mut hist[HIST_BINS * cell..HIST_BINS * (cell + 1)];
            let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
            let pos = angle / std::f64::consts::TAU * HIST_BINS as f64;
            let b0 = pos.floor() as usize % HIST_BINS;
            let frac = pos - pos.floor();
            bins[b0] += mag * (1.0 - frac);
            bins[(b0 + 1) % HIST_BINS] += mag * frac;
        }
    }
    // Centering removes the positive bias shared by all magnitude histograms.
    let hmean = hist.iter().sum::<f64>() / hist.len() as f64;
    hist.iter_mut().for_each(|v| *v -= hmean);
    let hn = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if hn > 0.0 {
        for (d, v) in desc[n_int..].iter_mut().zip(hist) {
            *d = cfg.hist_weight * v / hn;
        }
    }
    (desc, true)
}

/// Temperature-scaled inner products between all source and target cells.
///
/// Rows (columns) of invalid source (target) descriptors hold a constant
/// sentinel so their softmax is exactly uniform.
pub fn correlate(src: &FeatureGrid, tgt: &FeatureGrid, temperature: f64) -> Result<ScoreMatrix> {
    if src.dim() != tgt.dim() {
        return Err(Error::invalid(format!(
            "descriptor dimensions differ: {} vs {}",
            src.dim(),
            tgt.dim()
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let (ns, nt) = (src.len(), tgt.len());
    let inv_t = 1.0 / temperature;
    let mut scores = Matrix::zeros(ns, nt);
    scores
        .as_mut_slice()
        .par_chunks_mut(nt)
        .enumerate()
        .for_each(|(i, row)| {
            if !src.is_valid(i) {
                row.iter_mut().for_each(|s| *s = SENTINEL_SCORE);
                return;
            }
            let a = src.descriptor(i);
            for (j, s) in row.iter_mut().enumerate() {
                *s = if tgt.is_valid(j) {
                    let b = tgt.descriptor(j);
                    a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() * inv_t
                } else {
                    SENTINEL_SCORE
                };
            }
        });
    ScoreMatrix::new(src.shape(), tgt.shape(), scores, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{row_softmax, shannon_entropy, Axis};
    use crate::synth::{generate_scene, SceneSpec};

    fn scene_values() -> (Vec<f64>, usize, usize) {
        let pair = generate_scene(4, &SceneSpec { width: 64, height: 64, ..Default::default() }).unwrap();
        (pair.image_a.to_f64(), 64, 64)
    }

    #[test]
    fn identical_images_give_identical_pyramids() {
        let (v, w, h) = scene_values();
        let cfg = FeatureConfig::default();
        let a = extract_pyramid_with(&v, w, h, &cfg).unwrap();
        let b = extract_pyramid_with(&v, w, h, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coarse().unwrap().shape(), (8, 8));
        assert_eq!(a.coarse().unwrap().dim(), 96);
        assert_eq!(a.level(0).unwrap().dim(), 24);
        assert_eq!(a.level(1).unwrap().shape(), (32, 32));
    }

    #[test]
    fn affine_intensity_change_is_invisible() {
        let (v, w, h) = scene_values();
        let cfg = FeatureConfig::default();
        let a = extract_pyramid_with(&v, w, h, &cfg).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| 0.37 * x + 12.0).collect();
        let b = extract_pyramid_with(&scaled, w, h, &cfg).unwrap();
        for l in 0..=3 {
            let (ga, gb) = (a.level(l).unwrap(), b.level(l).unwrap());
            assert_eq!(ga.validity(), gb.validity());
            for (x, y) in ga.raw().iter().zip(gb.raw()) {
                assert!((x - y).abs() < 1e-5, "level {l}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn constant_image_is_all_invalid() {
        let v = vec![77.0; 32 * 32];
        let p = extract_pyramid_with(&v, 32, 32, &FeatureConfig::default()).unwrap();
        for l in 0..=3 {
            assert!(p.level(l).unwrap().validity().iter().all(|&ok| !ok));
        }
    }

    #[test]
    fn window_scale_only_touches_fixed_levels() {
        let (v, w, h) = scene_values();
        let cfg = FeatureConfig::default();
        let a = extract_pyramid_with(&v, w, h, &cfg).unwrap();
        let b = extract_pyramid_scaled(&v, w, h, &cfg, 2.0).unwrap();
        assert_eq!(a.coarse().unwrap(), b.coarse().unwrap());
        assert_ne!(a.level(1).unwrap(), b.level(1).unwrap());
        assert!(extract_pyramid_scaled(&v, w, h, &cfg, 0.0).is_err());
    }

    #[test]
    fn only_requested_levels_are_built() {
        let (v, w, h) = scene_values();
        let cfg = FeatureConfig { levels: vec![0, 2], ..Default::default() };
        let p = extract_pyramid_with(&v, w, h, &cfg).unwrap();
        assert!(p.level(0).is_some() && p.level(2).is_some());
        assert!(p.level(1).is_none());
        assert!(p.coarse().is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let (v, w, h) = scene_values();
        for cfg in [
            FeatureConfig { sigma_band: (2.0, 1.0), ..Default::default() },
            FeatureConfig { grid: 0, ..Default::default() },
            FeatureConfig { levels: vec![4], ..Default::default() },
            FeatureConfig { fixed_sigma: -1.0, ..Default::default() },
        ] {
            assert!(extract_pyramid_with(&v, w, h, &cfg).is_err());
        }
    }

    #[test]
    fn rejects_indivisible_shape() {
        assert!(extract_pyramid_with(&[0.0; 30 * 32], 30, 32, &FeatureConfig::default()).is_err());
    }

    #[test]
    fn correlate_examples() {
        let g = FeatureGrid::new(1, 3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let s = correlate(&g, &g, 1.0).unwrap();
        for i in 0..3 {
            assert!((s.scores.get(i, i) - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.scores.get(0, 1), 0.0);

        let src = FeatureGrid::new(1, 3, 2, vec![1.0, 0.0, 0.6, 0.8, 0.0, 1.0]).unwrap();
        let tgt = FeatureGrid::new(3, 1, 2, vec![0.0, 1.0, 1.0, 0.0, 0.8, 0.6]).unwrap();
        let s = correlate(&src, &tgt, 0.5).unwrap();
        let expected = [[0.0, 1.0, 0.8], [0.8, 0.6, 0.96], [1.0, 0.0, 0.6]];
        for (i, row) in expected.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                assert!((s.scores.get(i, j) - e / 0.5).abs() < 1e-12);
            }
        }
        let other = FeatureGrid::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(correlate(&g, &other, 1.0).is_err());
        assert!(correlate(&g, &g, 0.0).is_err());
    }

    #[test]
    fn invalid_rows_are_uniform() {
        let src = FeatureGrid::new(1, 2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let tgt = FeatureGrid::new(1, 3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.7, 0.7]).unwrap();
        let s = correlate(&src, &tgt, 0.1).unwrap();
        let p = row_softmax(&s.scores, Axis::Rows);
        assert!((shannon_entropy(p.row(0)) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn self_correlation_peaks_on_diagonal() {
        let pair = generate_scene(21, &SceneSpec::default()).unwrap();
        let p = extract_pyramid(&pair.image_a).unwrap();
        let c = p.coarse().unwrap();
        let s = correlate(c, c, 0.1).unwrap();
        let bound = 1.0 / 0.1 + 1e-9;
        for i in 0..s.n_src() {
            let row = s.scores.row(i);
            assert!(row.iter().all(|v| v.abs() <= bound));
            if c.is_valid(i) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!((row[i] - max).abs() < 1e-9);
            }
        }
    }
}
