//! Coarse flow/certainty initialization and cascaded refinement.
//!
//! Each refinement level upsamples the previous flow, searches a local
//! window of bilinearly sampled target descriptors for the best
//! correlation, fits a parabola per axis around the peak, and smooths the
//! resulting residual offsets with certainty-weighted Jacobi averaging.

use rayon::prelude::*;

use crate::coarse::{argmax, MatchSet};
use crate::error::{Error, Result};
use crate::features::FeaturePyramid;
use crate::grid::{bilinear_upsample, CertaintyMap, FeatureGrid, Field, FlowField, Matrix};
use crate::synth::COARSE_LEVEL;

/// Parameters of the correlation refiner.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementConfig {
    /// Search radius in level pixels for levels 2, 1, 0.
    pub search_radius: [usize; 3],
    pub smooth_iters: usize,
    pub smooth_weight: f64,
    /// Certainty factor for cells whose search fell outside the target.
    pub certainty_floor: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            search_radius: [4, 3, 2],
            smooth_iters: 2,
            smooth_weight: 0.5,
            certainty_floor: 0.1,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.search_radius.iter().any(|&r| r == 0) {
            return Err(Error::invalid("search radii must be at least 1"));
        }
        if !(self.smooth_weight >= 0.0 && self.smooth_weight <= 1.0) {
            return Err(Error::invalid(format!(
                "smoothing weight must lie in [0, 1], got {}",
                self.smooth_weight
            )));
        }
        if !(0.0..1.0).contains(&self.certainty_floor) {
            return Err(Error::invalid(format!(
                "certainty floor must lie in [0, 1), got {}",
                self.certainty_floor
            )));
        }
        Ok(())
    }

    pub fn radius(&self, level: u8) -> usize {
        self.search_radius[(2 - level.min(2)) as usize]
    }
}

/// Decodes a flattened target index into grid coordinates `(x, y)`.
#[inline]
pub fn decode_index(j: usize, width: usize) -> (usize, usize) {
    (j % width, j / width)
}

/// Coarse flow from the row argmax of `p_c`, and certainty from the matches.
pub fn init_coarse_flow(
    p_c: &Matrix,
    matches: &MatchSet,
    src_shape: (usize, usize),
    tgt_shape: (usize, usize),
) -> Result<(FlowField, CertaintyMap)> {
    let (hs, ws) = src_shape;
    let (ht, wt) = tgt_shape;
    if p_c.rows() != hs * ws || p_c.cols() != ht * wt {
        return Err(Error::shape(format!(
            "probability matrix {}x{} does not fit grids {:?} -> {:?}",
            p_c.rows(),
            p_c.cols(),
            src_shape,
            tgt_shape
        )));
    }
    let mut flow = FlowField::new(hs, ws, COARSE_LEVEL, vec![0.0; 2 * hs * ws])?;
    for i in 0..hs * ws {
        let (x, y) = decode_index(argmax(p_c.row(i)), wt);
        flow.set(i % ws, i / ws, x as f64, y as f64);
    }
    let mut certainty = CertaintyMap::zeros(hs, ws);
    for m in &matches.matches {
        if m.src >= hs * ws || m.tgt >= ht * wt {
            return Err(Error::shape(format!("match ({}, {}) out of range", m.src, m.tgt)));
        }
        let c = &mut certainty.values[m.src];
        *c = c.max(m.confidence.clamp(0.0, 1.0) as f32);
    }
    Ok((flow, certainty))
}

/// Bins per octave of the pairwise length-ratio histogram.
const RATIO_BINS_PER_OCTAVE: f64 = 20.0;
/// Octaves covered on either side of unit ratio.
const RATIO_OCTAVES: f64 = 3.0;

/// Relative length scale of source over target implied by the match
/// geometry: the mode of `log2(|a_i - a_k| / |b_i - b_k|)` over match pairs
/// whose source and target separations both reach `min_separation` pixels.
/// Wrong matches spread over the histogram while correct ones pile up at the
/// true ratio. `None` with fewer than `min_pairs` usable pairs.
pub fn relative_scale(matches: &MatchSet, min_separation: f64, min_pairs: usize) -> Option<f64> {
    let pts = matches.pixel_pairs();
    let nbins = (2.0 * RATIO_OCTAVES * RATIO_BINS_PER_OCTAVE) as usize + 1;
    let mut hist = vec![0.0f64; nbins];
    let mut used = 0usize;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let ds = (a.0 .0 - b.0 .0).hypot(a.0 .1 - b.0 .1);
            let dt = (a.1 .0 - b.1 .0).hypot(a.1 .1 - b.1 .1);
            if ds < min_separation || dt < min_separation {
                continue;
            }
            let pos = ((ds / dt).log2() + RATIO_OCTAVES) * RATIO_BINS_PER_OCTAVE;
            let k = pos.round();
            if k >= 0.0 && (k as usize) < nbins {
                hist[k as usize] += 1.0;
                used += 1;
            }
        }
    }
    if used < min_pairs.max(1) {
        return None;
    }
    let smooth: Vec<f64> = (0..nbins)
        .map(|k| {
            let l = if k > 0 { hist[k - 1] } else { 0.0 };
            let r = if k + 1 < nbins { hist[k + 1] } else { 0.0 };
            l + 2.0 * hist[k] + r
        })
        .collect();
    let best = argmax(&smooth);
    let mut offset = 0.0;
    if best > 0 && best + 1 < nbins {
        offset = parabola_offset(Some(smooth[best - 1]), smooth[best], Some(smooth[best + 1]));
    }
    let log2_ratio = (best as f64 + offset) / RATIO_BINS_PER_OCTAVE - RATIO_OCTAVES;
    Some(2f64.powf(log2_ratio))
}

/// Output of one refinement level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRefinement {
    pub flow: FlowField,
    /// Per-cell certainty factor: 1, or the configured floor when the search
    /// window or the refined position left the target grid.
    pub validity: Vec<f32>,
    /// Residual offsets before smoothing, interleaved `(dx, dy)`.
    pub raw_residual: Vec<f64>,
}

struct CellResult {
    residual: (f64, f64),
    weight: f64,
    in_bounds: bool,
}

/// Upsamples `f_next` (level `level + 1`) and refines it at `level`.
pub fn refine_level(
    f_next: &FlowField,
    pyr_src: &FeaturePyramid,
    pyr_tgt: &FeaturePyramid,
    level: u8,
    cfg: &RefinementConfig,
) -> Result<LevelRefinement> {
    cfg.validate()?;
    if level > 2 {
        return Err(Error::invalid(format!("refinement levels are 0..=2, got {level}")));
    }
    if f_next.level != level + 1 {
        return Err(Error::invalid(format!(
            "expected flow at level {}, got level {}",
            level + 1,
            f_next.level
        )));
    }
    let src = pyr_src
        .level(level)
        .ok_or_else(|| Error::invalid(format!("source pyramid lacks level {level}")))?;
    let tgt = pyr_tgt
        .level(level)
        .ok_or_else(|| Error::invalid(format!("target pyramid lacks level {level}")))?;
    let (h, w) = src.shape();
    if f_next.height * 2 != h || f_next.width * 2 != w {
        return Err(Error::shape(format!(
            "flow {}x{} cannot be upsampled onto {h}x{w}",
            f_next.height, f_next.width
        )));
    }
    refine_from(upsample_flow(f_next)?, src, tgt, level, cfg)
}

/// Per-cell search, subpixel fit and smoothing around the initial level-`level`
/// estimate `init`.
fn refine_from(
    init: Field,
    src: &FeatureGrid,
    tgt: &FeatureGrid,
    level: u8,
    cfg: &RefinementConfig,
) -> Result<LevelRefinement> {
    let (h, w) = src.shape();
    let radius = cfg.radius(level) as i64;
    let side = (2 * radius + 1) as usize;
    let (th, tw) = (tgt.height() as f64, tgt.width() as f64);

    let cells: Vec<CellResult> = (0..h * w)
        .into_par_iter()
        .map_init(
            || (vec![0.0; src.dim()], vec![None; side * side]),
            |(buf, corr), i| {
                let (x0, y0) = (init.data[2 * i], init.data[2 * i + 1]);
                if !src.is_valid(i) {
                    return CellResult {
                        residual: (0.0, 0.0),
                        weight: 0.0,
                        in_bounds: true,
                    };
                }
                let d = src.descriptor(i);
                let mut best: Option<(usize, f64)> = None;
                for (k, slot) in corr.iter_mut().enumerate() {
                    let dx = (k % side) as i64 - radius;
                    let dy = (k / side) as i64 - radius;
                    *slot = tgt
                        .sample_into(x0 + dx as f64, y0 + dy as f64, buf)
                        .then(|| d.iter().zip(buf.iter()).map(|(a, b)| a * b).sum::<f64>());
                    if let Some(c) = *slot {
                        if best.is_none_or(|(_, b)| c > b) {
                            best = Some((k, c));
                        }
                    }
                }
                let Some((k, peak)) = best else {
                    return CellResult {
                        residual: (0.0, 0.0),
                        weight: 0.0,
                        in_bounds: false,
                    };
                };
                let (bx, by) = (k % side, k / side);
                let at = |x: usize, y: usize| corr[x + side * y];
                let sub_x = if bx > 0 && bx + 1 < side {
                    parabola_offset(at(bx - 1, by), peak, at(bx + 1, by))
                } else {
                    0.0
                };
                let sub_y = if by > 0 && by + 1 < side {
                    parabola_offset(at(bx, by - 1), peak, at(bx, by + 1))
                } else {
                    0.0
                };
                let rx = bx as f64 - radius as f64 + sub_x;
                let ry = by as f64 - radius as f64 + sub_y;
                let (fx, fy) = (x0 + rx, y0 + ry);
                CellResult {
                    residual: (rx, ry),
                    weight: peak.max(0.0),
                    in_bounds: fx >= -0.5 && fy >= -0.5 && fx < tw - 0.5 && fy < th - 0.5,
                }
            },
        )
        .collect();

    let mut residual: Vec<f64> = cells
        .iter()
        .flat_map(|c| [c.residual.0, c.residual.1])
        .collect();
    let raw_residual = residual.clone();
    let weights: Vec<f64> = cells.iter().map(|c| c.weight).collect();
    smooth_residuals(&mut residual, &weights, h, w, cfg.smooth_iters, cfg.smooth_weight);

    let floor = cfg.certainty_floor as f32;
    let validity = cells
        .iter()
        .map(|c| if c.in_bounds { 1.0 } else { floor })
        .collect();
    let values = init
        .data
        .iter()
        .zip(&residual)
        .map(|(a, r)| (a + r) as f32)
        .collect();
    Ok(LevelRefinement {
        flow: FlowField::new(h, w, level, values)?,
        validity,
        raw_residual,
    })
}

/// Vertex offset of the parabola through three equally spaced samples;
/// zero when a neighbour is missing or the fit is not concave.
fn parabola_offset(left: Option<f64>, mid: f64, right: Option<f64>) -> f64 {
    match (left, right) {
        (Some(l), Some(r)) => {
            let den = l - 2.0 * mid + r;
            if den < 0.0 {
                (0.5 * (l - r) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

/// Bilinear x2 upsampling of a flow field into the next finer level's
/// coordinates (`x_fine = 2 x_coarse + 0.5` under the cell-center convention).
pub fn upsample_flow(flow: &FlowField) -> Result<Field> {
    let mut up = bilinear_upsample(&flow.to_field(), 2)?;
    up.data.iter_mut().for_each(|v| *v = 2.0 * *v + 0.5);
    Ok(up)
}

/// Like [`upsample_flow`], but each coarse value enters the bilinear blend
/// in proportion to `weights`, so cells without support do not contaminate
/// their neighbours. Falls back to the plain blend where no tap has weight.
pub fn upsample_flow_weighted(flow: &FlowField, weights: &[f64]) -> Result<Field> {
    let n = flow.height * flow.width;
    if weights.len() != n {
        return Err(Error::shape(format!("{} weights for {n} flow cells", weights.len())));
    }
    let mut stacked = Vec::with_capacity(3 * n);
    for (i, &wt) in weights.iter().enumerate() {
        let wt = wt.max(0.0);
        let (x, y) = (flow.values[2 * i] as f64, flow.values[2 * i + 1] as f64);
        stacked.extend_from_slice(&[wt * x, wt * y, wt]);
    }
    let up = bilinear_upsample(&Field::new(flow.height, flow.width, 3, stacked)?, 2)?;
    let mut plain = upsample_flow(flow)?;
    for (out, t) in plain.data.chunks_exact_mut(2).zip(up.data.chunks_exact(3)) {
        if t[2] > 1e-9 {
            out[0] = 2.0 * t[0] / t[2] + 0.5;
            out[1] = 2.0 * t[1] / t[2] + 0.5;
        }
    }
    Ok(plain)
}

/// Jacobi iterations of `r <- (1 - weight) r + weight * avg`, where `avg` is
/// the certainty-weighted mean over the 3x3 neighbourhood (cell included).
/// The update is accumulated as weighted differences to the center so a
/// constant field is reproduced exactly. Cells with no weighted neighbours
/// keep their value.
pub fn smooth_residuals(
    residual: &mut [f64],
    weights: &[f64],
    height: usize,
    width: usize,
    iters: usize,
    weight: f64,
) {
    if iters == 0 || weight == 0.0 {
        return;
    }
    let mut next = residual.to_vec();
    for _ in 0..iters {
        let cur: &[f64] = residual;
        next.par_chunks_mut(2 * width)
            .enumerate()
            .for_each(|(v, row)| {
                for u in 0..width {
                    let c = u + width * v;
                    let (rx, ry) = (cur[2 * c], cur[2 * c + 1]);
                    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
                    for vv in v.saturating_sub(1)..=(v + 1).min(height - 1) {
                        for uu in u.saturating_sub(1)..=(u + 1).min(width - 1) {
                            let n = uu + width * vv;
                            let wn = weights[n];
                            sx += wn * (cur[2 * n] - cur[2 * c]);
                            sy += wn * (cur[2 * n + 1] - cur[2 * c + 1]);
                            sw += wn;
                        }
                    }
                    if sw > 0.0 {
                        row[2 * u] = rx + weight * sx / sw;
                        row[2 * u + 1] = ry + weight * sy / sw;
                    } else {
                        row[2 * u] = rx;
                        row[2 * u + 1] = ry;
                    }
                }
            });
        residual.copy_from_slice(&next);
    }
}

/// Dense output of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutput {
    /// Full-resolution flow (level 0).
    pub flow: FlowField,
    /// Full-resolution certainty.
    pub certainty: CertaintyMap,
    /// Flow at each level, indexed by level (0..=3).
    pub levels: Vec<FlowField>,
}

/// Refines a coarse flow through levels 2, 1, 0 and upsamples the certainty.
pub fn refine_cascade(
    f_coarse: &FlowField,
    c_coarse: &CertaintyMap,
    pyr_src: &FeaturePyramid,
    pyr_tgt: &FeaturePyramid,
    cfg: &RefinementConfig,
) -> Result<CascadeOutput> {
    if f_coarse.level != COARSE_LEVEL {
        return Err(Error::invalid(format!(
            "coarse flow must be at level {COARSE_LEVEL}, got {}",
            f_coarse.level
        )));
    }
    if c_coarse.height != f_coarse.height || c_coarse.width != f_coarse.width {
        return Err(Error::shape("coarse certainty and flow shapes differ"));
    }
    cfg.validate()?;
    let mut levels = vec![f_coarse.clone()];
    let mut validity = Vec::new();
    let mut support: Vec<f64> = c_coarse.values.iter().map(|&c| c as f64).collect();
    for level in [2u8, 1, 0] {
        let prev = levels.last().unwrap();
        let src = pyr_src
            .level(level)
            .ok_or_else(|| Error::invalid(format!("source pyramid lacks level {level}")))?;
        let tgt = pyr_tgt
            .level(level)
            .ok_or_else(|| Error::invalid(format!("target pyramid lacks level {level}")))?;
        if src.height() != prev.height * 2 || src.width() != prev.width * 2 {
            return Err(Error::shape(format!("level {level} grid does not halve into the flow")));
        }
        let init = upsample_flow_weighted(prev, &support)?;
        let out = refine_from(init, src, tgt, level, cfg)?;
        let up = bilinear_upsample(&Field::new(prev.height, prev.width, 1, support)?, 2)?;
        support = up.data.iter().zip(&out.validity).map(|(s, &v)| s * v as f64).collect();
        validity.push((level, out.validity));
        levels.push(out.flow);
    }
    levels.reverse();

    let coarse = Field::new(
        c_coarse.height,
        c_coarse.width,
        1,
        c_coarse.values.iter().map(|&v| v as f64).collect(),
    )?;
    let mut certainty = bilinear_upsample(&coarse, 1 << COARSE_LEVEL)?.data;
    let (h, w) = (levels[0].height, levels[0].width);
    for (level, factors) in validity {
        let s = 1usize << level;
        let field = Field::new(h / s, w / s, 1, factors.iter().map(|&v| v as f64).collect())?;
        let up = bilinear_upsample(&field, s)?;
        for (c, f) in certainty.iter_mut().zip(up.data) {
            *c *= f;
        }
    }
    let certainty = CertaintyMap::new(
        h,
        w,
        certainty.iter().map(|&c| c.clamp(0.0, 1.0) as f32).collect(),
    )?;
    Ok(CascadeOutput {
        flow: levels[0].clone(),
        certainty,
        levels,
    })
}
