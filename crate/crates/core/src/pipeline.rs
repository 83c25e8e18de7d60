//! End-to-end matching: descriptors, coarse matching, flow refinement and
//! homography fitting on the resulting correspondences.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coarse::{
    amnn_probability, covisibility_report_with, mnn_baseline, select_matches, CoVisibilityReport,
    MatchSet, DEFAULT_MAX_WINDOW,
};
use crate::error::{Error, Result};
use crate::features::{correlate, extract_pyramid_scaled, FeatureConfig, FeaturePyramid};
use crate::flow::{init_coarse_flow, refine_cascade, relative_scale, CascadeOutput, RefinementConfig};
use crate::grid::{CertaintyMap, FlowField, Matrix, ScoreMatrix};
use crate::image::GrayImage;
use crate::metrics::{self, estimate_homography_ransac, Correspondence, EvalReport, RansacConfig};
use crate::synth::{in_bounds, GroundTruth, Homography, COARSE_LEVEL};

/// Coarse matching strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    Amnn,
    Mnn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub temperature: f64,
    pub theta_e: f64,
    pub theta_m: f64,
    pub max_window: usize,
    pub matcher: Matcher,
    pub features: FeatureConfig,
    pub refinement: RefinementConfig,
    pub ransac: RansacConfig,
    /// Pixel stride when sampling correspondences from the dense flow.
    pub sample_stride: usize,
    /// Minimum certainty of a sampled correspondence.
    pub min_certainty: f64,
    /// Minimum source and target separation, in pixels, of the match pairs
    /// voting for the relative scale.
    pub scale_min_separation: f64,
    /// Votes needed before the match geometry overrides the entropy ratio.
    pub scale_min_pairs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            theta_e: 2.0,
            theta_m: 0.2,
            max_window: DEFAULT_MAX_WINDOW,
            matcher: Matcher::Amnn,
            features: FeatureConfig::default(),
            refinement: RefinementConfig::default(),
            ransac: RansacConfig::default(),
            sample_stride: 4,
            min_certainty: 0.2,
            scale_min_separation: 32.0,
            scale_min_pairs: 50,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.theta_e > 0.0 && self.theta_e.is_finite()) {
            return Err(Error::invalid(format!("theta_e must be positive, got {}", self.theta_e)));
        }
        if !(self.theta_m > 0.0 && self.theta_m < 1.0) {
            return Err(Error::invalid(format!("theta_m must lie in (0, 1), got {}", self.theta_m)));
        }
        if self.max_window == 0 {
            return Err(Error::invalid("window clamp must be at least 1"));
        }
        if self.sample_stride == 0 {
            return Err(Error::invalid("sample stride must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.min_certainty) {
            return Err(Error::invalid("minimum certainty must lie in [0, 1)"));
        }
        if !(self.scale_min_separation >= 0.0 && self.scale_min_separation.is_finite()) {
            return Err(Error::invalid("scale vote separation must be non-negative"));
        }
        self.features.validate()?;
        self.refinement.validate()
    }
}

/// Wall-clock durations of the stages, in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub features: f64,
    pub coarse: f64,
    pub refinement: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: CoVisibilityReport,
    pub p_c: Matrix,
    pub matches: MatchSet,
    pub coarse_flow: FlowField,
    pub coarse_certainty: CertaintyMap,
    /// Length scale of the source relative to the target used to size the
    /// fine descriptor windows.
    pub relative_scale: f64,
    pub cascade: CascadeOutput,
    pub timings: Timings,
}

fn pyramid(image: &GrayImage, cfg: &FeatureConfig, levels: &[u8], window_scale: f64) -> Result<FeaturePyramid> {
    let cfg = FeatureConfig { levels: levels.to_vec(), ..cfg.clone() };
    extract_pyramid_scaled(&image.to_f64(), image.width(), image.height(), &cfg, window_scale)
}

/// Relative scale from the match geometry, else from the entropy ratio,
/// else 1.
fn scale_estimate(matches: &MatchSet, report: &CoVisibilityReport, cfg: &PipelineConfig) -> f64 {
    relative_scale(matches, cfg.scale_min_separation, cfg.scale_min_pairs)
        .or_else(|| report.scale_ratio.map(f64::sqrt))
        .unwrap_or(1.0)
}

/// Temperature-scaled coarse score matrix of a pair.
pub fn coarse_scores(a: &GrayImage, b: &GrayImage, cfg: &PipelineConfig) -> Result<ScoreMatrix> {
    cfg.validate()?;
    let levels = [COARSE_LEVEL];
    let (pa, pb) = rayon::join(
        || pyramid(a, &cfg.features, &levels, 1.0),
        || pyramid(b, &cfg.features, &levels, 1.0),
    );
    let (pa, pb) = (pa?, pb?);
    correlate(pa.coarse()?, pb.coarse()?, cfg.temperature)
}

/// Co-visibility report, matching probability and coarse matches for the
/// configured matcher.
pub fn coarse_match(scores: &ScoreMatrix, cfg: &PipelineConfig) -> Result<(CoVisibilityReport, Matrix, MatchSet)> {
    let report = covisibility_report_with(scores, cfg.theta_e, cfg.max_window)?;
    let (p_c, matches) = match cfg.matcher {
        Matcher::Amnn => {
            let p = amnn_probability(scores, &report)?;
            let m = select_matches(scores, &p, &report, cfg.theta_m)?;
            (p, m)
        }
        Matcher::Mnn => mnn_baseline(scores, cfg.theta_m)?,
    };
    Ok((report, p_c, matches))
}

/// Runs the matcher on an image pair of equal or different sizes.
pub fn run_pipeline(a: &GrayImage, b: &GrayImage, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let start = Instant::now();
    let scores = coarse_scores(a, b, cfg)?;
    let t_coarse_features = start.elapsed().as_secs_f64();

    let (report, p_c, matches) = coarse_match(&scores, cfg)?;
    let (coarse_flow, coarse_certainty) =
        init_coarse_flow(&p_c, &matches, scores.src_shape, scores.tgt_shape)?;
    let t_coarse = start.elapsed().as_secs_f64() - t_coarse_features;

    // The larger-scale image gets proportionally larger fine windows.
    let scale = scale_estimate(&matches, &report, cfg);
    let fine_levels = [0, 1, 2];
    let (fa, fb) = rayon::join(
        || pyramid(a, &cfg.features, &fine_levels, scale.max(1.0)),
        || pyramid(b, &cfg.features, &fine_levels, (1.0 / scale).max(1.0)),
    );
    let (fa, fb) = (fa?, fb?);
    let t_fine_features = start.elapsed().as_secs_f64() - t_coarse_features - t_coarse;

    let cascade = refine_cascade(&coarse_flow, &coarse_certainty, &fa, &fb, &cfg.refinement)?;
    let total = start.elapsed().as_secs_f64();
    let features = t_coarse_features + t_fine_features;
    Ok(PipelineOutput {
        report,
        p_c,
        matches,
        coarse_flow,
        coarse_certainty,
        relative_scale: scale,
        cascade,
        timings: Timings {
            features,
            coarse: t_coarse,
            refinement: total - features - t_coarse,
            total,
        },
    })
}

/// Certain correspondences sampled on a regular pixel grid of the dense flow.
pub fn sample_correspondences(
    flow: &FlowField,
    certainty: &CertaintyMap,
    target_size: (usize, usize),
    stride: usize,
    min_certainty: f64,
) -> Vec<Correspondence> {
    let stride = stride.max(1);
    let offset = stride / 2;
    let mut out = Vec::new();
    for v in (offset..flow.height).step_by(stride) {
        for u in (offset..flow.width).step_by(stride) {
            if certainty.get(u, v) <= min_certainty {
                continue;
            }
            let (x, y) = flow.get(u, v);
            if in_bounds(x, y, target_size.0, target_size.1) {
                out.push(((u as f64, v as f64), (x, y)));
            }
        }
    }
    out
}

/// Fits the source-to-target homography to the dense output, falling back
/// to coarse patch centers when too few certain pixels remain. `None` when
/// fewer than four correspondences are available or the fit fails.
pub fn estimate_homography(
    out: &PipelineOutput,
    target_size: (usize, usize),
    cfg: &PipelineConfig,
) -> Option<Homography> {
    estimate_homography_from(&out.cascade.flow, &out.cascade.certainty, &out.matches, target_size, cfg)
}

pub fn estimate_homography_from(
    flow: &FlowField,
    certainty: &CertaintyMap,
    matches: &MatchSet,
    target_size: (usize, usize),
    cfg: &PipelineConfig,
) -> Option<Homography> {
    let mut pts = sample_correspondences(flow, certainty, target_size, cfg.sample_stride, cfg.min_certainty);
    if pts.len() < 4 {
        pts = matches.pixel_pairs();
    }
    estimate_homography_ransac(&pts, &cfg.ransac).ok().map(|(h, _)| h)
}

/// The parts of a matcher run that evaluation reads; all of them survive a
/// round trip through the on-disk formats.
#[derive(Debug, Clone, Copy)]
pub struct Outcome<'a> {
    pub matches: &'a MatchSet,
    pub flow: &'a FlowField,
    pub certainty: &'a CertaintyMap,
    pub scale_ratio: Option<f64>,
}

impl<'a> From<&'a PipelineOutput> for Outcome<'a> {
    fn from(out: &'a PipelineOutput) -> Self {
        Self {
            matches: &out.matches,
            flow: &out.cascade.flow,
            certainty: &out.cascade.certainty,
            scale_ratio: out.report.scale_ratio,
        }
    }
}

/// Scores one outcome against ground truth. EPE is taken over pixels more
/// certain than `cfg.min_certainty`, the flow losses over every pixel whose
/// GT correspondence lands inside B. A failed homography fit counts as an
/// infinite corner error.
pub fn evaluate(
    outcome: Outcome<'_>,
    h_ab: &Homography,
    gt: &GroundTruth,
    seed: u64,
    scale: f64,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    let gt0 = &gt.flow_gt[0];
    let (w, h) = (gt0.width, gt0.height);
    let certain: Vec<bool> =
        outcome.certainty.values.iter().map(|&c| c as f64 > cfg.min_certainty).collect();
    let covisible: Vec<bool> = (0..gt0.len())
        .map(|i| {
            let (x, y) = gt0.get(i % w, i / w);
            in_bounds(x, y, w, h)
        })
        .collect();
    let errors = metrics::endpoint_errors(outcome.flow, gt0, Some(&certain))?;
    let losses = metrics::flow_losses(outcome.flow, gt0, Some(&covisible))?;
    let (precision, recall) = metrics::match_pr(outcome.matches, &gt.matches_gt);
    let corner_error =
        estimate_homography_from(outcome.flow, outcome.certainty, outcome.matches, (w, h), cfg)
            .map_or(f64::INFINITY, |est| metrics::corner_error(&est, h_ab, w, h));
    Ok(EvalReport {
        seed,
        scale,
        theta_e: cfg.theta_e,
        scale_ratio_gt: gt.scale_ratio_gt(),
        scale_ratio_est: outcome.scale_ratio,
        scale_ratio_error: metrics::scale_ratio_error(outcome.scale_ratio, gt.scale_ratio_gt()),
        precision,
        recall,
        epe_mean: metrics::mean(&errors),
        epe_median: metrics::median(&errors),
        losses,
        corner_error,
    })
}

/// Median endpoint error of each cascade level, indexed by level, over the
/// full-resolution pixels more certain than `min_certainty`. Each pixel reads
/// the flow of the level-`l` cell containing it; errors are in level-0 pixels.
pub fn level_epes(cascade: &CascadeOutput, gt: &GroundTruth, min_certainty: f64) -> Result<Vec<Option<f64>>> {
    let c = &cascade.certainty;
    cascade
        .levels
        .iter()
        .enumerate()
        .map(|(l, f)| {
            let g = gt
                .flow_gt
                .get(l)
                .ok_or_else(|| Error::shape(format!("no ground truth at level {l}")))?;
            if (f.width, f.height) != (g.width, g.height) {
                return Err(Error::shape(format!("level {l} flow does not match ground truth")));
            }
            let unit = (1u32 << l) as f64;
            let mut errs = Vec::new();
            for v in 0..c.height {
                for u in 0..c.width {
                    if c.get(u, v) <= min_certainty {
                        continue;
                    }
                    let (cu, cv) = ((u >> l).min(f.width - 1), (v >> l).min(f.height - 1));
                    let (a, b) = (f.get(cu, cv), g.get(cu, cv));
                    errs.push((a.0 - b.0).hypot(a.1 - b.1) * unit);
                }
            }
            Ok(metrics::median(&errs))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::corner_error;
    use crate::synth::{generate_scene, SceneSpec};

    #[test]
    fn identity_pair_end_to_end() {
        let pair = generate_scene(3, &SceneSpec::default()).unwrap();
        let cfg = PipelineConfig::default();
        let out = run_pipeline(&pair.image_a, &pair.image_b, &cfg).unwrap();
        let r = out.report.scale_ratio.unwrap();
        assert!((r - 1.0).abs() < 0.15, "ratio {r}");
        assert_eq!(out.report.window, 1);
        assert!(out.matches.len() > 768, "{} matches", out.matches.len());
        assert!(out.matches.matches.iter().all(|m| m.src == m.tgt));
        assert!((out.relative_scale - 1.0).abs() < 0.05);
        let h = estimate_homography(&out, (256, 256), &cfg).unwrap();
        assert!(corner_error(&h, &pair.h_ab, 256, 256) < 1.0);
    }

    #[test]
    fn rejects_bad_config() {
        let img = GrayImage::new(16, 16, vec![7; 256]).unwrap();
        let cfg = PipelineConfig { theta_m: 1.0, ..Default::default() };
        assert!(run_pipeline(&img, &img, &cfg).is_err());
        let odd = GrayImage::new(12, 16, vec![7; 192]).unwrap();
        assert!(run_pipeline(&odd, &img, &PipelineConfig::default()).is_err());
    }

    #[test]
    fn evaluation_of_identity_pair() {
        let pair = generate_scene(5, &SceneSpec::default()).unwrap();
        let gt = GroundTruth::from_pair(&pair).unwrap();
        let cfg = PipelineConfig::default();
        let out = run_pipeline(&pair.image_a, &pair.image_b, &cfg).unwrap();
        let r = evaluate((&out).into(), &pair.h_ab, &gt, 5, 1.0, &cfg).unwrap();
        assert!(r.precision > 0.99 && r.recall > 0.7, "{r:?}");
        assert!(r.epe_median.unwrap() < 0.5);
        assert!(r.corner_error < 1.0);
        assert_eq!(r.scale_ratio_gt, Some(1.0));
        let lv = level_epes(&out.cascade, &gt, cfg.min_certainty).unwrap();
        assert_eq!(lv.len(), 4);
        assert!(lv.iter().all(|e| e.unwrap() < 1.0), "{lv:?}");
    }

    #[test]
    fn flat_pair_is_degenerate_but_valid() {
        let img = GrayImage::new(64, 64, vec![90; 4096]).unwrap();
        let out = run_pipeline(&img, &img, &PipelineConfig::default()).unwrap();
        assert!(out.report.is_degenerate());
        assert!(out.matches.is_empty());
        assert!(out.cascade.certainty.values.iter().all(|&c| c == 0.0));
    }
}
