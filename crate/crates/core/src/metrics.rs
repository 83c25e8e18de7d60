//! Flow losses, match precision/recall, RANSAC homography fitting and the
//! corner-error AUC protocol.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, Matrix3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coarse::MatchSet;
use crate::error::{Error, Result};
use crate::grid::FlowField;
use crate::synth::Homography;

/// AUC thresholds in pixels.
pub const AUC_THRESHOLDS: [f64; 3] = [3.0, 5.0, 10.0];

/// Forward-difference gradient of a flow field, with backward differences
/// on the last row and column. Layout per cell: `[dx_x, dy_x, dx_y, dy_y]`,
/// where `dx_x` is the horizontal difference of the x channel.
pub fn flow_gradient(f: &FlowField) -> Result<Vec<[f64; 4]>> {
    let (h, w) = (f.height, f.width);
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("gradient needs at least a 2x2 field, got {h}x{w}")));
    }
    let mut out = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let (u0, u1) = if u + 1 < w { (u, u + 1) } else { (u - 1, u) };
            let (v0, v1) = if v + 1 < h { (v, v + 1) } else { (v - 1, v) };
            let (ax, ay) = f.get(u0, v);
            let (bx, by) = f.get(u1, v);
            let (cx, cy) = f.get(u, v0);
            let (dx, dy) = f.get(u, v1);
            out.push([bx - ax, dx - cx, by - ay, dy - cy]);
        }
    }
    Ok(out)
}

fn check_pair(f: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<()> {
    if f.height != gt.height || f.width != gt.width {
        return Err(Error::shape(format!(
            "flow {}x{} vs ground truth {}x{}",
            f.height, f.width, gt.height, gt.width
        )));
    }
    if let Some(m) = mask {
        if m.len() != f.len() {
            return Err(Error::shape(format!("mask has {} cells, flow has {}", m.len(), f.len())));
        }
    }
    Ok(())
}

#[inline]
fn selected(mask: Option<&[bool]>, i: usize) -> bool {
    mask.is_none_or(|m| m[i])
}

/// Sum of per-cell Euclidean errors over the masked cells.
pub fn loss_regression(f: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(f, gt, mask)?;
    let mut sum = 0.0;
    for i in 0..f.len() {
        if selected(mask, i) {
            let dx = f.values[2 * i] as f64 - gt.values[2 * i] as f64;
            let dy = f.values[2 * i + 1] as f64 - gt.values[2 * i + 1] as f64;
            sum += dx.hypot(dy);
        }
    }
    Ok(sum)
}

/// Sum over masked cells of `|grad f_x - grad gt_x| + |grad f_y - grad gt_y|`.
pub fn loss_gradient(f: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(f, gt, mask)?;
    let gf = flow_gradient(f)?;
    let gg = flow_gradient(gt)?;
    let mut sum = 0.0;
    for (i, (a, b)) in gf.iter().zip(&gg).enumerate() {
        if selected(mask, i) {
            sum += (a[0] - b[0]).hypot(a[1] - b[1]) + (a[2] - b[2]).hypot(a[3] - b[3]);
        }
    }
    Ok(sum)
}

/// Raw and per-cell normalized loss values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowLosses {
    pub l_r: f64,
    pub l_g: f64,
    pub l_r_norm: f64,
    pub l_g_norm: f64,
    pub cells: usize,
}

pub fn flow_losses(f: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<FlowLosses> {
    let l_r = loss_regression(f, gt, mask)?;
    let l_g = loss_gradient(f, gt, mask)?;
    let cells = mask.map_or(f.len(), |m| m.iter().filter(|&&b| b).count());
    let n = cells.max(1) as f64;
    Ok(FlowLosses {
        l_r,
        l_g,
        l_r_norm: l_r / n,
        l_g_norm: l_g / n,
        cells,
    })
}

/// Endpoint errors over masked cells.
pub fn endpoint_errors(f: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    check_pair(f, gt, mask)?;
    Ok((0..f.len())
        .filter(|&i| selected(mask, i))
        .map(|i| {
            let dx = f.values[2 * i] as f64 - gt.values[2 * i] as f64;
            let dy = f.values[2 * i + 1] as f64 - gt.values[2 * i + 1] as f64;
            dx.hypot(dy)
        })
        .collect())
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Median, averaging the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Precision and recall of predicted coarse pairs against ground truth.
/// An empty prediction has precision 1 by convention; empty ground truth
/// has recall 1.
pub fn match_pr(pred: &MatchSet, gt: &MatchSet) -> (f64, f64) {
    let gt_pairs: HashSet<(usize, usize)> = gt.pairs().into_iter().collect();
    let pred_pairs: HashSet<(usize, usize)> = pred.pairs().into_iter().collect();
    let hits = pred_pairs.intersection(&gt_pairs).count() as f64;
    let precision = if pred_pairs.is_empty() { 1.0 } else { hits / pred_pairs.len() as f64 };
    let recall = if gt_pairs.is_empty() { 1.0 } else { hits / gt_pairs.len() as f64 };
    (precision, recall)
}

/// Point correspondence `(source, target)` in pixels.
pub type Correspondence = ((f64, f64), (f64, f64));

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            inlier_threshold: 3.0,
            seed: 0,
        }
    }
}

/// Similarity transform mapping points to zero mean and mean norm sqrt(2).
fn normalizer(points: impl Iterator<Item = (f64, f64)> + Clone) -> Matrix3<f64> {
    let n = points.clone().count().max(1) as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (cx, cy) = (sx / n, sy / n);
    let d = points.map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / n;
    let s = if d > 1e-12 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform(t: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    (t[(0, 0)] * p.0 + t[(0, 2)], t[(1, 1)] * p.1 + t[(1, 2)])
}

/// Normalized direct linear transform over all given correspondences.
pub fn fit_homography_dlt(pts: &[Correspondence]) -> Result<Homography> {
    if pts.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: pts.len() });
    }
    let ts = normalizer(pts.iter().map(|c| c.0));
    let tt = normalizer(pts.iter().map(|c| c.1));
    let rows = 2 * pts.len().max(5);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, &(s, t)) in pts.iter().enumerate() {
        let (x, y) = transform(&ts, s);
        let (u, v) = transform(&tt, t);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * k, c)] = r0[c];
            a[(2 * k + 1, c)] = r1[c];
        }
    }
    // Zero rows pad minimal samples so the thin SVD yields all nine right
    // singular vectors.
    let svd = a.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::invalid("singular value decomposition failed"))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let h = vt.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let tt_inv = tt
        .try_inverse()
        .ok_or_else(|| Error::invalid("degenerate target normalization"))?;
    Homography::from_matrix(tt_inv * hn * ts)
}

fn collinear(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let scale = (b.0 - a.0).hypot(b.1 - a.1) * (c.0 - a.0).hypot(c.1 - a.1);
    cross.abs() <= 1e-6 * scale.max(1e-12)
}

fn degenerate_sample(pts: &[Correspondence], idx: &[usize]) -> bool {
    for side in 0..2 {
        let p: Vec<(f64, f64)> = idx
            .iter()
            .map(|&i| if side == 0 { pts[i].0 } else { pts[i].1 })
            .collect();
        for a in 0..4 {
            for b in a + 1..4 {
                for c in b + 1..4 {
                    if collinear(p[a], p[b], p[c]) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

fn reprojection_error(h: &Homography, c: &Correspondence) -> f64 {
    match h.apply(c.0 .0, c.0 .1) {
        Some((x, y)) => (x - c.1 .0).hypot(y - c.1 .1),
        None => f64::INFINITY,
    }
}

fn inliers(h: &Homography, pts: &[Correspondence], threshold: f64) -> Vec<bool> {
    pts.iter().map(|c| reprojection_error(h, c) <= threshold).collect()
}

/// Seeded RANSAC over minimal 4-point samples followed by a normalized DLT
/// refit on the best inlier set.
pub fn estimate_homography_ransac(
    pts: &[Correspondence],
    cfg: &RansacConfig,
) -> Result<(Homography, Vec<bool>)> {
    if pts.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: pts.len() });
    }
    if !(cfg.inlier_threshold > 0.0) {
        return Err(Error::invalid("inlier threshold must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Homography, Vec<bool>)> = None;
    let iterations = cfg.iterations.max(1);
    let mut attempts = 0;
    let mut done = 0;
    while done < iterations && attempts < 20 * iterations {
        attempts += 1;
        let idx = sample(&mut rng, pts.len(), 4).into_vec();
        if degenerate_sample(pts, &idx) {
            continue;
        }
        done += 1;
        let minimal: Vec<Correspondence> = idx.iter().map(|&i| pts[i]).collect();
        let Ok(h) = fit_homography_dlt(&minimal) else { continue };
        let mask = inliers(&h, pts, cfg.inlier_threshold);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|b| count > b.0) {
            best = Some((count, h, mask));
        }
    }
    let (_, mut h, mut mask) =
        best.ok_or_else(|| Error::invalid("every minimal sample was degenerate"))?;
    // Least-squares refits on the consensus set until it stops changing.
    for _ in 0..3 {
        let chosen: Vec<Correspondence> = pts
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(c, _)| *c)
            .collect();
        if chosen.len() < 4 {
            break;
        }
        let Ok(refit) = fit_homography_dlt(&chosen) else { break };
        let refit_mask = inliers(&refit, pts, cfg.inlier_threshold);
        if refit_mask.iter().filter(|&&b| b).count() < 4 {
            break;
        }
        h = refit;
        let unchanged = refit_mask == mask;
        mask = refit_mask;
        if unchanged {
            break;
        }
    }
    Ok((h, mask))
}

/// Image corners (pixel centers) in clockwise order from the origin.
pub fn image_corners(width: usize, height: usize) -> [(f64, f64); 4] {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
}

/// Mean displacement of the four image corners under the two homographies;
/// infinite when either fails to map a corner.
pub fn corner_error(est: &Homography, gt: &Homography, width: usize, height: usize) -> f64 {
    let mut sum = 0.0;
    for (x, y) in image_corners(width, height) {
        match (est.apply(x, y), gt.apply(x, y)) {
            (Some(a), Some(b)) if a.0.is_finite() && a.1.is_finite() => {
                sum += (a.0 - b.0).hypot(a.1 - b.1)
            }
            _ => return f64::INFINITY,
        }
    }
    sum / 4.0
}

/// Area under the cumulative error curve up to `threshold`, normalized to
/// `[0, 1]`. Errors are pooled over the dataset; infinite errors count as
/// failures.
pub fn error_auc(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() || threshold <= 0.0 {
        return 0.0;
    }
    let mut e: Vec<f64> = errors.iter().map(|&x| if x.is_nan() { f64::INFINITY } else { x }).collect();
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    let mut xs = vec![0.0];
    let mut ys = vec![0.0];
    for (k, &x) in e.iter().enumerate() {
        xs.push(x);
        ys.push((k + 1) as f64 / n);
    }
    let cut = xs.partition_point(|&x| x < threshold);
    let mut cx = xs[..cut].to_vec();
    let mut cy = ys[..cut].to_vec();
    cy.push(*cy.last().unwrap());
    cx.push(threshold);
    let area: f64 = (1..cx.len())
        .map(|k| 0.5 * (cy[k] + cy[k - 1]) * (cx[k] - cx[k - 1]))
        .sum();
    area / threshold
}

/// AUC at each threshold, keyed by the threshold in whole pixels.
pub fn corner_error_auc(errors: &[f64], thresholds: &[f64]) -> BTreeMap<String, f64> {
    thresholds
        .iter()
        .map(|&t| (format!("{t}"), error_auc(errors, t)))
        .collect()
}

/// Per-pair evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub scale: f64,
    pub theta_e: f64,
    pub scale_ratio_gt: Option<f64>,
    pub scale_ratio_est: Option<f64>,
    pub scale_ratio_error: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub epe_mean: Option<f64>,
    pub epe_median: Option<f64>,
    pub losses: FlowLosses,
    pub corner_error: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "seed,scale,theta_e,r_gt,r_est,precision,recall,epe_mean,l_r_norm,l_g_norm,corner_error";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x}"));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.scale,
            self.theta_e,
            opt(self.scale_ratio_gt),
            opt(self.scale_ratio_est),
            self.precision,
            self.recall,
            opt(self.epe_mean),
            self.losses.l_r_norm,
            self.losses.l_g_norm,
            self.corner_error
        )
    }
}

/// Relative scale-ratio error `|est - gt| / gt`.
pub fn scale_ratio_error(est: Option<f64>, gt: Option<f64>) -> Option<f64> {
    match (est, gt) {
        (Some(e), Some(g)) if g > 0.0 => Some((e - g).abs() / g),
        _ => None,
    }
}
