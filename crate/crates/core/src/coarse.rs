//! Scale-aware coarse matching.
//!
//! Row and column softmax entropies of the score matrix separate co-visible
//! patches (peaked distributions) from unmatchable ones (diffuse
//! distributions). The ratio of co-visible counts approximates the area
//! scale between the images and sets the side of a square inspection
//! window. The reverse nearest-neighbour check of the mutual-NN criterion is
//! relaxed to that window, which in the probability domain amounts to
//! max-pooling the column softmax over the source grid before the
//! dual-softmax product.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_window, maxpool_in_place, row_softmax, shannon_entropy, Axis, Matrix, ScoreMatrix};
use crate::synth::patch_center;

/// Largest inspection window side used unless configured otherwise.
pub const DEFAULT_MAX_WINDOW: usize = 9;

/// Which image's grid the reverse check is relaxed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PooledSide {
    Source,
    Target,
    None,
}

/// Entropy-based co-visibility and scale estimate for one score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CoVisibilityReport {
    pub src_shape: (usize, usize),
    pub tgt_shape: (usize, usize),
    pub entropy_src: Vec<f64>,
    pub entropy_tgt: Vec<f64>,
    pub covis_src: Vec<bool>,
    pub covis_tgt: Vec<bool>,
    pub theta_e: f64,
    /// `|covis_src| / |covis_tgt|`; `None` when either set is empty.
    pub scale_ratio: Option<f64>,
    /// Odd inspection-window side.
    pub window: usize,
    pub pooled_side: PooledSide,
}

impl CoVisibilityReport {
    pub fn is_degenerate(&self) -> bool {
        self.scale_ratio.is_none()
    }

    pub fn covisible_counts(&self) -> (usize, usize) {
        (
            self.covis_src.iter().filter(|&&c| c).count(),
            self.covis_tgt.iter().filter(|&&c| c).count(),
        )
    }
}

/// One coarse correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub src: usize,
    pub tgt: usize,
    pub confidence: f64,
}

/// Coarse matches between two patch grids.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    /// Sorted by `(src, tgt)`.
    pub matches: Vec<Match>,
    pub src_shape: (usize, usize),
    pub tgt_shape: (usize, usize),
    pub theta_m: f64,
}

impl MatchSet {
    pub fn empty(src_shape: (usize, usize), tgt_shape: (usize, usize), theta_m: f64) -> Self {
        Self {
            matches: Vec::new(),
            src_shape,
            tgt_shape,
            theta_m,
        }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.matches.iter().map(|m| (m.src, m.tgt)).collect()
    }

    /// Patch-center pixel correspondences `((u_s, v_s), (u_t, v_t))`.
    pub fn pixel_pairs(&self) -> Vec<((f64, f64), (f64, f64))> {
        self.matches
            .iter()
            .map(|m| {
                (
                    patch_center(m.src, self.src_shape),
                    patch_center(m.tgt, self.tgt_shape),
                )
            })
            .collect()
    }
}

/// Smallest odd integer not below `sqrt(max(r, 1/r))`, clamped to `[1, max_window]`.
pub fn window_for_ratio(ratio: f64, max_window: usize) -> usize {
    let r = ratio.max(1.0 / ratio);
    let side = (r.sqrt() - 1e-9).ceil().max(1.0) as usize;
    let odd = if side % 2 == 0 { side + 1 } else { side };
    let cap = if max_window % 2 == 0 { max_window.saturating_sub(1) } else { max_window };
    odd.min(cap.max(1))
}

/// Entropy gate and scale estimate with the default window clamp.
pub fn covisibility_report(scores: &ScoreMatrix, theta_e: f64) -> Result<CoVisibilityReport> {
    covisibility_report_with(scores, theta_e, DEFAULT_MAX_WINDOW)
}

pub fn covisibility_report_with(
    scores: &ScoreMatrix,
    theta_e: f64,
    max_window: usize,
) -> Result<CoVisibilityReport> {
    if !(theta_e > 0.0) {
        return Err(Error::invalid(format!("theta_e must be positive, got {theta_e}")));
    }
    if max_window == 0 {
        return Err(Error::invalid("window clamp must be at least 1"));
    }
    let rows = row_softmax(&scores.scores, Axis::Rows);
    let cols = row_softmax(&scores.scores, Axis::Cols);
    let entropy_src: Vec<f64> = (0..rows.rows())
        .into_par_iter()
        .map(|i| shannon_entropy(rows.row(i)))
        .collect();
    let entropy_tgt = column_entropies(&cols);
    let covis_src: Vec<bool> = entropy_src.iter().map(|&e| e < theta_e).collect();
    let covis_tgt: Vec<bool> = entropy_tgt.iter().map(|&e| e < theta_e).collect();
    let ns = covis_src.iter().filter(|&&c| c).count();
    let nt = covis_tgt.iter().filter(|&&c| c).count();
    let scale_ratio = (ns > 0 && nt > 0).then(|| ns as f64 / nt as f64);
    let (window, pooled_side) = match scale_ratio {
        None => (1, PooledSide::None),
        Some(r) => {
            let w = window_for_ratio(r, max_window);
            let side = if w == 1 {
                PooledSide::None
            } else if r >= 1.0 {
                PooledSide::Source
            } else {
                PooledSide::Target
            };
            (w, side)
        }
    };
    Ok(CoVisibilityReport {
        src_shape: scores.src_shape,
        tgt_shape: scores.tgt_shape,
        entropy_src,
        entropy_tgt,
        covis_src,
        covis_tgt,
        theta_e,
        scale_ratio,
        window,
        pooled_side,
    })
}

fn column_entropies(cols: &Matrix) -> Vec<f64> {
    let mut h = vec![0.0; cols.cols()];
    for r in 0..cols.rows() {
        for (acc, &p) in h.iter_mut().zip(cols.row(r)) {
            if p > 0.0 {
                *acc -= p * p.ln();
            }
        }
    }
    h.iter_mut().for_each(|v| *v = v.max(0.0));
    h
}

/// Standard dual-softmax: `softmax(S(i,.))_j * softmax(S(.,j))_i`.
pub fn dual_softmax(scores: &ScoreMatrix) -> Matrix {
    let rows = row_softmax(&scores.scores, Axis::Rows);
    let cols = row_softmax(&scores.scores, Axis::Cols);
    product(rows, &cols)
}

fn product(mut a: Matrix, b: &Matrix) -> Matrix {
    a.as_mut_slice()
        .par_iter_mut()
        .zip(b.as_slice().par_iter())
        .for_each(|(x, y)| *x *= *y);
    a
}

/// Dual-softmax with the column factor max-pooled over the source grid (or
/// the row factor over the target grid when the target is the larger-scale
/// image). A window of 1 reproduces [`dual_softmax`] exactly.
pub fn amnn_probability(scores: &ScoreMatrix, report: &CoVisibilityReport) -> Result<Matrix> {
    check_report(scores, report)?;
    check_window(report.window)?;
    let rows = row_softmax(&scores.scores, Axis::Rows);
    let cols = row_softmax(&scores.scores, Axis::Cols);
    if report.window == 1 || report.pooled_side == PooledSide::None {
        return Ok(product(rows, &cols));
    }
    match report.pooled_side {
        PooledSide::Source => {
            let pooled = pool_rows_over_grid(&cols, scores.src_shape, report.window);
            Ok(product(rows, &pooled))
        }
        PooledSide::Target => {
            let mut pooled = rows;
            let (h, w) = scores.tgt_shape;
            let window = report.window;
            pooled
                .as_mut_slice()
                .par_chunks_mut(h * w)
                .for_each_init(Vec::new, |scratch, row| {
                    maxpool_in_place(row, h, w, window, scratch);
                });
            Ok(product(pooled, &cols))
        }
        PooledSide::None => unreachable!(),
    }
}

fn check_report(scores: &ScoreMatrix, report: &CoVisibilityReport) -> Result<()> {
    if report.src_shape != scores.src_shape
        || report.tgt_shape != scores.tgt_shape
        || report.covis_src.len() != scores.n_src()
        || report.covis_tgt.len() != scores.n_tgt()
    {
        return Err(Error::shape(format!(
            "report for {:?} -> {:?} does not fit scores {:?} -> {:?}",
            report.src_shape, report.tgt_shape, scores.src_shape, scores.tgt_shape
        )));
    }
    Ok(())
}

/// For every source cell `i`, the elementwise max of rows `i'` within the
/// `window x window` neighbourhood of `i` on the source grid.
fn pool_rows_over_grid(m: &Matrix, shape: (usize, usize), window: usize) -> Matrix {
    let (h, w) = shape;
    let n = m.cols();
    let r = window / 2;
    let mut horiz = Matrix::zeros(m.rows(), n);
    horiz
        .as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out)| {
            let (u, v) = (i % w, i / w);
            out.copy_from_slice(m.row(i));
            for uu in u.saturating_sub(r)..=(u + r).min(w - 1) {
                if uu != u {
                    max_into(out, m.row(uu + w * v));
                }
            }
        });
    let mut out = Matrix::zeros(m.rows(), n);
    out.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, dst)| {
            let (u, v) = (i % w, i / w);
            dst.copy_from_slice(horiz.row(i));
            for vv in v.saturating_sub(r)..=(v + r).min(h - 1) {
                if vv != v {
                    max_into(dst, horiz.row(u + w * vv));
                }
            }
        });
    out
}

#[inline]
fn max_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        if s > *d {
            *d = s;
        }
    }
}

/// Row-wise argmax of the raw scores (ties to the lowest index).
pub fn nearest_src_to_tgt(scores: &Matrix) -> Vec<usize> {
    (0..scores.rows())
        .into_par_iter()
        .map(|i| argmax(scores.row(i)))
        .collect()
}

/// Column-wise argmax of the raw scores (ties to the lowest index).
pub fn nearest_tgt_to_src(scores: &Matrix) -> Vec<usize> {
    let mut best = vec![0usize; scores.cols()];
    let mut val = vec![f64::NEG_INFINITY; scores.cols()];
    for i in 0..scores.rows() {
        for (j, &s) in scores.row(i).iter().enumerate() {
            if s > val[j] {
                val[j] = s;
                best[j] = i;
            }
        }
    }
    best
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Chebyshev window membership of two cells of a grid with `width` columns.
#[inline]
pub fn within_window(a: usize, b: usize, width: usize, window: usize) -> bool {
    let r = (window / 2) as i64;
    let (au, av) = ((a % width) as i64, (a / width) as i64);
    let (bu, bv) = ((b % width) as i64, (b / width) as i64);
    (au - bu).abs() <= r && (av - bv).abs() <= r
}

/// Adaptive mutual-nearest-neighbour selection.
///
/// With source-side pooling, patch `i` is matched to its raw-score nearest
/// neighbour `j` when the reverse nearest neighbour of `j` lies in the
/// inspection window around `i` and `p_c(i, j) >= theta_m`; each source
/// patch gets at most one match while a target patch may collect several.
/// Target-side pooling mirrors the construction (one match per target
/// patch). Degenerate reports yield no matches.
pub fn select_matches(
    scores: &ScoreMatrix,
    p_c: &Matrix,
    report: &CoVisibilityReport,
    theta_m: f64,
) -> Result<MatchSet> {
    check_report(scores, report)?;
    check_threshold(theta_m)?;
    if p_c.rows() != scores.n_src() || p_c.cols() != scores.n_tgt() {
        return Err(Error::shape("probability matrix does not match the scores"));
    }
    let mut out = MatchSet::empty(scores.src_shape, scores.tgt_shape, theta_m);
    if report.is_degenerate() {
        return Ok(out);
    }
    let nn_s = nearest_src_to_tgt(&scores.scores);
    let nn_t = nearest_tgt_to_src(&scores.scores);
    let window = report.window;
    match report.pooled_side {
        PooledSide::Source | PooledSide::None => {
            let width = scores.src_shape.1;
            for (i, &j) in nn_s.iter().enumerate() {
                let p = p_c.get(i, j);
                if within_window(nn_t[j], i, width, window) && p >= theta_m {
                    out.matches.push(Match { src: i, tgt: j, confidence: p });
                }
            }
        }
        PooledSide::Target => {
            let width = scores.tgt_shape.1;
            for (j, &i) in nn_t.iter().enumerate() {
                let p = p_c.get(i, j);
                if within_window(nn_s[i], j, width, window) && p >= theta_m {
                    out.matches.push(Match { src: i, tgt: j, confidence: p });
                }
            }
            out.matches.sort_by_key(|m| (m.src, m.tgt));
        }
    }
    Ok(out)
}

fn check_threshold(theta_m: f64) -> Result<()> {
    if !(theta_m > 0.0 && theta_m < 1.0) {
        return Err(Error::invalid(format!("theta_m must lie in (0, 1), got {theta_m}")));
    }
    Ok(())
}

/// Baseline: standard dual-softmax with strict mutual nearest neighbours.
pub fn mnn_baseline(scores: &ScoreMatrix, theta_m: f64) -> Result<(Matrix, MatchSet)> {
    check_threshold(theta_m)?;
    let p = dual_softmax(scores);
    let nn_s = nearest_src_to_tgt(&scores.scores);
    let nn_t = nearest_tgt_to_src(&scores.scores);
    let mut out = MatchSet::empty(scores.src_shape, scores.tgt_shape, theta_m);
    for (i, &j) in nn_s.iter().enumerate() {
        let conf = p.get(i, j);
        if nn_t[j] == i && conf >= theta_m {
            out.matches.push(Match { src: i, tgt: j, confidence: conf });
        }
    }
    Ok((p, out))
}
