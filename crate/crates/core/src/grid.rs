//! Dense grid containers and the numerical kernels shared by the pipeline:
//! softmax, entropy, spatial max-pooling and bilinear interpolation.
//!
//! Coordinate convention: cell `(u, v)` of a grid has its center at the
//! continuous point `(u, v)`; `u` indexes columns, `v` rows. Flattened
//! indices are row-major, `i = u + width * v`.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row/column selector for [`row_softmax`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Normalize each row.
    Rows,
    /// Normalize each column.
    Cols,
}

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Grid of unit-norm descriptors. Cells whose raw descriptor was zero (or
/// explicitly marked invalid) hold the zero vector and `valid = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

const ZERO_NORM: f64 = 1e-12;

impl FeatureGrid {
    /// Builds a grid from raw descriptors, L2-normalizing each one.
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let valid = vec![true; height * width];
        Self::with_validity(height, width, dim, data, valid)
    }

    /// Like [`FeatureGrid::new`], with cells forced invalid where `valid` is false.
    pub fn with_validity(
        height: usize,
        width: usize,
        dim: usize,
        mut data: Vec<f64>,
        mut valid: Vec<bool>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "feature grid dimensions must be positive, got {height}x{width}x{dim}"
            )));
        }
        if data.len() != height * width * dim || valid.len() != height * width {
            return Err(Error::shape(format!(
                "feature grid {height}x{width}x{dim}: got {} values and {} flags",
                data.len(),
                valid.len()
            )));
        }
        for (desc, ok) in data.chunks_mut(dim).zip(valid.iter_mut()) {
            let norm = desc.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !*ok || !norm.is_finite() || norm < ZERO_NORM {
                desc.iter_mut().for_each(|x| *x = 0.0);
                *ok = false;
            } else {
                desc.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn descriptor(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> &[f64] {
        self.descriptor(u + self.width * v)
    }

    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Bilinear blend of the descriptors around `(x, y)`, renormalized.
    ///
    /// Corners outside the grid contribute nothing. Returns `None` when the
    /// point's support lies fully outside the grid or the blend vanishes.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(x, y, &mut out).then_some(out)
    }

    /// Allocation-free form of [`FeatureGrid::bilinear_sample`].
    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        debug_assert_eq!(out.len(), self.dim);
        out.iter_mut().for_each(|o| *o = 0.0);
        if !(x.is_finite() && y.is_finite()) {
            return false;
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if x <= -1.0 || y <= -1.0 || x >= w || y >= h {
            return false;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let corners = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ];
        for (cx, cy, wgt) in corners {
            if wgt == 0.0
                || cx < 0
                || cy < 0
                || cx >= self.width as i64
                || cy >= self.height as i64
            {
                continue;
            }
            let desc = self.descriptor(cx as usize + self.width * cy as usize);
            for (o, d) in out.iter_mut().zip(desc) {
                *o += wgt * d;
            }
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < ZERO_NORM {
            return false;
        }
        out.iter_mut().for_each(|o| *o /= norm);
        true
    }
}

/// Similarity scores between two flattened grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub src_shape: (usize, usize),
    pub tgt_shape: (usize, usize),
    pub scores: Matrix,
    pub temperature: f64,
}

impl ScoreMatrix {
    pub fn new(
        src_shape: (usize, usize),
        tgt_shape: (usize, usize),
        scores: Matrix,
        temperature: f64,
    ) -> Result<Self> {
        if scores.rows() != src_shape.0 * src_shape.1 || scores.cols() != tgt_shape.0 * tgt_shape.1
        {
            return Err(Error::shape(format!(
                "score matrix {}x{} does not fit grids {:?} -> {:?}",
                scores.rows(),
                scores.cols(),
                src_shape,
                tgt_shape
            )));
        }
        if !(temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self {
            src_shape,
            tgt_shape,
            scores,
            temperature,
        })
    }

    pub fn n_src(&self) -> usize {
        self.scores.rows()
    }

    pub fn n_tgt(&self) -> usize {
        self.scores.cols()
    }
}

/// Multi-channel real grid, channel-interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "field {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> f64 {
        self.data[(u + self.width * v) * self.channels + c]
    }
}

/// Dense per-cell target coordinates at one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub level: u8,
    /// Interleaved `(x, y)` pairs, row-major.
    pub values: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, level: u8, values: Vec<f32>) -> Result<Self> {
        if values.len() != 2 * height * width {
            return Err(Error::shape(format!(
                "flow {height}x{width} needs {} values, got {}",
                2 * height * width,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            level,
            values,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        level: u8,
        f: impl Fn(usize, usize) -> (f64, f64),
    ) -> Self {
        let mut values = Vec::with_capacity(2 * height * width);
        for v in 0..height {
            for u in 0..width {
                let (x, y) = f(u, v);
                values.push(x as f32);
                values.push(y as f32);
            }
        }
        Self {
            height,
            width,
            level,
            values,
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> (f64, f64) {
        let k = 2 * (u + self.width * v);
        (self.values[k] as f64, self.values[k + 1] as f64)
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, x: f64, y: f64) {
        let k = 2 * (u + self.width * v);
        self.values[k] = x as f32;
        self.values[k + 1] = y as f32;
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_field(&self) -> Field {
        Field {
            height: self.height,
            width: self.width,
            channels: 2,
            data: self.values.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Per-cell matchability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertaintyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl CertaintyMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "certainty {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("certainty value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[u + self.width * v] as f64
    }
}

/// Softmax of every row (or column) with max subtraction.
pub fn row_softmax(matrix: &Matrix, axis: Axis) -> Matrix {
    match axis {
        Axis::Rows => {
            let mut out = matrix.clone();
            let cols = out.cols;
            if cols > 0 {
                out.data.par_chunks_mut(cols).for_each(softmax_in_place);
            }
            out
        }
        Axis::Cols => column_softmax(matrix),
    }
}

fn column_softmax(matrix: &Matrix) -> Matrix {
    let (rows, cols) = (matrix.rows, matrix.cols);
    let mut max = vec![f64::NEG_INFINITY; cols];
    for r in 0..rows {
        for (m, &x) in max.iter_mut().zip(matrix.row(r)) {
            if x > *m {
                *m = x;
            }
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    let mut sum = vec![0.0; cols];
    for r in 0..rows {
        let src = matrix.row(r);
        let dst = &mut out.data[r * cols..(r + 1) * cols];
        for c in 0..cols {
            let e = (src[c] - max[c]).exp();
            dst[c] = e;
            sum[c] += e;
        }
    }
    out.data.par_chunks_mut(cols.max(1)).for_each(|row| {
        for (x, s) in row.iter_mut().zip(&sum) {
            *x /= s;
        }
    });
    out
}

/// In-place softmax of one slice.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.ln())
        .sum();
    h.max(0.0)
}

/// Windowed spatial max over an `height x width` grid. Cells outside the grid
/// are ignored.
pub fn spatial_maxpool(values: &[f64], height: usize, width: usize, window: usize) -> Result<Vec<f64>> {
    check_window(window)?;
    if values.len() != height * width {
        return Err(Error::shape(format!(
            "grid {height}x{width} needs {} values, got {}",
            height * width,
            values.len()
        )));
    }
    let mut out = values.to_vec();
    maxpool_in_place(&mut out, height, width, window, &mut Vec::new());
    Ok(out)
}

pub(crate) fn check_window(window: usize) -> Result<()> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "pooling window must be odd and positive, got {window}"
        )));
    }
    Ok(())
}

/// Separable max-pool; `scratch` is reused across calls.
pub(crate) fn maxpool_in_place(
    values: &mut [f64],
    height: usize,
    width: usize,
    window: usize,
    scratch: &mut Vec<f64>,
) {
    if window == 1 {
        return;
    }
    let r = window / 2;
    scratch.clear();
    scratch.extend_from_slice(values);
    for v in 0..height {
        let row = &scratch[v * width..(v + 1) * width];
        for u in 0..width {
            let lo = u.saturating_sub(r);
            let hi = (u + r).min(width - 1);
            values[v * width + u] = row[lo..=hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    scratch.copy_from_slice(values);
    for v in 0..height {
        let lo = v.saturating_sub(r);
        let hi = (v + r).min(height - 1);
        for u in 0..width {
            let mut m = f64::NEG_INFINITY;
            for vv in lo..=hi {
                m = m.max(scratch[vv * width + u]);
            }
            values[v * width + u] = m;
        }
    }
}

/// Align-corners-false bilinear upsampling by an integer factor. Sample
/// positions outside the source grid are clamped to its border.
pub fn bilinear_upsample(grid: &Field, factor: usize) -> Result<Field> {
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let (h, w, k) = (grid.height, grid.width, grid.channels);
    let (oh, ow) = (h * factor, w * factor);
    let taps = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(ow, w);
    let ys = taps(oh, h);
    let mut data = vec![0.0; oh * ow * k];
    data.par_chunks_mut(ow * k).enumerate().for_each(|(oy, row)| {
        let (y0, y1, fy) = ys[oy];
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..k {
                let a = grid.get(x0, y0, c);
                let b = grid.get(x1, y0, c);
                let cc = grid.get(x0, y1, c);
                let d = grid.get(x1, y1, c);
                let top = a + (b - a) * fx;
                let bot = cc + (d - cc) * fx;
                row[ox * k + c] = top + (bot - top) * fy;
            }
        }
    });
    Field::new(oh, ow, k, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_maxpool(values: &[f64], h: usize, w: usize, window: usize) -> Vec<f64> {
        let r = (window / 2) as i64;
        let mut out = vec![0.0; h * w];
        for v in 0..h as i64 {
            for u in 0..w as i64 {
                let mut m = f64::NEG_INFINITY;
                for dv in -r..=r {
                    for du in -r..=r {
                        let (uu, vv) = (u + du, v + dv);
                        if uu >= 0 && vv >= 0 && uu < w as i64 && vv < h as i64 {
                            m = m.max(values[(vv * w as i64 + uu) as usize]);
                        }
                    }
                }
                out[(v * w as i64 + u) as usize] = m;
            }
        }
        out
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_vec(2, 2, vec![0.0, 0.0, 3f64.ln(), 0.0]).unwrap();
        let p = row_softmax(&m, Axis::Rows);
        assert!((p.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((p.get(1, 0) - 0.75).abs() < 1e-12);
        assert!((p.get(1, 1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_and_cols_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..9).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = Matrix::from_vec(3, 3, data).unwrap();
        let rows = row_softmax(&m, Axis::Rows);
        for r in 0..3 {
            assert!((rows.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let cols = row_softmax(&m, Axis::Cols);
        for c in 0..3 {
            assert!((cols.column(c).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_huge_scores() {
        let m = Matrix::from_vec(1, 2, vec![1000.0, 1000.0]).unwrap();
        let p = row_softmax(&m, Axis::Rows);
        assert_eq!(p.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(shannon_entropy(&[1.0, 0.0, 0.0, 0.0]), 0.0);
        assert!((shannon_entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
        assert!((shannon_entropy(&[0.5, 0.5, 0.0, 0.0]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn maxpool_rejects_even_window() {
        assert!(spatial_maxpool(&[0.0; 4], 2, 2, 2).is_err());
        assert!(spatial_maxpool(&[0.0; 4], 2, 2, 0).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let grid: Vec<f64> = (0..9).map(|i| i as f64).collect();
        assert_eq!(spatial_maxpool(&grid, 3, 3, 1).unwrap(), grid);
        let mut peak = vec![0.0; 9];
        peak[4] = 7.0;
        assert_eq!(spatial_maxpool(&peak, 3, 3, 3).unwrap(), vec![7.0; 9]);
    }

    #[test]
    fn maxpool_matches_brute_force_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for h in 1..=16 {
            for w in 1..=16 {
                let values: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
                for window in [1, 3, 5, 7] {
                    assert_eq!(
                        spatial_maxpool(&values, h, w, window).unwrap(),
                        brute_maxpool(&values, h, w, window),
                        "{h}x{w} window {window}"
                    );
                }
            }
        }
    }

    #[test]
    fn maxpool_whole_grid_window_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let once = spatial_maxpool(&values, 4, 5, 9).unwrap();
        let twice = spatial_maxpool(&once, 4, 5, 9).unwrap();
        assert_eq!(once, twice);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(once.iter().all(|&v| v == max));
    }

    #[test]
    fn upsample_examples() {
        let g = Field::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let up = bilinear_upsample(&g, 2).unwrap();
        let expected_row = [0.0, 0.25, 0.75, 1.0];
        for v in 0..4 {
            for u in 0..4 {
                assert!((up.get(u, v, 0) - expected_row[u]).abs() < 1e-12);
            }
        }
        assert_eq!(bilinear_upsample(&g, 1).unwrap(), g);
        let c = Field::filled(3, 2, 2, 4.5);
        let up = bilinear_upsample(&c, 3).unwrap();
        assert!(up.data.iter().all(|&v| v == 4.5));
    }

    #[test]
    fn feature_grid_normalizes_and_flags_zero() {
        let g = FeatureGrid::new(1, 2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.descriptor(0), &[0.6, 0.8]);
        assert!(g.is_valid(0));
        assert!(!g.is_valid(1));
        assert_eq!(g.descriptor(1), &[0.0, 0.0]);
        assert!(FeatureGrid::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn bilinear_sample_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..8 * 8 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = FeatureGrid::new(8, 8, 3, data).unwrap();
        let at = g.bilinear_sample(2.0, 5.0).unwrap();
        for (a, b) in at.iter().zip(g.at(2, 5)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(g.bilinear_sample(-10.0, -10.0).is_none());

        let mid = g.bilinear_sample(2.5, 5.0).unwrap();
        let avg: Vec<f64> = g.at(2, 5).iter().zip(g.at(3, 5)).map(|(a, b)| 0.5 * (a + b)).collect();
        let n = avg.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in mid.iter().zip(&avg) {
            assert!((a - b / n).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn softmax_is_permutation_equivariant(
            row in proptest::collection::vec(-20.0f64..20.0, 2..12),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..row.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&k| row[k]).collect();
            let mut a = row.clone();
            let mut b = permuted;
            softmax_in_place(&mut a);
            softmax_in_place(&mut b);
            for (k, &p) in perm.iter().enumerate() {
                proptest::prop_assert!((b[k] - a[p]).abs() < 1e-12);
            }
        }

        #[test]
        fn entropy_bounded_by_uniform(
            row in proptest::collection::vec(-20.0f64..20.0, 1..40),
        ) {
            let mut p = row.clone();
            softmax_in_place(&mut p);
            let h = shannon_entropy(&p);
            proptest::prop_assert!(h >= 0.0);
            proptest::prop_assert!(h <= (p.len() as f64).ln() + 1e-9);
        }

        #[test]
        fn maxpool_is_monotone(
            base in proptest::collection::vec(-1.0f64..1.0, 30),
            bump in proptest::collection::vec(0.0f64..1.0, 30),
            window in proptest::sample::select(vec![1usize, 3, 5]),
        ) {
            let bigger: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let pa = spatial_maxpool(&base, 5, 6, window).unwrap();
            let pb = spatial_maxpool(&bigger, 5, 6, window).unwrap();
            proptest::prop_assert!(pa.iter().zip(&pb).all(|(a, b)| a <= b));
        }
    }
}
