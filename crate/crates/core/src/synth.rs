//! Reproducible synthetic image pairs related by a known homography, and the
//! ground truth derived from it.
//!
//! Pixel centers sit at integer coordinates, so a full-resolution image of
//! width `W` covers `[-0.5, W - 0.5)`. Level-`l` cell `(u, v)` is centered on
//! the full-resolution point `((u + 0.5) * 2^l - 0.5, (v + 0.5) * 2^l - 0.5)`.
//! Coarse patches are level-3 cells, i.e. 8x8 pixel blocks.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coarse::{Match, MatchSet};
use crate::error::{Error, Result};
use crate::grid::FlowField;
use crate::image::GrayImage;

/// Side length of a coarse patch in pixels.
pub const PATCH: usize = 8;
/// Pyramid level of the coarse grid.
pub const COARSE_LEVEL: u8 = 3;

/// Scales visited by [`SceneSpec::mixed`].
pub const MIXED_SCALES: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];

/// Full-resolution position of the center of level-`level` cell index `u`.
#[inline]
pub fn level_to_full(u: f64, level: u8) -> f64 {
    let s = (1u32 << level) as f64;
    (u + 0.5) * s - 0.5
}

/// Level-`level` coordinate of a full-resolution position.
#[inline]
pub fn full_to_level(x: f64, level: u8) -> f64 {
    let s = (1u32 << level) as f64;
    (x + 0.5) / s - 0.5
}

/// Projective map between pixel coordinates, normalized so `m[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("homography has non-finite entries"));
        }
        let det = m.determinant();
        if det.abs() <= 1e-12 {
            return Err(Error::invalid(format!("singular homography (det {det:e})")));
        }
        let m = if m[(2, 2)].abs() > 1e-12 { m / m[(2, 2)] } else { m };
        Ok(Self { m })
    }

    /// Row-major 9-vector.
    pub fn from_row_slice(values: &[f64]) -> Result<Self> {
        if values.len() != 9 {
            return Err(Error::invalid(format!(
                "homography needs 9 values, got {}",
                values.len()
            )));
        }
        Self::from_matrix(Matrix3::from_row_slice(values))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn to_row_vec(&self) -> Vec<f64> {
        (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| self.m[(r, c)])
            .collect()
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        let mut m = Matrix3::identity();
        m[(0, 2)] = tx;
        m[(1, 2)] = ty;
        Self { m }
    }

    pub fn scaling(s: f64) -> Self {
        Self {
            m: Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0),
        }
    }

    pub fn inverse(&self) -> Self {
        let inv = self.m.try_inverse().expect("homography invariant: invertible");
        Self::from_matrix(inv).expect("inverse of an invertible homography")
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Self {
        Self::from_matrix(self.m * first.m).expect("product of invertible maps")
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = self.m * Vector3::new(x, y, 1.0);
        if p.z.abs() < 1e-12 {
            return None;
        }
        let out = (p.x / p.z, p.y / p.z);
        (out.0.is_finite() && out.1.is_finite()).then_some(out)
    }
}

/// Parameters of one synthetic pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Texture density multiplier; 1.0 is the default profile.
    pub richness: f64,
    /// Length scale of A relative to B: content of A appears `scale` times
    /// smaller in B, so the co-visible patch ratio is about `scale^2`.
    pub scale: f64,
    /// Rotation in radians.
    pub rotation: f64,
    /// Translation in B pixels.
    pub translation: (f64, f64),
    /// Projective row `(g_x, g_y)`, in units of one image extent.
    pub perspective: (f64, f64),
    /// Standard deviation of additive Gaussian noise on B, in gray levels.
    pub noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            richness: 1.0,
            scale: 1.0,
            rotation: 0.0,
            translation: (0.0, 0.0),
            perspective: (0.0, 0.0),
            noise: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width % PATCH != 0 || self.height % PATCH != 0
        {
            return Err(Error::invalid(format!(
                "image size {}x{} must be a positive multiple of {PATCH}",
                self.width, self.height
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!("scale must be positive, got {}", self.scale)));
        }
        if !(self.richness > 0.0 && self.richness.is_finite()) {
            return Err(Error::invalid(format!(
                "richness must be positive, got {}",
                self.richness
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise must be non-negative, got {}", self.noise)));
        }
        let finite = [
            self.rotation,
            self.translation.0,
            self.translation.1,
            self.perspective.0,
            self.perspective.1,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("geometric parameters must be finite"));
        }
        Ok(())
    }

    /// Scene `index` of the mixed profile: scale cycles through
    /// [`MIXED_SCALES`], rotation is uniform in +-10 degrees, translation in
    /// +-16 px per axis and perspective in +-0.05 per axis, all drawn from a
    /// stream seeded with `index`; noise is 2 gray levels.
    pub fn mixed(index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(index);
        let rot = 10f64.to_radians();
        Self {
            scale: MIXED_SCALES[(index % MIXED_SCALES.len() as u64) as usize],
            noise: 2.0,
            rotation: rng.random_range(-rot..=rot),
            translation: (rng.random_range(-16.0..=16.0), rng.random_range(-16.0..=16.0)),
            perspective: (rng.random_range(-0.05..=0.05), rng.random_range(-0.05..=0.05)),
            ..Self::default()
        }
    }

    /// The A-to-B homography described by this spec.
    pub fn homography(&self) -> Result<Homography> {
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let k = 1.0 / self.scale;
        let (sn, cs) = self.rotation.sin_cos();
        let sim = Matrix3::new(
            k * cs,
            -k * sn,
            0.0,
            k * sn,
            k * cs,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let persp = Matrix3::new(
            1.0,
            0.0,
            0.0,
            0.0,
            1.0,
            0.0,
            self.perspective.0 / self.width as f64,
            self.perspective.1 / self.height as f64,
            1.0,
        );
        let to_center = Homography::translation(-cx, -cy).m;
        let from_center =
            Homography::translation(cx + self.translation.0, cy + self.translation.1).m;
        Homography::from_matrix(from_center * persp * sim * to_center)
    }
}

/// A generated image pair with its ground-truth homography.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub image_a: GrayImage,
    pub image_b: GrayImage,
    pub h_ab: Homography,
    pub seed: u64,
    pub spec: SceneSpec,
}

impl ScenePair {
    pub fn scale_factor(&self) -> f64 {
        self.spec.scale
    }
}

/// Procedural texture: smooth gradient, anisotropic blobs within one octave
/// of size, and fine speckle. The narrow blob band gives the texture a
/// dominant scale that scale selection can track under a zoom.
pub fn procedural_texture(rng: &mut ChaCha8Rng, width: usize, height: usize, richness: f64) -> Vec<f64> {
    let mut img = vec![0.0f64; width * height];
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0;
    let base = rng.random_range(100.0..156.0);
    let gx = rng.random_range(-0.15..0.15);
    let gy = rng.random_range(-0.15..0.15);
    for y in 0..height {
        for x in 0..width {
            img[x + width * y] = base + gx * (x as f64 - cx) + gy * (y as f64 - cy);
        }
    }
    let area = (width * height) as f64;
    let layers: [(f64, f64, f64, f64, f64); 2] = [
        // (area per blob, r_min, r_max, amp_min, amp_max)
        (300.0, 8.0, 16.0, 30.0, 90.0),
        (60.0, 1.0, 2.5, 10.0, 35.0),
    ];
    for (per, r_min, r_max, a_min, a_max) in layers {
        let count = (richness * area / per).round() as usize;
        for _ in 0..count {
            let bx = rng.random_range(-10.0..width as f64 + 10.0);
            let by = rng.random_range(-10.0..height as f64 + 10.0);
            let r = (rng.random_range(r_min.ln()..r_max.ln()) as f64).exp();
            let aspect = rng.random_range(1.0..2.5);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let amp = sign * rng.random_range(a_min..a_max);
            stamp_blob(&mut img, width, height, (bx, by), r, aspect, angle, amp);
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
    img
}

#[allow(clippy::too_many_arguments)]
fn stamp_blob(
    img: &mut [f64],
    width: usize,
    height: usize,
    center: (f64, f64),
    radius: f64,
    aspect: f64,
    angle: f64,
    amp: f64,
) {
    let (ra, rb) = (radius * aspect.sqrt(), radius / aspect.sqrt());
    let (sn, cs) = angle.sin_cos();
    let reach = 3.0 * ra;
    let x0 = (center.0 - reach).floor().max(0.0) as usize;
    let y0 = (center.1 - reach).floor().max(0.0) as usize;
    let x1 = ((center.0 + reach).ceil().max(0.0) as usize).min(width);
    let y1 = ((center.1 + reach).ceil().max(0.0) as usize).min(height);
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 - center.0;
            let dy = y as f64 - center.1;
            let a = (cs * dx + sn * dy) / ra;
            let b = (-sn * dx + cs * dy) / rb;
            let q = a * a + b * b;
            if q < 9.0 {
                img[x + width * y] += amp * (-0.5 * q).exp();
            }
        }
    }
}

/// Deterministic pair generation for `(seed, spec)`.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<ScenePair> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let h_ab = spec.homography()?;
    let h_ba = h_ab.inverse();

    let mut rng_a = ChaCha8Rng::seed_from_u64(seed);
    let tex_a = procedural_texture(&mut rng_a, w, h, spec.richness);
    let image_a = GrayImage::from_f64(w, h, &tex_a)?;

    let mut rng_fill = ChaCha8Rng::seed_from_u64(seed);
    rng_fill.set_stream(1);
    let fill = procedural_texture(&mut rng_fill, w, h, spec.richness);

    // Supersample when B is a zoomed-out view of A.
    let ss = (spec.scale - 1e-9).ceil().max(1.0) as usize;
    let offsets: Vec<f64> = (0..ss).map(|k| (k as f64 + 0.5) / ss as f64 - 0.5).collect();

    let mut values = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let inside = h_ba
                .apply(xf, yf)
                .filter(|&(px, py)| in_bounds(px, py, w, h));
            values[x + w * y] = match inside {
                None => fill[x + w * y],
                Some(_) => {
                    let mut acc = 0.0;
                    let mut n = 0.0;
                    for &oy in &offsets {
                        for &ox in &offsets {
                            if let Some((px, py)) = h_ba.apply(xf + ox, yf + oy) {
                                acc += image_a.sample(px, py);
                                n += 1.0;
                            }
                        }
                    }
                    acc / n
                }
            };
        }
    }
    if spec.noise > 0.0 {
        let mut rng_noise = ChaCha8Rng::seed_from_u64(seed);
        rng_noise.set_stream(2);
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng_noise);
        }
    }
    let image_b = GrayImage::from_f64(w, h, &values)?;
    Ok(ScenePair {
        image_a,
        image_b,
        h_ab,
        seed,
        spec: spec.clone(),
    })
}

#[inline]
pub fn in_bounds(x: f64, y: f64, width: usize, height: usize) -> bool {
    x >= -0.5 && y >= -0.5 && x < width as f64 - 0.5 && y < height as f64 - 0.5
}

/// Ground-truth flow at `level`: `h_ab` applied to each level-`level` cell
/// center, in level-`level` target coordinates.
pub fn gt_flow(pair: &ScenePair, level: u8) -> Result<FlowField> {
    flow_from_homography(&pair.h_ab, pair.spec.width, pair.spec.height, level)
}

pub fn flow_from_homography(h_ab: &Homography, width: usize, height: usize, level: u8) -> Result<FlowField> {
    if level > 3 {
        return Err(Error::invalid(format!("pyramid level must be 0..=3, got {level}")));
    }
    let s = 1usize << level;
    let (lw, lh) = (width / s, height / s);
    Ok(FlowField::from_fn(lh, lw, level, |u, v| {
        let px = level_to_full(u as f64, level);
        let py = level_to_full(v as f64, level);
        match h_ab.apply(px, py) {
            Some((qx, qy)) => (full_to_level(qx, level), full_to_level(qy, level)),
            None => (f64::MAX, f64::MAX),
        }
    }))
}

/// Coarse patch grid shape `(rows, cols)` of a `width x height` image.
pub fn coarse_shape(width: usize, height: usize) -> (usize, usize) {
    (height / PATCH, width / PATCH)
}

/// Full-resolution center of coarse patch `index`.
pub fn patch_center(index: usize, shape: (usize, usize)) -> (f64, f64) {
    let u = index % shape.1;
    let v = index / shape.1;
    (
        level_to_full(u as f64, COARSE_LEVEL),
        level_to_full(v as f64, COARSE_LEVEL),
    )
}

/// Coarse patch containing a full-resolution point (half-open pixel boxes).
pub fn patch_of(x: f64, y: f64, shape: (usize, usize)) -> Option<usize> {
    let u = ((x + 0.5) / PATCH as f64).floor();
    let v = ((y + 0.5) / PATCH as f64).floor();
    if u < 0.0 || v < 0.0 || u >= shape.1 as f64 || v >= shape.0 as f64 {
        return None;
    }
    Some(u as usize + shape.1 * v as usize)
}

/// Cycle-consistent coarse matches. A pair `(i, j)` is kept when patch
/// `i`'s center warps into patch `j` and back into patch `i`, or when patch
/// `j`'s center warps into patch `i` and back into patch `j`.
pub fn gt_coarse_matches(pair: &ScenePair) -> MatchSet {
    let shape_a = coarse_shape(pair.spec.width, pair.spec.height);
    matches_from_homography(&pair.h_ab, shape_a, shape_a)
}

pub fn matches_from_homography(
    h_ab: &Homography,
    shape_a: (usize, usize),
    shape_b: (usize, usize),
) -> MatchSet {
    let h_ba = h_ab.inverse();
    let mut pairs = Vec::new();
    let project = |h: &Homography, g: &Homography, i: usize, from: (usize, usize), to: (usize, usize)| {
        let (x, y) = patch_center(i, from);
        let (fx, fy) = h.apply(x, y)?;
        let j = patch_of(fx, fy, to)?;
        let (bx, by) = g.apply(fx, fy)?;
        (patch_of(bx, by, from) == Some(i)).then_some(j)
    };
    for i in 0..shape_a.0 * shape_a.1 {
        if let Some(j) = project(h_ab, &h_ba, i, shape_a, shape_b) {
            pairs.push((i, j));
        }
    }
    for j in 0..shape_b.0 * shape_b.1 {
        if let Some(i) = project(&h_ba, h_ab, j, shape_b, shape_a) {
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    MatchSet {
        matches: pairs
            .into_iter()
            .map(|(src, tgt)| Match {
                src,
                tgt,
                confidence: 1.0,
            })
            .collect(),
        src_shape: shape_a,
        tgt_shape: shape_b,
        theta_m: 1.0,
    }
}

/// Coarse co-visibility masks and their count ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct Covisibility {
    pub covis_a: Vec<bool>,
    pub covis_b: Vec<bool>,
    pub shape_a: (usize, usize),
    pub shape_b: (usize, usize),
    /// `|covis_a| / |covis_b|`, `None` when B has no co-visible patch.
    pub scale_ratio: Option<f64>,
}

impl Covisibility {
    pub fn is_degenerate(&self) -> bool {
        self.scale_ratio.is_none()
    }
}

/// A patch is co-visible when its center warps inside the other image.
pub fn gt_covisibility(pair: &ScenePair) -> Covisibility {
    covisibility_from_homography(&pair.h_ab, pair.spec.width, pair.spec.height, pair.spec.width, pair.spec.height)
}

pub fn covisibility_from_homography(
    h_ab: &Homography,
    width_a: usize,
    height_a: usize,
    width_b: usize,
    height_b: usize,
) -> Covisibility {
    let shape_a = coarse_shape(width_a, height_a);
    let shape_b = coarse_shape(width_b, height_b);
    let h_ba = h_ab.inverse();
    let mask = |h: &Homography, shape: (usize, usize), w: usize, hh: usize| -> Vec<bool> {
        (0..shape.0 * shape.1)
            .map(|i| {
                let (x, y) = patch_center(i, shape);
                h.apply(x, y).is_some_and(|(px, py)| in_bounds(px, py, w, hh))
            })
            .collect()
    };
    let covis_a = mask(h_ab, shape_a, width_b, height_b);
    let covis_b = mask(&h_ba, shape_b, width_a, height_a);
    let na = covis_a.iter().filter(|&&c| c).count();
    let nb = covis_b.iter().filter(|&&c| c).count();
    Covisibility {
        covis_a,
        covis_b,
        shape_a,
        shape_b,
        scale_ratio: (nb > 0).then(|| na as f64 / nb as f64),
    }
}

/// Everything the evaluation needs about a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Flow at levels 0..=3, indexed by level.
    pub flow_gt: Vec<FlowField>,
    pub covis: Covisibility,
    pub matches_gt: MatchSet,
}

impl GroundTruth {
    pub fn from_pair(pair: &ScenePair) -> Result<Self> {
        Self::from_homography(&pair.h_ab, pair.spec.width, pair.spec.height)
    }

    pub fn from_homography(h_ab: &Homography, width: usize, height: usize) -> Result<Self> {
        let flow_gt = (0..=3)
            .map(|l| flow_from_homography(h_ab, width, height, l))
            .collect::<Result<Vec<_>>>()?;
        let shape = coarse_shape(width, height);
        Ok(Self {
            flow_gt,
            covis: covisibility_from_homography(h_ab, width, height, width, height),
            matches_gt: matches_from_homography(h_ab, shape, shape),
        })
    }

    pub fn scale_ratio_gt(&self) -> Option<f64> {
        self.covis.scale_ratio
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SceneSpec {
        SceneSpec::default()
    }

    #[test]
    fn identity_scene_reproduces_image() {
        let pair = generate_scene(1, &spec()).unwrap();
        assert_eq!(pair.image_a, pair.image_b);
    }

    #[test]
    fn generation_is_deterministic() {
        let s = SceneSpec {
            scale: 1.7,
            rotation: 0.1,
            noise: 3.0,
            ..spec()
        };
        assert_eq!(generate_scene(42, &s).unwrap(), generate_scene(42, &s).unwrap());
        assert_ne!(generate_scene(42, &s).unwrap().image_a, generate_scene(43, &s).unwrap().image_a);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_scene(0, &SceneSpec { width: 250, ..spec() }).is_err());
        assert!(generate_scene(0, &SceneSpec { scale: 0.0, ..spec() }).is_err());
    }

    #[test]
    fn warp_reproduces_b_on_covisible_interior() {
        let s = SceneSpec {
            scale: 1.4,
            rotation: 0.2,
            translation: (10.0, -6.0),
            perspective: (0.1, -0.05),
            noise: 2.0,
            ..spec()
        };
        let pair = generate_scene(5, &s).unwrap();
        let h_ba = pair.h_ab.inverse();
        let (mut total, mut n) = (0.0, 0usize);
        for y in 8..248 {
            for x in 8..248 {
                let (px, py) = h_ba.apply(x as f64, y as f64).unwrap();
                if px > 4.0 && py > 4.0 && px < 251.0 && py < 251.0 {
                    total += (pair.image_a.sample(px, py) - pair.image_b.get(x, y) as f64).abs();
                    n += 1;
                }
            }
        }
        assert!(n > 10_000);
        assert!(total / n as f64 <= 8.0, "mean abs diff {}", total / n as f64);
    }

    #[test]
    fn flow_examples() {
        let mut pair = generate_scene(0, &spec()).unwrap();
        let f = gt_flow(&pair, 0).unwrap();
        assert_eq!(f.get(17, 3), (17.0, 3.0));
        let f3 = gt_flow(&pair, 3).unwrap();
        assert_eq!(f3.get(5, 9), (5.0, 9.0));

        pair.h_ab = Homography::translation(3.5, -2.0);
        let f = gt_flow(&pair, 0).unwrap();
        assert_eq!(f.get(10, 20), (13.5, 18.0));

        pair.h_ab = Homography::scaling(2.0);
        let f = gt_flow(&pair, 0).unwrap();
        assert_eq!(f.get(7, 11), (14.0, 22.0));
        assert!(gt_flow(&pair, 4).is_err());
    }

    #[test]
    fn flow_levels_are_consistent() {
        let s = SceneSpec {
            scale: 1.5,
            rotation: -0.1,
            translation: (4.0, 7.0),
            perspective: (0.1, 0.1),
            ..spec()
        };
        let pair = generate_scene(9, &s).unwrap();
        for l in 0..3u8 {
            let fine = gt_flow(&pair, l).unwrap();
            let coarse = gt_flow(&pair, l + 1).unwrap();
            for v in 0..coarse.height {
                for u in 0..coarse.width {
                    let (fx, fy) = fine.get(2 * u, 2 * v);
                    let hx = full_to_level(level_to_full(fx, l), l + 1);
                    let hy = full_to_level(level_to_full(fy, l), l + 1);
                    let (cx, cy) = coarse.get(u, v);
                    assert!((cx - hx).abs() <= 0.51 && (cy - hy).abs() <= 0.51);
                }
            }
        }
    }

    #[test]
    fn identity_matches_and_covisibility() {
        let pair = generate_scene(0, &SceneSpec { width: 128, height: 128, ..spec() }).unwrap();
        let gt = gt_coarse_matches(&pair);
        assert_eq!(gt.matches.len(), 256);
        assert!(gt.matches.iter().all(|m| m.src == m.tgt));
        let cov = gt_covisibility(&pair);
        assert!(cov.covis_a.iter().all(|&c| c) && cov.covis_b.iter().all(|&c| c));
        assert_eq!(cov.scale_ratio, Some(1.0));
    }

    #[test]
    fn one_patch_translation_shifts_matches() {
        let mut pair = generate_scene(0, &SceneSpec { width: 128, height: 128, ..spec() }).unwrap();
        pair.h_ab = Homography::translation(8.0, 0.0);
        let gt = gt_coarse_matches(&pair);
        let shape = (16, 16);
        assert_eq!(gt.matches.len(), 16 * 15);
        for m in &gt.matches {
            assert_eq!(m.tgt, m.src + 1);
            assert_ne!(m.src % shape.1, 15);
        }
    }

    #[test]
    fn zoom_out_gives_many_to_one_matches() {
        let s = SceneSpec { scale: 2.0, ..spec() };
        let pair = generate_scene(3, &s).unwrap();
        let gt = gt_coarse_matches(&pair);
        // One-to-one (mutual) pairs: i -> j and j -> i agree.
        let h_ba = pair.h_ab.inverse();
        let shape = (32, 32);
        let mutual = gt
            .matches
            .iter()
            .filter(|m| {
                let (x, y) = patch_center(m.tgt, shape);
                let (px, py) = h_ba.apply(x, y).unwrap();
                patch_of(px, py, shape) == Some(m.src)
            })
            .count();
        assert!(gt.matches.len() > mutual);
        assert_eq!(gt.matches.len(), 1024);
        assert!(mutual <= 256);

        let cov = gt_covisibility(&pair);
        let r = cov.scale_ratio.unwrap();
        assert!((r - 4.0).abs() / 4.0 <= 0.2, "ratio {r}");
    }

    #[test]
    fn matches_symmetric_under_swap() {
        let s = SceneSpec {
            scale: 1.6,
            rotation: 0.3,
            translation: (20.0, -11.0),
            perspective: (0.1, 0.0),
            ..spec()
        };
        let h = s.homography().unwrap();
        let fwd = matches_from_homography(&h, (32, 32), (32, 32));
        let bwd = matches_from_homography(&h.inverse(), (32, 32), (32, 32));
        let mut swapped: Vec<(usize, usize)> = bwd.matches.iter().map(|m| (m.tgt, m.src)).collect();
        swapped.sort_unstable();
        let fwd: Vec<(usize, usize)> = fwd.matches.iter().map(|m| (m.src, m.tgt)).collect();
        assert_eq!(fwd, swapped);
    }

    #[test]
    fn disjoint_views_are_degenerate() {
        let h = Homography::translation(1000.0, 0.0);
        let cov = covisibility_from_homography(&h, 64, 64, 64, 64);
        assert!(cov.is_degenerate());
    }

    #[test]
    fn mixed_profile_is_deterministic_and_bounded() {
        for k in 0..20u64 {
            let a = SceneSpec::mixed(k);
            assert_eq!(a, SceneSpec::mixed(k));
            a.validate().unwrap();
            assert_eq!(a.scale, MIXED_SCALES[k as usize % 5]);
            assert!(a.rotation.abs() <= 10f64.to_radians() + 1e-12);
            assert!(a.translation.0.abs() <= 16.0 && a.perspective.1.abs() <= 0.05);
        }
        assert_ne!(SceneSpec::mixed(0).rotation, SceneSpec::mixed(5).rotation);
    }
}
