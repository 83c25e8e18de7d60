use scalematch::io;
use scalematch::synth::{coarse_shape, covisibility_from_homography, patch_center, Homography, PATCH};
use scalematch::{CertaintyMap, GrayImage, MatchSet};

use crate::error::CliResult;
use crate::VizArgs;

/// An RGB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self { width, height, rgb: vec![0; 3 * width * height] }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let k = 3 * (x + self.width * y);
        [self.rgb[k], self.rgb[k + 1], self.rgb[k + 2]]
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let k = 3 * (x as usize + self.width * y as usize);
        self.rgb[k..k + 3].copy_from_slice(&c);
    }

    /// Bresenham segment, both endpoints included.
    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Gray image at horizontal offset `x0`; patches outside `covisible` are
    /// drawn at half brightness.
    fn blit(&mut self, img: &GrayImage, x0: usize, covisible: &[bool]) {
        let cols = img.width() / PATCH;
        for y in 0..img.height() {
            for x in 0..img.width() {
                let p = (y / PATCH) * cols + x / PATCH;
                let g = img.get(x, y);
                let g = if covisible.get(p).copied().unwrap_or(true) { g } else { g / 2 };
                self.put((x0 + x) as i64, y as i64, [g, g, g]);
            }
        }
    }
}

/// Blue for low confidence through red for high.
pub fn confidence_color(c: f64) -> [u8; 3] {
    let c = c.clamp(0.0, 1.0);
    [(255.0 * c).round() as u8, 40, (255.0 * (1.0 - c)).round() as u8]
}

fn to_pixel(p: (f64, f64)) -> (i64, i64) {
    (p.0.round() as i64, p.1.round() as i64)
}

/// A and B side by side with one segment per match between patch centers.
/// Patches that the ground truth marks as not co-visible are dimmed.
pub fn render_matches(a: &GrayImage, b: &GrayImage, h_ab: &Homography, matches: &MatchSet) -> Canvas {
    let cov = covisibility_from_homography(h_ab, a.width(), a.height(), b.width(), b.height());
    let mut canvas = Canvas::new(a.width() + b.width(), a.height().max(b.height()));
    canvas.blit(a, 0, &cov.covis_a);
    canvas.blit(b, a.width(), &cov.covis_b);
    let (sa, sb) = (coarse_shape(a.width(), a.height()), coarse_shape(b.width(), b.height()));
    for m in &matches.matches {
        let p = to_pixel(patch_center(m.src, sa));
        let q = to_pixel(patch_center(m.tgt, sb));
        canvas.line(p, (q.0 + a.width() as i64, q.1), confidence_color(m.confidence));
    }
    canvas
}

/// Black through red and yellow to white.
pub fn render_certainty(c: &CertaintyMap) -> Canvas {
    let mut canvas = Canvas::new(c.width, c.height);
    let ramp = |v: f64| (255.0 * v.clamp(0.0, 1.0)).round() as u8;
    for y in 0..c.height {
        for x in 0..c.width {
            let v = 3.0 * c.get(x, y);
            canvas.put(x as i64, y as i64, [ramp(v), ramp(v - 1.0), ramp(v - 2.0)]);
        }
    }
    canvas
}

pub fn run(args: &VizArgs) -> CliResult<()> {
    let scene = io::read_scene(&args.scene)?;
    let (_, matches) = io::read_matches(&args.matches)?;
    let canvas = render_matches(&scene.image_a, &scene.image_b, &scene.h_ab, &matches);
    io::write_ppm(&args.out, canvas.width, canvas.height, &canvas.rgb)?;
    if let (Some(cp), Some(hp)) = (&args.certainty, &args.heat) {
        let heat = render_certainty(&io::read_certainty(cp)?);
        io::write_ppm(hp, heat.width, heat.height, &heat.rgb)?;
    }
    println!("drew {} matches to {}", matches.len(), args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use scalematch::Match;

    fn pair() -> (GrayImage, GrayImage) {
        let a = GrayImage::new(32, 16, (0..512).map(|i| (i % 200) as u8).collect()).unwrap();
        let b = GrayImage::new(16, 16, vec![90; 256]).unwrap();
        (a, b)
    }

    fn gray(c: [u8; 3]) -> bool {
        c[0] == c[1] && c[1] == c[2]
    }

    #[test]
    fn empty_matches_draw_only_images() {
        let (a, b) = pair();
        let empty = MatchSet { matches: vec![], src_shape: (2, 4), tgt_shape: (2, 2), theta_m: 0.2 };
        let c = render_matches(&a, &b, &Homography::identity(), &empty);
        assert_eq!((c.width, c.height), (48, 16));
        assert!(c.rgb.chunks(3).all(|p| gray([p[0], p[1], p[2]])));
        assert_eq!(c.pixel(5, 3), [a.get(5, 3); 3]);
        assert_eq!(c.pixel(40, 3), [90; 3]);
    }

    #[test]
    fn one_match_paints_its_endpoints() {
        let (a, b) = pair();
        // Patch 5 of A (row 1, col 1) has center (11.5, 11.5); patch 2 of B
        // (row 1, col 0) has center (3.5, 11.5), drawn at x + 32.
        let set = MatchSet {
            matches: vec![Match { src: 5, tgt: 2, confidence: 1.0 }],
            src_shape: (2, 4),
            tgt_shape: (2, 2),
            theta_m: 0.2,
        };
        let c = render_matches(&a, &b, &Homography::identity(), &set);
        let red = confidence_color(1.0);
        assert_eq!(c.pixel(12, 12), red);
        assert_eq!(c.pixel(36, 12), red);
        assert_eq!(c.pixel(24, 12), red);
        assert!(gray(c.pixel(12, 10)) && gray(c.pixel(37, 12)));
        let painted = c.rgb.chunks(3).filter(|p| !gray([p[0], p[1], p[2]])).count();
        assert_eq!(painted, 36 - 12 + 1);
    }

    #[test]
    fn heat_ramp_ends() {
        let m = CertaintyMap::new(1, 2, vec![0.0, 1.0]).unwrap();
        let c = render_certainty(&m);
        assert_eq!(c.pixel(0, 0), [0, 0, 0]);
        assert_eq!(c.pixel(1, 0), [255, 255, 255]);
    }
}
