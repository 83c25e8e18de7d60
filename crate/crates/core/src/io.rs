//! File formats: PGM/PPM images, homography text, scene directories, dense
//! flow and certainty blobs, descriptor dumps and match lists.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coarse::{Match, MatchSet};
use crate::error::{Error, Result};
use crate::grid::{CertaintyMap, FeatureGrid, FlowField};
use crate::image::GrayImage;
use crate::synth::{patch_center, Homography, SceneSpec};

pub const FLOW_MAGIC: &[u8; 4] = b"FLW1";
pub const CERTAINTY_MAGIC: &[u8; 4] = b"CRT1";
pub const FEATURE_MAGIC: &[u8; 4] = b"FEAT";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8"))
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

/// Parses a binary 8-bit PGM, skipping `#` comments in the header.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    if fields[0] != "P5" {
        return Err(Error::format(path, format!("expected P5 magic, found {:?}", fields[0])));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad {what} {s:?}")))
    };
    let width = num(&fields[1], "width")?;
    let height = num(&fields[2], "height")?;
    let maxval = num(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(Error::format(path, format!("only 8-bit PGM is supported, maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::format(path, format!("raster needs {need} bytes, got {}", bytes.len().saturating_sub(pos))));
    }
    GrayImage::new(width, height, bytes[pos..pos + need].to_vec())
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    write_bytes(path, &encode_pgm(image))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&read_bytes(path)?, path)
}

/// Writes an RGB raster as binary PPM.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(Error::shape(format!("RGB buffer of {} bytes for {width}x{height}", rgb.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    write_bytes(path, &out)
}

/// Reads a binary PPM into `(width, height, rgb)`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let text_end = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .ok_or_else(|| Error::format(path, "truncated PPM header"))?;
    let header = std::str::from_utf8(&bytes[..text_end]).map_err(|_| Error::format(path, "bad PPM header"))?;
    let f: Vec<&str> = header.split_whitespace().collect();
    if f.len() != 4 || f[0] != "P6" || f[3] != "255" {
        return Err(Error::format(path, "expected an 8-bit P6 header"));
    }
    let w: usize = f[1].parse().map_err(|_| Error::format(path, "bad width"))?;
    let h: usize = f[2].parse().map_err(|_| Error::format(path, "bad height"))?;
    let data = bytes[text_end + 1..].to_vec();
    if data.len() != 3 * w * h {
        return Err(Error::format(path, "raster size mismatch"));
    }
    Ok((w, h, data))
}

/// Nine whitespace-separated reals, row-major, with round-trip precision.
pub fn format_homography(h: &Homography) -> String {
    let v = h.to_row_vec();
    let mut s = String::new();
    for r in 0..3 {
        let row: Vec<String> = v[3 * r..3 * r + 3].iter().map(|x| format!("{x:e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_homography(text: &str, path: &Path) -> Result<Homography> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::format(path, format!("bad number {t:?}"))))
        .collect::<Result<_>>()?;
    if vals.len() != 9 {
        return Err(Error::format(path, format!("expected 9 values, found {}", vals.len())));
    }
    Homography::from_row_slice(&vals).map_err(|e| Error::format(path, e.to_string()))
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub spec: SceneSpec,
    pub scale_ratio_gt: Option<f64>,
}

/// A scene as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFiles {
    pub image_a: GrayImage,
    pub image_b: GrayImage,
    pub h_ab: Homography,
    pub meta: Option<SceneMeta>,
}

pub const IMAGE_A: &str = "imageA.pgm";
pub const IMAGE_B: &str = "imageB.pgm";
pub const HOMOGRAPHY: &str = "H.txt";
pub const META: &str = "meta.json";

pub fn write_scene(dir: &Path, scene: &SceneFiles) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_pgm(&dir.join(IMAGE_A), &scene.image_a)?;
    write_pgm(&dir.join(IMAGE_B), &scene.image_b)?;
    write_text(&dir.join(HOMOGRAPHY), &format_homography(&scene.h_ab))?;
    if let Some(meta) = &scene.meta {
        let json = serde_json::to_string_pretty(meta).expect("scene metadata serializes");
        write_text(&dir.join(META), &(json + "\n"))?;
    }
    Ok(())
}

/// Loads a scene directory; `meta.json` is optional.
pub fn read_scene(dir: &Path) -> Result<SceneFiles> {
    let image_a = read_pgm(&dir.join(IMAGE_A))?;
    let image_b = read_pgm(&dir.join(IMAGE_B))?;
    let hp = dir.join(HOMOGRAPHY);
    let h_ab = parse_homography(&read_text(&hp)?, &hp)?;
    let mp = dir.join(META);
    let meta = if mp.exists() {
        let text = read_text(&mp)?;
        Some(serde_json::from_str(&text).map_err(|e| Error::format(&mp, e.to_string()))?)
    } else {
        None
    };
    Ok(SceneFiles {
        image_a,
        image_b,
        h_ab,
        meta,
    })
}

fn encode_header(magic: &[u8; 4], dims: &[usize]) -> Vec<u8> {
    let mut out = magic.to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

fn decode_header<'a>(bytes: &'a [u8], magic: &[u8; 4], n: usize, path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    let head = 4 + 4 * n;
    if bytes.len() < head || &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!("missing {} header", String::from_utf8_lossy(magic)),
        ));
    }
    let dims = (0..n)
        .map(|k| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize)
        .collect();
    Ok((dims, &bytes[head..]))
}

fn decode_f32(bytes: &[u8], count: usize, path: &Path) -> Result<Vec<f32>> {
    if bytes.len() != 4 * count {
        return Err(Error::format(path, format!("expected {} payload bytes, got {}", 4 * count, bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn extend_f32(out: &mut Vec<u8>, values: impl Iterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut out = encode_header(FLOW_MAGIC, &[flow.width, flow.height]);
    extend_f32(&mut out, flow.values.iter().copied());
    out
}

/// Decodes a flow blob; the level is not stored and must be supplied.
pub fn decode_flow(bytes: &[u8], level: u8, path: &Path) -> Result<FlowField> {
    let (d, payload) = decode_header(bytes, FLOW_MAGIC, 2, path)?;
    let values = decode_f32(payload, 2 * d[0] * d[1], path)?;
    FlowField::new(d[1], d[0], level, values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_certainty(c: &CertaintyMap) -> Vec<u8> {
    let mut out = encode_header(CERTAINTY_MAGIC, &[c.width, c.height]);
    extend_f32(&mut out, c.values.iter().copied());
    out
}

pub fn decode_certainty(bytes: &[u8], path: &Path) -> Result<CertaintyMap> {
    let (d, payload) = decode_header(bytes, CERTAINTY_MAGIC, 2, path)?;
    let values = decode_f32(payload, d[0] * d[1], path)?;
    CertaintyMap::new(d[1], d[0], values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    write_bytes(path, &encode_flow(flow))
}

pub fn read_flow(path: &Path, level: u8) -> Result<FlowField> {
    decode_flow(&read_bytes(path)?, level, path)
}

pub fn write_certainty(path: &Path, c: &CertaintyMap) -> Result<()> {
    write_bytes(path, &encode_certainty(c))
}

pub fn read_certainty(path: &Path) -> Result<CertaintyMap> {
    decode_certainty(&read_bytes(path)?, path)
}

/// Descriptor dump: `FEAT`, u32 height, width, dim, then f32 values.
pub fn encode_features(grid: &FeatureGrid) -> Vec<u8> {
    let mut out = encode_header(FEATURE_MAGIC, &[grid.height(), grid.width(), grid.dim()]);
    extend_f32(&mut out, grid.raw().iter().map(|&v| v as f32));
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureGrid> {
    let (d, payload) = decode_header(bytes, FEATURE_MAGIC, 3, path)?;
    let values = decode_f32(payload, d[0] * d[1] * d[2], path)?;
    FeatureGrid::new(d[0], d[1], d[2], values.into_iter().map(f64::from).collect())
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Header line of a match file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchHeader {
    pub src_shape: (usize, usize),
    pub tgt_shape: (usize, usize),
    pub theta_e: f64,
    pub theta_m: f64,
    pub temperature: f64,
    pub window: usize,
    pub scale_ratio: Option<f64>,
}

/// JSON header line followed by `i j u_s v_s u_t v_t confidence` records,
/// with pixel coordinates of the patch centers.
pub fn format_matches(header: &MatchHeader, matches: &MatchSet) -> String {
    let mut s = serde_json::to_string(header).expect("match header serializes");
    s.push('\n');
    for m in &matches.matches {
        let (us, vs) = patch_center(m.src, matches.src_shape);
        let (ut, vt) = patch_center(m.tgt, matches.tgt_shape);
        s.push_str(&format!("{} {} {us} {vs} {ut} {vt} {:e}\n", m.src, m.tgt, m.confidence));
    }
    s
}

pub fn parse_matches(text: &str, path: &Path) -> Result<(MatchHeader, MatchSet)> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| Error::format(path, "empty match file"))?;
    let header: MatchHeader =
        serde_json::from_str(first).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    let mut matches = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::format(path, format!("malformed record on line {}", k + 2));
        if f.len() != 7 {
            return Err(bad());
        }
        let src: usize = f[0].parse().map_err(|_| bad())?;
        let tgt: usize = f[1].parse().map_err(|_| bad())?;
        let confidence: f64 = f[6].parse().map_err(|_| bad())?;
        if src >= header.src_shape.0 * header.src_shape.1 || tgt >= header.tgt_shape.0 * header.tgt_shape.1 {
            return Err(bad());
        }
        matches.push(Match { src, tgt, confidence });
    }
    let set = MatchSet {
        matches,
        src_shape: header.src_shape,
        tgt_shape: header.tgt_shape,
        theta_m: header.theta_m,
    };
    Ok((header, set))
}

pub fn write_matches(path: &Path, header: &MatchHeader, matches: &MatchSet) -> Result<()> {
    write_text(path, &format_matches(header, matches))
}

pub fn read_matches(path: &Path) -> Result<(MatchHeader, MatchSet)> {
    parse_matches(&read_text(path)?, path)
}

/// Writes a value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    write_text(path, &(json + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Creates a file for streaming writes, with path context on failure.
pub fn create_file(path: &Path) -> Result<impl Write> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:04}")
}
