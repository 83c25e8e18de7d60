//! Dataset directories: a `manifest.json` listing scene subdirectories.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scalematch::io::{self, SceneFiles};
use scalematch::synth::{GroundTruth, Homography, SceneSpec};
use scalematch::GrayImage;

use crate::error::CliResult;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        Ok(io::write_json(&dir.join(MANIFEST), self)?)
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let mut m: Self = io::read_json(&dir.join(MANIFEST))?;
        m.scenes.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(m)
    }
}

/// One pair ready for matching and scoring.
#[derive(Debug, Clone)]
pub struct Case {
    pub image_a: GrayImage,
    pub image_b: GrayImage,
    pub h_ab: Homography,
    pub seed: u64,
    pub spec: Option<SceneSpec>,
}

impl Case {
    pub fn from_files(files: SceneFiles, entry: &ManifestEntry) -> Self {
        Self {
            image_a: files.image_a,
            image_b: files.image_b,
            h_ab: files.h_ab,
            seed: files.meta.as_ref().map_or(entry.seed, |m| m.seed),
            spec: files.meta.map(|m| m.spec),
        }
    }

    pub fn from_spec(seed: u64, spec: &SceneSpec) -> CliResult<Self> {
        let pair = scalematch::synth::generate_scene(seed, spec)?;
        Ok(Self {
            image_a: pair.image_a,
            image_b: pair.image_b,
            h_ab: pair.h_ab,
            seed,
            spec: Some(pair.spec),
        })
    }

    pub fn scale(&self) -> f64 {
        self.spec.as_ref().map_or(f64::NAN, |s| s.scale)
    }

    pub fn ground_truth(&self) -> CliResult<GroundTruth> {
        let (w, h) = (self.image_a.width(), self.image_a.height());
        if (self.image_b.width(), self.image_b.height()) != (w, h) {
            return Err(crate::CliError::usage("evaluation needs images of equal size"));
        }
        Ok(GroundTruth::from_homography(&self.h_ab, w, h)?)
    }
}

pub fn scene_path(dir: &Path, entry: &ManifestEntry) -> PathBuf {
    dir.join(&entry.id)
}

pub fn load_case(dir: &Path, entry: &ManifestEntry) -> CliResult<Case> {
    let files = io::read_scene(&scene_path(dir, entry))?;
    Ok(Case::from_files(files, entry))
}
