use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scalematch::io::{self, MatchHeader};
use scalematch::pipeline::{estimate_homography, run_pipeline, PipelineOutput, Timings};
use scalematch::synth::Homography;
use scalematch::{GrayImage, MatchSet};

use crate::config::RunConfig;
use crate::dataset::{self, Manifest};
use crate::error::{CliError, CliResult};
use crate::{with_threads, MatchArgs};

pub const MATCHES: &str = "matches.txt";
pub const FLOW: &str = "flow.flw";
pub const CERTAINTY: &str = "certainty.crt";
pub const REPORT: &str = "report.json";
pub const TIMINGS: &str = "timings.json";

/// Summary of one matcher run. Wall-clock timings live in a separate file
/// so that this one is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub image_a: (usize, usize),
    pub image_b: (usize, usize),
    pub matcher: String,
    pub temperature: f64,
    pub theta_e: f64,
    pub theta_m: f64,
    pub seed: u64,
    pub degenerate: bool,
    pub scale_ratio: Option<f64>,
    pub window: usize,
    pub covisible_src: usize,
    pub covisible_tgt: usize,
    pub matches: usize,
    pub relative_scale: f64,
    pub certain_pixels: usize,
    /// Row-major A-to-B homography fitted to the dense flow.
    pub homography: Option<Vec<f64>>,
}

pub fn report(a: &GrayImage, b: &GrayImage, out: &PipelineOutput, cfg: &RunConfig) -> MatchReport {
    let p = &cfg.pipeline;
    let (covisible_src, covisible_tgt) = out.report.covisible_counts();
    MatchReport {
        image_a: (a.width(), a.height()),
        image_b: (b.width(), b.height()),
        matcher: format!("{:?}", p.matcher).to_lowercase(),
        temperature: p.temperature,
        theta_e: p.theta_e,
        theta_m: p.theta_m,
        seed: p.ransac.seed,
        degenerate: out.report.is_degenerate(),
        scale_ratio: out.report.scale_ratio,
        window: out.report.window,
        covisible_src,
        covisible_tgt,
        matches: out.matches.len(),
        relative_scale: out.relative_scale,
        certain_pixels: out.cascade.certainty.values.iter().filter(|&&c| c as f64 > p.min_certainty).count(),
        homography: estimate_homography(out, (b.width(), b.height()), p).map(|h| h.to_row_vec()),
    }
}

pub fn write_outputs(dir: &Path, a: &GrayImage, b: &GrayImage, out: &PipelineOutput, cfg: &RunConfig) -> CliResult<MatchReport> {
    let p = &cfg.pipeline;
    let header = MatchHeader {
        src_shape: out.matches.src_shape,
        tgt_shape: out.matches.tgt_shape,
        theta_e: p.theta_e,
        theta_m: p.theta_m,
        temperature: p.temperature,
        window: out.report.window,
        scale_ratio: out.report.scale_ratio,
    };
    let rep = report(a, b, out, cfg);
    io::write_matches(&dir.join(MATCHES), &header, &out.matches)?;
    io::write_flow(&dir.join(FLOW), &out.cascade.flow)?;
    io::write_certainty(&dir.join(CERTAINTY), &out.cascade.certainty)?;
    io::write_json(&dir.join(REPORT), &rep)?;
    io::write_json(&dir.join(TIMINGS), &out.timings)?;
    Ok(rep)
}

/// What `match` wrote for one pair, read back from disk.
#[derive(Debug, Clone)]
pub struct SavedMatch {
    pub matches: MatchSet,
    pub flow: scalematch::FlowField,
    pub certainty: scalematch::CertaintyMap,
    pub report: MatchReport,
}

pub fn read_outputs(dir: &Path) -> CliResult<SavedMatch> {
    let (_, matches) = io::read_matches(&dir.join(MATCHES))?;
    Ok(SavedMatch {
        matches,
        flow: io::read_flow(&dir.join(FLOW), 0)?,
        certainty: io::read_certainty(&dir.join(CERTAINTY))?,
        report: io::read_json(&dir.join(REPORT))?,
    })
}

pub fn read_timings(dir: &Path) -> CliResult<Timings> {
    Ok(io::read_json(&dir.join(TIMINGS))?)
}

pub fn match_pair(a: &GrayImage, b: &GrayImage, dir: &Path, cfg: &RunConfig) -> CliResult<MatchReport> {
    let out = run_pipeline(a, b, &cfg.pipeline)?;
    write_outputs(dir, a, b, &out, cfg)
}

/// Matches every scene of `dataset` into `out/<scene>/`, scenes in parallel.
pub fn match_dataset(dataset_dir: &Path, out: &Path, cfg: &RunConfig) -> CliResult<Vec<MatchReport>> {
    let manifest = Manifest::read(dataset_dir)?;
    let reports: Vec<CliResult<MatchReport>> = manifest
        .scenes
        .par_iter()
        .map(|entry| {
            let case = dataset::load_case(dataset_dir, entry)?;
            match_pair(&case.image_a, &case.image_b, &out.join(&entry.id), cfg)
        })
        .collect();
    let reports = reports.into_iter().collect::<CliResult<Vec<_>>>()?;
    manifest.write(out)?;
    Ok(reports)
}

pub fn run(args: &MatchArgs) -> CliResult<()> {
    let cfg = args.config.resolve()?;
    with_threads(args.config.threads, || -> CliResult<()> {
        if let Some(ds) = &args.dataset {
            let reports = match_dataset(ds, &args.out, &cfg)?;
            let degenerate = reports.iter().filter(|r| r.degenerate).count();
            println!("matched {} scenes ({degenerate} degenerate) into {}", reports.len(), args.out.display());
            return Ok(());
        }
        let (pa, pb) = match (&args.a, &args.b, &args.scene) {
            (Some(a), Some(b), _) => (a.clone(), b.clone()),
            (_, _, Some(scene)) => (scene.join(io::IMAGE_A), scene.join(io::IMAGE_B)),
            _ => return Err(CliError::usage("give --a and --b, --scene, or --dataset")),
        };
        let a = io::read_pgm(&pa)?;
        let b = io::read_pgm(&pb)?;
        let rep = match_pair(&a, &b, &args.out, &cfg)?;
        let ratio = rep.scale_ratio.map_or_else(|| "none".into(), |r| format!("{r:.3}"));
        println!(
            "{} matches, ratio {ratio}, window {}, degenerate {}",
            rep.matches, rep.window, rep.degenerate
        );
        Ok(())
    })?
}

pub fn homography_of(report: &MatchReport) -> Option<Homography> {
    report.homography.as_ref().and_then(|v| Homography::from_row_slice(v).ok())
}
