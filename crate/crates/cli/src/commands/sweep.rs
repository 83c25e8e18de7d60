use std::path::Path;

use rayon::prelude::*;

use scalematch::metrics::{error_auc, match_pr, mean, median, scale_ratio_error};
use scalematch::pipeline::{coarse_match, coarse_scores, Matcher};
use scalematch::synth::{SceneSpec, PATCH};
use scalematch::ScoreMatrix;

use crate::commands::eval::evaluate_case;
use crate::config::RunConfig;
use crate::dataset::{self, Case, Manifest, ManifestEntry};
use crate::error::{CliError, CliResult};
use crate::{with_threads, SweepArgs, SweepParam};

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub param: SweepParam,
    pub compare: bool,
    pub coarse_only: bool,
}

/// Metrics of one scene at one parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CaseMetrics {
    /// Infinite when the estimate is degenerate but the truth is not.
    pub ratio_error: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub epe_median: Option<f64>,
    pub corner_error: Option<f64>,
    pub recall_mnn: Option<f64>,
    pub corner_error_mnn: Option<f64>,
}

/// One aggregate row per swept value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub scenes: usize,
    pub failures: usize,
    pub precision_mean: Option<f64>,
    pub recall_mean: Option<f64>,
    pub recall_median: Option<f64>,
    pub ratio_error_mean: Option<f64>,
    pub ratio_error_median: Option<f64>,
    pub epe_median: Option<f64>,
    pub auc: Option<[f64; 3]>,
    pub recall_mnn_median: Option<f64>,
    /// Median over scenes of the per-scene AMNN minus MNN recall.
    pub recall_gap_median: Option<f64>,
    pub auc3_mnn: Option<f64>,
}

pub const CSV_HEADER: &str = "param,value,scenes,failures,precision_mean,recall_mean,recall_median,ratio_error_mean,ratio_error_median,epe_median,auc3,auc5,auc10,recall_mnn_median,recall_gap_median,auc3_mnn";

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::ThetaE => "theta_e",
        SweepParam::Scale => "scale",
        SweepParam::Resolution => "resolution",
    }
}

impl SweepRow {
    pub fn csv_row(&self, param: SweepParam) -> String {
        let o = |v: Option<f64>| v.map_or_else(|| "nan".into(), |x| x.to_string());
        let auc = |k: usize| o(self.auc.map(|a| a[k]));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            param_name(param),
            self.value,
            self.scenes,
            self.failures,
            o(self.precision_mean),
            o(self.recall_mean),
            o(self.recall_median),
            o(self.ratio_error_mean),
            o(self.ratio_error_median),
            o(self.epe_median),
            auc(0),
            auc(1),
            auc(2),
            o(self.recall_mnn_median),
            o(self.recall_gap_median),
            o(self.auc3_mnn)
        )
    }
}

/// Longest edge scaled to `edge`, each side rounded to a multiple of the
/// patch size.
fn resized(spec: &SceneSpec, edge: f64) -> CliResult<SceneSpec> {
    let longest = spec.width.max(spec.height) as f64;
    let side = |s: usize| ((s as f64 * edge / longest / PATCH as f64).round() as usize).max(1) * PATCH;
    if !(edge >= PATCH as f64 && edge.is_finite()) {
        return Err(CliError::usage(format!("resolution {edge} is below one patch")));
    }
    Ok(SceneSpec { width: side(spec.width), height: side(spec.height), ..spec.clone() })
}

fn check_value(param: SweepParam, v: f64) -> CliResult<()> {
    let ok = v.is_finite() && v > 0.0;
    if !ok {
        return Err(CliError::usage(format!("{} value {v} must be positive", param_name(param))));
    }
    Ok(())
}

/// The case evaluated at one value. Scale and resolution regenerate the
/// scene from its recorded spec and seed.
fn case_at(base: &Case, param: SweepParam, v: f64) -> CliResult<Case> {
    let spec = || {
        base.spec
            .clone()
            .ok_or_else(|| CliError::io("scene has no meta.json to regenerate from"))
    };
    match param {
        SweepParam::ThetaE => Ok(base.clone()),
        SweepParam::Scale => Case::from_spec(base.seed, &SceneSpec { scale: v, ..spec()? }),
        SweepParam::Resolution => Case::from_spec(base.seed, &resized(&spec()?, v)?),
    }
}

fn config_at(cfg: &RunConfig, param: SweepParam, v: f64) -> RunConfig {
    let mut c = cfg.clone();
    if param == SweepParam::ThetaE {
        c.pipeline.theta_e = v;
    }
    c
}

fn with_matcher(cfg: &RunConfig, matcher: Matcher) -> RunConfig {
    let mut c = cfg.clone();
    c.pipeline.matcher = matcher;
    c
}

fn coarse_metrics(case: &Case, scores: &ScoreMatrix, cfg: &RunConfig) -> CliResult<(Option<f64>, f64, f64)> {
    let gt = case.ground_truth()?;
    let (report, _, matches) = coarse_match(scores, &cfg.pipeline)?;
    let (precision, recall) = match_pr(&matches, &gt.matches_gt);
    let err = match (report.scale_ratio, gt.scale_ratio_gt()) {
        (None, Some(_)) => Some(f64::INFINITY),
        (est, truth) => scale_ratio_error(est, truth),
    };
    Ok((err, precision, recall))
}

fn case_metrics(case: &Case, cfg: &RunConfig, opts: SweepOptions, scores: Option<&ScoreMatrix>) -> CliResult<CaseMetrics> {
    let mnn = with_matcher(cfg, Matcher::Mnn);
    if opts.coarse_only {
        let owned;
        let scores = match scores {
            Some(s) => s,
            None => {
                owned = coarse_scores(&case.image_a, &case.image_b, &cfg.pipeline)?;
                &owned
            }
        };
        let (ratio_error, precision, recall) = coarse_metrics(case, scores, cfg)?;
        let recall_mnn = if opts.compare { Some(coarse_metrics(case, scores, &mnn)?.2) } else { None };
        return Ok(CaseMetrics { ratio_error, precision, recall, recall_mnn, ..Default::default() });
    }
    let r = evaluate_case(case, cfg)?;
    let b = if opts.compare { Some(evaluate_case(case, &mnn)?) } else { None };
    let ratio_error = match (r.scale_ratio_est, r.scale_ratio_gt) {
        (None, Some(_)) => Some(f64::INFINITY),
        _ => r.scale_ratio_error,
    };
    Ok(CaseMetrics {
        ratio_error,
        precision: r.precision,
        recall: r.recall,
        epe_median: r.epe_median,
        corner_error: Some(r.corner_error),
        recall_mnn: b.as_ref().map(|b| b.recall),
        corner_error_mnn: b.as_ref().map(|b| b.corner_error),
    })
}

/// Metrics of one scene at every value.
fn scene_sweep(dir: &Path, entry: &ManifestEntry, values: &[f64], cfg: &RunConfig, opts: SweepOptions) -> Vec<CliResult<CaseMetrics>> {
    let base = match dataset::load_case(dir, entry) {
        Ok(c) => c,
        Err(e) => return values.iter().map(|_| Err(e.clone())).collect(),
    };
    // Scores do not depend on the entropy threshold.
    let shared = (opts.param == SweepParam::ThetaE && opts.coarse_only)
        .then(|| coarse_scores(&base.image_a, &base.image_b, &cfg.pipeline).map_err(CliError::from));
    values
        .iter()
        .map(|&v| {
            let c = config_at(cfg, opts.param, v);
            match &shared {
                Some(Ok(s)) => case_metrics(&base, &c, opts, Some(s)),
                Some(Err(e)) => Err(e.clone()),
                None => case_metrics(&case_at(&base, opts.param, v)?, &c, opts, None),
            }
        })
        .collect()
}

fn aggregate(value: f64, cells: &[&CliResult<CaseMetrics>], opts: SweepOptions) -> SweepRow {
    let ok: Vec<&CaseMetrics> = cells.iter().filter_map(|c| c.as_ref().ok()).collect();
    let col = |f: &dyn Fn(&CaseMetrics) -> Option<f64>| ok.iter().filter_map(|m| f(m)).collect::<Vec<f64>>();
    let recall = col(&|m| Some(m.recall));
    let ratio = col(&|m| m.ratio_error);
    let corner = col(&|m| m.corner_error);
    let corner_mnn = col(&|m| m.corner_error_mnn);
    let full = !opts.coarse_only && !ok.is_empty();
    SweepRow {
        value,
        scenes: cells.len(),
        failures: cells.len() - ok.len(),
        precision_mean: mean(&col(&|m| Some(m.precision))),
        recall_mean: mean(&recall),
        recall_median: median(&recall),
        ratio_error_mean: mean(&ratio),
        ratio_error_median: median(&ratio),
        epe_median: median(&col(&|m| m.epe_median)),
        auc: full.then(|| [3.0, 5.0, 10.0].map(|t| error_auc(&corner, t))),
        recall_mnn_median: median(&col(&|m| m.recall_mnn)),
        recall_gap_median: median(&col(&|m| m.recall_mnn.map(|r| m.recall - r))),
        auc3_mnn: (full && opts.compare).then(|| error_auc(&corner_mnn, 3.0)),
    }
}

/// Scenes run in parallel; rows follow the order of `values`.
pub fn sweep(dir: &Path, values: &[f64], cfg: &RunConfig, opts: SweepOptions) -> CliResult<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::usage("sweep needs at least one value"));
    }
    for &v in values {
        check_value(opts.param, v)?;
        if opts.param == SweepParam::ThetaE {
            config_at(cfg, opts.param, v).validate()?;
        }
    }
    let manifest = Manifest::read(dir)?;
    let per_scene: Vec<Vec<CliResult<CaseMetrics>>> = manifest
        .scenes
        .par_iter()
        .map(|e| scene_sweep(dir, e, values, cfg, opts))
        .collect();
    Ok(values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let cells: Vec<&CliResult<CaseMetrics>> = per_scene.iter().map(|s| &s[k]).collect();
            aggregate(v, &cells, opts)
        })
        .collect())
}

pub fn csv(rows: &[SweepRow], param: SweepParam) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row(param));
        s.push('\n');
    }
    s
}

pub fn run(args: &SweepArgs) -> CliResult<()> {
    let cfg = args.config.resolve()?;
    let opts = SweepOptions { param: args.param, compare: args.compare, coarse_only: args.coarse_only };
    let rows = with_threads(args.config.threads, || sweep(&args.dataset, &args.values, &cfg, opts))??;
    scalematch::io::write_text(&args.out, &csv(&rows, args.param))?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}
