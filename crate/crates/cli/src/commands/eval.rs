use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scalematch::metrics::{corner_error_auc, mean, median, EvalReport, AUC_THRESHOLDS};
use scalematch::pipeline::{evaluate, run_pipeline, Matcher, Outcome};

use crate::commands::matching::read_outputs;
use crate::config::RunConfig;
use crate::dataset::{self, Case, Manifest, ManifestEntry};
use crate::error::{CliError, CliResult};
use crate::{with_threads, EvalArgs};

/// Evaluation of one scene; `baseline` holds the paired MNN run.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEval {
    pub report: EvalReport,
    pub baseline: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneResult {
    pub id: String,
    pub outcome: Result<SceneEval, String>,
}

/// Runs the configured matcher on a case and scores it.
pub fn evaluate_case(case: &Case, cfg: &RunConfig) -> CliResult<EvalReport> {
    let gt = case.ground_truth()?;
    let out = run_pipeline(&case.image_a, &case.image_b, &cfg.pipeline)?;
    Ok(evaluate((&out).into(), &case.h_ab, &gt, case.seed, case.scale(), &cfg.pipeline)?)
}

fn with_matcher(cfg: &RunConfig, matcher: Matcher) -> RunConfig {
    let mut c = cfg.clone();
    c.pipeline.matcher = matcher;
    c
}

fn eval_scene(dir: &Path, entry: &ManifestEntry, cfg: &RunConfig, compare: bool, saved: Option<&Path>) -> CliResult<SceneEval> {
    let case = dataset::load_case(dir, entry)?;
    if let Some(saved) = saved {
        let s = read_outputs(&saved.join(&entry.id))?;
        let outcome = Outcome {
            matches: &s.matches,
            flow: &s.flow,
            certainty: &s.certainty,
            scale_ratio: s.report.scale_ratio,
        };
        let gt = case.ground_truth()?;
        let report = evaluate(outcome, &case.h_ab, &gt, case.seed, case.scale(), &cfg.pipeline)?;
        return Ok(SceneEval { report, baseline: None });
    }
    let report = evaluate_case(&case, cfg)?;
    let baseline = if compare { Some(evaluate_case(&case, &with_matcher(cfg, Matcher::Mnn))?) } else { None };
    Ok(SceneEval { report, baseline })
}

/// Scores every scene of the dataset, in parallel, in manifest order. A
/// scene that fails to load or evaluate yields a failure row.
pub fn evaluate_dataset(dir: &Path, cfg: &RunConfig, compare: bool, saved: Option<&Path>) -> CliResult<Vec<SceneResult>> {
    let manifest = Manifest::read(dir)?;
    Ok(manifest
        .scenes
        .par_iter()
        .map(|entry| SceneResult {
            id: entry.id.clone(),
            outcome: eval_scene(dir, entry, cfg, compare, saved).map_err(|e| e.message),
        })
        .collect())
}

const BASELINE_COLUMNS: &str = "precision_mnn,recall_mnn,epe_mean_mnn,corner_error_mnn";

fn baseline_cells(r: &EvalReport) -> String {
    let epe = r.epe_mean.map_or_else(|| "nan".into(), |v| v.to_string());
    format!("{},{},{},{}", r.precision, r.recall, epe, r.corner_error)
}

pub fn csv(results: &[SceneResult], compare: bool) -> String {
    let mut s = format!("scene,{}", EvalReport::CSV_HEADER);
    if compare {
        s.push(',');
        s.push_str(BASELINE_COLUMNS);
    }
    s.push_str(",status\n");
    let fields = EvalReport::CSV_HEADER.split(',').count() + if compare { 4 } else { 0 };
    for r in results {
        s.push_str(&r.id);
        s.push(',');
        match &r.outcome {
            Ok(e) => {
                s.push_str(&e.report.csv_row());
                if let Some(b) = e.baseline.as_ref().filter(|_| compare) {
                    s.push(',');
                    s.push_str(&baseline_cells(b));
                }
                s.push_str(",ok");
            }
            Err(msg) => {
                s.push_str(&vec!["nan"; fields].join(","));
                s.push_str(",error: ");
                s.push_str(&msg.replace([',', '\n'], ";"));
            }
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenes: usize,
    pub auc: BTreeMap<String, f64>,
    pub precision_mean: Option<f64>,
    pub recall_mean: Option<f64>,
    pub epe_median: Option<f64>,
    pub scale_ratio_error_median: Option<f64>,
}

impl Aggregate {
    pub fn of<'a>(reports: impl Iterator<Item = &'a EvalReport> + Clone) -> Self {
        let col = |f: fn(&EvalReport) -> Option<f64>| reports.clone().filter_map(f).collect::<Vec<_>>();
        let corner: Vec<f64> = reports.clone().map(|r| r.corner_error).collect();
        Self {
            scenes: corner.len(),
            auc: corner_error_auc(&corner, &AUC_THRESHOLDS),
            precision_mean: mean(&col(|r| Some(r.precision))),
            recall_mean: mean(&col(|r| Some(r.recall))),
            epe_median: median(&col(|r| r.epe_median)),
            scale_ratio_error_median: median(&col(|r| r.scale_ratio_error)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenes: usize,
    pub failures: usize,
    pub matcher: Aggregate,
    pub baseline: Option<Aggregate>,
}

pub fn summarize(results: &[SceneResult], compare: bool) -> Summary {
    let ok: Vec<&SceneEval> = results.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    Summary {
        scenes: results.len(),
        failures: results.len() - ok.len(),
        matcher: Aggregate::of(ok.iter().map(|e| &e.report)),
        baseline: compare.then(|| Aggregate::of(ok.iter().filter_map(|e| e.baseline.as_ref()))),
    }
}

fn summary_path(args: &EvalArgs) -> PathBuf {
    args.summary.clone().unwrap_or_else(|| args.report.with_extension("json"))
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    let cfg = args.config.resolve()?;
    let results = with_threads(args.config.threads, || {
        evaluate_dataset(&args.dataset, &cfg, args.compare, args.matches.as_deref())
    })??;
    let mut f = scalematch::io::create_file(&args.report)?;
    f.write_all(csv(&results, args.compare).as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| CliError::io(format!("{}: {e}", args.report.display())))?;
    let summary = summarize(&results, args.compare);
    scalematch::io::write_json(&summary_path(args), &summary)?;
    let auc = |a: &Aggregate| format!("{:.3}", a.auc.get("3").copied().unwrap_or(f64::NAN));
    print!("{} scenes, {} failed, AUC@3px {}", summary.scenes, summary.failures, auc(&summary.matcher));
    match &summary.baseline {
        Some(b) => println!(" (MNN {})", auc(b)),
        None => println!(),
    }
    Ok(())
}
