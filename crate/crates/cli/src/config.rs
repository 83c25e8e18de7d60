//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key must be known and
//! every value is range-checked when the file is loaded; a later assignment
//! of the same key wins.

use std::fmt::Write as _;
use std::path::Path;

use scalematch::pipeline::{Matcher, PipelineConfig};

use crate::error::CliError;

/// All tunables of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
}

pub const KEYS: &[&str] = &[
    "temperature",
    "theta_e",
    "theta_m",
    "max_window",
    "matcher",
    "adaptive_scale",
    "selection_radius",
    "fixed_sigma",
    "sample_blur",
    "hist_weight",
    "search_radius",
    "smooth_iters",
    "smooth_weight",
    "certainty_floor",
    "ransac_iterations",
    "ransac_threshold",
    "seed",
    "sample_stride",
    "min_certainty",
    "scale_min_separation",
    "scale_min_pairs",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("bad value {value:?} for {key}")))
}

fn matcher_name(m: Matcher) -> &'static str {
    match m {
        Matcher::Amnn => "amnn",
        Matcher::Mnn => "mnn",
    }
}

pub fn parse_matcher(value: &str) -> Result<Matcher, CliError> {
    match value {
        "amnn" => Ok(Matcher::Amnn),
        "mnn" => Ok(Matcher::Mnn),
        other => Err(CliError::usage(format!("unknown matcher {other:?} (amnn or mnn)"))),
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.pipeline.ransac.seed
    }

    /// Assigns one key without validating the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let p = &mut self.pipeline;
        let value = value.trim();
        match key {
            "temperature" => p.temperature = parse(key, value)?,
            "theta_e" => p.theta_e = parse(key, value)?,
            "theta_m" => p.theta_m = parse(key, value)?,
            "max_window" => p.max_window = parse(key, value)?,
            "matcher" => p.matcher = parse_matcher(value)?,
            "adaptive_scale" => p.features.adaptive_scale = parse(key, value)?,
            "selection_radius" => p.features.selection_radius = parse(key, value)?,
            "fixed_sigma" => p.features.fixed_sigma = parse(key, value)?,
            "sample_blur" => p.features.sample_blur = parse(key, value)?,
            "hist_weight" => p.features.hist_weight = parse(key, value)?,
            "search_radius" => {
                let r: Vec<usize> = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_, _>>()?;
                p.refinement.search_radius = r
                    .try_into()
                    .map_err(|_| CliError::usage("search_radius takes three values for levels 2,1,0"))?;
            }
            "smooth_iters" => p.refinement.smooth_iters = parse(key, value)?,
            "smooth_weight" => p.refinement.smooth_weight = parse(key, value)?,
            "certainty_floor" => p.refinement.certainty_floor = parse(key, value)?,
            "ransac_iterations" => p.ransac.iterations = parse(key, value)?,
            "ransac_threshold" => p.ransac.inlier_threshold = parse(key, value)?,
            "seed" => p.ransac.seed = parse(key, value)?,
            "sample_stride" => p.sample_stride = parse(key, value)?,
            "min_certainty" => p.min_certainty = parse(key, value)?,
            "scale_min_separation" => p.scale_min_separation = parse(key, value)?,
            "scale_min_pairs" => p.scale_min_pairs = parse(key, value)?,
            other => return Err(CliError::usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let r = &self.pipeline.ransac;
        if r.iterations == 0 {
            return Err(CliError::usage("ransac_iterations must be at least 1"));
        }
        if !(r.inlier_threshold > 0.0 && r.inlier_threshold.is_finite()) {
            return Err(CliError::usage("ransac_threshold must be positive"));
        }
        self.pipeline.validate().map_err(|e| CliError::usage(e.to_string()))
    }

    pub fn parse_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value)
                .map_err(|e| CliError::usage(format!("line {}: {}", n + 1, e.message)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = scalematch::io::read_text(path)?;
        Self::parse_text(&text).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message)))
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let r = p.refinement.search_radius;
        let values: Vec<String> = vec![
            p.temperature.to_string(),
            p.theta_e.to_string(),
            p.theta_m.to_string(),
            p.max_window.to_string(),
            matcher_name(p.matcher).to_string(),
            p.features.adaptive_scale.to_string(),
            p.features.selection_radius.to_string(),
            p.features.fixed_sigma.to_string(),
            p.features.sample_blur.to_string(),
            p.features.hist_weight.to_string(),
            format!("{},{},{}", r[0], r[1], r[2]),
            p.refinement.smooth_iters.to_string(),
            p.refinement.smooth_weight.to_string(),
            p.refinement.certainty_floor.to_string(),
            p.ransac.iterations.to_string(),
            p.ransac.inlier_threshold.to_string(),
            p.ransac.seed.to_string(),
            p.sample_stride.to_string(),
            p.min_certainty.to_string(),
            p.scale_min_separation.to_string(),
            p.scale_min_pairs.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
