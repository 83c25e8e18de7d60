use std::path::Path;

use scalematch::io::{self, SceneFiles, SceneMeta};
use scalematch::synth::{generate_scene, GroundTruth, SceneSpec};

use crate::dataset::{Manifest, ManifestEntry};
use crate::error::CliResult;
use crate::{GenArgs, Profile};

/// Seed and spec of every scene the arguments describe.
pub fn scene_specs(args: &GenArgs) -> CliResult<Vec<(u64, SceneSpec)>> {
    let fixed = SceneSpec {
        width: args.width,
        height: args.height,
        richness: args.richness,
        scale: args.scale,
        rotation: args.rotation.to_radians(),
        translation: (args.tx, args.ty),
        perspective: (args.px, args.py),
        noise: args.noise,
    };
    fixed.validate()?;
    (0..args.count as u64)
        .map(|k| {
            let seed = args.seed + k;
            let spec = match args.profile {
                Profile::Fixed => fixed.clone(),
                Profile::Mixed => SceneSpec {
                    width: args.width,
                    height: args.height,
                    richness: args.richness,
                    ..SceneSpec::mixed(seed)
                },
            };
            spec.validate()?;
            Ok((seed, spec))
        })
        .collect()
}

/// Writes `scene_NNNN/` directories and the manifest.
pub fn write_dataset(out: &Path, specs: &[(u64, SceneSpec)]) -> CliResult<Manifest> {
    let mut scenes = Vec::with_capacity(specs.len());
    for (k, (seed, spec)) in specs.iter().enumerate() {
        let pair = generate_scene(*seed, spec)?;
        let gt = GroundTruth::from_pair(&pair)?;
        let id = io::scene_dir_name(k);
        let files = SceneFiles {
            image_a: pair.image_a,
            image_b: pair.image_b,
            h_ab: pair.h_ab,
            meta: Some(SceneMeta {
                seed: *seed,
                spec: spec.clone(),
                scale_ratio_gt: gt.scale_ratio_gt(),
            }),
        };
        io::write_scene(&out.join(&id), &files)?;
        scenes.push(ManifestEntry { id, seed: *seed, scale: spec.scale });
    }
    let manifest = Manifest { scenes };
    std::fs::create_dir_all(out).map_err(|e| scalematch::Error::Io { path: out.into(), source: e })?;
    manifest.write(out)?;
    Ok(manifest)
}

pub fn run(args: &GenArgs) -> CliResult<()> {
    let specs = scene_specs(args)?;
    let manifest = write_dataset(&args.out, &specs)?;
    println!("wrote {} scenes to {}", manifest.scenes.len(), args.out.display());
    Ok(())
}
