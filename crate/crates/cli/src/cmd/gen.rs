use dirpose::io::{save_pair, write_manifest, write_png};
use dirpose::pano::{generate_pair, render_pano, DatasetConfig};
use rayon::prelude::*;
use serde::Serialize;

use super::MANIFEST;
use crate::args::GenArgs;
use crate::error::CliResult;
use crate::run::{write_json, Run};

const BUCKETS: usize = 10;

#[derive(Debug, Serialize)]
struct Summary {
    pairs: usize,
    mean_overlap: f64,
    max_rotation_deg: f64,
    /// Pair counts per overlap decile `[k/10, (k+1)/10)`, the last one closed.
    overlap_histogram: [usize; BUCKETS],
}

pub fn config(run: &Run, args: &GenArgs) -> DatasetConfig {
    let d = DatasetConfig::default();
    DatasetConfig {
        n_pairs: args.pairs.unwrap_or(d.n_pairs),
        cone_aperture_deg: args.cone.unwrap_or(d.cone_aperture_deg),
        baseline_m: args.baseline.unwrap_or(d.baseline_m),
        fov_deg: args.fov.unwrap_or(d.fov_deg),
        resolution: args.res.unwrap_or(d.resolution),
        pano_width: args.pano_width.unwrap_or(d.pano_width),
        max_rotation_deg: args.max_rotation.or(d.max_rotation_deg),
        min_overlap: args.min_overlap.unwrap_or(d.min_overlap),
        seed: run.stream("dataset"),
        ..d
    }
}

pub fn run(run: &Run, args: GenArgs) -> CliResult<()> {
    let cfg = config(run, &args);
    cfg.validate()?;
    run.write_metadata(&cfg)?;
    run.log(&format!("generating {} pairs", cfg.n_pairs))?;

    let done = (0..cfg.n_pairs)
        .into_par_iter()
        .map(|i| -> CliResult<_> {
            let pair = generate_pair(&cfg, i)?;
            let rec = save_pair(&run.out, &pair)?;
            let (c0, c1) = pair.meta.centers();
            for (name, c) in [(&pair.meta.pano0, c0), (&pair.meta.pano1, c1)] {
                let pano = render_pano(&cfg.scene, &c, cfg.pano_width, cfg.pano_width / 2)?;
                write_png(&run.path(format!("{name}.png")), &pano.color)?;
            }
            let angle = pair.pose.rotation.angle().to_degrees();
            Ok((rec, angle))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let records: Vec<_> = done.iter().map(|(r, _)| r.clone()).collect();
    write_manifest(&run.path(MANIFEST), &records)?;

    let mut hist = [0usize; BUCKETS];
    for r in &records {
        hist[((r.overlap * BUCKETS as f64) as usize).min(BUCKETS - 1)] += 1;
    }
    let summary = Summary {
        pairs: records.len(),
        mean_overlap: records.iter().map(|r| r.overlap).sum::<f64>() / records.len() as f64,
        max_rotation_deg: done.iter().map(|(_, a)| *a).fold(0.0, f64::max),
        overlap_histogram: hist,
    };
    write_json(&run.path("gen_summary.json"), &summary)?;

    println!("pairs: {}", summary.pairs);
    println!("mean overlap: {:.3}", summary.mean_overlap);
    println!("max rotation: {:.2} deg", summary.max_rotation_deg);
    println!("overlap histogram:");
    for (k, n) in hist.iter().enumerate() {
        println!("  [{:.1}, {:.1}{} {n}", k as f64 / 10.0, (k + 1) as f64 / 10.0, if k + 1 == BUCKETS { "]" } else { ")" });
    }
    run.log("done")?;
    Ok(())
}

