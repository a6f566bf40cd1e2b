use std::fs;
use std::path::PathBuf;

use dirpose::epipolar_eval::{render_epipolar_overlay, PipelineReport};
use dirpose::io::{load_pair, write_png};
use dirpose::pano::pair_rng;
use dirpose::{PosePair, RelativePose};
use rand::Rng;
use serde::Serialize;

use super::open_manifest;
use super::pipeline::report_file;
use crate::args::{Method, VizArgs};
use crate::error::{CliError, CliResult};
use crate::run::Run;

#[derive(Debug, Serialize)]
pub struct VizSettings {
    pub manifest: Option<PathBuf>,
    pub pairs: Option<Vec<String>>,
    pub points: usize,
    pub methods: Vec<Method>,
}

/// Up to `count` pixels of image 1 whose depth puts them inside image 0.
fn covisible_points(pair: &PosePair, count: usize, seed: u64, index: usize) -> CliResult<Vec<(f64, f64)>> {
    let k = pair.intrinsics()?;
    let st = pair.meta.metric_translation()?;
    let rt = pair.pose.rotation.transpose();
    let mut rng = pair_rng(seed, index as u64);
    let (w, h) = (k.width, k.height);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 200 {
        if out.len() == count {
            break;
        }
        let (u, v) = (rng.random_range(0..w), rng.random_range(0..h));
        let z = pair.depth1.pixel(u, v)[0] as f64;
        let x0 = rt.apply(&(k.pixel_ray(u as f64, v as f64) * z - st));
        if matches!(k.project(&x0), Some((pu, pv)) if k.contains(pu, pv)) {
            out.push((u as f64, v as f64));
        }
    }
    Ok(out)
}

pub fn run(run: &Run, args: VizArgs) -> CliResult<()> {
    let s = VizSettings {
        manifest: args.manifest,
        pairs: args.pair,
        points: args.points.unwrap_or(8),
        methods: args.method.unwrap_or_default(),
    };
    let (dir, records) = open_manifest(run, s.manifest.clone())?;
    let ids: Vec<String> = match &s.pairs {
        Some(ids) => ids.clone(),
        None => records.first().map(|r| vec![r.id.clone()]).unwrap_or_default(),
    };
    let mut chosen = Vec::new();
    for id in &ids {
        let Some(idx) = records.iter().position(|r| &r.id == id) else {
            return Err(CliError::usage(format!("unknown pair id {id:?}")));
        };
        chosen.push(idx);
    }
    let mut estimates = Vec::new();
    for &m in &s.methods {
        let path = run.path(report_file(m));
        if !path.is_file() {
            return Err(CliError::usage(format!(
                "{} does not exist; run `dirpose pipeline --predictor {}` first",
                path.display(),
                m.name()
            )));
        }
        let report: PipelineReport = serde_json::from_str(&fs::read_to_string(&path)?)?;
        estimates.push((m, report));
    }
    run.write_metadata(&s)?;
    let viz_dir = run.path("viz");
    fs::create_dir_all(&viz_dir)?;
    let seed = run.stream("viz");
    for idx in chosen {
        let pair = load_pair(&dir, &records[idx])?;
        let mut poses: Vec<(String, RelativePose)> = vec![("truth".into(), pair.pose)];
        for (m, report) in &estimates {
            if let Some(r) = report.results.iter().find(|r| r.id == pair.id) {
                poses.push((m.name().into(), r.estimate));
            }
        }
        let points = covisible_points(&pair, s.points, seed, idx)?;
        let img = render_epipolar_overlay(&pair, &poses, &points)?;
        let path = viz_dir.join(format!("{}_overlay.png", pair.id));
        write_png(&path, &img)?;
        let names: Vec<&str> = poses.iter().map(|(n, _)| n.as_str()).collect();
        println!("{}: {} points, poses [{}]", path.display(), points.len(), names.join(", "));
    }
    run.log("done")?;
    Ok(())
}
