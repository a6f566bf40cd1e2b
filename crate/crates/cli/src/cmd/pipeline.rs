use std::fs;
use std::path::PathBuf;

use dirpose::epipolar_eval::{
    results_csv, run_two_stage, GridFitPredictor, OraclePredictor, PipelineConfig, PipelineReport,
};
use dirpose::grid_fit::FitConfig;
use dirpose::io::load_pair;
use dirpose::sphere_grid::GridSpec;
use dirpose::PosePair;
use rayon::prelude::*;
use serde::Serialize;

use super::open_manifest;
use crate::args::{Method, PipelineArgs};
use crate::error::{CliError, CliResult};
use crate::run::{write_json, Run};

#[derive(Debug, Serialize)]
pub struct PipelineSettings {
    pub manifest: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub perturb_deg: f64,
    pub pairs_limit: Option<usize>,
    pub grid: usize,
    pub steps: usize,
    pub kappa: f64,
}

pub fn report_file(method: Method) -> String {
    format!("pairs_{}.json", method.name())
}

pub fn run(run: &Run, args: PipelineArgs) -> CliResult<()> {
    let d = GridFitPredictor::default();
    let mut methods = args.predictor.unwrap_or_else(|| vec![Method::Oracle]);
    methods.dedup();
    let s = PipelineSettings {
        manifest: args.manifest,
        methods,
        perturb_deg: args.perturb.unwrap_or(15.0),
        pairs_limit: args.pairs_limit,
        grid: args.grid.unwrap_or(d.spec.height()),
        steps: args.steps.unwrap_or(d.config.steps),
        kappa: args.kappa.unwrap_or(d.kappa),
    };
    if s.methods.is_empty() {
        return Err(CliError::usage("no predictor selected"));
    }
    if s.pairs_limit == Some(0) {
        return Err(CliError::usage("--pairs-limit must be at least 1"));
    }
    if !(0.0..90.0).contains(&s.perturb_deg) {
        return Err(CliError::usage(format!("--perturb must be in [0, 90) degrees, got {}", s.perturb_deg)));
    }
    let (dir, mut records) = open_manifest(run, s.manifest.clone())?;
    if let Some(n) = s.pairs_limit {
        records.truncate(n);
    }
    if records.is_empty() {
        return Err(CliError::usage("manifest lists no pairs"));
    }
    run.write_metadata(&s)?;
    run.log(&format!("evaluating {} pairs", records.len()))?;
    let pairs: Vec<PosePair> = records.par_iter().map(|r| load_pair(&dir, r)).collect::<Result<_, _>>()?;
    let k = pairs[0].intrinsics()?;

    let gridfit = GridFitPredictor {
        spec: GridSpec::square(s.grid)?,
        kappa: s.kappa,
        config: FitConfig {
            steps: s.steps,
            seed: run.stream("gridfit"),
            ..d.config
        },
        ..d
    };
    gridfit.config.validate()?;
    let mut reports: Vec<PipelineReport> = Vec::new();
    for &m in &s.methods {
        let exact = PipelineConfig {
            perturb_deg: 0.0,
            seed: 0,
        };
        let report = match m {
            Method::Oracle => run_two_stage(m.name(), &pairs, &OraclePredictor, &OraclePredictor, &exact, &k)?,
            Method::Perturbed => {
                let cfg = PipelineConfig {
                    perturb_deg: s.perturb_deg,
                    seed: run.stream("perturb"),
                };
                run_two_stage(m.name(), &pairs, &OraclePredictor, &OraclePredictor, &cfg, &k)?
            }
            Method::Gridfit => run_two_stage(m.name(), &pairs, &gridfit, &gridfit, &exact, &k)?,
        };
        if report.results.is_empty() {
            return Err(CliError::usage(format!("{}: every pair was skipped", m.name())));
        }
        write_json(&run.path(report_file(m)), &report)?;
        let (rs, ts) = (report.rotation_stats()?, report.translation_stats()?);
        println!(
            "{}: {} pairs, {} skipped; rotation mean {:.6} deg median {:.6} deg; translation mean {:.6} deg median {:.6} deg",
            m.name(),
            report.results.len(),
            report.skipped.len(),
            rs.mean_deg,
            rs.median_deg,
            ts.mean_deg,
            ts.median_deg
        );
        reports.push(report);
    }
    let csv = results_csv(&reports)?;
    fs::write(run.path("results.csv"), &csv)?;
    print!("{csv}");
    run.log("done")?;
    Ok(())
}
