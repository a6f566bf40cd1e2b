use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;

use dirpose::grid_fit::{fit_direction, fit_rotation, FitConfig, FitReport, RotationVariant};
use dirpose::losses::LossBreakdown;
use dirpose::pano::pair_rng;
use dirpose::so3::{sample_cap, Rotation3};
use dirpose::sphere_grid::{GridSpec, UnitVec3};
use serde::Serialize;

use crate::args::{FitArgs, FitMode};
use crate::error::{CliError, CliResult};
use crate::run::{write_json, Run};

#[derive(Debug, Serialize)]
pub struct FitSettings {
    pub mode: FitMode,
    pub grid: usize,
    pub kappa: f64,
    pub angle_deg: f64,
    pub target: Option<[f64; 3]>,
    pub config: FitConfig,
}

#[derive(Debug, Serialize)]
struct ColumnSummary {
    target: [f64; 3],
    direction: [f64; 3],
    angular_error_deg: f64,
    final_loss: LossBreakdown,
}

impl ColumnSummary {
    fn new(target: &UnitVec3, r: &FitReport) -> Self {
        ColumnSummary {
            target: (*target).into(),
            direction: r.final_direction.into(),
            angular_error_deg: r.angular_error_deg,
            final_loss: r.final_loss,
        }
    }
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum Report {
    Direction {
        mode: FitMode,
        steps: usize,
        #[serde(flatten)]
        fit: ColumnSummary,
    },
    Rotation {
        mode: FitMode,
        steps: usize,
        target_rotation: [f64; 9],
        rotation: [f64; 9],
        angle_deg: f64,
        geodesic_error_deg: f64,
        columns: Vec<ColumnSummary>,
    },
}

pub fn settings(run: &Run, args: &FitArgs) -> CliResult<FitSettings> {
    let d = FitConfig::default();
    let target = match args.target.as_deref() {
        None => None,
        Some(&[x, y, z]) => Some([x, y, z]),
        Some(v) => return Err(CliError::usage(format!("--target needs three components x,y,z, got {}", v.len()))),
    };
    Ok(FitSettings {
        mode: args.mode.unwrap_or(FitMode::Dir),
        grid: args.grid.unwrap_or(64),
        kappa: args.kappa.unwrap_or(10.0),
        angle_deg: args.angle.unwrap_or(45.0),
        target,
        config: FitConfig {
            steps: args.steps.unwrap_or(d.steps),
            learning_rate: args.lr.unwrap_or(d.learning_rate),
            seed: run.stream("fit"),
            ..d
        },
    })
}

pub fn run(run: &Run, args: FitArgs) -> CliResult<()> {
    let s = settings(run, &args)?;
    s.config.validate()?;
    let spec = GridSpec::square(s.grid)?;
    if s.mode != FitMode::Dir && s.target.is_some() {
        return Err(CliError::usage("--target applies to --mode dir; rotation modes take --angle"));
    }
    if !(s.angle_deg.is_finite() && (0.0..=180.0).contains(&s.angle_deg)) {
        return Err(CliError::usage(format!("--angle must be in [0, 180], got {}", s.angle_deg)));
    }
    run.write_metadata(&s)?;
    run.log("fitting")?;
    let mut rng = pair_rng(run.stream("fit-target"), 0);
    let random_dir = sample_cap(&UnitVec3::z_axis(), PI, &mut rng);

    let mut trace = String::new();
    let report = match s.mode {
        FitMode::Dir => {
            let target = match s.target {
                Some([x, y, z]) => UnitVec3::new(x, y, z)?,
                None => random_dir,
            };
            let r = fit_direction(&target, s.kappa, spec, &s.config)?;
            trace.push_str("step,loss\n");
            for (i, l) in r.loss_trace.iter().enumerate() {
                writeln!(trace, "{i},{l:e}").expect("write to string");
            }
            println!("angular error: {:.4} deg", r.angular_error_deg);
            Report::Direction {
                mode: s.mode,
                steps: s.config.steps,
                fit: ColumnSummary::new(&target, &r),
            }
        }
        FitMode::Rot9d | FitMode::Rot6d => {
            let variant = if s.mode == FitMode::Rot9d { RotationVariant::Svd9d } else { RotationVariant::Gs6d };
            let target = Rotation3::from_axis_angle(&random_dir, s.angle_deg.to_radians());
            let (rotation, r) = fit_rotation(&target, s.kappa, spec, &s.config, variant)?;
            trace.push_str(if r.columns.len() == 3 { "step,col0,col1,col2\n" } else { "step,col0,col1\n" });
            for i in 0..s.config.steps {
                let row: Vec<String> = r.columns.iter().map(|c| format!("{:e}", c.loss_trace[i])).collect();
                writeln!(trace, "{i},{}", row.join(",")).expect("write to string");
            }
            println!("geodesic error: {:.4} deg", r.geodesic_error_deg);
            Report::Rotation {
                mode: s.mode,
                steps: s.config.steps,
                target_rotation: target.to_row_major(),
                rotation: rotation.to_row_major(),
                angle_deg: s.angle_deg,
                geodesic_error_deg: r.geodesic_error_deg,
                columns: r.columns.iter().enumerate().map(|(k, c)| ColumnSummary::new(&target.column(k), c)).collect(),
            }
        }
    };
    write_json(&run.path("fit_report.json"), &report)?;
    fs::write(run.path("fit_trace.csv"), trace)?;
    run.log("done")?;
    Ok(())
}
