use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "dirpose", version, about = "Relative pose from spherical direction distributions")]
pub struct Cli {
    /// TOML file with defaults for any flag; flags win over the file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset of perspective pairs with depth and poses.
    Gen(GenArgs),
    /// Fit free spherical grids to a direction or rotation target.
    Fit(FitArgs),
    /// Run the two-stage rotation/translation pipeline over a dataset.
    Pipeline(PipelineArgs),
    /// Draw epipolar overlays for dataset pairs.
    Viz(VizArgs),
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenArgs {
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Field of view in degrees.
    #[arg(long)]
    pub fov: Option<f64>,
    /// Side length of the square perspective images.
    #[arg(long)]
    pub res: Option<usize>,
    /// Aperture of the look-at cone in degrees.
    #[arg(long)]
    pub cone: Option<f64>,
    /// Distance between the two camera centers in meters.
    #[arg(long)]
    pub baseline: Option<f64>,
    #[arg(long)]
    pub pano_width: Option<usize>,
    /// Resample pairs whose relative rotation exceeds this many degrees.
    #[arg(long)]
    pub max_rotation: Option<f64>,
    #[arg(long)]
    pub min_overlap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Dir,
    Rot9d,
    Rot6d,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub mode: Option<FitMode>,
    /// Target rotation angle in degrees about a seeded random axis (rotation modes).
    #[arg(long, allow_hyphen_values = true)]
    pub angle: Option<f64>,
    /// Target direction `x,y,z` (direction mode); seeded random when omitted.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    pub target: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Grid height and width.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Oracle,
    Perturbed,
    Gridfit,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Perturbed => "perturbed",
            Method::Gridfit => "gridfit",
        }
    }
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PipelineArgs {
    /// Dataset manifest (default: `<out>/manifest.jsonl`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated methods to evaluate.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub predictor: Option<Vec<Method>>,
    /// Rotation perturbation in degrees for the `perturbed` method.
    #[arg(long, allow_hyphen_values = true)]
    pub perturb: Option<f64>,
    #[arg(long)]
    pub pairs_limit: Option<usize>,
    /// Grid size for `gridfit`.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Fit steps for `gridfit`.
    #[arg(long, allow_hyphen_values = true)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct VizArgs {
    /// Dataset manifest (default: `<out>/manifest.jsonl`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Pair ids to draw (repeatable; default: the first pair).
    #[arg(long)]
    pub pair: Option<Vec<String>>,
    /// Number of image-1 points whose epipolar lines are drawn.
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<usize>,
    /// Estimated poses to draw next to the ground truth, read from
    /// `<out>/pairs_<method>.json` written by `pipeline`.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Option<Vec<Method>>,
}

/// Contents of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub gen: GenArgs,
    #[serde(default)]
    pub fit: FitArgs,
    #[serde(default)]
    pub pipeline: PipelineArgs,
    #[serde(default)]
    pub viz: VizArgs,
}

macro_rules! overlay {
    ($t:ty { $($f:ident),* $(,)? }) => {
        impl $t {
            /// Fields set on `self` win; the rest come from `file`.
            pub fn over(self, file: $t) -> $t {
                Self { $($f: self.$f.or(file.$f)),* }
            }
        }
    };
}

overlay!(GenArgs { pairs, fov, res, cone, baseline, pano_width, max_rotation, min_overlap });
overlay!(FitArgs { mode, angle, target, steps, kappa, grid, lr });
overlay!(PipelineArgs { manifest, predictor, perturb, pairs_limit, grid, steps, kappa });
overlay!(VizArgs { manifest, pair, points, method });
