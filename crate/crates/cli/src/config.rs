//! Run settings: an optional TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use spl_depth::evaluation::{FilterKind, SweepVariable};
use spl_depth::pml::DEFAULT_BETA;
use spl_depth::scene::{blocks_scene, toy_scene};
use spl_depth::{io, AcquisitionParams, FilterOptions, PmlConfig, Sbr, Scene};

use crate::failure::{CliResult, Failure};

/// Every tunable, settable from the config file or a flag of the same name
/// (snake_case in the file, kebab-case on the command line).
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Scene source: toy, blocks, csv or pgm
    #[arg(long, global = true)]
    pub scene: Option<String>,
    /// Side length of a procedural scene
    #[arg(long, global = true)]
    pub size: Option<usize>,
    /// Reflectivity image for csv/pgm scenes (CSV in [0, 1]; PGM codes map 0..maxval onto 0..1)
    #[arg(long, global = true)]
    pub reflectivity: Option<PathBuf>,
    /// Depth image for csv/pgm scenes (CSV in metres; PGM codes map 0..maxval onto 0..z_max)
    #[arg(long, global = true)]
    pub depth: Option<PathBuf>,
    /// Scene-average signal-to-background ratio; `inf` for no background
    #[arg(long, global = true)]
    pub sbr: Option<f64>,
    /// Scene-average signal photons per pixel
    #[arg(long, global = true)]
    pub signal_ppp: Option<f64>,
    /// Signal-extraction filter: rom, mode, consensus or oracle
    #[arg(long, global = true)]
    pub filter: Option<FilterKind>,
    /// TV penalty weight of the depth estimator
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Consensus outlier threshold in scene-wide standard deviations; `inf` disables it
    #[arg(long, global = true)]
    pub p_outlier: Option<f64>,
    /// Odd side length overriding the consensus neighbourhood size
    #[arg(long, global = true)]
    pub neighborhood_side: Option<usize>,
    /// Top-level random seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Depth-estimator iteration cap
    #[arg(long, global = true)]
    pub max_iterations: Option<usize>,
    /// Depth-estimator relative objective-change tolerance
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    /// Laser repetition period in seconds
    #[arg(long, global = true)]
    pub repetition_period: Option<f64>,
    /// Pulse width in seconds
    #[arg(long, global = true)]
    pub pulse_width: Option<f64>,
    /// Detector quantum efficiency
    #[arg(long, global = true)]
    pub quantum_efficiency: Option<f64>,
    /// Signal photons per pulse at unit reflectivity, before efficiency
    #[arg(long, global = true)]
    pub signal_flux: Option<f64>,
    /// Predictor bin width for verify-theory
    #[arg(long, global = true)]
    pub bin_width: Option<f64>,
    /// Sweep variable: sbr or signal_ppp
    #[arg(long, global = true)]
    pub variable: Option<SweepVariable>,
    /// Comma-separated sweep values
    #[arg(long, global = true, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Value held fixed for the variable not being swept
    #[arg(long, global = true)]
    pub fixed: Option<f64>,
    /// Trials per sweep point
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Comma-separated filters to compare in a sweep
    #[arg(long, global = true, value_delimiter = ',')]
    pub filters: Option<Vec<FilterKind>>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),*) => {
        Settings { $($field: $top.$field.or($base.$field)),* }
    };
}

impl Settings {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::config(format!("config {}: {e}", path.display())))
    }

    /// Flags in `self` win over values from `file`.
    pub fn over(self, file: Settings) -> Settings {
        let (top, base) = (self, file);
        overlay!(
            base, top, scene, size, reflectivity, depth, sbr, signal_ppp, filter, beta, p_outlier,
            neighborhood_side, seed, max_iterations, tolerance, repetition_period, pulse_width,
            quantum_efficiency, signal_flux, bin_width, variable, values, fixed, trials, filters
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn sbr(&self) -> CliResult<Sbr> {
        match self.sbr.unwrap_or(1.0) {
            v if v.is_infinite() && v > 0.0 => Ok(Sbr::Infinite),
            v if v.is_finite() && v > 0.0 => Ok(Sbr::Finite(v)),
            v => Err(Failure::config(format!("--sbr {v} must be > 0 or inf"))),
        }
    }

    pub fn signal_ppp(&self) -> CliResult<f64> {
        match self.signal_ppp.unwrap_or(2.0) {
            v if v.is_finite() && v > 0.0 => Ok(v),
            v => Err(Failure::config(format!("--signal-ppp {v} must be a positive number"))),
        }
    }

    pub fn filter(&self) -> FilterKind {
        self.filter.unwrap_or(FilterKind::Consensus)
    }

    pub fn filter_options(&self) -> CliResult<FilterOptions> {
        let p = self.p_outlier.unwrap_or(spl_depth::consensus::DEFAULT_OUTLIER_P);
        if !(p > 0.0) {
            return Err(Failure::config(format!("--p-outlier {p} must be > 0")));
        }
        if let Some(side) = self.neighborhood_side {
            if side % 2 == 0 {
                return Err(Failure::config(format!("--neighborhood-side {side} must be odd")));
            }
        }
        Ok(FilterOptions { outlier_p: p, neighborhood_side: self.neighborhood_side })
    }

    pub fn pml(&self) -> CliResult<PmlConfig> {
        let d = PmlConfig::default();
        let cfg = PmlConfig {
            beta: self.beta.unwrap_or(DEFAULT_BETA),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            tolerance: self.tolerance.unwrap_or(d.tolerance),
        };
        cfg.validate().map_err(Failure::config)?;
        Ok(cfg)
    }

    /// Base acquisition parameters before the SBR/PPP targets are applied.
    pub fn base_params(&self) -> CliResult<AcquisitionParams> {
        let d = AcquisitionParams::default();
        let p = AcquisitionParams {
            repetition_period: self.repetition_period.unwrap_or(d.repetition_period),
            pulse_width: self.pulse_width.unwrap_or(d.pulse_width),
            quantum_efficiency: self.quantum_efficiency.unwrap_or(d.quantum_efficiency),
            signal_flux: self.signal_flux.unwrap_or(d.signal_flux),
            ..d
        };
        p.validate().map_err(Failure::config)?;
        Ok(p)
    }

    /// Scene description with defaults filled in; `default` names the source
    /// used when none was given.
    pub fn scene_source(&self, default: &str) -> CliResult<SceneSource> {
        let kind = self.scene.as_deref().unwrap_or(default);
        let images = || -> CliResult<(PathBuf, PathBuf)> {
            let need = |p: &Option<PathBuf>, flag: &str| -> CliResult<PathBuf> {
                let p = p.clone().ok_or_else(|| Failure::config(format!("--scene {kind} needs --{flag}")))?;
                if !p.is_file() {
                    return Err(Failure::config(format!("{} does not exist", p.display())));
                }
                Ok(p)
            };
            Ok((need(&self.reflectivity, "reflectivity")?, need(&self.depth, "depth")?))
        };
        Ok(match kind {
            "toy" => SceneSource::Toy { size: self.size.unwrap_or(200) },
            "blocks" => SceneSource::Blocks { size: self.size.unwrap_or(128) },
            "csv" => {
                let (reflectivity, depth) = images()?;
                SceneSource::Csv { reflectivity, depth }
            }
            "pgm" => {
                let (reflectivity, depth) = images()?;
                SceneSource::Pgm { reflectivity, depth }
            }
            other => return Err(Failure::config(format!("unknown scene source {other:?}"))),
        })
    }
}

/// Where the ground truth comes from; recorded in manifests so later stages
/// can rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum SceneSource {
    Toy { size: usize },
    Blocks { size: usize },
    Csv { reflectivity: PathBuf, depth: PathBuf },
    Pgm { reflectivity: PathBuf, depth: PathBuf },
}

impl SceneSource {
    pub fn build(&self, params: &AcquisitionParams) -> spl_depth::Result<Scene> {
        match self {
            SceneSource::Toy { size } => toy_scene(*size),
            SceneSource::Blocks { size } => blocks_scene(*size),
            SceneSource::Csv { reflectivity, depth } => {
                io::scene_from_csv(&std::fs::read_to_string(reflectivity)?, &std::fs::read_to_string(depth)?)
            }
            SceneSource::Pgm { reflectivity, depth } => {
                io::scene_from_pgm(&std::fs::read(reflectivity)?, &std::fs::read(depth)?, params)
            }
        }
    }
}
