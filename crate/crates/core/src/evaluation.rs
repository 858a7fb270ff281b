//! RMSE metric and the SBR / signal-PPP sweep harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{consensus_filter_scene, plan_neighborhood, NeighborhoodPlan, DEFAULT_OUTLIER_P};
use crate::cube::{CensoredCube, TimestampCube};
use crate::error::{Error, Result};
use crate::mode::mode_filter_scene;
use crate::pml::{pml_depth, DepthImage, PmlConfig};
use crate::rom::rom_filter_scene;
use crate::scene::{AcquisitionParams, Sbr, Scene};
use crate::simulator::{configure_for_targets, simulate_scene, RngSeed};

/// √(Σ(z − ẑ)² / (N_i·N_j)). Absent pixels on either side count as 0 m.
pub fn rmse(truth: &DepthImage, estimate: &DepthImage) -> Result<f64> {
    let dims = |d: &DepthImage| (d.width(), d.height());
    if dims(truth) != dims(estimate) {
        return Err(Error::DimensionMismatch { expected: dims(truth), got: dims(estimate) });
    }
    let sum: f64 = truth
        .filled()
        .iter()
        .zip(estimate.filled())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((sum / truth.depth().len() as f64).sqrt())
}

/// Signal-extraction stage placed in front of the depth estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Rom,
    Mode,
    Consensus,
    /// Every detection of a background-free acquisition, no pooling.
    Oracle,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [FilterKind::Rom, FilterKind::Mode, FilterKind::Consensus, FilterKind::Oracle];

    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Rom => "rom",
            FilterKind::Mode => "mode",
            FilterKind::Consensus => "consensus",
            FilterKind::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown filter {s:?}")))
    }
}

/// Filter settings that are not acquisition parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterOptions {
    /// Outlier threshold of the consensus filter; `inf` disables rejection.
    pub outlier_p: f64,
    /// Overrides the planned super-neighbourhood side.
    pub neighborhood_side: Option<usize>,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self { outlier_p: DEFAULT_OUTLIER_P, neighborhood_side: None }
    }
}

/// Runs one signal-extraction filter. `mean_reflectivity` sizes the
/// consensus super-neighbourhood.
pub fn apply_filter(
    kind: FilterKind,
    cube: &TimestampCube,
    mean_reflectivity: f64,
    options: &FilterOptions,
) -> Result<CensoredCube> {
    let params = cube.params();
    Ok(match kind {
        FilterKind::Rom => rom_filter_scene(cube, params),
        FilterKind::Mode => mode_filter_scene(cube, params),
        FilterKind::Consensus => {
            let plan = match options.neighborhood_side {
                Some(side) => {
                    if side % 2 == 0 {
                        return Err(Error::Config(format!("neighbourhood side {side} must be odd")));
                    }
                    let sigma =
                        params.quantum_efficiency * mean_reflectivity * params.signal_flux * params.pulses as f64;
                    NeighborhoodPlan::with_side(side, sigma)
                }
                None => plan_neighborhood(mean_reflectivity, params),
            };
            if !(options.outlier_p > 0.0) {
                return Err(Error::Config(format!("outlier threshold {} must be > 0", options.outlier_p)));
            }
            consensus_filter_scene(cube, plan, params, options.outlier_p)
        }
        FilterKind::Oracle => {
            if params.background != 0.0 {
                return Err(Error::Config(format!(
                    "the signal oracle needs a background-free acquisition, got B = {}",
                    params.background
                )));
            }
            CensoredCube::passthrough(cube)
        }
    })
}

/// Depth estimate produced by one filter + estimator run.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub censored: CensoredCube,
    pub depth: DepthImage,
    /// The filter kept nothing anywhere; `depth` is blank.
    pub blank: bool,
    pub converged: bool,
}

/// Filter, then penalised ML. An all-empty filter output gives a blank image
/// instead of an error.
pub fn reconstruct(
    kind: FilterKind,
    cube: &TimestampCube,
    mean_reflectivity: f64,
    options: &FilterOptions,
    pml: &PmlConfig,
) -> Result<Reconstruction> {
    let censored = apply_filter(kind, cube, mean_reflectivity, options)?;
    match pml_depth(&censored, cube.params(), pml) {
        Ok(out) => Ok(Reconstruction { censored, depth: out.depth, blank: false, converged: out.converged }),
        Err(Error::NoData) => {
            let depth = DepthImage::blank(cube.width(), cube.height());
            Ok(Reconstruction { censored, depth, blank: true, converged: true })
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Sbr,
    SignalPpp,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::Sbr => "sbr",
            SweepVariable::SignalPpp => "signal_ppp",
        }
    }
}

impl std::str::FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sbr" => Ok(SweepVariable::Sbr),
            "signal_ppp" | "signal-ppp" => Ok(SweepVariable::SignalPpp),
            _ => Err(Error::Config(format!("unknown sweep variable {s:?}"))),
        }
    }
}

/// One sweep: a scene, the swept variable and its values, the value held
/// fixed for the other variable, trials per point and filters to compare.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub scene: Scene,
    pub variable: SweepVariable,
    /// For an SBR sweep, `inf` means no background.
    pub values: Vec<f64>,
    pub fixed: f64,
    pub trials: usize,
    pub filters: Vec<FilterKind>,
    pub pml: PmlConfig,
    pub options: FilterOptions,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("sweep needs at least one trial".into()));
        }
        if self.filters.is_empty() {
            return Err(Error::Config("sweep needs at least one filter".into()));
        }
        self.pml.validate()
    }

    /// (SBR, signal PPP) at sweep value `v`.
    pub fn point(&self, v: f64) -> (Sbr, f64) {
        let sbr = |x: f64| if x.is_infinite() { Sbr::Infinite } else { Sbr::Finite(x) };
        match self.variable {
            SweepVariable::Sbr => (sbr(v), self.fixed),
            SweepVariable::SignalPpp => (sbr(self.fixed), v),
        }
    }
}

/// Per-trial outcome.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub filter: FilterKind,
    pub value: f64,
    pub trial: usize,
    pub rmse: std::result::Result<f64, String>,
    pub blank: bool,
}

/// Aggregate over the trials of one (filter, value) pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub filter: FilterKind,
    pub sweep_variable: SweepVariable,
    pub value: f64,
    pub trial_count: usize,
    pub mean_rmse_m: f64,
    pub std_rmse_m: f64,
    pub blank_trials: usize,
    pub failed_trials: usize,
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialResult>,
}

impl SweepTable {
    pub fn row(&self, filter: FilterKind, value: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.filter == filter && r.value == value)
    }

    /// CSV with header `filter,sweep_variable,value,trial_count,mean_rmse_m,std_rmse_m`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("filter,sweep_variable,value,trial_count,mean_rmse_m,std_rmse_m\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:e},{:e}\n",
                r.filter,
                r.sweep_variable.name(),
                r.value,
                r.trial_count,
                r.mean_rmse_m,
                r.std_rmse_m
            ));
        }
        out
    }
}

fn run_point(spec: &SweepSpec, base: &AcquisitionParams, value: f64, trial: usize, seed: RngSeed) -> Vec<TrialResult> {
    let (sbr, ppp) = spec.point(value);
    let truth = DepthImage::from_scene(&spec.scene);
    let alpha_bar = spec.scene.mean_reflectivity();
    let record = |filter: FilterKind, r: Result<Reconstruction>| {
        let (rmse_value, blank) = match r.and_then(|rec| Ok((rmse(&truth, &rec.depth)?, rec.blank))) {
            Ok((v, blank)) => (Ok(v), blank),
            Err(e) => (Err(e.to_string()), false),
        };
        TrialResult { filter, value, trial, rmse: rmse_value, blank }
    };

    let noisy = configure_for_targets(&spec.scene, base, sbr, ppp).and_then(|p| simulate_scene(&spec.scene, &p, seed));
    let clean = || {
        configure_for_targets(&spec.scene, base, Sbr::Infinite, ppp).and_then(|p| simulate_scene(&spec.scene, &p, seed))
    };
    let mut clean_cube = None;
    spec.filters
        .iter()
        .map(|&filter| {
            let cube = if filter == FilterKind::Oracle {
                clean_cube.get_or_insert_with(clean).as_ref()
            } else {
                noisy.as_ref()
            };
            let result = match cube {
                Ok(cube) => reconstruct(filter, cube, alpha_bar, &spec.options, &spec.pml),
                Err(e) => Err(Error::Config(e.to_string())),
            };
            record(filter, result)
        })
        .collect()
}

/// Runs every (value, trial) point, each with its own derived seed, and
/// averages RMSE per (filter, value). Failed trials are recorded and left
/// out of the averages.
pub fn run_sweep(spec: &SweepSpec, base: &AcquisitionParams, seed: RngSeed) -> Result<SweepTable> {
    spec.validate()?;
    base.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|v| (0..spec.trials).map(move |t| (v, t)))
        .collect();
    let trials: Vec<TrialResult> = jobs
        .par_iter()
        .flat_map_iter(|&(v, t)| run_point(spec, base, spec.values[v], t, seed.derive(v as u64, t as u64)))
        .collect();

    let mut rows = Vec::new();
    for &value in &spec.values {
        for &filter in &spec.filters {
            let these: Vec<&TrialResult> =
                trials.iter().filter(|r| r.filter == filter && r.value == value).collect();
            let ok: Vec<f64> = these.iter().filter_map(|r| r.rmse.as_ref().ok().copied()).collect();
            let n = ok.len();
            let mean = if n > 0 { ok.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 1 {
                (ok.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            rows.push(SweepRow {
                filter,
                sweep_variable: spec.variable,
                value,
                trial_count: n,
                mean_rmse_m: mean,
                std_rmse_m: std,
                blank_trials: these.iter().filter(|r| r.blank).count(),
                failed_trials: these.len() - n,
            });
        }
    }
    Ok(SweepTable { rows, trials })
}
