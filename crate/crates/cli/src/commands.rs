//! Subcommand bodies. Every command computes its artifacts in memory and
//! writes them only once everything succeeded.

use std::path::{Path, PathBuf};

use serde_json::json;
use spl_depth::evaluation::{apply_filter, rmse, run_sweep, FilterKind, SweepSpec, SweepVariable};
use spl_depth::pml::pml_depth;
use spl_depth::simulator::{configure_for_targets, simulate_scene};
use spl_depth::theory::{phase_transition_report, DEFAULT_BIN_WIDTH};
use spl_depth::{io, AcquisitionParams, CensoredCube, DepthImage, Error, RngSeed, Sbr, Scene, TimestampCube};

use crate::config::{SceneSource, Settings};
use crate::failure::{CliResult, Failure};
use crate::manifest::{sidecar, FilterRecord, Manifest};

/// Files to be written into one output directory.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    /// Fails with a config error unless `dir` is an existing directory.
    pub fn new(dir: &Path) -> CliResult<Self> {
        if !dir.is_dir() {
            return Err(Failure::config(format!("output directory {} does not exist", dir.display())));
        }
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Adds `manifest` as the sidecar of `artifact`, listing every file
    /// added so far as its outputs.
    fn add_manifest(&mut self, artifact: &str, mut manifest: Manifest) {
        manifest.outputs = self.names();
        let name = sidecar(Path::new(artifact)).to_string_lossy().into_owned();
        self.add(&name, manifest.to_json());
    }

    pub fn write(self) -> CliResult<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in self.files {
            let path = self.dir.join(name);
            std::fs::write(&path, bytes)
                .map_err(|e| Failure::runtime(e).context(format!("writing {}", path.display())))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::config(format!("input {} does not exist", path.display())))
    }
}

/// Scene plus the acquisition parameters that hit the requested targets.
struct Acquisition {
    source: SceneSource,
    scene: Scene,
    params: AcquisitionParams,
    sbr: Sbr,
    signal_ppp: f64,
}

fn acquisition(settings: &Settings, default_scene: &str) -> CliResult<Acquisition> {
    let source = settings.scene_source(default_scene)?;
    let base = settings.base_params()?;
    let scene = source.build(&base).map_err(|e| Failure::from_core(e).context("loading scene"))?;
    let sbr = settings.sbr()?;
    let signal_ppp = settings.signal_ppp()?;
    let params = configure_for_targets(&scene, &base, sbr, signal_ppp)?;
    scene.validate_for(&params)?;
    Ok(Acquisition { source, scene, params, sbr, signal_ppp })
}

fn base_manifest(command: &str, settings: &Settings, acq: &Acquisition) -> Manifest {
    let mut m =
        Manifest::new(command, settings.seed(), acq.source.clone(), acq.scene.mean_reflectivity(), acq.params);
    m.target_sbr = Some(acq.sbr);
    m.target_signal_ppp = Some(acq.signal_ppp);
    m
}

fn simulate_cube(settings: &Settings, acq: &Acquisition) -> CliResult<TimestampCube> {
    let cube = simulate_scene(&acq.scene, &acq.params, RngSeed(settings.seed()))?;
    log::info!(
        "simulated {}x{} pixels, N = {}, B = {:.4e}, {} detections",
        cube.width(),
        cube.height(),
        acq.params.pulses,
        acq.params.background,
        cube.total_count()
    );
    Ok(cube)
}

pub fn simulate(settings: &Settings, output: &Path, csv: bool) -> CliResult<()> {
    let mut out = Artifacts::new(output)?;
    let acq = acquisition(settings, "toy")?;
    let cube = simulate_cube(settings, &acq)?;
    out.add("cube.sptc", io::encode_cube(&cube));
    if csv {
        out.add("cube.csv", io::cube_to_csv(cube.width(), cube.pixels()));
    }
    out.add_manifest("cube.sptc", base_manifest("simulate", settings, &acq));
    out.write()?;
    Ok(())
}

/// Cube file and its sidecar manifest.
fn load_cube(path: &Path) -> CliResult<(TimestampCube, Manifest)> {
    require_file(path)?;
    let manifest = Manifest::for_artifact(path)?;
    let cube = io::read_container(path)
        .and_then(|c| c.into_cube(manifest.params))
        .map_err(|e| Failure::from_core(e).context(format!("reading {}", path.display())))?;
    Ok((cube, manifest))
}

fn run_filter(settings: &Settings, cube: &TimestampCube, manifest: &mut Manifest) -> CliResult<CensoredCube> {
    let kind = settings.filter();
    let options = settings.filter_options()?;
    let censored = apply_filter(kind, cube, manifest.mean_reflectivity, &options)?;
    log::info!("{kind} filter kept {} of {} detections", censored.retained_count(), cube.total_count());
    manifest.filter = Some(FilterRecord::new(kind, &options));
    Ok(censored)
}

pub fn filter(settings: &Settings, output: &Path, cube_path: &Path) -> CliResult<()> {
    let mut out = Artifacts::new(output)?;
    let (cube, mut manifest) = load_cube(cube_path)?;
    let censored = run_filter(settings, &cube, &mut manifest)?;
    manifest.command = "filter".into();
    manifest.inputs = vec![cube_path.to_path_buf()];
    out.add("censored.sptc", io::encode_censored(&censored));
    out.add_manifest("censored.sptc", manifest);
    out.write()?;
    Ok(())
}

/// Penalised ML depth with the measured-pixel mask; a filter output with no
/// photons at all gives a blank image.
fn estimate_depth(
    censored: &CensoredCube,
    params: &AcquisitionParams,
    settings: &Settings,
    manifest: &mut Manifest,
) -> CliResult<(DepthImage, Vec<bool>, serde_json::Value)> {
    let config = settings.pml()?;
    manifest.pml = Some(config);
    match pml_depth(censored, params, &config) {
        Ok(out) => {
            let stats = json!({
                "retained_photons": censored.retained_count(),
                "iterations": out.iterations,
                "converged": out.converged,
            });
            Ok((out.depth, out.measured, stats))
        }
        Err(Error::NoData) => {
            log::warn!("no photons survived the filter; writing a blank depth image");
            let n = censored.width() * censored.height();
            let stats = json!({ "retained_photons": 0, "blank": true });
            Ok((DepthImage::blank(censored.width(), censored.height()), vec![false; n], stats))
        }
        Err(e) => Err(e.into()),
    }
}

/// Adds the depth images, mask and report, and records the RMSE when the
/// ground truth can be rebuilt.
fn add_depth_outputs(
    out: &mut Artifacts,
    depth: &DepthImage,
    measured: &[bool],
    stats: serde_json::Value,
    manifest: &mut Manifest,
) {
    let params = manifest.params;
    out.add("depth.pgm", io::depth_to_pgm(depth, params.z_max()));
    out.add("depth.csv", io::depth_to_csv(depth));
    out.add("depth.f64", io::depth_to_f64_plane(depth));
    out.add("mask.pbm", io::mask_to_pbm(depth.width(), depth.height(), measured));

    let truth = manifest.scene.build(&params).map(|s| DepthImage::from_scene(&s));
    manifest.rmse_m = match truth.and_then(|t| rmse(&t, depth)) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("no RMSE: {e}");
            None
        }
    };

    let mut report = String::new();
    if let Some(f) = &manifest.filter {
        report.push_str(&format!("filter {}\n", f.kind));
    }
    if let Some(obj) = stats.as_object() {
        for (k, v) in obj {
            report.push_str(&format!("{k} {v}\n"));
        }
    }
    if let Some(r) = manifest.rmse_m {
        report.push_str(&format!("rmse_m {r}\n"));
        log::info!("RMSE {r:.4} m");
    }
    out.add("report.txt", report);
    manifest.extra = Some(stats);
}

pub fn estimate(settings: &Settings, output: &Path, censored_path: &Path) -> CliResult<()> {
    let mut out = Artifacts::new(output)?;
    require_file(censored_path)?;
    let mut manifest = Manifest::for_artifact(censored_path)?;
    let censored = io::read_container(censored_path)
        .and_then(|c| {
            if c.repetition_period != manifest.params.repetition_period {
                return Err(Error::Config("repetition period differs from the manifest".into()));
            }
            c.into_censored()
        })
        .map_err(|e| Failure::from_core(e).context(format!("reading {}", censored_path.display())))?;
    let (depth, measured, stats) = estimate_depth(&censored, &manifest.params.clone(), settings, &mut manifest)?;
    manifest.command = "estimate".into();
    manifest.inputs = vec![censored_path.to_path_buf()];
    add_depth_outputs(&mut out, &depth, &measured, stats, &mut manifest);
    out.add_manifest("depth.pgm", manifest);
    out.write()?;
    Ok(())
}

/// Simulate (or load `cube`), filter and estimate in one go.
pub fn pipeline(settings: &Settings, output: &Path, cube_path: Option<&Path>) -> CliResult<()> {
    let mut out = Artifacts::new(output)?;
    let (cube, mut manifest) = match cube_path {
        Some(path) => {
            let (cube, mut m) = load_cube(path)?;
            m.inputs = vec![path.to_path_buf()];
            (cube, m)
        }
        None => {
            let acq = acquisition(settings, "toy")?;
            let cube = simulate_cube(settings, &acq)?;
            (cube, base_manifest("pipeline", settings, &acq))
        }
    };
    manifest.command = "pipeline".into();
    let censored = run_filter(settings, &cube, &mut manifest)?;
    let (depth, measured, stats) = estimate_depth(&censored, cube.params(), settings, &mut manifest)?;

    out.add("censored.sptc", io::encode_censored(&censored));
    out.add_manifest("censored.sptc", Manifest { pml: None, ..manifest.clone() });
    add_depth_outputs(&mut out, &depth, &measured, stats, &mut manifest);
    out.add_manifest("depth.pgm", manifest);
    out.write()?;
    Ok(())
}

pub fn verify_theory(settings: &Settings, output: &Path) -> CliResult<()> {
    let mut out = Artifacts::new(output)?;
    let acq = acquisition(settings, "toy")?;
    let sbr = match acq.sbr {
        Sbr::Finite(s) => s,
        Sbr::Infinite => return Err(Failure::config("verify-theory needs a finite --sbr")),
    };
    let bin_width = settings.bin_width.unwrap_or(DEFAULT_BIN_WIDTH);
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Failure::config(format!("--bin-width {bin_width} must be > 0")));
    }
    let cube = simulate_cube(settings, &acq)?;
    let report = phase_transition_report(&acq.scene, &cube, &acq.params, sbr, bin_width);
    out.add("phase_transition.csv", report.to_csv());
    let mut manifest = base_manifest("verify-theory", settings, &acq);
    manifest.extra = Some(json!({
        "bin_width": bin_width,
        "analyzed_pixels": report.analyzed(),
        "excluded_pixels": report.excluded,
    }));
    out.add_manifest("phase_transition.csv", manifest);
    out.write()?;
    Ok(())
}

pub fn sweep(settings: &Settings, output: &Path) -> CliResult<()> {
    let mut out = Artifacts::new(output)?;
    let source = settings.scene_source("blocks")?;
    let base = settings.base_params()?;
    let scene = source.build(&base).map_err(|e| Failure::from_core(e).context("loading scene"))?;
    let variable = settings.variable.unwrap_or(SweepVariable::Sbr);
    let (default_values, default_fixed) = match variable {
        SweepVariable::Sbr => (vec![0.1, 0.2, 0.5, 1.0], 2.0),
        SweepVariable::SignalPpp => (vec![0.5, 1.0, 2.0, 4.0], 1.0),
    };
    let spec = SweepSpec {
        scene,
        variable,
        values: settings.values.clone().unwrap_or(default_values),
        fixed: settings.fixed.unwrap_or(default_fixed),
        trials: settings.trials.unwrap_or(1),
        filters: settings.filters.clone().unwrap_or_else(|| vec![FilterKind::Rom, FilterKind::Mode, FilterKind::Consensus]),
        pml: settings.pml()?,
        options: settings.filter_options()?,
    };
    spec.validate()?;
    let table = run_sweep(&spec, &base, RngSeed(settings.seed()))?;
    out.add("sweep.csv", table.to_csv());

    let mut manifest = Manifest::new("sweep", settings.seed(), source, spec.scene.mean_reflectivity(), base);
    manifest.pml = Some(spec.pml);
    manifest.filter = Some(FilterRecord::new(settings.filter(), &spec.options));
    manifest.extra = Some(json!({
        "variable": variable,
        "values": spec.values.iter().map(|v| if v.is_finite() { json!(v) } else { json!("inf") }).collect::<Vec<_>>(),
        "fixed": if spec.fixed.is_finite() { json!(spec.fixed) } else { json!("inf") },
        "trials": spec.trials,
        "filters": spec.filters,
    }));
    out.add_manifest("sweep.csv", manifest);
    out.write()?;
    Ok(())
}
