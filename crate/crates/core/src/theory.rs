//! Success/failure law of the rank-ordered mean filter.
//!
//! The predictor compares a pixel's signal strength relative to background,
//! α·SBR/ᾱ, with how far its depth sits from the halfway depth c·T_r/4,
//! where the median of pure background lands. When the predictor is
//! negative the neighbourhood median misses the true return time by
//! −(T_r/2)·π; otherwise it locks onto it.

use rayon::prelude::*;

use crate::cube::TimestampCube;
use crate::rom::rom_estimate;
use crate::scene::{AcquisitionParams, Scene};

/// Default bin width in predictor units.
pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

/// Predictors below this are pooled into one overflow bin.
pub const PREDICTOR_FLOOR: f64 = -2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Predictor {
    pub value: f64,
    pub alpha: f64,
    pub depth: f64,
    pub z_half: f64,
    pub sbr: f64,
    pub alpha_bar: f64,
}

pub fn predictor(alpha: f64, depth: f64, alpha_bar: f64, sbr: f64, params: &AcquisitionParams) -> Predictor {
    let z_half = params.z_half();
    let value = alpha / (alpha_bar / sbr) - (depth - z_half).abs() / z_half;
    Predictor { value, alpha, depth, z_half, sbr, alpha_bar }
}

/// Predicted |t_ROM − t*| in seconds: max(−(T_r/2)·π, 0).
pub fn theoretical_abs_error(pi: f64, params: &AcquisitionParams) -> f64 {
    (-(params.repetition_period / 2.0) * pi).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseBin {
    pub center: f64,
    pub empirical_error: f64,
    pub theoretical_error: f64,
    pub pixel_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTransitionReport {
    pub bins: Vec<PhaseBin>,
    /// Pixels whose neighbourhood had no detection.
    pub excluded: usize,
    pub bin_width: f64,
}

impl PhaseTransitionReport {
    pub fn analyzed(&self) -> usize {
        self.bins.iter().map(|b| b.pixel_count).sum()
    }

    /// CSV with header `pi_bin_center,empirical_error_s,theoretical_error_s,pixel_count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pi_bin_center,empirical_error_s,theoretical_error_s,pixel_count\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{:e},{:e},{}\n",
                b.center, b.empirical_error, b.theoretical_error, b.pixel_count
            ));
        }
        out
    }

    pub fn bin_near(&self, center: f64) -> Option<&PhaseBin> {
        self.bins.iter().find(|b| (b.center - center).abs() < self.bin_width / 2.0)
    }
}

/// Bins every pixel by its predictor and compares the mean observed
/// |t_ROM − t*| against the predicted error at the bin centre.
///
/// Bin `k` covers predictors within half a bin width of `k·bin_width`.
/// `sbr` is the scene-average SBR the cube was simulated at.
pub fn phase_transition_report(
    scene: &Scene,
    cube: &TimestampCube,
    params: &AcquisitionParams,
    sbr: f64,
    bin_width: f64,
) -> PhaseTransitionReport {
    assert!(bin_width > 0.0, "bin width must be positive");
    let alpha_bar = scene.mean_reflectivity();
    let w = scene.width();
    let samples: Vec<Option<(i64, f64)>> = (0..scene.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / w, k % w);
            let t_rom = rom_estimate(&cube.ring_neighborhood(i, j))?;
            let z = scene.depth_at(i, j);
            let pi = predictor(scene.alpha_at(i, j), z, alpha_bar, sbr, params).value.max(PREDICTOR_FLOOR);
            let bin = (pi / bin_width).round() as i64;
            Some((bin, (t_rom - params.depth_to_time(z)).abs()))
        })
        .collect();

    let excluded = samples.iter().filter(|s| s.is_none()).count();
    let mut acc: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
    for (bin, err) in samples.into_iter().flatten() {
        let e = acc.entry(bin).or_default();
        e.0 += err;
        e.1 += 1;
    }
    let bins = acc
        .into_iter()
        .map(|(bin, (sum, count))| {
            let center = bin as f64 * bin_width;
            PhaseBin {
                center,
                empirical_error: sum / count as f64,
                theoretical_error: theoretical_abs_error(center, params),
                pixel_count: count,
            }
        })
        .collect();
    PhaseTransitionReport { bins, excluded, bin_width }
}
