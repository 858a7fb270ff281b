//! Rank-ordered mean filtering.
//!
//! Each pixel pools the detections of its eight neighbours (its own are left
//! out), takes their median as the anchor, and keeps only its own detections
//! inside an acceptance window whose width shrinks as the pixel's estimated
//! reflectivity grows.

use rayon::prelude::*;

use crate::cube::{CensoredCube, TimestampCube};
use crate::error::{Error, Result};
use crate::scene::AcquisitionParams;

/// Lower median of `timestamps`: for `2m` elements the `m`-th smallest.
/// Always one of the inputs.
pub fn rom_estimate(timestamps: &[f64]) -> Option<f64> {
    if timestamps.is_empty() {
        return None;
    }
    let mut v = timestamps.to_vec();
    let k = (v.len() - 1) / 2;
    let (_, median, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Some(*median)
}

/// Reflectivity implied by a pixel's total count, clamped to `[0, 1]`.
pub fn reflectivity_estimate(pixel_count: usize, params: &AcquisitionParams) -> f64 {
    let per_pulse = pixel_count as f64 / params.pulses as f64;
    let alpha = (per_pulse - params.background) / (params.quantum_efficiency * params.signal_flux);
    if alpha.is_nan() {
        return 0.0;
    }
    alpha.clamp(0.0, 1.0)
}

/// Full width of the acceptance window, 4·T_p·B/(η·α̂·S + B).
pub fn censor_window(alpha_hat: f64, params: &AcquisitionParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha_hat) {
        return Err(Error::Domain(format!("reflectivity estimate {alpha_hat} not in [0, 1]")));
    }
    let expected = params.quantum_efficiency * alpha_hat * params.signal_flux + params.background;
    if expected == 0.0 {
        return Err(Error::UndefinedWindow);
    }
    Ok(4.0 * params.pulse_width * (params.background / expected))
}

/// Keeps the timestamps of `own` strictly within half of `window` of `anchor`.
pub(crate) fn censor(own: &[f64], anchor: f64, window: f64) -> Vec<f64> {
    own.iter().copied().filter(|t| (t - anchor).abs() < window / 2.0).collect()
}

/// Anchor-then-censor pass shared by the rank-ordered mean and mode filters.
/// `anchor` receives the centre-excluded 3×3 neighbourhood of each pixel.
pub(crate) fn censor_scene<F>(cube: &TimestampCube, params: &AcquisitionParams, anchor: F) -> CensoredCube
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
{
    let w = cube.width();
    let (sets, estimates): (Vec<_>, Vec<_>) = (0..w * cube.height())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / w, k % w);
            let Some(t_anchor) = anchor(&cube.ring_neighborhood(i, j)) else {
                return (Vec::new(), None);
            };
            let own = cube.pixel(i, j);
            let alpha_hat = reflectivity_estimate(own.len(), params);
            let kept = match censor_window(alpha_hat, params) {
                Ok(window) => censor(own, t_anchor, window),
                // zero expected flux: nothing can be in the window
                Err(_) => Vec::new(),
            };
            (kept, Some(t_anchor))
        })
        .unzip();
    CensoredCube::new(w, cube.height(), params.repetition_period, sets, estimates)
        .expect("censored subsets of a valid cube are valid")
}

/// Rank-ordered mean filter over the whole cube. Pixels without neighbour
/// detections get no anchor and an empty set.
pub fn rom_filter_scene(cube: &TimestampCube, params: &AcquisitionParams) -> CensoredCube {
    censor_scene(cube, params, rom_estimate)
}
