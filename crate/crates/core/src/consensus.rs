//! Neighbourhood consensus filter.
//!
//! Signal detections of a pixel sit within a pulse width of each other while
//! background detections spread over the whole period. The filter pools a
//! square super-neighbourhood large enough to hold a handful of signal
//! photons, looks for the tightest run of four consecutive sorted timestamps
//! (gaps smoothed with weights ¼, ½, ¼), keeps everything within T_p of that
//! run, and finally drops timestamps far from the scene-wide mean.

use rayon::prelude::*;

use crate::cube::{CensoredCube, TimestampCube};
use crate::scene::AcquisitionParams;

/// Signal photons per super-neighbourhood the cluster search is tuned for.
pub const MIN_SIGNAL_PER_NEIGHBORHOOD: f64 = 4.0;

/// Super-neighbourhood target size is `NEIGHBORHOOD_PHOTONS / σ` pixels.
pub const NEIGHBORHOOD_PHOTONS: f64 = 16.0;

/// Default outlier threshold in units of the scene-wide timestamp spread.
pub const DEFAULT_OUTLIER_P: f64 = 1.0;

/// Square super-neighbourhood used for pooling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborhoodPlan {
    /// Odd side length.
    pub side: usize,
    /// Scene-average signal photons per pixel the plan was built for.
    pub signal_ppp: f64,
}

impl NeighborhoodPlan {
    /// Number of pixels in a full (unclipped) neighbourhood.
    pub fn pixel_count(&self) -> usize {
        self.side * self.side
    }

    pub fn with_side(side: usize, signal_ppp: f64) -> Self {
        assert!(side % 2 == 1, "neighbourhood side must be odd");
        Self { side, signal_ppp }
    }
}

/// Smallest odd square holding at least 16/σ pixels, σ = η·ᾱ·S·N.
pub fn plan_neighborhood(mean_reflectivity: f64, params: &AcquisitionParams) -> NeighborhoodPlan {
    let sigma = params.quantum_efficiency * mean_reflectivity * params.signal_flux * params.pulses as f64;
    plan_for_signal_ppp(sigma)
}

pub fn plan_for_signal_ppp(signal_ppp: f64) -> NeighborhoodPlan {
    assert!(signal_ppp > 0.0, "signal PPP must be positive");
    let target = NEIGHBORHOOD_PHOTONS / signal_ppp;
    if target <= 1.0 {
        return NeighborhoodPlan { side: 1, signal_ppp };
    }
    let mut side = target.sqrt().ceil() as usize;
    // guard against sqrt rounding just above an exact square
    if ((side - 1) * (side - 1)) as f64 >= target {
        side -= 1;
    }
    if side.is_multiple_of(2) {
        side += 1;
    }
    NeighborhoodPlan { side, signal_ppp }
}

/// Pooled detections of the super-neighbourhood of `(i, j)`.
pub fn gather_neighborhood(cube: &TimestampCube, i: usize, j: usize, side: usize) -> Vec<f64> {
    cube.square_neighborhood(i, j, side)
}

/// Result of the cluster search on one pooled list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterSelection {
    /// Anchor timestamp, absent when no run is tighter than T_p.
    pub anchor: Option<f64>,
    /// Smallest smoothed gap, `+∞` when the list is too short.
    pub min_spread: f64,
}

/// Tightest-cluster search.
///
/// Sorts the list, forms consecutive gaps d, smooths them into
/// c[u] = ¼·d[u] + ½·d[u+1] + ¼·d[u+2], and anchors at the third timestamp
/// of the run minimising c. Fewer than four timestamps, or a minimum of at
/// least T_p, gives no anchor. Ties go to the earliest run.
pub fn select_cluster(timestamps: &[f64], params: &AcquisitionParams) -> ClusterSelection {
    if timestamps.len() < 4 {
        return ClusterSelection { anchor: None, min_spread: f64::INFINITY };
    }
    let mut sorted = timestamps.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let gaps: Vec<f64> = sorted.windows(2).map(|w| w[1] - w[0]).collect();
    let (u_min, c_min) = gaps
        .windows(3)
        .map(|d| 0.25 * d[0] + 0.5 * d[1] + 0.25 * d[2])
        .enumerate()
        .fold((0, f64::INFINITY), |best, (u, c)| if c < best.1 { (u, c) } else { best });
    let anchor = (c_min < params.pulse_width).then(|| sorted[u_min + 2]);
    ClusterSelection { anchor, min_spread: c_min }
}

/// Timestamps strictly closer than T_p to the selected anchor.
pub fn extract_signal(timestamps: &[f64], selection: &ClusterSelection, params: &AcquisitionParams) -> Vec<f64> {
    match selection.anchor {
        Some(a) => timestamps.iter().copied().filter(|t| (t - a).abs() < params.pulse_width).collect(),
        None => Vec::new(),
    }
}

/// Mean and population standard deviation of every retained timestamp.
pub fn retained_statistics(cube: &CensoredCube) -> Option<(f64, f64)> {
    let n = cube.retained_count();
    if n == 0 {
        return None;
    }
    // pixel-ordered sequential sums keep the result schedule-independent
    let mean = cube.signal_sets().iter().flatten().sum::<f64>() / n as f64;
    let var = cube.signal_sets().iter().flatten().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64;
    Some((mean, var.sqrt()))
}

/// Removes every retained timestamp at least `p` scene-wide standard
/// deviations away from the scene-wide mean. Zero spread leaves the cube
/// untouched.
pub fn reject_outliers(mut cube: CensoredCube, p: f64) -> CensoredCube {
    assert!(p > 0.0, "outlier threshold must be positive");
    let Some((mean, std)) = retained_statistics(&cube) else {
        log::warn!("no retained timestamps; outlier rejection skipped");
        return cube;
    };
    if std == 0.0 {
        return cube;
    }
    let limit = p * std;
    cube.signal_sets_mut()
        .par_iter_mut()
        .for_each(|set| set.retain(|t| (t - mean).abs() < limit));
    cube
}

/// Full consensus pipeline: plan, pool, select, extract, reject.
/// `outlier_p = ∞` disables the rejection stage.
pub fn consensus_filter_scene(
    cube: &TimestampCube,
    plan: NeighborhoodPlan,
    params: &AcquisitionParams,
    outlier_p: f64,
) -> CensoredCube {
    let w = cube.width();
    let (sets, anchors): (Vec<_>, Vec<_>) = (0..w * cube.height())
        .into_par_iter()
        .map(|k| {
            let pooled = gather_neighborhood(cube, k / w, k % w, plan.side);
            let selection = select_cluster(&pooled, params);
            (extract_signal(&pooled, &selection, params), selection.anchor)
        })
        .unzip();
    let extracted = CensoredCube::new(w, cube.height(), params.repetition_period, sets, anchors)
        .expect("subsets of a valid cube are valid");
    if outlier_p.is_infinite() {
        return extracted;
    }
    reject_outliers(extracted, outlier_p)
}
