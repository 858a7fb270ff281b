//! Poisson photon-timestamp generation.
//!
//! Counts are drawn once for the whole acquisition (a sum of independent
//! Poisson variables over N pulses is Poisson), signal times from the
//! Gaussian pulse centred on the round-trip time, background times uniformly
//! over the repetition period.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::cube::TimestampCube;
use crate::error::{Error, Result};
use crate::scene::{AcquisitionParams, Sbr, Scene};

/// Top-level seed from which every random stream is derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Child seed for the sub-stream labelled `(a, b)`.
    pub fn derive(self, a: u64, b: u64) -> RngSeed {
        let h = splitmix64(self.0 ^ splitmix64(a.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ splitmix64(b)));
        RngSeed(h)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Detections of one pixel split by origin. Only tests and diagnostics see
/// the labels; the pipeline consumes the merged list.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledDetections {
    pub signal: Vec<f64>,
    pub background: Vec<f64>,
}

impl LabeledDetections {
    /// Merged, shuffled list.
    pub fn merge(self, rng: &mut impl Rng) -> Vec<f64> {
        let mut all = self.signal;
        all.extend(self.background);
        all.shuffle(rng);
        all
    }
}

fn poisson_count(mean: f64, rng: &mut impl Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    // Poisson::new only fails for non-positive or non-finite means.
    let dist = Poisson::new(mean).expect("finite positive mean");
    dist.sample(rng) as usize
}

fn draw_labeled(alpha: f64, depth: f64, params: &AcquisitionParams, rng: &mut impl Rng) -> LabeledDetections {
    let period = params.repetition_period;
    let n = params.pulses as f64;
    let signal_mean = params.quantum_efficiency * alpha * params.signal_flux * n;
    let background_mean = params.background * n;

    let t_star = params.depth_to_time(depth);
    let pulse = Normal::new(t_star, params.pulse_sigma()).expect("positive pulse width");
    let signal = (0..poisson_count(signal_mean, rng))
        .map(|_| loop {
            let t = pulse.sample(rng);
            if (0.0..period).contains(&t) {
                break t;
            }
        })
        .collect();
    let background = (0..poisson_count(background_mean, rng))
        .map(|_| rng.random_range(0.0..period))
        .collect();
    LabeledDetections { signal, background }
}

/// Detections of one pixel with reflectivity `alpha` at `depth` metres,
/// keeping the signal/background labels.
pub fn simulate_pixel_labeled(alpha: f64, depth: f64, params: &AcquisitionParams, seed: RngSeed) -> LabeledDetections {
    let mut rng = seed.rng();
    draw_labeled(alpha, depth, params, &mut rng)
}

/// Unlabelled, unsorted detection times of one pixel.
pub fn simulate_pixel(alpha: f64, depth: f64, params: &AcquisitionParams, seed: RngSeed) -> Vec<f64> {
    let mut rng = seed.rng();
    let labeled = draw_labeled(alpha, depth, params, &mut rng);
    labeled.merge(&mut rng)
}

fn check_inputs(scene: &Scene, params: &AcquisitionParams) -> Result<()> {
    params.validate()?;
    scene.validate_for(params)?;
    let brightest = scene.reflectivity().iter().copied().fold(0.0, f64::max);
    if !params.is_low_flux(brightest) {
        log::warn!("expected detections per pulse exceed 1; dead-time effects are not modelled");
    }
    Ok(())
}

/// Labelled detections for every pixel; same streams as [`simulate_scene`].
pub fn simulate_scene_labeled(scene: &Scene, params: &AcquisitionParams, seed: RngSeed) -> Result<Vec<LabeledDetections>> {
    check_inputs(scene, params)?;
    let w = scene.width();
    Ok((0..scene.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / w, k % w);
            simulate_pixel_labeled(scene.alpha_at(i, j), scene.depth_at(i, j), params, seed.derive(i as u64, j as u64))
        })
        .collect())
}

/// Simulates every pixel independently; pixel `(i, j)` uses the stream
/// `seed.derive(i, j)`, so the output does not depend on scheduling.
pub fn simulate_scene(scene: &Scene, params: &AcquisitionParams, seed: RngSeed) -> Result<TimestampCube> {
    check_inputs(scene, params)?;
    let w = scene.width();
    let timestamps = (0..scene.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / w, k % w);
            simulate_pixel(scene.alpha_at(i, j), scene.depth_at(i, j), params, seed.derive(i as u64, j as u64))
        })
        .collect();
    TimestampCube::new(scene.width(), scene.height(), timestamps, *params)
}

/// Sets the pulse count so that the scene-average signal photons per pixel
/// η·ᾱ·S·N hit `target_signal_ppp`, and the background so that the
/// scene-average SBR hits `target_sbr` (zero background for the oracle).
pub fn configure_for_targets(
    scene: &Scene,
    base: &AcquisitionParams,
    target_sbr: Sbr,
    target_signal_ppp: f64,
) -> Result<AcquisitionParams> {
    if !(target_signal_ppp.is_finite() && target_signal_ppp > 0.0) {
        return Err(Error::Config(format!("signal PPP {target_signal_ppp} must be > 0")));
    }
    let per_pulse = base.quantum_efficiency * scene.mean_reflectivity() * base.signal_flux;
    if per_pulse <= 0.0 {
        return Err(Error::Config("scene produces no signal (zero mean reflectivity or efficiency)".into()));
    }
    let pulses = (target_signal_ppp / per_pulse).round();
    if pulses < 1.0 {
        return Err(Error::Config(format!(
            "signal PPP {target_signal_ppp} needs fewer than one pulse ({} photons per pulse)",
            per_pulse
        )));
    }
    let background = match target_sbr {
        Sbr::Infinite => 0.0,
        Sbr::Finite(s) if s.is_finite() && s > 0.0 => per_pulse / s,
        Sbr::Finite(s) => return Err(Error::Config(format!("SBR {s} must be > 0"))),
    };
    let params = AcquisitionParams { pulses: pulses as u64, background, ..*base };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{pixel_flux, toy_scene};
    use approx::assert_relative_eq;

    #[test]
    fn dark_pixel_is_empty() {
        let p = AcquisitionParams { pulses: 10_000, ..Default::default() };
        assert!(simulate_pixel(0.0, 3.0, &p, RngSeed(1)).is_empty());
    }

    #[test]
    fn single_dark_pixel_scene() {
        let s = Scene::new(1, 1, vec![0.0], vec![1.0]).unwrap();
        let cube = simulate_scene(&s, &AcquisitionParams::default(), RngSeed(3)).unwrap();
        assert_eq!(cube.pixels(), &[Vec::<f64>::new()]);
    }

    #[test]
    fn deterministic_per_seed() {
        let s = toy_scene(12).unwrap();
        let p = configure_for_targets(&s, &AcquisitionParams::default(), Sbr::Finite(1.0), 2.0).unwrap();
        let a = simulate_scene(&s, &p, RngSeed(42)).unwrap();
        let b = simulate_scene(&s, &p, RngSeed(42)).unwrap();
        let c = simulate_scene(&s, &p, RngSeed(43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let d = single.install(|| simulate_scene(&s, &p, RngSeed(42)).unwrap());
        assert_eq!(a, d);
    }

    #[test]
    fn timestamps_in_range() {
        let s = toy_scene(16).unwrap();
        let p = configure_for_targets(&s, &AcquisitionParams::default(), Sbr::Finite(0.2), 3.0).unwrap();
        let cube = simulate_scene(&s, &p, RngSeed(9)).unwrap();
        assert!(cube
            .pixels()
            .iter()
            .flatten()
            .all(|t| (0.0..p.repetition_period).contains(t)));
    }

    #[test]
    fn configure_examples() {
        let half = Scene::new(1, 1, vec![0.5], vec![3.0]).unwrap();
        let base = AcquisitionParams::default();
        let p = configure_for_targets(&half, &base, Sbr::Finite(1.0), 2.0).unwrap();
        assert_eq!(p.pulses, 1003);
        assert_relative_eq!(p.background, 0.35 * 0.5 * 0.0114, max_relative = 1e-15);
        let o = configure_for_targets(&half, &base, Sbr::Infinite, 2.0).unwrap();
        assert_eq!(o.background, 0.0);
        assert!(configure_for_targets(&half, &base, Sbr::Finite(1.0), 1e-4).is_err());
        assert!(configure_for_targets(&half, &base, Sbr::Finite(0.0), 2.0).is_err());
        assert!(configure_for_targets(&half, &base, Sbr::Finite(1.0), -1.0).is_err());
    }

    #[test]
    fn scene_mean_count_matches_flux() {
        let s = toy_scene(100).unwrap();
        let p = configure_for_targets(&s, &AcquisitionParams::default(), Sbr::Finite(1.0), 2.0).unwrap();
        let cube = simulate_scene(&s, &p, RngSeed(5)).unwrap();
        let expected: f64 = s
            .reflectivity()
            .iter()
            .map(|&a| pixel_flux(a, &p).total_count * p.pulses as f64)
            .sum();
        let got = cube.total_count() as f64;
        assert!((got - expected).abs() / expected < 0.02, "got {got}, expected {expected}");
        // two signal and two background photons per pixel on average
        assert!((got / s.len() as f64 - 4.0).abs() < 0.1);
    }

    #[test]
    fn derived_seeds_differ() {
        let s = RngSeed(7);
        assert_ne!(s.derive(0, 1), s.derive(1, 0));
        assert_eq!(s.derive(3, 4), s.derive(3, 4));
    }
}
