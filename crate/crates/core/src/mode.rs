//! Mode filter: the ROM pipeline with the neighbourhood median replaced by
//! the centre of the most populated histogram bin.

use crate::cube::{CensoredCube, TimestampCube};
use crate::rom::censor_scene;
use crate::scene::AcquisitionParams;

/// Histogram grid anchored at t = 0 with bins of width T_p/2; the last bin
/// may be shorter.
#[derive(Clone, Copy, Debug)]
pub struct BinGrid {
    width: f64,
    period: f64,
    count: usize,
}

impl BinGrid {
    pub fn new(params: &AcquisitionParams) -> Self {
        let width = params.pulse_width / 2.0;
        let period = params.repetition_period;
        Self { width, period, count: (period / width).ceil() as usize }
    }

    pub fn bin_count(&self) -> usize {
        self.count
    }

    pub fn index(&self, t: f64) -> usize {
        ((t / self.width).floor() as usize).min(self.count - 1)
    }

    pub fn center(&self, k: usize) -> f64 {
        let lo = k as f64 * self.width;
        let hi = (lo + self.width).min(self.period);
        (lo + hi) / 2.0
    }
}

/// Centre of the most populated bin; ties go to the earliest bin.
pub fn mode_estimate(timestamps: &[f64], params: &AcquisitionParams) -> Option<f64> {
    if timestamps.is_empty() {
        return None;
    }
    let grid = BinGrid::new(params);
    let mut bins: Vec<usize> = timestamps.iter().map(|&t| grid.index(t)).collect();
    bins.sort_unstable();
    let mut best = (bins[0], 0usize);
    let mut run_start = 0;
    for k in 1..=bins.len() {
        if k == bins.len() || bins[k] != bins[run_start] {
            let run = k - run_start;
            // strict: earlier bins keep ties
            if run > best.1 {
                best = (bins[run_start], run);
            }
            run_start = k;
        }
    }
    Some(grid.center(best.0))
}

/// Mode filter over the whole cube; same censoring as [`crate::rom::rom_filter_scene`].
pub fn mode_filter_scene(cube: &TimestampCube, params: &AcquisitionParams) -> CensoredCube {
    censor_scene(cube, params, |ts| mode_estimate(ts, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rom::{censor_window, reflectivity_estimate};
    use crate::scene::Scene;
    use crate::simulator::{configure_for_targets, simulate_pixel, simulate_scene, RngSeed};
    use crate::Sbr;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn grid_layout() {
        let p = AcquisitionParams::default();
        let g = BinGrid::new(&p);
        assert_eq!(g.bin_count(), 741);
        assert_eq!(g.index(0.0), 0);
        assert_eq!(g.index(p.repetition_period * (1.0 - 1e-16)), 740);
        // last bin is shorter: [740·135 ps, 100 ns)
        let last_lo = 740.0 * 135e-12;
        assert!((g.center(740) - (last_lo + 100e-9) / 2.0).abs() < 1e-18);
        assert!((g.center(0) - 67.5e-12).abs() < 1e-20);
    }

    #[test]
    fn single_bin_and_ties() {
        let p = AcquisitionParams::default();
        let g = BinGrid::new(&p);
        let t = 30.01e-9;
        let k = g.index(t);
        assert_eq!(mode_estimate(&[t, t + 1e-12, t + 2e-12], &p), Some(g.center(k)));
        // two bins with two hits each: the earlier one wins
        let early = 5e-9;
        let late = 60e-9;
        let got = mode_estimate(&[late, early, late + 1e-12, early + 1e-12], &p).unwrap();
        assert_eq!(got, g.center(g.index(early)));
        assert_eq!(mode_estimate(&[], &p), None);
    }

    #[test]
    fn picks_signal_over_background() {
        let p = AcquisitionParams::default();
        let t_star = 30e-9;
        let pulse = Normal::new(t_star, p.pulse_sigma()).unwrap();
        let trials = 2000;
        let mut hits = 0;
        for s in 0..trials {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
            let mut v: Vec<f64> = (0..20).map(|_| pulse.sample(&mut rng)).collect();
            v.extend((0..20).map(|_| rng.random_range(0.0..p.repetition_period)));
            if (mode_estimate(&v, &p).unwrap() - t_star).abs() < p.pulse_width {
                hits += 1;
            }
        }
        assert!(hits as f64 / trials as f64 > 0.99, "{hits}/{trials}");
    }

    #[test]
    fn empty_cube() {
        let p = AcquisitionParams::default();
        let cube = TimestampCube::new(4, 3, vec![Vec::new(); 12], p).unwrap();
        let out = mode_filter_scene(&cube, &p);
        assert!(out.is_all_empty());
        assert!(out.estimates().iter().all(Option::is_none));
    }

    #[test]
    fn noiseless_anchor_near_truth() {
        let s = Scene::new(12, 12, vec![0.6; 144], vec![4.2; 144]).unwrap();
        let p = configure_for_targets(&s, &AcquisitionParams::default(), Sbr::Infinite, 3.0).unwrap();
        let cube = simulate_scene(&s, &p, RngSeed(8)).unwrap();
        let out = mode_filter_scene(&cube, &p);
        let t_star = p.depth_to_time(4.2);
        for (k, est) in out.estimates().iter().enumerate() {
            if let Some(e) = est {
                // bin half-width plus a couple of pulse sigmas of draw noise
                assert!((e - t_star).abs() <= 0.75 * p.pulse_width, "pixel {k}: {e} vs {t_star}");
            }
        }
    }

    #[test]
    fn window_invariant_holds() {
        let s = crate::scene::toy_scene(16).unwrap();
        let p = configure_for_targets(&s, &AcquisitionParams::default(), Sbr::Finite(0.5), 2.0).unwrap();
        let cube = simulate_scene(&s, &p, RngSeed(21)).unwrap();
        let out = mode_filter_scene(&cube, &p);
        for k in 0..s.len() {
            let own = &cube.pixels()[k];
            if let Some(anchor) = out.estimates()[k] {
                let window = censor_window(reflectivity_estimate(own.len(), &p), &p).unwrap();
                assert!(out.signal_sets()[k].iter().all(|t| (t - anchor).abs() < window / 2.0));
            }
        }
    }

    proptest! {
        #[test]
        fn permutation_invariant(seed in any::<u64>(), n in 1usize..60) {
            use rand::seq::SliceRandom;
            let p = AcquisitionParams { background: 0.01, pulses: 500, ..Default::default() };
            let mut v = simulate_pixel(0.8, 5.0, &p, RngSeed(seed));
            v.truncate(n);
            prop_assume!(!v.is_empty());
            let m = mode_estimate(&v, &p);
            v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 1));
            prop_assert_eq!(mode_estimate(&v, &p), m);
        }
    }
}
