//! Physical acquisition model: scenes, acquisition parameters and the
//! photon-arrival rate they induce.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Signal pulse is treated as identically zero beyond this many standard
/// deviations from its mean.
pub const PULSE_CUTOFF_SIGMAS: f64 = 6.0;

/// Pulse, detector and repetition parameters of one acquisition.
///
/// Times are in seconds. `background` is the calibrated background count per
/// repetition period (ambient plus dark counts), `signal_flux` the integral
/// of the illumination pulse in photons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub repetition_period: f64,
    pub pulse_width: f64,
    pub quantum_efficiency: f64,
    pub signal_flux: f64,
    pub pulses: u64,
    pub background: f64,
}

impl Default for AcquisitionParams {
    /// 270 ps pulses at 10 MHz, η = 0.35, S = 0.0114, one pulse and no
    /// background. Use [`crate::simulator::configure_for_targets`] to set
    /// `pulses` and `background` for a target flux.
    fn default() -> Self {
        Self {
            repetition_period: 100e-9,
            pulse_width: 270e-12,
            quantum_efficiency: 0.35,
            signal_flux: 0.0114,
            pulses: 1,
            background: 0.0,
        }
    }
}

impl AcquisitionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Params(msg));
        if !(self.repetition_period.is_finite() && self.repetition_period > 0.0) {
            return bad(format!("repetition period {} must be > 0", self.repetition_period));
        }
        if !(self.pulse_width.is_finite() && self.pulse_width > 0.0) {
            return bad(format!("pulse width {} must be > 0", self.pulse_width));
        }
        if self.pulse_width > self.repetition_period / 100.0 {
            return bad(format!(
                "pulse width {} must not exceed 1% of the repetition period {}",
                self.pulse_width, self.repetition_period
            ));
        }
        if !(0.0..1.0).contains(&self.quantum_efficiency) {
            return bad(format!("quantum efficiency {} not in [0, 1)", self.quantum_efficiency));
        }
        if !(self.signal_flux.is_finite() && self.signal_flux > 0.0) {
            return bad(format!("signal flux {} must be > 0", self.signal_flux));
        }
        if self.pulses == 0 {
            return bad("number of pulses must be >= 1".into());
        }
        if !(self.background.is_finite() && self.background >= 0.0) {
            return bad(format!("background {} must be >= 0", self.background));
        }
        Ok(())
    }

    /// Maximum unambiguous depth, c·T_r/2.
    pub fn z_max(&self) -> f64 {
        SPEED_OF_LIGHT * self.repetition_period / 2.0
    }

    /// Depth whose round trip lands at the middle of the period, c·T_r/4.
    pub fn z_half(&self) -> f64 {
        SPEED_OF_LIGHT * self.repetition_period / 4.0
    }

    /// Standard deviation of the Gaussian pulse, T_p/2.
    pub fn pulse_sigma(&self) -> f64 {
        self.pulse_width / 2.0
    }

    pub fn depth_to_time(&self, depth: f64) -> f64 {
        2.0 * depth / SPEED_OF_LIGHT
    }

    pub fn time_to_depth(&self, time: f64) -> f64 {
        SPEED_OF_LIGHT * time / 2.0
    }

    /// Signal pulse s(t): a zero-mean Gaussian of total mass S and standard
    /// deviation T_p/2, truncated beyond [`PULSE_CUTOFF_SIGMAS`].
    pub fn pulse(&self, t: f64) -> f64 {
        let sigma = self.pulse_sigma();
        if t.abs() > PULSE_CUTOFF_SIGMAS * sigma {
            return 0.0;
        }
        let u = t / sigma;
        self.signal_flux * (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    }

    /// Whether the expected detections per pulse stay in the low-flux regime
    /// (at most one per pulse) for a pixel of reflectivity `alpha`.
    pub fn is_low_flux(&self, alpha: f64) -> bool {
        pixel_flux(alpha, self).total_count <= 1.0
    }
}

/// Expected photon counts per repetition period at one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelFlux {
    pub signal_count: f64,
    pub background_count: f64,
    pub total_count: f64,
}

/// Scene-average signal-to-background ratio. `Infinite` stands for the
/// background-free limit used by the signal oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sbr {
    Finite(f64),
    Infinite,
}

impl Sbr {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Sbr::Infinite)
    }

    /// Numeric value, `f64::INFINITY` for the oracle limit.
    pub fn value(&self) -> f64 {
        match *self {
            Sbr::Finite(v) => v,
            Sbr::Infinite => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Sbr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sbr::Finite(v) => write!(f, "{v}"),
            Sbr::Infinite => write!(f, "inf"),
        }
    }
}

/// Ground-truth reflectivity and depth on a pixel grid, row-major.
///
/// Row index `i` runs over the height, column index `j` over the width.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    width: usize,
    height: usize,
    reflectivity: Vec<f64>,
    depth: Vec<f64>,
}

impl Scene {
    pub fn new(width: usize, height: usize, reflectivity: Vec<f64>, depth: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Scene(format!("dimensions {width}x{height} must be >= 1")));
        }
        let n = width * height;
        if reflectivity.len() != n || depth.len() != n {
            return Err(Error::Scene(format!(
                "expected {n} values, got {} reflectivities and {} depths",
                reflectivity.len(),
                depth.len()
            )));
        }
        if let Some((k, a)) = reflectivity.iter().enumerate().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Scene(format!("reflectivity {a} at pixel {k} not in [0, 1]")));
        }
        if let Some((k, z)) = depth.iter().enumerate().find(|(_, z)| !(z.is_finite() && **z >= 0.0)) {
            return Err(Error::Scene(format!("depth {z} at pixel {k} must be finite and >= 0")));
        }
        Ok(Self { width, height, reflectivity, depth })
    }

    /// Checks the depth range against the unambiguous range of `params`.
    pub fn validate_for(&self, params: &AcquisitionParams) -> Result<()> {
        let z_max = params.z_max();
        match self.depth.iter().enumerate().find(|(_, z)| **z >= z_max) {
            Some((k, z)) => Err(Error::Scene(format!("depth {z} at pixel {k} not below z_max = {z_max}"))),
            None => Ok(()),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn reflectivity(&self) -> &[f64] {
        &self.reflectivity
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn alpha_at(&self, i: usize, j: usize) -> f64 {
        self.reflectivity[i * self.width + j]
    }

    pub fn depth_at(&self, i: usize, j: usize) -> f64 {
        self.depth[i * self.width + j]
    }

    pub fn mean_reflectivity(&self) -> f64 {
        self.reflectivity.iter().sum::<f64>() / self.len() as f64
    }

    /// max − min of the true depth.
    pub fn depth_range(&self) -> f64 {
        let (lo, hi) = self
            .depth
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &z| (lo.min(z), hi.max(z)));
        hi - lo
    }
}

/// Photon detection rate λ(t) at time `t` for a pixel whose signal arrives
/// at `t_star`.
pub fn rate_function(alpha: f64, t_star: f64, t: f64, params: &AcquisitionParams) -> Result<f64> {
    let period = params.repetition_period;
    if !(0.0..period).contains(&t) {
        return Err(Error::Domain(format!("time {t} not in [0, {period})")));
    }
    if !(0.0..period).contains(&t_star) {
        return Err(Error::Domain(format!("signal time {t_star} not in [0, {period})")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("reflectivity {alpha} not in [0, 1]")));
    }
    let background_rate = params.background / period;
    if alpha == 0.0 {
        return Ok(background_rate);
    }
    Ok(params.quantum_efficiency * alpha * params.pulse(t - t_star) + background_rate)
}

pub fn pixel_flux(alpha: f64, params: &AcquisitionParams) -> PixelFlux {
    let signal_count = params.quantum_efficiency * alpha * params.signal_flux;
    let background_count = params.background;
    PixelFlux { signal_count, background_count, total_count: signal_count + background_count }
}

/// η·ᾱ·S/B, or [`Sbr::Infinite`] when there is no background.
pub fn scene_sbr(scene: &Scene, params: &AcquisitionParams) -> Sbr {
    if params.background == 0.0 {
        return Sbr::Infinite;
    }
    Sbr::Finite(params.quantum_efficiency * scene.mean_reflectivity() * params.signal_flux / params.background)
}

/// Linear ramp scene: reflectivity grows along columns (α = j/n), depth along
/// rows (z = 0.5 + i·14/n metres), with 1-based `i`, `j`.
pub fn toy_scene(n: usize) -> Result<Scene> {
    if n < 2 {
        return Err(Error::Scene(format!("toy scene side {n} must be >= 2")));
    }
    let nf = n as f64;
    let mut reflectivity = Vec::with_capacity(n * n);
    let mut depth = Vec::with_capacity(n * n);
    for i in 1..=n {
        for j in 1..=n {
            reflectivity.push(j as f64 / nf);
            depth.push(0.5 + i as f64 * (14.0 / nf));
        }
    }
    Scene::new(n, n, reflectivity, depth)
}

/// Axis-aligned rectangle of a procedural scene in fractional image
/// coordinates `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug)]
struct Block {
    x: (f64, f64),
    y: (f64, f64),
    depth: f64,
    alpha: f64,
}

const WALL_DEPTH: f64 = 3.6;
const WALL_ALPHA: f64 = 0.55;

// Later entries are painted over earlier ones. Depths sit on both sides of
// the wall so the depth histogram stays centred on it.
const BLOCKS: [Block; 6] = [
    Block { x: (0.00, 1.00), y: (0.78, 1.00), depth: 3.40, alpha: 0.45 },
    Block { x: (0.08, 0.34), y: (0.12, 0.70), depth: 3.30, alpha: 0.80 },
    Block { x: (0.44, 0.58), y: (0.05, 0.92), depth: 4.00, alpha: 0.35 },
    Block { x: (0.66, 0.93), y: (0.18, 0.44), depth: 3.80, alpha: 0.65 },
    Block { x: (0.70, 0.88), y: (0.55, 0.88), depth: 3.45, alpha: 0.90 },
    Block { x: (0.16, 0.28), y: (0.30, 0.50), depth: 3.20, alpha: 0.30 },
];

/// Piecewise-constant stand-in for a cluttered indoor scene: a wall at
/// 3.6 m with a floor strip, objects in front of it down to 3.2 m and
/// recesses back to 4.0 m.
pub fn blocks_scene(n: usize) -> Result<Scene> {
    if n < 8 {
        return Err(Error::Scene(format!("blocks scene side {n} must be >= 8")));
    }
    let nf = n as f64;
    let mut reflectivity = vec![WALL_ALPHA; n * n];
    let mut depth = vec![WALL_DEPTH; n * n];
    for b in &BLOCKS {
        let rows = (b.y.0 * nf).round() as usize..(b.y.1 * nf).round() as usize;
        let cols = (b.x.0 * nf).round() as usize..(b.x.1 * nf).round() as usize;
        for i in rows {
            for j in cols.clone() {
                reflectivity[i * n + j] = b.alpha;
                depth[i * n + j] = b.depth;
            }
        }
    }
    Scene::new(n, n, reflectivity, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lab_params() -> AcquisitionParams {
        AcquisitionParams { background: 0.0019965, pulses: 1003, ..Default::default() }
    }

    #[test]
    fn rate_without_signal_is_background() {
        let p = lab_params();
        let r = rate_function(0.0, 30e-9, 70e-9, &p).unwrap();
        assert_eq!(r, p.background / p.repetition_period);
    }

    #[test]
    fn rate_peak() {
        let p = lab_params();
        let t0 = 30e-9;
        let r = rate_function(0.7, t0, t0, &p).unwrap();
        let sigma = p.pulse_width / 2.0;
        let expected = p.background / p.repetition_period
            + p.quantum_efficiency * 0.7 * p.signal_flux / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        assert_relative_eq!(r, expected, max_relative = 1e-14);
    }

    #[test]
    fn rate_far_tail_is_background() {
        let p = lab_params();
        let t0 = 30e-9;
        let peak = rate_function(1.0, t0, t0, &p).unwrap();
        let bg = p.background / p.repetition_period;
        for t in [t0 - 10.0 * p.pulse_width, t0 + 10.0 * p.pulse_width] {
            let r = rate_function(1.0, t0, t, &p).unwrap();
            // untruncated Gaussian at 20σ, for comparison
            let gaussian = (-0.5f64 * 400.0).exp();
            assert!(gaussian < 1e-12);
            assert!((r - bg).abs() <= 1e-12 * peak);
        }
    }

    #[test]
    fn rate_domain_errors() {
        let p = lab_params();
        assert!(rate_function(0.5, 10e-9, -1e-12, &p).is_err());
        assert!(rate_function(0.5, 10e-9, p.repetition_period, &p).is_err());
        assert!(rate_function(1.5, 10e-9, 1e-9, &p).is_err());
        assert!(rate_function(0.5, 200e-9, 1e-9, &p).is_err());
    }

    #[test]
    fn rate_integrates_to_total_count() {
        let p = lab_params();
        for (alpha, t0) in [(1.0, 30e-9), (0.3, 71.3e-9), (0.0, 50e-9)] {
            // Simpson's rule on a grid fine enough to resolve the pulse
            let n = 400_000;
            let h = p.repetition_period / n as f64;
            let f = |k: usize| {
                let t = (k as f64 * h).min(p.repetition_period * (1.0 - f64::EPSILON));
                rate_function(alpha, t0, t, &p).unwrap()
            };
            let mut acc = f(0) + f(n);
            for k in 1..n {
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k);
            }
            let integral = acc * h / 3.0;
            assert_relative_eq!(integral, pixel_flux(alpha, &p).total_count, max_relative = 1e-6);
        }
    }

    #[test]
    fn rate_symmetric_and_bounded_below() {
        let p = lab_params();
        let t0 = 40e-9;
        let bg = p.background / p.repetition_period;
        for k in 0..50 {
            let dt = k as f64 * 17e-12;
            let a = rate_function(0.8, t0, t0 - dt, &p).unwrap();
            let b = rate_function(0.8, t0, t0 + dt, &p).unwrap();
            assert_eq!(a, b);
            assert!(a >= bg);
        }
    }

    #[test]
    fn flux_values() {
        let p = AcquisitionParams::default();
        let f = pixel_flux(0.5, &p);
        assert_relative_eq!(f.signal_count, 0.001995, max_relative = 1e-12);
        // about one signal photon per 500 pulses
        assert!((1.0 / f.signal_count - 500.0).abs() < 2.0);

        let f0 = pixel_flux(0.0, &lab_params());
        assert_eq!(f0.signal_count, 0.0);
        assert_eq!(f0.total_count, lab_params().background);

        // B from SBR = 1 at mean reflectivity 0.5
        let b = 0.35 * 0.5 * 0.0114 / 1.0;
        let p1 = AcquisitionParams { background: b, ..Default::default() };
        let f1 = pixel_flux(1.0, &p1);
        assert_relative_eq!(f1.background_count, 0.001995, max_relative = 1e-12);
        assert_eq!(f1.total_count, f1.signal_count + f1.background_count);
    }

    #[test]
    fn sbr_values() {
        let p = AcquisitionParams::default();
        let uniform = Scene::new(2, 2, vec![1.0; 4], vec![3.0; 4]).unwrap();
        let p1 = AcquisitionParams { background: p.quantum_efficiency * p.signal_flux, ..p };
        assert_relative_eq!(scene_sbr(&uniform, &p1).value(), 1.0, max_relative = 1e-15);
        assert_eq!(scene_sbr(&uniform, &p), Sbr::Infinite);

        let toy = toy_scene(1000).unwrap();
        assert_relative_eq!(toy.mean_reflectivity(), 0.5005, max_relative = 1e-12);
        let p2 = AcquisitionParams { background: 0.0019965, ..p };
        let expected = 0.35 * 0.5005 * 0.0114 / 0.0019965;
        assert_relative_eq!(scene_sbr(&toy, &p2).value(), expected, max_relative = 1e-12);
        assert!((expected - 1.0005).abs() < 1e-3);

        // linear in mean reflectivity, inverse in B
        let half = Scene::new(2, 2, vec![0.5; 4], vec![3.0; 4]).unwrap();
        let p3 = AcquisitionParams { background: 2.0 * p1.background, ..p1 };
        assert_relative_eq!(scene_sbr(&half, &p1).value(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(scene_sbr(&uniform, &p3).value(), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn toy_scene_formulas() {
        let s = toy_scene(1000).unwrap();
        // pixel (1, 1000) in 1-based notation
        assert_relative_eq!(s.alpha_at(0, 999), 1.0);
        assert_relative_eq!(s.depth_at(0, 999), 0.514, max_relative = 1e-12);
        // pixel (1000, 500)
        assert_relative_eq!(s.alpha_at(999, 499), 0.5);
        assert_relative_eq!(s.depth_at(999, 499), 14.5, max_relative = 1e-12);
        s.validate_for(&AcquisitionParams::default()).unwrap();

        let small = toy_scene(2).unwrap();
        assert_eq!(small.reflectivity(), &[0.5, 1.0, 0.5, 1.0]);
        assert_eq!(small.depth(), &[7.5, 7.5, 14.5, 14.5]);
        assert!(toy_scene(1).is_err());
    }

    #[test]
    fn scene_validation() {
        assert!(Scene::new(0, 1, vec![], vec![]).is_err());
        assert!(Scene::new(1, 1, vec![1.2], vec![1.0]).is_err());
        assert!(Scene::new(1, 1, vec![0.2], vec![-1.0]).is_err());
        assert!(Scene::new(2, 1, vec![0.2], vec![1.0]).is_err());
        let far = Scene::new(1, 1, vec![0.2], vec![15.0]).unwrap();
        assert!(far.validate_for(&AcquisitionParams::default()).is_err());
    }

    #[test]
    fn params_validation() {
        let p = AcquisitionParams::default();
        p.validate().unwrap();
        assert!(AcquisitionParams { pulse_width: 2e-9, ..p }.validate().is_err());
        assert!(AcquisitionParams { quantum_efficiency: 1.0, ..p }.validate().is_err());
        assert!(AcquisitionParams { pulses: 0, ..p }.validate().is_err());
        assert!(AcquisitionParams { signal_flux: 0.0, ..p }.validate().is_err());
        assert!(AcquisitionParams { background: -1.0, ..p }.validate().is_err());
        assert_relative_eq!(p.z_max(), 14.9896229, max_relative = 1e-9);
        assert_relative_eq!(p.z_half(), 7.49481145, max_relative = 1e-9);
    }

    #[test]
    fn blocks_scene_is_piecewise_constant() {
        let s = blocks_scene(128).unwrap();
        s.validate_for(&AcquisitionParams::default()).unwrap();
        let mut depths: Vec<f64> = s.depth().to_vec();
        depths.sort_by(f64::total_cmp);
        depths.dedup();
        assert_eq!(depths.len(), BLOCKS.len() + 1);
        assert_relative_eq!(s.depth_range(), 0.8, max_relative = 1e-12);
    }
}
