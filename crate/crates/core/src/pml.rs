//! Depth estimation from censored timestamp sets.
//!
//! With a Gaussian pulse the per-pixel negative log-likelihood is quadratic
//! in depth, so each pixel's data term reduces to `w·(z − ζ)²` with `w` the
//! number of retained timestamps and `ζ` the depth of their mean. The
//! penalised estimator adds β times an anisotropic total variation, smoothed
//! with a Huber corner, and is minimised by majorise-minimise: each outer
//! step replaces every Huber edge term by its quadratic upper bound at the
//! current iterate and decreases that surrogate with preconditioned
//! conjugate gradients. Both stages can only lower the objective.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::CensoredCube;
use crate::error::{Error, Result};
use crate::scene::{AcquisitionParams, Scene, SPEED_OF_LIGHT};

/// Huber corner of the smoothed total variation, as a fraction of z_max.
pub const HUBER_FRACTION: f64 = 1e-4;

const CG_MAX_ITERATIONS: usize = 400;
const CG_RELATIVE_RESIDUAL: f64 = 1e-10;

/// Depth map in metres. `None` marks pixels with no recoverable depth.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    depth: Vec<Option<f64>>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, depth: Vec<Option<f64>>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::DimensionMismatch { expected: (width, height), got: (depth.len(), 1) });
        }
        Ok(Self { width, height, depth })
    }

    /// Ground-truth depth of a scene.
    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            width: scene.width(),
            height: scene.height(),
            depth: scene.depth().iter().map(|&z| Some(z)).collect(),
        }
    }

    /// Image with no recoverable pixel at all.
    pub fn blank(width: usize, height: usize) -> Self {
        Self { width, height, depth: vec![None; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> &[Option<f64>] {
        &self.depth
    }

    pub fn at(&self, i: usize, j: usize) -> Option<f64> {
        self.depth[i * self.width + j]
    }

    /// Depths with absent pixels reported as 0 m, the lower end of the
    /// admissible range.
    pub fn filled(&self) -> Vec<f64> {
        self.depth.iter().map(|z| z.unwrap_or(0.0)).collect()
    }

    pub fn validity_mask(&self) -> Vec<bool> {
        self.depth.iter().map(Option::is_some).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PmlConfig {
    /// Weight of the total-variation penalty, in metres⁻¹.
    pub beta: f64,
    pub max_iterations: usize,
    /// Stop once the relative objective decrease of an outer step falls
    /// below this.
    pub tolerance: f64,
}

impl Default for PmlConfig {
    fn default() -> Self {
        // β picked by a grid search on the 200×200 ramp scene, SBR 1, 2 PPP,
        // consensus filter (see the ignored `calibrate_beta` test).
        Self { beta: DEFAULT_BETA, max_iterations: 100, tolerance: 1e-10 }
    }
}

pub const DEFAULT_BETA: f64 = 10.0;

impl PmlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta {} must be > 0", self.beta)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance {} must be > 0", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Closed-form constrained ML depth of one pixel: the depth of the mean
/// timestamp, clamped to `[0, z_max)`.
pub fn cml_depth(signal_set: &[f64], params: &AcquisitionParams) -> Option<f64> {
    if signal_set.is_empty() {
        return None;
    }
    let mean = signal_set.iter().sum::<f64>() / signal_set.len() as f64;
    Some(clamp_depth(SPEED_OF_LIGHT * mean / 2.0, params.z_max()))
}

fn clamp_depth(z: f64, z_max: f64) -> f64 {
    z.clamp(0.0, z_max * (1.0 - f64::EPSILON))
}

/// The penalised objective in reduced form.
#[derive(Clone, Debug)]
pub struct PmlProblem {
    width: usize,
    height: usize,
    /// Retained timestamps per pixel.
    weight: Vec<f64>,
    /// Depth of each pixel's mean timestamp; unused where weight is zero.
    target: Vec<f64>,
    /// Σ (ζ_t − ζ̄)² over all timestamps, the part of the data term no depth
    /// choice can remove.
    scatter: f64,
    /// (2/c)² / (2σ²): data-term curvature per timestamp in m⁻².
    data_scale: f64,
    beta: f64,
    huber: f64,
    z_max: f64,
}

impl PmlProblem {
    pub fn new(censored: &CensoredCube, params: &AcquisitionParams, beta: f64) -> Self {
        let half_c = SPEED_OF_LIGHT / 2.0;
        let mut weight = Vec::with_capacity(censored.signal_sets().len());
        let mut target = Vec::with_capacity(weight.capacity());
        let mut scatter = 0.0;
        for set in censored.signal_sets() {
            let w = set.len() as f64;
            let mean = if set.is_empty() { 0.0 } else { set.iter().sum::<f64>() / w };
            scatter += set.iter().map(|t| (half_c * (t - mean)).powi(2)).sum::<f64>();
            weight.push(w);
            target.push(half_c * mean);
        }
        let sigma = params.pulse_sigma();
        Self {
            width: censored.width(),
            height: censored.height(),
            weight,
            target,
            scatter,
            data_scale: (2.0 / SPEED_OF_LIGHT).powi(2) / (2.0 * sigma * sigma),
            beta,
            huber: HUBER_FRACTION * params.z_max(),
            z_max: params.z_max(),
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn huber_corner(&self) -> f64 {
        self.huber
    }

    pub fn has_data(&self) -> bool {
        self.weight.iter().any(|&w| w > 0.0)
    }

    /// Right and down neighbours of pixel `k`.
    fn forward_edges(&self, k: usize) -> impl Iterator<Item = usize> {
        let (i, j) = (k / self.width, k % self.width);
        let right = (j + 1 < self.width).then_some(k + 1);
        let down = (i + 1 < self.height).then_some(k + self.width);
        right.into_iter().chain(down)
    }

    fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> {
        let (i, j) = (k / self.width, k % self.width);
        let w = self.width;
        [
            (j > 0).then(|| k - 1),
            (j + 1 < w).then_some(k + 1),
            (i > 0).then(|| k - w),
            (i + 1 < self.height).then_some(k + w),
        ]
        .into_iter()
        .flatten()
    }

    fn huber_value(&self, x: f64) -> f64 {
        let a = x.abs();
        if a <= self.huber {
            a * a / (2.0 * self.huber)
        } else {
            a - self.huber / 2.0
        }
    }

    pub fn data_term(&self, z: &[f64]) -> f64 {
        let fit: f64 = (0..self.len())
            .filter(|&k| self.weight[k] > 0.0)
            .map(|k| self.weight[k] * (z[k] - self.target[k]).powi(2))
            .sum();
        self.data_scale * (fit + self.scatter)
    }

    pub fn smoothed_tv(&self, z: &[f64]) -> f64 {
        (0..self.len())
            .map(|k| self.forward_edges(k).map(|q| self.huber_value(z[k] - z[q])).sum::<f64>())
            .sum()
    }

    /// Σ_t (t − 2z/c)²/(2σ²) + β·TV_huber(z).
    pub fn objective(&self, z: &[f64]) -> f64 {
        self.data_term(z) + self.beta * self.smoothed_tv(z)
    }

    /// Starting point: data pixels at their own ML depth, empty pixels at
    /// the value of the nearest data pixel (breadth-first).
    fn initial_guess(&self) -> Vec<f64> {
        let mut z = vec![f64::NAN; self.len()];
        let mut queue = VecDeque::new();
        for k in 0..self.len() {
            if self.weight[k] > 0.0 {
                z[k] = self.target[k];
                queue.push_back(k);
            }
        }
        while let Some(k) = queue.pop_front() {
            let v = z[k];
            for q in self.neighbors(k).collect::<Vec<_>>() {
                if z[q].is_nan() {
                    z[q] = v;
                    queue.push_back(q);
                }
            }
        }
        z
    }

    /// Applies the surrogate Hessian 2·a·W + β·L_ω to `x`.
    fn apply(&self, omega: &Edges, x: &[f64], out: &mut [f64]) {
        let two_a = 2.0 * self.data_scale;
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            let mut acc = two_a * self.weight[k] * x[k];
            for (q, wgt) in omega.around(self, k) {
                acc += self.beta * wgt * (x[k] - x[q]);
            }
            *o = acc;
        });
    }

    /// One majorise-minimise step from `z`, returned in place.
    fn surrogate_step(&self, z: &mut [f64]) {
        let n = self.len();
        let omega = Edges::weights(self, z);
        let two_a = 2.0 * self.data_scale;
        let rhs: Vec<f64> = (0..n).map(|k| two_a * self.weight[k] * self.target[k]).collect();
        let diag: Vec<f64> = (0..n)
            .map(|k| {
                let d = two_a * self.weight[k] + omega.around(self, k).map(|(_, w)| self.beta * w).sum::<f64>();
                if d > 0.0 { d } else { 1.0 }
            })
            .collect();

        let mut ax = vec![0.0; n];
        self.apply(&omega, z, &mut ax);
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let r0 = dot(&r, &r).sqrt();
        let scale = dot(&rhs, &rhs).sqrt().max(r0);
        if r0 == 0.0 || scale == 0.0 {
            return;
        }
        let mut s: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = s.clone();
        let mut rs = dot(&r, &s);
        let mut ap = vec![0.0; n];
        for _ in 0..CG_MAX_ITERATIONS {
            self.apply(&omega, &p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let step = rs / pap;
            z.iter_mut().zip(&p).for_each(|(z, p)| *z += step * p);
            r.iter_mut().zip(&ap).for_each(|(r, ap)| *r -= step * ap);
            if dot(&r, &r).sqrt() <= CG_RELATIVE_RESIDUAL * scale {
                break;
            }
            s.iter_mut().zip(r.iter().zip(&diag)).for_each(|(s, (r, d))| *s = r / d);
            let rs_next = dot(&r, &s);
            let ratio = rs_next / rs;
            rs = rs_next;
            p.iter_mut().zip(&s).for_each(|(p, s)| *p = s + ratio * *p);
        }
    }
}

/// Half-quadratic weights 1/max(|Δ|, ε) of the right and down edges.
struct Edges {
    right: Vec<f64>,
    down: Vec<f64>,
}

impl Edges {
    fn weights(problem: &PmlProblem, z: &[f64]) -> Self {
        let (w, h) = (problem.width, problem.height);
        let eps = problem.huber;
        let weight = |d: f64| 1.0 / d.abs().max(eps);
        let right = (0..w * h)
            .map(|k| if k % w + 1 < w { weight(z[k] - z[k + 1]) } else { 0.0 })
            .collect();
        let down = (0..w * h)
            .map(|k| if k / w + 1 < h { weight(z[k] - z[k + w]) } else { 0.0 })
            .collect();
        Self { right, down }
    }

    fn around<'a>(&'a self, problem: &PmlProblem, k: usize) -> impl Iterator<Item = (usize, f64)> + 'a {
        let (w, h) = (problem.width, problem.height);
        let (i, j) = (k / w, k % w);
        [
            (j + 1 < w).then(|| (k + 1, self.right[k])),
            (j > 0).then(|| (k - 1, self.right[k - 1])),
            (i + 1 < h).then(|| (k + w, self.down[k])),
            (i > 0).then(|| (k - w, self.down[k - w])),
        ]
        .into_iter()
        .flatten()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solver result.
#[derive(Clone, Debug)]
pub struct PmlOutcome {
    pub depth: DepthImage,
    /// Objective after initialisation and after every accepted outer step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Pixels that carried at least one timestamp; the rest were filled in.
    pub measured: Vec<bool>,
}

impl PmlProblem {
    /// Minimises the objective; returns the unclamped minimiser and the
    /// objective trace.
    pub fn solve(&self, config: &PmlConfig) -> Result<(Vec<f64>, Vec<f64>, usize, bool)> {
        config.validate()?;
        if !self.has_data() {
            return Err(Error::NoData);
        }
        let mut z = self.initial_guess();
        let mut f = self.objective(&z);
        let mut history = vec![f];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < config.max_iterations {
            iterations += 1;
            let mut candidate = z.clone();
            self.surrogate_step(&mut candidate);
            let f_new = self.objective(&candidate);
            if !(f_new <= f) {
                // rounding-level increase: the surrogate is already at its floor
                converged = true;
                break;
            }
            let decrease = (f - f_new) / f.abs().max(f64::MIN_POSITIVE);
            z = candidate;
            f = f_new;
            history.push(f);
            if decrease < config.tolerance {
                converged = true;
                break;
            }
        }
        Ok((z, history, iterations, converged))
    }
}

/// Penalised ML depth of every pixel. Pixels without timestamps are filled
/// by the regulariser. Errors when no pixel has data.
pub fn pml_depth(censored: &CensoredCube, params: &AcquisitionParams, config: &PmlConfig) -> Result<PmlOutcome> {
    let problem = PmlProblem::new(censored, params, config.beta);
    let (z, objective_history, iterations, converged) = problem.solve(config)?;
    if !converged {
        log::warn!("PML stopped after {iterations} iterations without meeting tolerance {}", config.tolerance);
    }
    let depth = z.into_iter().map(|z| Some(clamp_depth(z, problem.z_max))).collect();
    Ok(PmlOutcome {
        depth: DepthImage::new(censored.width(), censored.height(), depth)?,
        objective_history,
        iterations,
        converged,
        measured: problem.weight.iter().map(|&w| w > 0.0).collect(),
    })
}

/// Per-pixel [`cml_depth`] image; empty pixels are absent.
pub fn cml_image(censored: &CensoredCube, params: &AcquisitionParams) -> DepthImage {
    let depth = censored.signal_sets().iter().map(|s| cml_depth(s, params)).collect();
    DepthImage::new(censored.width(), censored.height(), depth).expect("same dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn params() -> AcquisitionParams {
        AcquisitionParams::default()
    }

    fn cube_from_sets(w: usize, h: usize, sets: Vec<Vec<f64>>) -> CensoredCube {
        CensoredCube::new(w, h, 100e-9, sets, vec![None; w * h]).unwrap()
    }

    #[test]
    fn cml_examples() {
        let p = params();
        let t0 = 23.4e-9;
        assert_relative_eq!(cml_depth(&[t0], &p).unwrap(), SPEED_OF_LIGHT * t0 / 2.0, max_relative = 1e-15);
        let d = 0.3e-9;
        assert_relative_eq!(cml_depth(&[t0 - d, t0 + d], &p).unwrap(), SPEED_OF_LIGHT * t0 / 2.0, max_relative = 1e-14);
        assert_eq!(cml_depth(&[], &p), None);
    }

    #[test]
    fn cml_standard_error() {
        let p = params();
        let z = 6.1;
        let t_star = p.depth_to_time(z);
        let pulse = Normal::new(t_star, p.pulse_sigma()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let draws: Vec<f64> = (0..1000).map(|_| pulse.sample(&mut rng)).collect();
        let bound = 3.0 * SPEED_OF_LIGHT * p.pulse_width / (2.0 * 1000f64.sqrt() * 2.0);
        assert!((cml_depth(&draws, &p).unwrap() - z).abs() < bound);
    }

    #[test]
    fn all_empty_is_an_error() {
        let c = cube_from_sets(3, 3, vec![Vec::new(); 9]);
        assert!(matches!(pml_depth(&c, &params(), &PmlConfig::default()), Err(Error::NoData)));
    }

    #[test]
    fn constant_scene_stays_constant() {
        let p = params();
        let t0 = p.depth_to_time(5.0);
        let c = cube_from_sets(6, 5, vec![vec![t0, t0]; 30]);
        let out = pml_depth(&c, &p, &PmlConfig::default()).unwrap();
        assert!(out.converged);
        for z in out.depth.depth() {
            assert!((z.unwrap() - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vanishing_beta_matches_cml() {
        let p = params();
        let s = crate::scene::toy_scene(10).unwrap();
        let pp = crate::simulator::configure_for_targets(&s, &p, crate::Sbr::Infinite, 200.0).unwrap();
        let cube = crate::simulator::simulate_scene(&s, &pp, crate::RngSeed(4)).unwrap();
        let censored = CensoredCube::passthrough(&cube);
        assert!(!censored.signal_sets().iter().any(Vec::is_empty));
        let cfg = PmlConfig { beta: 1e-9, ..Default::default() };
        let out = pml_depth(&censored, &pp, &cfg).unwrap();
        let cml = cml_image(&censored, &pp);
        for (a, b) in out.depth.depth().iter().zip(cml.depth()) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_pixels_are_filled() {
        let p = params();
        let near = p.depth_to_time(3.0);
        let mut sets = vec![vec![near; 3]; 25];
        sets[12].clear();
        sets[0].clear();
        let c = cube_from_sets(5, 5, sets);
        let out = pml_depth(&c, &p, &PmlConfig::default()).unwrap();
        assert!((out.depth.at(2, 2).unwrap() - 3.0).abs() < 1e-6);
        assert!((out.depth.at(0, 0).unwrap() - 3.0).abs() < 1e-6);
        assert!(!out.measured[12]);
        assert!(out.depth.validity_mask().iter().all(|&v| v));
    }

    #[test]
    fn objective_is_monotone_and_penalty_shrinks_noise() {
        let p = params();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let jitter = Normal::new(0.0, 0.2).unwrap();
        // one photon per pixel with 20 cm depth noise around a two-level scene
        let sets: Vec<Vec<f64>> = (0..64)
            .map(|k| {
                let z = if k % 8 < 4 { 4.0 } else { 5.0 } + jitter.sample(&mut rng);
                vec![p.depth_to_time(z)]
            })
            .collect();
        let c = cube_from_sets(8, 8, sets);
        let cfg = PmlConfig { beta: 300.0, ..Default::default() };
        let out = pml_depth(&c, &p, &cfg).unwrap();
        assert!(out.objective_history.windows(2).all(|w| w[1] <= w[0]));
        let tv = |img: &DepthImage| {
            let z = img.filled();
            (0..64).filter(|k| k % 8 < 7).map(|k| (z[k] - z[k + 1]).abs()).sum::<f64>()
        };
        assert!(tv(&out.depth) < tv(&cml_image(&c, &p)));
    }

    #[test]
    fn objective_parts() {
        let p = params();
        let t = [p.depth_to_time(2.0), p.depth_to_time(2.2)];
        let c = cube_from_sets(2, 1, vec![t.to_vec(), vec![]]);
        let prob = PmlProblem::new(&c, &p, 2.0);
        let z = [2.1, 2.1];
        let sigma = p.pulse_sigma();
        let direct: f64 = t.iter().map(|t| (t - 2.0 * 2.1 / SPEED_OF_LIGHT).powi(2) / (2.0 * sigma * sigma)).sum();
        assert_relative_eq!(prob.data_term(&z), direct, max_relative = 1e-10);
        assert_eq!(prob.smoothed_tv(&z), 0.0);
        let z2 = [2.1, 3.1];
        assert_relative_eq!(prob.smoothed_tv(&z2), 1.0 - prob.huber_corner() / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(PmlConfig { beta: 0.0, ..Default::default() }.validate().is_err());
        assert!(PmlConfig { tolerance: 0.0, ..Default::default() }.validate().is_err());
        assert!(PmlConfig { max_iterations: 0, ..Default::default() }.validate().is_err());
        PmlConfig::default().validate().unwrap();
    }
}
