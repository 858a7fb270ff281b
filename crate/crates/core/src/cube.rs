//! Per-pixel timestamp containers shared by the simulator, the filters and
//! the depth estimator.

use crate::error::{Error, Result};
use crate::scene::AcquisitionParams;

/// Detection timestamps of every pixel, in seconds within `[0, T_r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestampCube {
    width: usize,
    height: usize,
    timestamps: Vec<Vec<f64>>,
    params: AcquisitionParams,
}

impl TimestampCube {
    pub fn new(width: usize, height: usize, timestamps: Vec<Vec<f64>>, params: AcquisitionParams) -> Result<Self> {
        if timestamps.len() != width * height {
            return Err(Error::DimensionMismatch { expected: (width, height), got: (timestamps.len(), 1) });
        }
        check_range(&timestamps, params.repetition_period)?;
        Ok(Self { width, height, timestamps, params })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn params(&self) -> &AcquisitionParams {
        &self.params
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        &self.timestamps[i * self.width + j]
    }

    pub fn pixels(&self) -> &[Vec<f64>] {
        &self.timestamps
    }

    pub fn into_pixels(self) -> Vec<Vec<f64>> {
        self.timestamps
    }

    pub fn total_count(&self) -> usize {
        self.timestamps.iter().map(Vec::len).sum()
    }

    /// Union of the 3×3 neighbourhood of `(i, j)` with the centre left out,
    /// truncated at the image border.
    pub fn ring_neighborhood(&self, i: usize, j: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for (y, x) in window(self.height, self.width, i, j, 1) {
            if (y, x) != (i, j) {
                out.extend_from_slice(self.pixel(y, x));
            }
        }
        out
    }

    /// Union of the `side`×`side` square centred on `(i, j)`, centre
    /// included, clipped to the image.
    pub fn square_neighborhood(&self, i: usize, j: usize, side: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for (y, x) in window(self.height, self.width, i, j, side / 2) {
            out.extend_from_slice(self.pixel(y, x));
        }
        out
    }
}

/// In-bounds coordinates of the square of half-width `radius` around `(i, j)`.
pub(crate) fn window(
    height: usize,
    width: usize,
    i: usize,
    j: usize,
    radius: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let rows = i.saturating_sub(radius)..(i + radius + 1).min(height);
    let cols = j.saturating_sub(radius)..(j + radius + 1).min(width);
    rows.flat_map(move |y| cols.clone().map(move |x| (y, x)))
}

fn check_range(sets: &[Vec<f64>], period: f64) -> Result<()> {
    for (k, set) in sets.iter().enumerate() {
        if let Some(t) = set.iter().find(|t| !(0.0..period).contains(*t)) {
            return Err(Error::Domain(format!("timestamp {t} at pixel {k} not in [0, {period})")));
        }
    }
    Ok(())
}

/// Output of a signal-extraction filter: the timestamps each pixel keeps and
/// the per-pixel anchor the filter censored around.
#[derive(Clone, Debug, PartialEq)]
pub struct CensoredCube {
    width: usize,
    height: usize,
    repetition_period: f64,
    signal_sets: Vec<Vec<f64>>,
    estimates: Vec<Option<f64>>,
}

impl CensoredCube {
    pub fn new(
        width: usize,
        height: usize,
        repetition_period: f64,
        signal_sets: Vec<Vec<f64>>,
        estimates: Vec<Option<f64>>,
    ) -> Result<Self> {
        let n = width * height;
        if signal_sets.len() != n || estimates.len() != n {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                got: (signal_sets.len(), estimates.len()),
            });
        }
        check_range(&signal_sets, repetition_period)?;
        Ok(Self { width, height, repetition_period, signal_sets, estimates })
    }

    /// Every timestamp of `cube` kept, no anchors. This is what the signal
    /// oracle feeds to the estimator.
    pub fn passthrough(cube: &TimestampCube) -> Self {
        Self {
            width: cube.width,
            height: cube.height,
            repetition_period: cube.params.repetition_period,
            signal_sets: cube.timestamps.clone(),
            estimates: vec![None; cube.width * cube.height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn repetition_period(&self) -> f64 {
        self.repetition_period
    }

    pub fn signal_sets(&self) -> &[Vec<f64>] {
        &self.signal_sets
    }

    pub fn estimates(&self) -> &[Option<f64>] {
        &self.estimates
    }

    pub fn set(&self, i: usize, j: usize) -> &[f64] {
        &self.signal_sets[i * self.width + j]
    }

    pub fn estimate(&self, i: usize, j: usize) -> Option<f64> {
        self.estimates[i * self.width + j]
    }

    pub fn retained_count(&self) -> usize {
        self.signal_sets.iter().map(Vec::len).sum()
    }

    pub fn is_all_empty(&self) -> bool {
        self.signal_sets.iter().all(Vec::is_empty)
    }

    pub(crate) fn signal_sets_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.signal_sets
    }
}
