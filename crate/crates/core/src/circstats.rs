//! Circular mean of angle samples and of clustered frame stacks.
//!
//! Each angle θ is mapped to the unit circle as (cos θ, sin θ); the mean
//! direction is `atan2(mean sin, mean cos)` and the resultant length is the
//! norm of the mean vector.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phase::{wrap_angle, ApertureMask, PhaseFrame};

/// Resultant lengths at or below this leave the mean direction undefined.
pub const RESULTANT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularSummary {
    /// Mean direction in (−π, π]; `None` when the resultant vanishes.
    pub mean: Option<f64>,
    pub resultant_length: f64,
    pub sample_count: usize,
}

impl CircularSummary {
    /// 1 − R.
    pub fn circular_variance(&self) -> f64 {
        1.0 - self.resultant_length
    }
}

/// Circular mean of a non-empty sample of finite angles.
pub fn circular_mean(samples: &[f64]) -> Result<CircularSummary> {
    if samples.is_empty() {
        return Err(Error::Config("circular mean of an empty sample".into()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("circular mean of non-finite sample".into()));
    }
    let (s, c) = samples
        .iter()
        .fold((0.0, 0.0), |(s, c), &t| (s + t.sin(), c + t.cos()));
    Ok(summarize(s, c, samples.len()))
}

#[inline]
fn summarize(sum_sin: f64, sum_cos: f64, n: usize) -> CircularSummary {
    let k = n as f64;
    let (y, x) = (sum_sin / k, sum_cos / k);
    let r = (x * x + y * y).sqrt().min(1.0);
    CircularSummary {
        mean: (r > RESULTANT_EPSILON).then(|| wrap_angle(y.atan2(x))),
        resultant_length: r,
        sample_count: n,
    }
}

/// Per-pixel circular mean across the members of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct CircularMeanFrame {
    /// Denoised wrapped phase; undefined pixels hold 0.
    pub frame: PhaseFrame,
    /// Resultant length per pixel (0 outside the input mask).
    pub resultant: Vec<f64>,
    /// Input mask minus the pixels whose mean is undefined.
    pub mask: ApertureMask,
    pub undefined_pixels: usize,
}

/// Circular mean at each valid pixel of `frames`. Members are accumulated in
/// slice order at every pixel, so the output is bitwise reproducible.
pub fn circular_mean_frame(
    frames: &[&PhaseFrame],
    mask: &ApertureMask,
) -> Result<CircularMeanFrame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Config("circular mean of an empty cluster".into()))?;
    if let Some(i) = frames.iter().position(|f| !f.same_shape(mask)) {
        return Err(Error::Dimension(format!(
            "cluster member {i} does not match the mask shape"
        )));
    }
    let (w, h) = (first.width(), first.height());
    let k = frames.len();
    // Accumulate frame by frame (streaming); each pixel still sums its
    // members in slice order.
    let mut sums = vec![(0.0f64, 0.0f64); w * h];
    for f in frames {
        sums.par_chunks_mut(w)
            .zip(f.values().par_chunks(w))
            .zip(mask.valid().par_chunks(w))
            .for_each(|((acc, vals), valid)| {
                for ((a, &v), &ok) in acc.iter_mut().zip(vals).zip(valid) {
                    if ok {
                        let (fs, fc) = v.sin_cos();
                        a.0 += fs;
                        a.1 += fc;
                    }
                }
            });
    }
    let per_pixel: Vec<(f64, f64, bool)> = sums
        .par_iter()
        .zip(mask.valid().par_iter())
        .map(|(&(s, c), &ok)| {
            if !ok {
                return (0.0, 0.0, false);
            }
            let sum = summarize(s, c, k);
            match sum.mean {
                Some(m) => (m, sum.resultant_length, true),
                None => (0.0, sum.resultant_length, false),
            }
        })
        .collect();
    let undefined_pixels = mask.valid_count() - per_pixel.iter().filter(|p| p.2).count();
    let values = per_pixel.iter().map(|p| p.0).collect();
    let resultant = per_pixel.iter().map(|p| p.1).collect();
    let valid = per_pixel.iter().map(|p| p.2).collect();
    let mask = ApertureMask::new(w, h, valid)
        .map_err(|_| Error::Undefined("circular mean is undefined at every pixel".into()))?;
    Ok(CircularMeanFrame {
        frame: PhaseFrame::from_wrapped_unchecked(w, h, values),
        resultant,
        mask,
        undefined_pixels,
    })
}

/// Per-pixel arithmetic mean of wrapped values (re-wrapped). This is the
/// naive average that fails at the wrap boundary; kept for comparison.
pub fn arithmetic_mean_frame(frames: &[&PhaseFrame], mask: &ApertureMask) -> Result<PhaseFrame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Config("arithmetic mean of an empty set".into()))?;
    if frames.iter().any(|f| !f.same_shape(mask)) {
        return Err(Error::Dimension(
            "frame does not match the mask shape".into(),
        ));
    }
    let k = frames.len() as f64;
    let values = (0..first.width() * first.height())
        .map(|i| {
            if mask.valid()[i] {
                wrap_angle(frames.iter().map(|f| f.values()[i]).sum::<f64>() / k)
            } else {
                0.0
            }
        })
        .collect();
    Ok(PhaseFrame::from_wrapped_unchecked(
        first.width(),
        first.height(),
        values,
    ))
}
