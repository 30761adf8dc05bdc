//! Piston shift and 2×2 average pooling ahead of pattern classification.

use crate::error::{Error, Result};
use crate::phase::{wrap_angle, ApertureMask, PhaseFrame};

/// Smallest pooled raster accepted, per side.
pub const MIN_POOLED_SIDE: usize = 4;

/// Default anchor for [`piston_shift`]: `(⌊height/2⌋, ⌊width/2⌋)`.
pub fn center_pixel(frame: &PhaseFrame) -> (usize, usize) {
    (frame.height() / 2, frame.width() / 2)
}

/// Subtract the phase at the center pixel from every pixel, modulo 2π.
pub fn piston_shift(frame: &PhaseFrame, mask: &ApertureMask) -> Result<PhaseFrame> {
    let (row, col) = center_pixel(frame);
    piston_shift_at(frame, mask, (row, col))
}

/// [`piston_shift`] with an explicit anchor pixel `(row, col)`.
pub fn piston_shift_at(
    frame: &PhaseFrame,
    mask: &ApertureMask,
    anchor: (usize, usize),
) -> Result<PhaseFrame> {
    if !frame.same_shape(mask) {
        return Err(Error::Dimension("frame and mask shapes differ".into()));
    }
    let (row, col) = anchor;
    if row >= frame.height() || col >= frame.width() || !mask.is_valid(row, col) {
        return Err(Error::InvalidAnchor { row, col });
    }
    let reference = frame.get(row, col);
    let values = frame
        .values()
        .iter()
        .map(|&v| wrap_angle(v - reference))
        .collect();
    Ok(PhaseFrame::from_wrapped_unchecked(
        frame.width(),
        frame.height(),
        values,
    ))
}

/// One 2×2 average-pooling layer.
///
/// Each output pixel is the arithmetic mean of the valid pixels of its block
/// (wrapped values are averaged as plain numbers), re-wrapped. A trailing odd
/// row or column is dropped. Blocks with no valid member become invalid and
/// hold 0.
pub fn avg_pool2(frame: &PhaseFrame, mask: &ApertureMask) -> Result<(PhaseFrame, ApertureMask)> {
    if !frame.same_shape(mask) {
        return Err(Error::Dimension("frame and mask shapes differ".into()));
    }
    let (ow, oh) = (frame.width() / 2, frame.height() / 2);
    if ow < MIN_POOLED_SIDE || oh < MIN_POOLED_SIDE {
        return Err(Error::Dimension(format!(
            "pooling {}x{} gives {ow}x{oh}, below the {MIN_POOLED_SIDE}x{MIN_POOLED_SIDE} minimum; \
             repeated pooling destroys the pattern features",
            frame.width(),
            frame.height()
        )));
    }
    let mut values = Vec::with_capacity(ow * oh);
    let mut valid = Vec::with_capacity(ow * oh);
    for r in 0..oh {
        for c in 0..ow {
            let (mut sum, mut n) = (0.0, 0u32);
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let (y, x) = (2 * r + dr, 2 * c + dc);
                if mask.is_valid(y, x) {
                    sum += frame.get(y, x);
                    n += 1;
                }
            }
            if n == 0 {
                values.push(0.0);
                valid.push(false);
            } else {
                values.push(wrap_angle(sum / n as f64));
                valid.push(true);
            }
        }
    }
    Ok((
        PhaseFrame::from_wrapped_unchecked(ow, oh, values),
        ApertureMask::new(ow, oh, valid)?,
    ))
}

/// Apply [`avg_pool2`] `levels` times. `levels = 0` returns the inputs.
pub fn pool(
    frame: &PhaseFrame,
    mask: &ApertureMask,
    levels: usize,
) -> Result<(PhaseFrame, ApertureMask)> {
    let mut out = (frame.clone(), mask.clone());
    for _ in 0..levels {
        out = avg_pool2(&out.0, &out.1)?;
    }
    Ok(out)
}
