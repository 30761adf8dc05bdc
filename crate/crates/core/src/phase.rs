//! Wrapped-phase rasters, aperture masks and residue detection.
//!
//! Phase values are radians in the half-open range (−π, π]. All arithmetic
//! is done in `f64`; file storage may be narrower (see [`crate::io`]).

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Wrap a finite angle into (−π, π].
///
/// Non-finite input is a domain error. Use [`wrap_angle`] inside hot loops
/// where finiteness is already established.
pub fn wrap(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("cannot wrap non-finite value {x}")));
    }
    Ok(wrap_angle(x))
}

/// Unchecked [`wrap`]; the caller guarantees `x` is finite.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    debug_assert!(x.is_finite());
    if x > -PI && x <= PI {
        return x;
    }
    // Differences of two wrapped values land within one period.
    let y = if x > PI { x - TAU } else { x + TAU };
    if y > -PI && y <= PI {
        return y;
    }
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// `wrap(a − b)`: the shortest signed angular step from `b` to `a`.
pub fn wrapped_diff(a: f64, b: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "wrapped difference of non-finite values ({a}, {b})"
        )));
    }
    Ok(wrap_angle(a - b))
}

#[inline]
pub(crate) fn wdiff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

#[inline]
fn in_wrapped_range(v: f64) -> bool {
    v > -PI && v <= PI
}

/// A single wrapped-phase raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFrame {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl PhaseFrame {
    /// Build a frame from values that are already wrapped into (−π, π].
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !in_wrapped_range(**v))
        {
            return Err(Error::Domain(format!(
                "pixel {i} has value {v}, outside (-pi, pi]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Build a frame by wrapping arbitrary finite radian values.
    pub fn from_unwrapped(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        check_dims(width, height, values.len())?;
        let values = values
            .iter()
            .map(|&v| wrap(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Constant-valued frame; `value` is wrapped first.
    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        check_dims(width, height, width * height)?;
        let v = wrap(value)?;
        Ok(Self {
            width,
            height,
            values: vec![v; width * height],
        })
    }

    /// Internal constructor for values produced by `wrap_angle`.
    pub(crate) fn from_wrapped_unchecked(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|v| in_wrapped_range(*v)));
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.width..(row + 1) * self.width]
    }

    pub fn same_shape(&self, mask: &ApertureMask) -> bool {
        self.width == mask.width && self.height == mask.height
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width < 2 || height < 2 {
        return Err(Error::Dimension(format!(
            "raster must be at least 2x2, got {width}x{height}"
        )));
    }
    if len != width * height {
        return Err(Error::Dimension(format!(
            "expected {} values for {width}x{height}, got {len}",
            width * height
        )));
    }
    Ok(())
}

/// Boolean validity raster describing the measured pupil.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApertureMask {
    width: usize,
    height: usize,
    valid: Vec<bool>,
}

impl ApertureMask {
    pub fn new(width: usize, height: usize, valid: Vec<bool>) -> Result<Self> {
        check_dims(width, height, valid.len())?;
        if !valid.iter().any(|&v| v) {
            return Err(Error::Mask("mask has no valid pixel".into()));
        }
        Ok(Self {
            width,
            height,
            valid,
        })
    }

    /// Every pixel valid.
    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![true; width * height])
    }

    /// Disk inscribed in the raster: pixel centers within `min(w, h)/2` of
    /// the raster center.
    pub fn disk(width: usize, height: usize) -> Result<Self> {
        let cy = (height as f64 - 1.0) / 2.0;
        let cx = (width as f64 - 1.0) / 2.0;
        let r = width.min(height) as f64 / 2.0;
        let mut valid = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                let dy = row as f64 - cy;
                let dx = col as f64 - cx;
                valid.push(dx * dx + dy * dy <= r * r);
            }
        }
        Self::new(width, height, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &ApertureMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Intersection of two masks of equal shape. Errors if empty.
    pub fn intersect(&self, other: &ApertureMask) -> Result<ApertureMask> {
        if !self.same_shape(other) {
            return Err(Error::Dimension("mask shapes differ".into()));
        }
        let valid = self
            .valid
            .iter()
            .zip(&other.valid)
            .map(|(a, b)| *a && *b)
            .collect();
        ApertureMask::new(self.width, self.height, valid)
    }

    /// Mean (row, col) of the valid pixels.
    pub fn centroid(&self) -> (f64, f64) {
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
        for row in 0..self.height {
            for col in 0..self.width {
                if self.is_valid(row, col) {
                    sr += row as f64;
                    sc += col as f64;
                    n += 1;
                }
            }
        }
        (sr / n as f64, sc / n as f64)
    }

    /// True when the valid pixels form a single 4-connected region.
    pub fn is_four_connected(&self) -> bool {
        let start = match self.valid.iter().position(|&v| v) {
            Some(s) => s,
            None => return false,
        };
        let mut seen = vec![false; self.valid.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut reached = 1usize;
        while let Some(i) = queue.pop_front() {
            let (row, col) = (i / self.width, i % self.width);
            for j in four_neighbours(row, col, self.width, self.height) {
                if self.valid[j] && !seen[j] {
                    seen[j] = true;
                    reached += 1;
                    queue.push_back(j);
                }
            }
        }
        reached == self.valid_count()
    }

    pub fn check_four_connected(&self) -> Result<()> {
        if self.is_four_connected() {
            Ok(())
        } else {
            Err(Error::Mask("valid region is not 4-connected".into()))
        }
    }
}

/// Linear indices of the in-bounds 4-neighbours of (row, col), in the fixed
/// order up, down, left, right.
pub(crate) fn four_neighbours(
    row: usize,
    col: usize,
    width: usize,
    height: usize,
) -> impl Iterator<Item = usize> {
    let up = (row > 0).then(|| (row - 1) * width + col);
    let down = (row + 1 < height).then(|| (row + 1) * width + col);
    let left = (col > 0).then(|| row * width + col - 1);
    let right = (col + 1 < width).then(|| row * width + col + 1);
    [up, down, left, right].into_iter().flatten()
}

/// Ordered set of wrapped frames that share one aperture mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStack {
    frames: Vec<PhaseFrame>,
    mask: ApertureMask,
    acquisition_index: Vec<u32>,
}

impl PhaseStack {
    /// Stack with acquisition indices `0..n`.
    pub fn new(frames: Vec<PhaseFrame>, mask: ApertureMask) -> Result<Self> {
        let idx = (0..frames.len() as u32).collect();
        Self::with_indices(frames, mask, idx)
    }

    pub fn with_indices(
        frames: Vec<PhaseFrame>,
        mask: ApertureMask,
        acquisition_index: Vec<u32>,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Config("stack has no frames".into()));
        }
        if let Some(i) = frames.iter().position(|f| !f.same_shape(&mask)) {
            return Err(Error::Dimension(format!(
                "frame {i} is {}x{}, mask is {}x{}",
                frames[i].width, frames[i].height, mask.width, mask.height
            )));
        }
        if acquisition_index.len() != frames.len() {
            return Err(Error::Config(format!(
                "{} acquisition indices for {} frames",
                acquisition_index.len(),
                frames.len()
            )));
        }
        if acquisition_index.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "acquisition indices must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            frames,
            mask,
            acquisition_index,
        })
    }

    pub fn frames(&self) -> &[PhaseFrame] {
        &self.frames
    }

    pub fn mask(&self) -> &ApertureMask {
        &self.mask
    }

    pub fn acquisition_index(&self) -> &[u32] {
        &self.acquisition_index
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }
}

/// Integer circulation of each 2×2 pixel loop; `(height−1)×(width−1)`.
///
/// Loop `(r, c)` visits pixels `(r,c) → (r,c+1) → (r+1,c+1) → (r+1,c)`,
/// which is counter-clockwise in (x = column, y = row) coordinates. A vortex
/// `atan2(row − rc, col − cc)` therefore carries charge +1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidueMap {
    width: usize,
    height: usize,
    charges: Vec<i8>,
}

impl ResidueMap {
    /// Loop-grid width (`frame width − 1`).
    pub fn width(&self) -> usize {
        self.width
    }

    /// Loop-grid height (`frame height − 1`).
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn charges(&self) -> &[i8] {
        &self.charges
    }

    #[inline]
    pub fn charge(&self, row: usize, col: usize) -> i8 {
        self.charges[row * self.width + col]
    }

    /// Number of loops with nonzero charge.
    pub fn count(&self) -> usize {
        self.charges.iter().filter(|&&q| q != 0).count()
    }

    pub fn positive(&self) -> usize {
        self.charges.iter().filter(|&&q| q > 0).count()
    }

    pub fn negative(&self) -> usize {
        self.charges.iter().filter(|&&q| q < 0).count()
    }

    pub fn net_charge(&self) -> i64 {
        self.charges.iter().map(|&q| q as i64).sum()
    }

    /// Coordinates of every charged loop, row-major.
    pub fn positions(&self) -> Vec<(usize, usize, i8)> {
        self.charges
            .iter()
            .enumerate()
            .filter(|(_, q)| **q != 0)
            .map(|(i, q)| (i / self.width, i % self.width, *q))
            .collect()
    }
}

/// Loop-sum charge of every fully valid 2×2 loop.
///
/// The loop sum of four wrapped differences is an exact multiple of 2π up to
/// rounding; it is rounded to the nearest integer. Each loop is evaluated
/// independently so the result does not depend on evaluation order.
pub fn detect_residues(frame: &PhaseFrame, mask: &ApertureMask) -> Result<ResidueMap> {
    if !frame.same_shape(mask) {
        return Err(Error::Dimension("frame and mask shapes differ".into()));
    }
    let (w, h) = (frame.width, frame.height);
    let (lw, lh) = (w - 1, h - 1);
    let mut charges = vec![0i8; lw * lh];
    for r in 0..lh {
        for c in 0..lw {
            if !(mask.is_valid(r, c)
                && mask.is_valid(r, c + 1)
                && mask.is_valid(r + 1, c + 1)
                && mask.is_valid(r + 1, c))
            {
                continue;
            }
            let a = frame.get(r, c);
            let b = frame.get(r, c + 1);
            let cc = frame.get(r + 1, c + 1);
            let d = frame.get(r + 1, c);
            let sum = wdiff(b, a) + wdiff(cc, b) + wdiff(d, cc) + wdiff(a, d);
            charges[r * lw + c] = (sum / TAU).round() as i8;
        }
    }
    Ok(ResidueMap {
        width: lw,
        height: lh,
        charges,
    })
}
