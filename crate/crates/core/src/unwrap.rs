//! Goldstein branch-cut phase unwrapping.
//!
//! Residues live on the dual lattice of 2×2 pixel loops. Branch cuts are
//! chains of dual steps; every dual step crosses exactly one primal edge
//! between two neighbouring pixels, and that edge is barred to integration.
//!
//! Edge naming: `h(r, c)` joins pixels `(r, c)` and `(r, c+1)`; `v(r, c)`
//! joins `(r, c)` and `(r+1, c)`. A dual step from loop `(r, c)` to
//! `(r, c+1)` crosses `v(r, c+1)`; a step from `(r, c)` to `(r+1, c)` crosses
//! `h(r+1, c)`. Loops on the outer ring reach the outside by one more step.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::phase::{detect_residues, four_neighbours, wdiff, ApertureMask, PhaseFrame, ResidueMap};

/// Unwrapped continuous phase with the mask of pixels actually reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    width: usize,
    height: usize,
    values: Vec<f64>,
    mask: ApertureMask,
}

impl Surface {
    pub fn new(values: Vec<f64>, mask: ApertureMask) -> Result<Self> {
        let (width, height) = (mask.width(), mask.height());
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} surface",
                values.len()
            )));
        }
        if values
            .iter()
            .zip(mask.valid())
            .any(|(v, ok)| *ok && !v.is_finite())
        {
            return Err(Error::Domain("surface has a non-finite valid pixel".into()));
        }
        Ok(Self {
            width,
            height,
            values,
            mask,
        })
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

    pub fn mask(&self) -> &ApertureMask {
        &self.mask
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Values at valid pixels, row-major.
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(self.mask.valid())
            .filter(|(_, ok)| **ok)
            .map(|(v, _)| *v)
    }
}

/// Edges barred to integration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchCutMap {
    width: usize,
    height: usize,
    /// `height × (width − 1)` edges between horizontal neighbours.
    cut_h: Vec<bool>,
    /// `(height − 1) × width` edges between vertical neighbours.
    cut_v: Vec<bool>,
}

impl BranchCutMap {
    fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cut_h: vec![false; height * (width - 1)],
            cut_v: vec![false; (height - 1) * width],
        }
    }

    /// Edge between `(row, col)` and `(row, col + 1)`.
    pub fn is_cut_h(&self, row: usize, col: usize) -> bool {
        self.cut_h[row * (self.width - 1) + col]
    }

    /// Edge between `(row, col)` and `(row + 1, col)`.
    pub fn is_cut_v(&self, row: usize, col: usize) -> bool {
        self.cut_v[row * self.width + col]
    }

    pub fn cut_edge_count(&self) -> usize {
        self.cut_h.iter().chain(&self.cut_v).filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.cut_edge_count() == 0
    }

    /// Whether the edge between linear pixel indices `a` and `b`
    /// (4-neighbours) is cut.
    fn blocks(&self, a: usize, b: usize) -> bool {
        let (lo, hi) = (a.min(b), a.max(b));
        let (r, c) = (lo / self.width, lo % self.width);
        if hi == lo + 1 {
            self.is_cut_h(r, c)
        } else {
            self.is_cut_v(r, c)
        }
    }

    /// Mark the primal edge crossed by a unit dual step. Dual coordinates may
    /// be −1 or one past the loop grid (the outside).
    fn cross(&mut self, from: (isize, isize), to: (isize, isize)) {
        let (w, h) = (self.width as isize, self.height as isize);
        if from.1 == to.1 {
            // vertical dual step: edge h(max_row, col)
            let r = from.0.max(to.0);
            let c = from.1;
            if (0..h).contains(&r) && (0..w - 1).contains(&c) {
                self.cut_h[(r * (w - 1) + c) as usize] = true;
            }
        } else {
            let r = from.0;
            let c = from.1.max(to.1);
            if (0..h - 1).contains(&r) && (0..w).contains(&c) {
                self.cut_v[(r * w + c) as usize] = true;
            }
        }
    }

    /// 4-connected staircase along the segment between two dual points.
    fn draw(&mut self, from: (isize, isize), to: (isize, isize)) {
        let (dr, dc) = (to.0 - from.0, to.1 - from.1);
        let (nr, nc) = (dr.unsigned_abs() as f64, dc.unsigned_abs() as f64);
        let (sr, sc) = (dr.signum(), dc.signum());
        let (mut moved_r, mut moved_c) = (0.0, 0.0);
        let mut at = from;
        while at != to {
            let step_row = if moved_r == nr {
                false
            } else if moved_c == nc {
                true
            } else {
                (moved_r + 0.5) / nr <= (moved_c + 0.5) / nc
            };
            let next = if step_row {
                moved_r += 1.0;
                (at.0 + sr, at.1)
            } else {
                moved_c += 1.0;
                (at.0, at.1 + sc)
            };
            self.cross(at, next);
            at = next;
        }
    }
}

struct LoopGrid<'a> {
    residues: &'a ResidueMap,
    mask: &'a ApertureMask,
    lw: usize,
    lh: usize,
}

impl LoopGrid<'_> {
    fn on_outer_ring(&self, r: usize, c: usize) -> bool {
        r == 0 || c == 0 || r + 1 == self.lh || c + 1 == self.lw
    }

    fn touches_invalid(&self, r: usize, c: usize) -> bool {
        !(self.mask.is_valid(r, c)
            && self.mask.is_valid(r, c + 1)
            && self.mask.is_valid(r + 1, c)
            && self.mask.is_valid(r + 1, c + 1))
    }

    fn is_border(&self, r: usize, c: usize) -> bool {
        self.on_outer_ring(r, c) || self.touches_invalid(r, c)
    }

    /// Dual point just outside the loop grid next to an outer-ring loop.
    fn outside_of(&self, r: usize, c: usize) -> (isize, isize) {
        let (r, c) = (r as isize, c as isize);
        if r == 0 {
            (-1, c)
        } else if r as usize + 1 == self.lh {
            (r + 1, c)
        } else if c == 0 {
            (r, -1)
        } else {
            (r, c + 1)
        }
    }
}

/// Offsets at Chebyshev distance `d`, nearest (Manhattan) first.
#[derive(Default)]
struct RingOffsets {
    rings: Vec<Vec<(isize, isize)>>,
}

impl RingOffsets {
    fn get(&mut self, d: usize) -> &[(isize, isize)] {
        while self.rings.len() <= d {
            let k = self.rings.len() as isize;
            let mut ring = Vec::new();
            for dr in -k..=k {
                for dc in -k..=k {
                    if dr.abs().max(dc.abs()) == k && k > 0 {
                        ring.push((dr, dc));
                    }
                }
            }
            ring.sort_by_key(|&(dr, dc)| (dr.abs() + dc.abs(), dr, dc));
            self.rings.push(ring);
        }
        &self.rings[d]
    }
}

/// Goldstein's nearest-neighbour branch-cut placement.
///
/// For every unbalanced residue a search box grows around the members of the
/// current tree, ring by ring. Residues found in the box join the tree through a cut, and
/// their charge is added if they were not already balanced. The tree stops
/// when its net charge is zero or a cut reaches the border. The border is
/// the outer ring of loops or any loop touching an invalid pixel. The box
/// grows up to `max(width, height)`, so the border is always found.
pub fn place_branch_cuts(residues: &ResidueMap, mask: &ApertureMask) -> Result<BranchCutMap> {
    let (lw, lh) = (residues.width(), residues.height());
    if mask.width() != lw + 1 || mask.height() != lh + 1 {
        return Err(Error::Dimension(
            "residue map does not match the mask".into(),
        ));
    }
    let mut cuts = BranchCutMap::empty(mask.width(), mask.height());
    let grid = LoopGrid {
        residues,
        mask,
        lw,
        lh,
    };
    let max_half = mask.width().max(mask.height());
    let mut balanced = vec![false; lw * lh];
    // Generation stamp marks tree membership without clearing per tree.
    let mut tree = vec![0u32; lw * lh];
    let mut generation = 0u32;
    let mut rings = RingOffsets::default();

    for start in 0..lw * lh {
        if grid.residues.charges()[start] == 0 || balanced[start] {
            continue;
        }
        generation += 1;
        let (sr, sc) = (start / lw, start % lw);
        balanced[start] = true;
        tree[start] = generation;
        let mut charge = grid.residues.charges()[start] as i32;
        if grid.is_border(sr, sc) {
            if grid.on_outer_ring(sr, sc) {
                let p = (sr as isize, sc as isize);
                cuts.draw(p, grid.outside_of(sr, sc));
            }
            continue;
        }
        // Each tree member scans Chebyshev rings outward; `scanned` is the
        // last ring it has covered, so growing the box only visits new cells.
        let mut active = vec![(sr, sc)];
        let mut scanned = vec![0usize];
        'grow: for half in 1..=max_half {
            let mut a = 0;
            while a < active.len() {
                let (ar, ac) = active[a];
                for ring in scanned[a] + 1..=half {
                    for &(dr, dc) in rings.get(ring) {
                        let (r, c) = (ar as isize + dr, ac as isize + dc);
                        if r < 0 || c < 0 || r >= lh as isize || c >= lw as isize {
                            continue;
                        }
                        let (r, c) = (r as usize, c as usize);
                        let here = (ar as isize, ac as isize);
                        let there = (r as isize, c as isize);
                        if grid.is_border(r, c) {
                            cuts.draw(here, there);
                            if grid.on_outer_ring(r, c) {
                                cuts.draw(there, grid.outside_of(r, c));
                            }
                            break 'grow;
                        }
                        let k = r * lw + c;
                        let q = grid.residues.charges()[k];
                        if q != 0 && tree[k] != generation {
                            if !balanced[k] {
                                charge += q as i32;
                                balanced[k] = true;
                            }
                            tree[k] = generation;
                            active.push((r, c));
                            scanned.push(0);
                            cuts.draw(here, there);
                            if charge == 0 {
                                break 'grow;
                            }
                        }
                    }
                }
                scanned[a] = half;
                a += 1;
            }
        }
    }
    Ok(cuts)
}

/// Result of one unwrap with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Unwrapped {
    pub surface: Surface,
    pub residue_count: usize,
    pub cut_edges: usize,
    /// Valid input pixels that could not be reached without crossing a cut.
    pub unreached_pixels: usize,
    /// More than half of the valid pixels were unreached.
    pub low_coverage: bool,
}

/// Valid pixel nearest the mask centroid (first in row-major order on ties).
pub fn default_seed(mask: &ApertureMask) -> (usize, usize) {
    let (cr, cc) = mask.centroid();
    let mut best = (f64::INFINITY, 0, 0);
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.is_valid(r, c) {
                let d = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                if d < best.0 {
                    best = (d, r, c);
                }
            }
        }
    }
    (best.1, best.2)
}

/// Flood-fill integration of wrapped differences from `seed`, never crossing
/// a cut edge. Returns the surface and the number of unreached valid pixels.
pub fn integrate(
    frame: &PhaseFrame,
    mask: &ApertureMask,
    cuts: &BranchCutMap,
    seed: (usize, usize),
) -> Result<(Surface, usize)> {
    let (w, h) = (frame.width(), frame.height());
    if !frame.same_shape(mask) || cuts.width != w || cuts.height != h {
        return Err(Error::Dimension(
            "frame, mask and cut map shapes differ".into(),
        ));
    }
    if seed.0 >= h || seed.1 >= w || !mask.is_valid(seed.0, seed.1) {
        return Err(Error::Mask(format!("seed pixel {seed:?} is not valid")));
    }
    let start = seed.0 * w + seed.1;
    let wrapped = frame.values();
    let mut values = vec![0.0; w * h];
    let mut reached = vec![false; w * h];
    values[start] = wrapped[start];
    reached[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        for j in four_neighbours(i / w, i % w, w, h) {
            if reached[j] || !mask.valid()[j] || cuts.blocks(i, j) {
                continue;
            }
            values[j] = values[i] + wdiff(wrapped[j], wrapped[i]);
            reached[j] = true;
            queue.push_back(j);
        }
    }
    let unreached = mask.valid_count() - reached.iter().filter(|&&r| r).count();
    let out_mask = ApertureMask::new(w, h, reached)?;
    Ok((Surface::new(values, out_mask)?, unreached))
}

/// Goldstein unwrap from an explicit seed pixel.
pub fn unwrap_from(
    frame: &PhaseFrame,
    mask: &ApertureMask,
    seed: (usize, usize),
) -> Result<Unwrapped> {
    if !frame.same_shape(mask) {
        return Err(Error::Dimension("frame and mask shapes differ".into()));
    }
    mask.check_four_connected()?;
    let residues = detect_residues(frame, mask)?;
    let cuts = place_branch_cuts(&residues, mask)?;
    let (surface, unreached) = integrate(frame, mask, &cuts, seed)?;
    Ok(Unwrapped {
        surface,
        residue_count: residues.count(),
        cut_edges: cuts.cut_edge_count(),
        unreached_pixels: unreached,
        low_coverage: 2 * unreached > mask.valid_count(),
    })
}

/// Goldstein unwrap seeded at the valid pixel nearest the mask centroid.
pub fn unwrap(frame: &PhaseFrame, mask: &ApertureMask) -> Result<Surface> {
    unwrap_detailed(frame, mask).map(|u| u.surface)
}

pub fn unwrap_detailed(frame: &PhaseFrame, mask: &ApertureMask) -> Result<Unwrapped> {
    mask.check_four_connected()?;
    unwrap_from(frame, mask, default_seed(mask))
}

/// A 2-D phase unwrapping algorithm.
pub trait Unwrapper: Send + Sync {
    fn unwrap(&self, frame: &PhaseFrame, mask: &ApertureMask) -> Result<Unwrapped>;
}

impl<U: Unwrapper + ?Sized> Unwrapper for &U {
    fn unwrap(&self, frame: &PhaseFrame, mask: &ApertureMask) -> Result<Unwrapped> {
        (**self).unwrap(frame, mask)
    }
}

/// Goldstein branch cuts with flood-fill integration.
#[derive(Debug, Clone, Copy, Default)]
pub struct Goldstein;

impl Unwrapper for Goldstein {
    fn unwrap(&self, frame: &PhaseFrame, mask: &ApertureMask) -> Result<Unwrapped> {
        unwrap_detailed(frame, mask)
    }
}

/// Wraps another unwrapper and counts its invocations.
#[derive(Debug, Default)]
pub struct CountingUnwrapper<U> {
    inner: U,
    calls: AtomicUsize,
}

impl<U: Unwrapper> CountingUnwrapper<U> {
    pub fn new(inner: U) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<U: Unwrapper> Unwrapper for CountingUnwrapper<U> {
    fn unwrap(&self, frame: &PhaseFrame, mask: &ApertureMask) -> Result<Unwrapped> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.unwrap(frame, mask)
    }
}
