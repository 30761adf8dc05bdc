//! Synthetic interferometry lab: ground-truth surfaces, noisy wrapped
//! stacks, contaminated trials and four-bucket interferograms.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`, which is a portable, platform-independent stream. Each
//! frame of a trial draws from its own ChaCha stream (`set_stream(k + 1)`)
//! so frames can be synthesised in any order with identical results.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{wrap_angle, ApertureMask, PhaseFrame, PhaseStack};

/// Unwrapped ground-truth phase, radians, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueSurface {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl TrueSurface {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height || width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} surface",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("surface values must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            values,
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

    pub fn peak_to_valley(&self) -> f64 {
        let (lo, hi) = min_max(&self.values);
        hi - lo
    }

    /// Mean of squared mean-removed values.
    pub fn signal_power(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }

    /// The surface wrapped into (−π, π].
    pub fn wrapped(&self) -> Result<PhaseFrame> {
        PhaseFrame::from_unwrapped(self.width, self.height, &self.values)
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// The classic "peaks" test function.
pub fn peaks(x: f64, y: f64) -> f64 {
    3.0 * (1.0 - x).powi(2) * (-x * x - (y + 1.0).powi(2)).exp()
        - 10.0 * (x / 5.0 - x.powi(3) - y.powi(5)) * (-x * x - y * y).exp()
        - (1.0 / 3.0) * (-(x + 1.0).powi(2) - y * y).exp()
}

/// Grid coordinate of index `i` on an `n`-point uniform grid over [−3, 3].
fn peaks_coord(i: usize, n: usize) -> f64 {
    -3.0 + 6.0 * i as f64 / (n - 1) as f64
}

/// Raw (unscaled) peaks on an `n × n` grid; column → x, row → y.
pub fn peaks_grid(n: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n * n);
    for row in 0..n {
        let y = peaks_coord(row, n);
        for col in 0..n {
            v.push(peaks(peaks_coord(col, n), y));
        }
    }
    v
}

/// Peaks on an `n × n` grid over [−3, 3]², linearly scaled so that
/// max − min equals `target_pv`.
pub fn peaks_surface(n: usize, target_pv: f64) -> Result<TrueSurface> {
    if n < 8 {
        return Err(Error::Config(format!("peaks grid must be >= 8, got {n}")));
    }
    if !(target_pv > 0.0 && target_pv.is_finite()) {
        return Err(Error::Config(format!(
            "target peak-to-valley must be positive, got {target_pv}"
        )));
    }
    let raw = peaks_grid(n);
    let (lo, hi) = min_max(&raw);
    let scale = target_pv / (hi - lo);
    let values = raw.iter().map(|v| v * scale).collect();
    TrueSurface::new(n, n, values)
}

/// Which power the SNR in decibels is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrReference {
    /// Mean of the squared, mean-removed surface values.
    #[default]
    SignalPower,
    /// A fixed reference power of 1 rad² (0 dBW), the usual default of
    /// `awgn`-style helpers when no measured power is requested.
    UnitPower,
}

/// Noise standard deviation for a surface at `snr_db` against `reference`.
/// Returns 0 for `snr_db = +∞`.
pub fn noise_sigma(surface: &TrueSurface, snr_db: f64, reference: SnrReference) -> Result<f64> {
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("invalid SNR {snr_db} dB")));
    }
    let power = match reference {
        SnrReference::SignalPower => {
            let p = surface.signal_power();
            if p <= 0.0 {
                return Err(Error::Config(
                    "surface has zero variance; SNR is undefined".into(),
                ));
            }
            p
        }
        SnrReference::UnitPower => 1.0,
    };
    Ok((power / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// Add i.i.d. zero-mean Gaussian noise at `snr_db` relative to the surface's
/// mean-removed signal power. `f64::INFINITY` disables the noise.
pub fn add_awgn(surface: &TrueSurface, snr_db: f64, seed: u64) -> Result<TrueSurface> {
    add_awgn_with(surface, snr_db, SnrReference::SignalPower, seed)
}

pub fn add_awgn_with(
    surface: &TrueSurface,
    snr_db: f64,
    reference: SnrReference,
    seed: u64,
) -> Result<TrueSurface> {
    if surface.values.len() < 2 {
        return Err(Error::Config("surface needs at least 2 pixels".into()));
    }
    let sigma = noise_sigma(surface, snr_db, reference)?;
    if sigma == 0.0 {
        return Ok(surface.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = surface
        .values
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    TrueSurface::new(surface.width, surface.height, values)
}

/// Output of four-bucket demodulation. Pixels with zero modulation are
/// flagged invalid and carry phase 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    pub frame: PhaseFrame,
    pub valid: Vec<bool>,
}

impl Demodulated {
    pub fn mask(&self) -> Result<ApertureMask> {
        ApertureMask::new(self.frame.width(), self.frame.height(), self.valid.clone())
    }
}

/// Four phase-shifted intensity rasters `I_k = A + B·cos(φ + (k−1)·π/2)`.
pub fn synthesize_buckets(phase: &[f64], bias: f64, modulation: f64) -> [Vec<f64>; 4] {
    std::array::from_fn(|k| {
        let shift = k as f64 * std::f64::consts::FRAC_PI_2;
        phase
            .iter()
            .map(|p| bias + modulation * (p + shift).cos())
            .collect()
    })
}

/// Four-bucket phase: `atan2(I4 − I2, I1 − I3)`.
pub fn four_bucket_demodulate(
    width: usize,
    height: usize,
    buckets: [&[f64]; 4],
) -> Result<Demodulated> {
    let n = width * height;
    if buckets.iter().any(|b| b.len() != n) {
        return Err(Error::Dimension(format!(
            "all four buckets must hold {n} values"
        )));
    }
    let [i1, i2, i3, i4] = buckets;
    let mut values = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for k in 0..n {
        let s = i4[k] - i2[k];
        let c = i1[k] - i3[k];
        if !(s.is_finite() && c.is_finite()) {
            return Err(Error::Domain(format!("non-finite intensity at pixel {k}")));
        }
        if s == 0.0 && c == 0.0 {
            values.push(0.0);
            valid.push(false);
        } else {
            values.push(wrap_angle(s.atan2(c)));
            valid.push(true);
        }
    }
    Ok(Demodulated {
        frame: PhaseFrame::new(width, height, values)?,
        valid,
    })
}

/// Pupil shape used for synthetic trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aperture {
    #[default]
    Full,
    Disk,
}

impl Aperture {
    pub fn mask(self, width: usize, height: usize) -> Result<ApertureMask> {
        match self {
            Aperture::Full => ApertureMask::full(width, height),
            Aperture::Disk => ApertureMask::disk(width, height),
        }
    }
}

/// Parameters of a synthetic measurement trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub frame_count: usize,
    pub snr_db: f64,
    #[serde(default)]
    pub snr_reference: SnrReference,
    /// Number of perturbed-phase families.
    pub perturbation_count: usize,
    pub contaminant_fraction: f64,
    /// Peak tilt per family, radians at the aperture edge, per axis.
    pub tilt_jitter: f64,
    pub seed: u64,
    #[serde(default)]
    pub aperture: Aperture,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self {
            frame_count: 1,
            snr_db: f64::INFINITY,
            snr_reference: SnrReference::SignalPower,
            perturbation_count: 1,
            contaminant_fraction: 0.0,
            tilt_jitter: 0.0,
            seed: 0,
            aperture: Aperture::Full,
        }
    }
}

impl TrialSpec {
    /// `round_half_up(contaminant_fraction · frame_count)`.
    pub fn contaminant_count(&self) -> usize {
        (self.contaminant_fraction * self.frame_count as f64 + 0.5).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::Config("frame_count must be >= 1".into()));
        }
        if self.perturbation_count == 0 {
            return Err(Error::Config("perturbation_count must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.contaminant_fraction) {
            return Err(Error::Config(format!(
                "contaminant_fraction must lie in [0, 1), got {}",
                self.contaminant_fraction
            )));
        }
        if !(self.tilt_jitter >= 0.0 && self.tilt_jitter.is_finite()) {
            return Err(Error::Config("tilt_jitter must be finite and >= 0".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db is NaN".into()));
        }
        if self.contaminant_count() >= self.frame_count {
            return Err(Error::Config(format!(
                "{} contaminants leave no useful frame out of {}",
                self.contaminant_count(),
                self.frame_count
            )));
        }
        Ok(())
    }
}

/// Ground-truth label of a synthetic frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameLabel {
    Family(usize),
    Contaminant,
}

/// Sidecar describing how a trial was generated. Never read by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLabels {
    pub spec: TrialSpec,
    /// One label per stack frame, in stack order.
    pub labels: Vec<FrameLabel>,
    /// (x, y) tilt of each family, radians at the aperture edge.
    pub family_tilts: Vec<(f64, f64)>,
    pub noise_sigma: f64,
}

impl TrialLabels {
    pub fn contaminant_positions(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == FrameLabel::Contaminant)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Trial {
    pub stack: PhaseStack,
    pub labels: TrialLabels,
}

/// Synthesise a stack of wrapped frames from `truth`.
///
/// Non-contaminant frames are `wrap(truth + family tilt + noise)`; the
/// families are assigned round-robin. Contaminants get an independent tilt of
/// magnitude 5–10× `tilt_jitter` and twice the noise power. Frame order is
/// shuffled by the seed.
pub fn make_trial(truth: &TrueSurface, spec: &TrialSpec) -> Result<Trial> {
    spec.validate()?;
    let (w, h) = (truth.width, truth.height);
    let mask = spec.aperture.mask(w, h)?;
    let sigma = noise_sigma(truth, spec.snr_db, spec.snr_reference)?;
    let jitter = spec.tilt_jitter;

    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let family_tilts: Vec<(f64, f64)> = (0..spec.perturbation_count)
        .map(|_| {
            if jitter > 0.0 {
                (
                    master.random_range(-jitter..=jitter),
                    master.random_range(-jitter..=jitter),
                )
            } else {
                (0.0, 0.0)
            }
        })
        .collect();

    let n_cont = spec.contaminant_count();
    let mut plan: Vec<FrameLabel> = (0..spec.frame_count - n_cont)
        .map(|i| FrameLabel::Family(i % spec.perturbation_count))
        .chain(std::iter::repeat_n(FrameLabel::Contaminant, n_cont))
        .collect();
    plan.shuffle(&mut master);

    let half_w = (w as f64 - 1.0) / 2.0;
    let half_h = (h as f64 - 1.0) / 2.0;
    let frames: Vec<PhaseFrame> = plan
        .par_iter()
        .enumerate()
        .map(|(k, label)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(k as u64 + 1);
            let ((tx, ty), s) = match *label {
                FrameLabel::Family(q) => (family_tilts[q], sigma),
                FrameLabel::Contaminant => {
                    let tilt = if jitter > 0.0 {
                        let mag = rng.random_range(5.0 * jitter..=10.0 * jitter);
                        let dir = rng.random_range(0.0..std::f64::consts::TAU);
                        (mag * dir.cos(), mag * dir.sin())
                    } else {
                        (0.0, 0.0)
                    };
                    (tilt, sigma * std::f64::consts::SQRT_2)
                }
            };
            let mut values = Vec::with_capacity(w * h);
            for row in 0..h {
                let y = (row as f64 - half_h) / half_h;
                for col in 0..w {
                    let x = (col as f64 - half_w) / half_w;
                    let mut v = truth.values[row * w + col] + tx * x + ty * y;
                    if s > 0.0 {
                        v += s * rng.sample::<f64, _>(StandardNormal);
                    }
                    values.push(wrap_angle(v));
                }
            }
            PhaseFrame::from_wrapped_unchecked(w, h, values)
        })
        .collect();

    Ok(Trial {
        stack: PhaseStack::new(frames, mask)?,
        labels: TrialLabels {
            spec: spec.clone(),
            labels: plan,
            family_tilts,
            noise_sigma: sigma,
        },
    })
}
