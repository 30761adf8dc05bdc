//! Low-order Zernike removal, RMSE and phase-to-height conversion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::ApertureMask;
use crate::unwrap::Surface;

/// HeNe wavelength used when none is given, nm.
pub const DEFAULT_WAVELENGTH_NM: f64 = 632.8;

/// Minimum number of valid pixels for a Zernike fit.
pub const MIN_FIT_PIXELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZernikeMode {
    /// Z0 = 1
    Piston,
    /// Z1 = ρ cos θ
    TiltX,
    /// Z2 = ρ sin θ
    TiltY,
    /// Z3 = 2ρ² − 1
    Power,
}

impl ZernikeMode {
    pub const ALL: [ZernikeMode; 4] = [
        ZernikeMode::Piston,
        ZernikeMode::TiltX,
        ZernikeMode::TiltY,
        ZernikeMode::Power,
    ];

    /// Value at normalized pupil coordinates (x, y) = (ρ cos θ, ρ sin θ).
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            ZernikeMode::Piston => 1.0,
            ZernikeMode::TiltX => x,
            ZernikeMode::TiltY => y,
            ZernikeMode::Power => 2.0 * (x * x + y * y) - 1.0,
        }
    }
}

/// Mapping of pixel coordinates onto the unit disk: the bounding circle of
/// the valid pixels about the mask centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitDisk {
    pub center_row: f64,
    pub center_col: f64,
    pub radius: f64,
}

impl UnitDisk {
    pub fn of(mask: &ApertureMask) -> Self {
        let (cr, cc) = mask.centroid();
        let mut r2 = 0.0f64;
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                if mask.is_valid(r, c) {
                    r2 = r2.max((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2));
                }
            }
        }
        Self {
            center_row: cr,
            center_col: cc,
            radius: r2.sqrt(),
        }
    }

    /// Normalized (x, y): x along columns, y along rows.
    pub fn normalize(&self, row: usize, col: usize) -> (f64, f64) {
        let r = if self.radius > 0.0 { self.radius } else { 1.0 };
        (
            (col as f64 - self.center_col) / r,
            (row as f64 - self.center_row) / r,
        )
    }
}

/// Fitted coefficients (radians) of the selected modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZernikeFit {
    pub modes: Vec<ZernikeMode>,
    pub coefficients: Vec<f64>,
    pub disk: UnitDisk,
}

impl ZernikeFit {
    pub fn coefficient(&self, mode: ZernikeMode) -> Option<f64> {
        self.modes
            .iter()
            .position(|&m| m == mode)
            .map(|i| self.coefficients[i])
    }
}

/// Least-squares fit of `modes` over the valid pixels, subtracted from the
/// surface. Solved by a thin QR (modified Gram–Schmidt, two passes) of the
/// valid-pixel design, so the residual is orthogonal to every fitted mode.
pub fn zernike_fit_remove(
    surface: &Surface,
    modes: &[ZernikeMode],
) -> Result<(Surface, ZernikeFit)> {
    let mask = surface.mask();
    let mut modes = modes.to_vec();
    modes.sort();
    modes.dedup();
    let disk = UnitDisk::of(mask);
    if modes.is_empty() {
        return Ok((
            surface.clone(),
            ZernikeFit {
                modes,
                coefficients: Vec::new(),
                disk,
            },
        ));
    }
    let idx: Vec<usize> = (0..mask.valid().len())
        .filter(|&i| mask.valid()[i])
        .collect();
    if idx.len() < MIN_FIT_PIXELS {
        return Err(Error::Config(format!(
            "zernike fit needs at least {MIN_FIT_PIXELS} valid pixels, got {}",
            idx.len()
        )));
    }
    let w = mask.width();
    let coords: Vec<(f64, f64)> = idx.iter().map(|&i| disk.normalize(i / w, i % w)).collect();
    let columns: Vec<Vec<f64>> = modes
        .iter()
        .map(|m| coords.iter().map(|&(x, y)| m.eval(x, y)).collect())
        .collect();
    let rhs: Vec<f64> = idx.iter().map(|&i| surface.values()[i]).collect();

    let (q, r) = thin_qr(&columns)?;
    let qtb: Vec<f64> = q.iter().map(|qj| dot(qj, &rhs)).collect();
    let k = modes.len();
    let mut coefficients = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| r[i][j] * coefficients[j]).sum();
        coefficients[i] = (qtb[i] - s) / r[i][i];
    }

    // Residual as b − Q Qᵀ b keeps it orthogonal to the span to rounding.
    let mut residual = rhs;
    for (qj, &c) in q.iter().zip(&qtb) {
        for (v, qv) in residual.iter_mut().zip(qj) {
            *v -= c * qv;
        }
    }
    let mut values = surface.values().to_vec();
    for (&i, v) in idx.iter().zip(residual) {
        values[i] = v;
    }
    Ok((
        Surface::new(values, mask.clone())?,
        ZernikeFit {
            modes,
            coefficients,
            disk,
        },
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

type Columns = Vec<Vec<f64>>;

/// Column-wise thin QR; `r` is upper triangular, `k × k`.
fn thin_qr(columns: &[Vec<f64>]) -> Result<(Columns, Columns)> {
    let k = columns.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r = vec![vec![0.0; k]; k];
    for (j, col) in columns.iter().enumerate() {
        let mut v = col.clone();
        let original = dot(&v, &v).sqrt();
        for _pass in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let proj = dot(qi, &v);
                r[i][j] += proj;
                for (vv, qq) in v.iter_mut().zip(qi) {
                    *vv -= proj * qq;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm.is_nan() || norm <= 1e-10 * original.max(1.0) {
            return Err(Error::RankDeficient(format!(
                "mode {j} is linearly dependent on the others over the valid pixels"
            )));
        }
        r[j][j] = norm;
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }
    Ok((q, r))
}

/// Mean-removed RMS over valid pixels, radians.
pub fn rmse(surface: &Surface) -> f64 {
    let n = surface.mask().valid_count() as f64;
    let mean = surface.valid_values().sum::<f64>() / n;
    (surface
        .valid_values()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Double-pass conversion: height = phase · λ / (4π).
pub fn phase_to_height(phase: f64, wavelength_nm: f64) -> f64 {
    phase * wavelength_nm / (4.0 * std::f64::consts::PI)
}

/// [`phase_to_height`] applied to every pixel of a surface (invalid pixels
/// become NaN).
pub fn surface_to_height(surface: &Surface, wavelength_nm: f64) -> Result<Vec<f64>> {
    if !(wavelength_nm > 0.0 && wavelength_nm.is_finite()) {
        return Err(Error::Config(format!(
            "wavelength must be positive, got {wavelength_nm}"
        )));
    }
    Ok(surface
        .values()
        .iter()
        .zip(surface.mask().valid())
        .map(|(&v, &ok)| {
            if ok {
                phase_to_height(v, wavelength_nm)
            } else {
                f64::NAN
            }
        })
        .collect())
}
