//! End-to-end procedures.
//!
//! * PPC: piston shift → pooling → distances → dendrogram → cluster
//!   selection → circular mean per chosen cluster → one unwrap per cluster →
//!   low-order removal → size-weighted combination.
//! * Conventional: piston shift → unwrap every frame → per-frame piston and
//!   low-order removal → pixel-wise mean → low-order removal.

use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circstats::circular_mean_frame;
use crate::cluster::{
    agglomerate, pairwise_distances, select_clusters, ClusterCensus, ClusterSet, DistanceMetric,
};
use crate::error::{Error, Result};
use crate::metrics::{
    phase_to_height, rmse, zernike_fit_remove, ZernikeMode, DEFAULT_WAVELENGTH_NM,
};
use crate::phase::{detect_residues, ApertureMask, PhaseFrame, PhaseStack};
use crate::preprocess::{piston_shift, pool};
use crate::unwrap::{CountingUnwrapper, Goldstein, Surface, Unwrapper};

/// Minimum sampling number, absolute or as a fraction of the frame count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinSampling {
    MinSamples(usize),
    MinFraction(f64),
}

impl MinSampling {
    /// Absolute minimum for `n` frames; fractions round up.
    pub fn resolve(self, n: usize) -> Result<usize> {
        match self {
            MinSampling::MinSamples(0) => Err(Error::Config("min_samples must be >= 1".into())),
            MinSampling::MinSamples(k) => Ok(k),
            MinSampling::MinFraction(f) if f > 0.0 && f < 1.0 => {
                // Guard against 0.07 · 100 = 7.000000000000001.
                Ok(((f * n as f64 - 1e-9).ceil() as usize).max(1))
            }
            MinSampling::MinFraction(f) => Err(Error::Config(format!(
                "min_fraction must lie in (0, 1), got {f}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterWeighting {
    /// Each cluster surface weighted by its member count.
    #[default]
    BySize,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    /// Normalized dendrogram height in (0, 1].
    pub cut: f64,
    pub min_sampling: MinSampling,
    pub pool_levels: usize,
    pub weighting: ClusterWeighting,
    pub modes_removed: Vec<ZernikeMode>,
    pub wavelength_nm: f64,
    /// `false` puts every frame in one cluster.
    pub classify: bool,
    pub metric: DistanceMetric,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            cut: 0.5,
            min_sampling: MinSampling::MinSamples(2),
            pool_levels: 1,
            weighting: ClusterWeighting::BySize,
            modes_removed: ZernikeMode::ALL.to_vec(),
            wavelength_nm: DEFAULT_WAVELENGTH_NM,
            classify: true,
            metric: DistanceMetric::Arithmetic,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cut > 0.0 && self.cut <= 1.0) {
            return Err(Error::Config(format!(
                "cut must lie in (0, 1], got {}",
                self.cut
            )));
        }
        if !(self.wavelength_nm > 0.0 && self.wavelength_nm.is_finite()) {
            return Err(Error::Config(format!(
                "wavelength must be positive, got {}",
                self.wavelength_nm
            )));
        }
        self.min_sampling.resolve(100)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ppc,
    Conventional,
}

/// Wall-clock time per stage, milliseconds. Informative only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub piston_shift: f64,
    pub pooling: f64,
    pub clustering: f64,
    pub circular_mean: f64,
    pub unwrap_and_fit: f64,
    pub combine: f64,
    pub total: f64,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone)]
pub struct SurfaceReport {
    pub method: Method,
    /// Raw surface after low-order removal.
    pub surface: Surface,
    pub rmse_rad: f64,
    pub rmse_nm: f64,
    pub census: ClusterCensus,
    /// Stack positions of each chosen cluster (PPC only).
    pub clusters: Option<ClusterSet>,
    /// Acquisition indices of frames in abandoned clusters.
    pub abandoned_frame_indices: Vec<u32>,
    pub unwrap_call_count: usize,
    /// Residue count of each denoised cluster frame (PPC) or of each frame
    /// (conventional), before unwrapping.
    pub residue_counts: Vec<usize>,
    /// Acquisition indices of frames (conventional) or the first member of
    /// clusters (PPC) dropped because unwrapping failed.
    pub excluded: Vec<u32>,
    pub warnings: Vec<String>,
    pub stage_times: StageTimes,
}

/// Run PPC with the Goldstein unwrapper.
pub fn run_ppc(stack: &PhaseStack, params: &PipelineParams) -> Result<SurfaceReport> {
    run_ppc_with(stack, params, &Goldstein)
}

pub fn run_ppc_with<U: Unwrapper>(
    stack: &PhaseStack,
    params: &PipelineParams,
    unwrapper: &U,
) -> Result<SurfaceReport> {
    params.validate()?;
    let start = Instant::now();
    let mut times = StageTimes::default();
    let mask = stack.mask();
    let n = stack.len();

    let t = Instant::now();
    let shifted = shift_all(stack)?;
    times.piston_shift = ms(t);

    let clusters = if params.classify && n >= 2 {
        let t = Instant::now();
        let pooled: Vec<(PhaseFrame, ApertureMask)> = shifted
            .par_iter()
            .map(|f| pool(f, mask, params.pool_levels))
            .collect::<Result<_>>()?;
        let pooled_mask = pooled[0].1.clone();
        let pooled: Vec<PhaseFrame> = pooled.into_iter().map(|p| p.0).collect();
        times.pooling = ms(t);

        let t = Instant::now();
        let d = pairwise_distances(&pooled, &pooled_mask, params.metric)?;
        let dendrogram = agglomerate(&d)?;
        let min_samples = params.min_sampling.resolve(n)?;
        let set = select_clusters(&dendrogram, params.cut, min_samples)?;
        times.clustering = ms(t);
        set
    } else {
        ClusterSet::single(n)
    };

    let counter = CountingUnwrapper::new(unwrapper);
    let t = Instant::now();
    let denoised: Vec<_> = clusters
        .chosen
        .par_iter()
        .map(|members| {
            let frames: Vec<&PhaseFrame> = members.iter().map(|&i| &shifted[i]).collect();
            circular_mean_frame(&frames, mask)
        })
        .collect::<Result<_>>()?;
    times.circular_mean = ms(t);

    let t = Instant::now();
    let residue_counts = denoised
        .par_iter()
        .map(|cm| detect_residues(&cm.frame, &cm.mask).map(|r| r.count()))
        .collect::<Result<Vec<_>>>()?;
    let removal = unit_modes(params);
    let outcomes: Vec<Result<Surface>> = denoised
        .par_iter()
        .map(|cm| {
            let u = counter.unwrap(&cm.frame, &cm.mask)?;
            if u.low_coverage {
                return Err(Error::Mask(format!(
                    "unwrap reached only {} of {} pixels",
                    cm.mask.valid_count() - u.unreached_pixels,
                    cm.mask.valid_count()
                )));
            }
            Ok(zernike_fit_remove(&u.surface, &removal)?.0)
        })
        .collect();
    times.unwrap_and_fit = ms(t);

    let mut warnings = Vec::new();
    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    for (k, outcome) in outcomes.into_iter().enumerate() {
        let members = &clusters.chosen[k];
        match outcome {
            Ok(s) => {
                let w = match params.weighting {
                    ClusterWeighting::BySize => members.len() as f64,
                    ClusterWeighting::Uniform => 1.0,
                };
                kept.push((s, w));
            }
            Err(e) => {
                let first = stack.acquisition_index()[members[0]];
                let msg = format!("cluster starting at frame {first} dropped: {e}");
                warn!("{msg}");
                warnings.push(msg);
                excluded.push(first);
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::NoCluster {
            census: clusters.census(),
        });
    }

    let t = Instant::now();
    let combined = weighted_mean(&kept)?;
    let (surface, _) = zernike_fit_remove(&combined, &params.modes_removed)?;
    let rmse_rad = rmse(&surface);
    times.combine = ms(t);
    times.total = ms(start);

    let abandoned_frame_indices = clusters
        .abandoned_positions()
        .into_iter()
        .map(|i| stack.acquisition_index()[i])
        .collect();
    Ok(SurfaceReport {
        method: Method::Ppc,
        rmse_nm: phase_to_height(rmse_rad, params.wavelength_nm),
        rmse_rad,
        surface,
        census: clusters.census(),
        clusters: Some(clusters),
        abandoned_frame_indices,
        unwrap_call_count: counter.calls(),
        residue_counts,
        excluded,
        warnings,
        stage_times: times,
    })
}

/// Run the unwrap-every-frame baseline with the Goldstein unwrapper.
pub fn run_conventional(stack: &PhaseStack, params: &PipelineParams) -> Result<SurfaceReport> {
    run_conventional_with(stack, params, &Goldstein)
}

pub fn run_conventional_with<U: Unwrapper>(
    stack: &PhaseStack,
    params: &PipelineParams,
    unwrapper: &U,
) -> Result<SurfaceReport> {
    if !(params.wavelength_nm > 0.0 && params.wavelength_nm.is_finite()) {
        return Err(Error::Config("wavelength must be positive".into()));
    }
    let start = Instant::now();
    let mut times = StageTimes::default();
    let mask = stack.mask();

    let t = Instant::now();
    let shifted = shift_all(stack)?;
    times.piston_shift = ms(t);

    let counter = CountingUnwrapper::new(unwrapper);
    let removal = unit_modes(params);
    let t = Instant::now();
    let outcomes: Vec<(usize, Result<Surface>)> = shifted
        .par_iter()
        .map(|f| {
            let u = match counter.unwrap(f, mask) {
                Ok(u) => u,
                Err(e) => return (0, Err(e)),
            };
            if u.low_coverage {
                return (
                    u.residue_count,
                    Err(Error::Mask(format!(
                        "unwrap reached only {} of {} pixels",
                        mask.valid_count() - u.unreached_pixels,
                        mask.valid_count()
                    ))),
                );
            }
            let s = zernike_fit_remove(&u.surface, &removal).map(|r| r.0);
            (u.residue_count, s)
        })
        .collect();
    times.unwrap_and_fit = ms(t);

    let mut warnings = Vec::new();
    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    let mut residue_counts = Vec::with_capacity(outcomes.len());
    for (k, (residues, outcome)) in outcomes.into_iter().enumerate() {
        residue_counts.push(residues);
        match outcome {
            Ok(s) => kept.push((s, 1.0)),
            Err(e) => {
                let idx = stack.acquisition_index()[k];
                let msg = format!("frame {idx} excluded: {e}");
                warn!("{msg}");
                warnings.push(msg);
                excluded.push(idx);
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::Mask("every frame failed to unwrap".into()));
    }

    let t = Instant::now();
    let combined = weighted_mean(&kept)?;
    let (surface, _) = zernike_fit_remove(&combined, &params.modes_removed)?;
    let rmse_rad = rmse(&surface);
    times.combine = ms(t);
    times.total = ms(start);

    Ok(SurfaceReport {
        method: Method::Conventional,
        rmse_nm: phase_to_height(rmse_rad, params.wavelength_nm),
        rmse_rad,
        surface,
        census: ClusterCensus::default(),
        clusters: None,
        abandoned_frame_indices: Vec::new(),
        unwrap_call_count: counter.calls(),
        residue_counts,
        excluded,
        warnings,
        stage_times: times,
    })
}

/// Modes removed from each unwrapped unit (cluster or frame) before
/// averaging: the requested set plus piston. Both paths use the same set so
/// singleton clustering reproduces the per-frame baseline exactly.
fn unit_modes(params: &PipelineParams) -> Vec<ZernikeMode> {
    let mut modes = params.modes_removed.clone();
    modes.push(ZernikeMode::Piston);
    modes.sort_unstable();
    modes.dedup();
    modes
}

fn shift_all(stack: &PhaseStack) -> Result<Vec<PhaseFrame>> {
    stack
        .frames()
        .par_iter()
        .map(|f| piston_shift(f, stack.mask()))
        .collect()
}

/// Per-pixel weighted mean over the surfaces valid at that pixel, in slice
/// order. The output mask is the union of the input masks.
fn weighted_mean(surfaces: &[(Surface, f64)]) -> Result<Surface> {
    let first = &surfaces[0].0;
    let len = first.values().len();
    let mut sum = vec![0.0; len];
    let mut weight = vec![0.0; len];
    for (s, w) in surfaces {
        for i in 0..len {
            if s.mask().valid()[i] {
                sum[i] += w * s.values()[i];
                weight[i] += w;
            }
        }
    }
    let valid: Vec<bool> = weight.iter().map(|&w| w > 0.0).collect();
    let values = sum
        .iter()
        .zip(&weight)
        .map(|(&s, &w)| if w > 0.0 { s / w } else { 0.0 })
        .collect();
    Surface::new(
        values,
        ApertureMask::new(first.width(), first.height(), valid)?,
    )
}

/// SNR implied by treating a fraction `f` of the data as contaminated:
/// `10·log10((1 − f)/f)` dB.
pub fn snr_from_min_fraction(f: f64) -> Result<f64> {
    if !(f > 0.0 && f < 0.5) {
        return Err(Error::Config(format!(
            "min fraction must lie in (0, 0.5), got {f}"
        )));
    }
    Ok(10.0 * ((1.0 - f) / f).log10())
}

/// Mean and sample standard deviation of one method's RMSEs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub count: usize,
    pub rmse_mean_rad: f64,
    pub rmse_sd_rad: f64,
    pub total_time_ms: f64,
}

impl MethodStats {
    fn from_samples(samples: &[(f64, f64)]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self::default();
        }
        let mean = samples.iter().map(|s| s.0).sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (samples.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            count: n,
            rmse_mean_rad: mean,
            rmse_sd_rad: sd,
            total_time_ms: samples.iter().map(|s| s.1).sum(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub ppc_rmse_rad: Option<f64>,
    pub conventional_rmse_rad: Option<f64>,
    pub ppc_unwrap_calls: Option<usize>,
    pub conventional_unwrap_calls: Option<usize>,
    pub ppc_time_ms: Option<f64>,
    pub conventional_time_ms: Option<f64>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub trials: Vec<TrialOutcome>,
    pub ppc: MethodStats,
    pub conventional: MethodStats,
    /// SD(PPC) / SD(conventional).
    pub sd_ratio: Option<f64>,
    /// Total PPC time / total conventional time.
    pub time_ratio: Option<f64>,
}

/// Run both procedures on every trial and aggregate over the successes.
pub fn compare(trials: &[(PhaseStack, PipelineParams)]) -> Result<ComparisonReport> {
    if trials.len() < 2 {
        return Err(Error::Config(format!(
            "comparison needs at least 2 trials, got {}",
            trials.len()
        )));
    }
    let outcomes: Vec<TrialOutcome> = trials
        .iter()
        .map(|(stack, params)| {
            let mut o = TrialOutcome::default();
            match run_ppc(stack, params) {
                Ok(r) => {
                    o.ppc_rmse_rad = Some(r.rmse_rad);
                    o.ppc_unwrap_calls = Some(r.unwrap_call_count);
                    o.ppc_time_ms = Some(r.stage_times.total);
                }
                Err(e) => o.errors.push(format!("ppc: {e}")),
            }
            match run_conventional(stack, params) {
                Ok(r) => {
                    o.conventional_rmse_rad = Some(r.rmse_rad);
                    o.conventional_unwrap_calls = Some(r.unwrap_call_count);
                    o.conventional_time_ms = Some(r.stage_times.total);
                }
                Err(e) => o.errors.push(format!("conventional: {e}")),
            }
            o
        })
        .collect();
    let ppc: Vec<(f64, f64)> = outcomes
        .iter()
        .filter_map(|o| Some((o.ppc_rmse_rad?, o.ppc_time_ms?)))
        .collect();
    let conv: Vec<(f64, f64)> = outcomes
        .iter()
        .filter_map(|o| Some((o.conventional_rmse_rad?, o.conventional_time_ms?)))
        .collect();
    let ppc = MethodStats::from_samples(&ppc);
    let conventional = MethodStats::from_samples(&conv);
    let sd_ratio = (conventional.count > 1 && conventional.rmse_sd_rad > 0.0)
        .then(|| ppc.rmse_sd_rad / conventional.rmse_sd_rad);
    let time_ratio = (conventional.total_time_ms > 0.0 && ppc.count > 0)
        .then(|| ppc.total_time_ms / conventional.total_time_ms);
    Ok(ComparisonReport {
        trials: outcomes,
        ppc,
        conventional,
        sd_ratio,
        time_ratio,
    })
}
