//! Fixtures shared by the criterion benches under `benches/`.

use ppc_core::synth::SnrReference;
use ppc_core::{make_trial, peaks_surface, MinSampling, PipelineParams, Trial, TrialSpec};

/// Seeded two-family trial on an `n`×`n` peaks surface.
pub fn trial(n: usize, frames: usize, seed: u64) -> Trial {
    let truth = peaks_surface(n, 37.82).expect("valid size");
    let spec = TrialSpec {
        frame_count: frames,
        snr_db: 20.0,
        snr_reference: SnrReference::UnitPower,
        perturbation_count: 2,
        contaminant_fraction: 0.05,
        tilt_jitter: 8.0,
        seed,
        ..TrialSpec::default()
    };
    make_trial(&truth, &spec).expect("valid spec")
}

pub fn params() -> PipelineParams {
    PipelineParams {
        min_sampling: MinSampling::MinFraction(0.1),
        ..PipelineParams::default()
    }
}
