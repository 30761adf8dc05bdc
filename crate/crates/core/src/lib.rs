//! Wrapped-phase retrieval for phase-shifting interferometry.
//!
//! Frames of a wrapped-phase stack are grouped by hierarchical clustering,
//! each chosen cluster is denoised by a per-pixel circular mean and unwrapped
//! once, and the cluster surfaces are combined. The unwrap-every-frame
//! baseline, a synthetic generator with ground truth, surface metrics and the
//! WPHS file format live alongside.

pub mod circstats;
pub mod cluster;
pub mod error;
pub mod io;
pub mod metrics;
pub mod phase;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod unwrap;

pub use circstats::{circular_mean, circular_mean_frame, CircularMeanFrame, CircularSummary};
pub use cluster::{
    agglomerate, pairwise_distances, select_clusters, ClusterCensus, ClusterSet, Dendrogram,
    DistanceMatrix, DistanceMetric, Merge,
};
pub use error::{Error, Result};
pub use io::{read_stack, write_stack, ReportFile};
pub use metrics::{rmse, zernike_fit_remove, ZernikeFit, ZernikeMode};
pub use phase::{
    detect_residues, wrap, wrap_angle, wrapped_diff, ApertureMask, PhaseFrame, PhaseStack,
    ResidueMap,
};
pub use pipeline::{
    compare, run_conventional, run_ppc, snr_from_min_fraction, ClusterWeighting, ComparisonReport,
    MinSampling, PipelineParams, SurfaceReport,
};
pub use preprocess::{avg_pool2, piston_shift, pool};
pub use synth::{make_trial, peaks_surface, Trial, TrialLabels, TrialSpec, TrueSurface};
pub use unwrap::{unwrap, BranchCutMap, Goldstein, Surface, Unwrapper};
