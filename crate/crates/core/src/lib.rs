//! Self-supervised stripe artifact removal for light-sheet microscopy stacks.
//!
//! The pipeline finds stripe-corrupted Fourier coefficients with an annulus
//! Rayleigh test gated to a wedge, recovers them with a complex-valued graph
//! network on polar-coordinate neighborhoods, and unrolls that network inside
//! a split-Bregman loop with a Hessian prior. Training needs only the
//! corrupted volume itself.

pub mod config;
pub mod error;
pub mod graph;
pub mod hessian;
pub mod io;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod simulate;
pub mod spectral;
pub mod training;
pub mod unfold;
pub mod volume;

pub use config::{load_config, save_config, RunConfig};
pub use error::{DestripeError, ErrorKind, Result};
pub use graph::{build_spectral_graph, graph_stats, SpectralGraph};
pub use hessian::{Direction, HessianDirections};
pub use io::{load_volume, save_volume, VolumeFormat};
pub use metrics::{psnr, ssim, Psnr};
pub use network::{load_checkpoint, save_checkpoint, Checkpoint, DestripeNetwork};
pub use pipeline::{
    destripe, detect, evaluate, AxisChoice, DestripeOutcome, DetectionReport, EvaluationReport,
    RunReport,
};
pub use simulate::{degrade, generate_stripe_field, make_phantom, StripeModel};
pub use spectral::{forward_spectrum, inverse_spectrum, CorruptionField, SpectralVolume};
pub use training::{self2self_loss, LossBreakdown};
pub use volume::{StripeAxis, Volume, VoxelSpacing};
