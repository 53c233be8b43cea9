//! End-to-end runs: detection, graph construction, training or checkpoint
//! reuse, and the final unrolled pass.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{DestripeError, Result};
use crate::graph::{build_spectral_graph, graph_stats, GraphStats};
use crate::metrics::{psnr, ssim_per_slice, Psnr};
use crate::network::Checkpoint;
use crate::spectral::{
    build_annuli, corruption_mask, corruption_matrix, detect_stripe_direction, forward_spectrum,
    whiten_magnitudes, AnnulusIndex, CorruptionField, DirectionEstimate, RingStats, SpectralVolume,
};
use crate::training::{train, EpochLog, LossBreakdown, TrainingSetup};
use crate::unfold::{unfolded_forward, IterationReport, Problem};
use crate::volume::{StripeAxis, Volume};

/// Version of the JSON report layouts written by the pipeline and the CLI.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Where the stripe direction comes from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AxisChoice {
    /// The volume's own metadata.
    #[default]
    FromVolume,
    Given(StripeAxis),
    /// The detector's estimate, falling back to the metadata when no
    /// direction dominates.
    Auto,
}

impl std::str::FromStr for AxisChoice {
    type Err = DestripeError;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            Ok(AxisChoice::Auto)
        } else {
            s.parse().map(AxisChoice::Given)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub spectrum: SpectralVolume,
    pub annuli: AnnulusIndex,
    pub field: CorruptionField,
    pub direction: DirectionEstimate,
    pub stripe_axis: StripeAxis,
    pub warnings: Vec<String>,
}

pub fn detect(v: &Volume, cfg: &RunConfig, axis: AxisChoice) -> Result<Detection> {
    cfg.validate()?;
    v.validate()?;
    let (_, h, w) = v.shape();
    let spectrum = forward_spectrum(v);
    let annuli = build_annuli(h, w, cfg.annulus_width_px);
    let direction = detect_stripe_direction(&spectrum, &annuli, cfg.dc_guard_radius_px);
    let mut warnings = Vec::new();
    let stripe_axis = match axis {
        AxisChoice::FromVolume => v.stripe_axis,
        AxisChoice::Given(a) => a,
        AxisChoice::Auto if direction.dominant => StripeAxis::Angle(direction.stripe_degrees),
        AxisChoice::Auto => {
            let msg = format!(
                "no dominant stripe direction (confidence {:.2}); using {}",
                direction.confidence, v.stripe_axis
            );
            warn!("{msg}");
            warnings.push(msg);
            v.stripe_axis
        }
    };
    let wmat = corruption_matrix(&spectrum, &annuli);
    let field = corruption_mask(&wmat, cfg, stripe_axis);
    warnings.extend(field.warnings.iter().cloned());
    Ok(Detection {
        spectrum,
        annuli,
        field,
        direction,
        stripe_axis,
        warnings,
    })
}

/// Machine-readable summary of one detection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub schema_version: u32,
    /// Detected stripe direction in degrees, 0 horizontal, 90 vertical.
    pub stripe_angle: f64,
    pub confidence: f64,
    pub dominant: bool,
    /// Direction the mask was actually gated with.
    pub stripe_axis: StripeAxis,
    pub masked_bin_count: usize,
    pub per_ring_stats: Vec<RingStats>,
    pub warnings: Vec<String>,
}

impl Detection {
    pub fn report(&self) -> DetectionReport {
        let whitened = whiten_magnitudes(&self.spectrum, &self.annuli);
        DetectionReport {
            schema_version: REPORT_SCHEMA_VERSION,
            stripe_angle: self.direction.stripe_degrees,
            confidence: self.direction.confidence,
            dominant: self.direction.dominant,
            stripe_axis: self.stripe_axis,
            masked_bin_count: self.field.masked_count(),
            per_ring_stats: RingStats::collect(&self.field, &self.annuli, &whitened),
            warnings: self.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceScores {
    pub slice: usize,
    pub psnr_db: Psnr,
    pub ssim: f64,
}

/// Quality of `estimate` against `reference`, overall and per slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub peak: f64,
    pub psnr_db: Psnr,
    pub ssim: f64,
    pub per_slice: Vec<SliceScores>,
}

pub fn evaluate(estimate: &Volume, reference: &Volume, peak: f64) -> Result<EvaluationReport> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(DestripeError::Invalid(format!(
            "peak {peak} must be positive"
        )));
    }
    let overall = psnr(estimate, reference, peak)?;
    let ssims = ssim_per_slice(estimate, reference, peak)?;
    let mut per_slice = Vec::with_capacity(ssims.len());
    for (k, &s) in ssims.iter().enumerate() {
        let a = estimate.with_data(
            estimate
                .data
                .slice(ndarray::s![k..k + 1, .., ..])
                .to_owned(),
        );
        let b = reference.with_data(
            reference
                .data
                .slice(ndarray::s![k..k + 1, .., ..])
                .to_owned(),
        );
        per_slice.push(SliceScores {
            slice: k,
            psnr_db: psnr(&a, &b, peak)?,
            ssim: s,
        });
    }
    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        peak,
        psnr_db: overall,
        ssim: ssims.iter().sum::<f64>() / ssims.len() as f64,
        per_slice,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub initial: LossBreakdown,
    pub best: LossBreakdown,
}

/// Machine-readable summary of one `destripe` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub shape: [usize; 3],
    pub stripe_axis: StripeAxis,
    pub masked_bins: usize,
    pub graph: Option<GraphStats>,
    pub disabled_directions: Vec<String>,
    pub parameter_count: usize,
    pub used_checkpoint: bool,
    pub training: Option<TrainingSummary>,
    pub iterations: Vec<IterationReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DestripeOutcome {
    pub output: Volume,
    /// `None` when nothing was masked and the input was returned as is.
    pub params: Option<Checkpoint>,
    pub log: Vec<EpochLog>,
    pub report: RunReport,
}

/// Fresh parameters for a volume under `cfg`, seeded by `cfg.rng_seed`.
pub fn initial_parameters(cfg: &RunConfig) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    Checkpoint::initial(cfg, &mut rng)
}

/// Detects, trains (unless `checkpoint` is given) and returns the destriped
/// volume. With nothing masked the input comes back unchanged.
pub fn destripe(
    v: &Volume,
    cfg: &RunConfig,
    axis: AxisChoice,
    checkpoint: Option<Checkpoint>,
) -> Result<DestripeOutcome> {
    let det = detect(v, cfg, axis)?;
    let (d, h, w) = v.shape();
    let mut report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        shape: [d, h, w],
        stripe_axis: det.stripe_axis,
        masked_bins: det.field.masked_count(),
        graph: None,
        disabled_directions: Vec::new(),
        parameter_count: 0,
        used_checkpoint: checkpoint.is_some(),
        training: None,
        iterations: Vec::new(),
        warnings: det.warnings.clone(),
    };
    let graph = build_spectral_graph(&det.spectrum, &det.field, &det.annuli, cfg, cfg.rng_seed)?;
    if graph.corrupted_count == 0 {
        let msg = if report.masked_bins == 0 {
            "no corrupted bins detected; output equals input".to_string()
        } else {
            "every masked bin lacks uncorrupted annulus neighbors; output equals input".to_string()
        };
        warn!("{msg}");
        report.warnings.push(msg);
        return Ok(DestripeOutcome {
            output: v.clone(),
            params: None,
            log: Vec::new(),
            report,
        });
    }
    report.graph = Some(graph_stats(&graph));
    let problem = Problem::new(v.data.clone(), det.spectrum, graph, cfg);
    report.disabled_directions = problem
        .dirs
        .disabled_labels()
        .into_iter()
        .map(String::from)
        .collect();
    if !report.disabled_directions.is_empty() {
        let msg = format!(
            "fewer than 3 slices: Hessian terms {} disabled",
            report.disabled_directions.join(", ")
        );
        warn!("{msg}");
        report.warnings.push(msg);
    }
    let mut setup = TrainingSetup::new(problem, det.field, det.annuli);

    let (params, log) = match checkpoint {
        Some(ckpt) => {
            if ckpt.unroll_k() == 0 || ckpt.nets.is_empty() {
                return Err(DestripeError::Checkpoint(
                    "checkpoint holds no iterations".into(),
                ));
            }
            (ckpt, Vec::new())
        }
        None => {
            let outcome = train(&mut setup, cfg, initial_parameters(cfg))?;
            report.training = Some(TrainingSummary {
                epochs: cfg.train_epochs,
                best_epoch: outcome.best_epoch,
                initial: outcome.log[0].loss,
                best: outcome.best,
            });
            (outcome.params, outcome.log)
        }
    };
    report.parameter_count = params.parameter_count();
    // The final pass always uses the graph drawn from the run seed so that a
    // saved checkpoint reproduces the output exactly.
    if cfg.resample_neighbors {
        setup.problem.graph = build_spectral_graph(
            &setup.problem.spectrum,
            &setup.field,
            &setup.annuli,
            cfg,
            cfg.rng_seed,
        )?;
    }
    let out = unfolded_forward(&setup.problem, &params)?;
    report.iterations = out.report;
    Ok(DestripeOutcome {
        output: v.with_data(out.x),
        params: Some(params),
        log,
        report,
    })
}
