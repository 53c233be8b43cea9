//! Self-supervised loss on the corrupted volume and the optimizer loop.

use std::io::Write;

use log::{info, warn};
use ndarray::{Array3, Axis, Zip};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{DestripeError, Result};
use crate::graph::build_spectral_graph;
use crate::network::Checkpoint;
use crate::spectral::{forward_spectrum_with, AnnulusIndex, CorruptionField, SliceFft};
use crate::unfold::{unfolded_backward, unfolded_forward, IterationReport, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub isotropy: f64,
    pub total: f64,
}

/// Masked bins `P` and unmasked bins `Q` of one `(slice, annulus)` pair.
/// Pairs where either set is empty are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct RingGroup {
    pub slice: usize,
    pub masked: Vec<(usize, usize)>,
    pub clean: Vec<(usize, usize)>,
}

pub fn isotropy_groups(field: &CorruptionField, a: &AnnulusIndex) -> Vec<RingGroup> {
    let (d, _, _) = field.mask.dim();
    let mut out = Vec::new();
    for k in 0..d {
        for members in &a.ring_members {
            let (masked, clean): (Vec<_>, Vec<_>) =
                members.iter().partition(|&&(i, j)| field.mask[[k, i, j]]);
            if !masked.is_empty() && !clean.is_empty() {
                out.push(RingGroup {
                    slice: k,
                    masked,
                    clean,
                });
            }
        }
    }
    out
}

/// Isotropy penalty on a spectrum and, optionally, its gradient.
fn isotropy(
    spec: &Array3<Complex64>,
    groups: &[RingGroup],
    mut grad: Option<&mut Array3<Complex64>>,
) -> f64 {
    let unit = |z: Complex64| {
        let r = z.norm();
        if r > 0.0 {
            z / r
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let mut total = 0.0;
    for gr in groups {
        let k = gr.slice;
        let mean = gr
            .clean
            .iter()
            .map(|&(i, j)| spec[[k, i, j]].norm())
            .sum::<f64>()
            / gr.clean.len() as f64;
        let mut dev_sum = 0.0;
        for &(i, j) in &gr.masked {
            let z = spec[[k, i, j]];
            let dev = z.norm() - mean;
            total += dev * dev;
            dev_sum += dev;
            if let Some(g) = grad.as_deref_mut() {
                g[[k, i, j]] += unit(z) * (2.0 * dev);
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            let c = -2.0 * dev_sum / gr.clean.len() as f64;
            for &(i, j) in &gr.clean {
                g[[k, i, j]] += unit(spec[[k, i, j]]) * c;
            }
        }
    }
    total
}

fn check_same_shape(x: &Array3<f64>, y: &Array3<f64>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(DestripeError::Invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// `Σ (Y - X)²` plus `beta` times the annulus isotropy penalty on the
/// spectrum of `X`. Both terms are sums, not means.
pub fn self2self_loss(
    x: &Array3<f64>,
    y: &Array3<f64>,
    field: &CorruptionField,
    a: &AnnulusIndex,
    beta: f64,
) -> Result<LossBreakdown> {
    check_same_shape(x, y)?;
    let (_, h, w) = x.dim();
    let groups = isotropy_groups(field, a);
    Ok(loss_with_groups(x, y, &groups, &SliceFft::new(h, w), beta, false).0)
}

/// Loss and its gradient with respect to `x` (when `want_grad`).
pub fn loss_with_groups(
    x: &Array3<f64>,
    y: &Array3<f64>,
    groups: &[RingGroup],
    fft: &SliceFft,
    beta: f64,
    want_grad: bool,
) -> (LossBreakdown, Array3<f64>) {
    let mse = Zip::from(x)
        .and(y)
        .fold(0.0, |s, &a, &b| s + (a - b) * (a - b));
    let spec = forward_spectrum_with(fft, x).coeffs;
    let mut g_spec = want_grad.then(|| Array3::<Complex64>::zeros(x.dim()));
    let iso = isotropy(&spec, groups, g_spec.as_mut());
    let loss = LossBreakdown {
        mse,
        isotropy: iso,
        total: mse + beta * iso,
    };
    let mut g = Array3::zeros(x.dim());
    if let Some(gs) = g_spec {
        Zip::from(&mut g)
            .and(x)
            .and(y)
            .for_each(|g, &a, &b| *g = 2.0 * (a - b));
        let gs = gs.mapv(|z| z * beta);
        for k in 0..x.dim().0 {
            fft.forward_real_adjoint(gs.index_axis(Axis(0), k), g.index_axis_mut(Axis(0), k));
        }
    }
    (loss, g)
}

/// A problem ready for training: the graph inputs plus the loss groups.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub problem: Problem,
    pub field: CorruptionField,
    pub annuli: AnnulusIndex,
    pub groups: Vec<RingGroup>,
}

impl TrainingSetup {
    pub fn new(problem: Problem, field: CorruptionField, annuli: AnnulusIndex) -> Self {
        let groups = isotropy_groups(&field, &annuli);
        TrainingSetup {
            problem,
            field,
            annuli,
            groups,
        }
    }

    /// Loss of the unrolled model's output, with parameter gradients when
    /// asked for.
    pub fn evaluate(&self, params: &Checkpoint, beta: f64, want_grad: bool) -> Result<Evaluation> {
        let out = unfolded_forward(&self.problem, params)?;
        let (loss, g_x) = loss_with_groups(
            &out.x,
            &self.problem.y,
            &self.groups,
            &self.problem.fft,
            beta,
            want_grad,
        );
        let grads = if want_grad {
            Some(unfolded_backward(&self.problem, params, &out.trace, &g_x)?)
        } else {
            None
        };
        Ok(Evaluation {
            loss,
            x: out.x,
            report: out.report,
            grads,
        })
    }

    fn redraw_graph(&mut self, cfg: &RunConfig, seed: u64) -> Result<()> {
        self.problem.graph =
            build_spectral_graph(&self.problem.spectrum, &self.field, &self.annuli, cfg, seed)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub x: Array3<f64>,
    pub report: Vec<IterationReport>,
    pub grads: Option<Checkpoint>,
}

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in theta
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Writes the log as CSV: `epoch,mse,isotropy,total,mu_0..,alpha_0..`.
pub fn write_training_csv<W: Write>(log: &[EpochLog], mut out: W) -> std::io::Result<()> {
    let k = log.first().map_or(0, |e| e.mu.len());
    let mut header = String::from("epoch,mse,isotropy,total");
    for i in 0..k {
        header.push_str(&format!(",mu_{i}"));
    }
    for i in 0..k {
        header.push_str(&format!(",alpha_{i}"));
    }
    writeln!(out, "{header}")?;
    for e in log {
        let mut line = format!(
            "{},{:e},{:e},{:e}",
            e.epoch, e.loss.mse, e.loss.isotropy, e.loss.total
        );
        for v in e.mu.iter().chain(&e.alpha) {
            line.push_str(&format!(",{v:e}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Checkpoint,
    pub x: Array3<f64>,
    pub best_epoch: usize,
    pub best: LossBreakdown,
    pub log: Vec<EpochLog>,
    pub report: Vec<IterationReport>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fits `params` for `cfg.train_epochs` steps and returns the parameters
/// with the lowest recorded total loss. The log has one row per evaluated
/// parameter set, from the initial one (epoch 0) to the final one.
pub fn train(
    setup: &mut TrainingSetup,
    cfg: &RunConfig,
    mut params: Checkpoint,
) -> Result<TrainOutcome> {
    let mut theta = params.flatten();
    let mut adam = Adam::new(theta.len(), cfg.learning_rate);
    let mut log = Vec::with_capacity(cfg.train_epochs + 1);
    let mut best: Option<(
        usize,
        LossBreakdown,
        Checkpoint,
        Array3<f64>,
        Vec<IterationReport>,
    )> = None;
    for epoch in 0..=cfg.train_epochs {
        if cfg.resample_neighbors && epoch > 0 {
            setup.redraw_graph(cfg, epoch_seed(cfg.rng_seed, epoch))?;
        }
        let last = epoch == cfg.train_epochs;
        let ev = setup.evaluate(&params, cfg.loss_beta, !last)?;
        if !ev.loss.total.is_finite() {
            return Err(DestripeError::NonFiniteLoss { epoch });
        }
        log.push(EpochLog {
            epoch,
            loss: ev.loss,
            mu: (0..params.unroll_k())
                .map(|k| params.hyperparams(k).mu)
                .collect(),
            alpha: (0..params.unroll_k())
                .map(|k| params.hyperparams(k).alpha)
                .collect(),
        });
        if epoch % 25 == 0 || last {
            info!(
                "epoch {epoch}: total {:.6e} (mse {:.6e}, isotropy {:.6e})",
                ev.loss.total, ev.loss.mse, ev.loss.isotropy
            );
        }
        if best.as_ref().is_none_or(|b| ev.loss.total < b.1.total) {
            best = Some((
                epoch,
                ev.loss,
                params.clone(),
                ev.x.clone(),
                ev.report.clone(),
            ));
        }
        if let Some(grads) = ev.grads {
            let g = grads.flatten();
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                let name = grads
                    .tensor_shapes()
                    .into_iter()
                    .scan(0usize, |at, (name, shape)| {
                        *at += shape.iter().product::<usize>();
                        Some((name, *at))
                    })
                    .find(|(_, end)| bad < *end)
                    .map_or_else(|| "unknown".to_string(), |(n, _)| n);
                return Err(DestripeError::NonFiniteGradient { layer: name });
            }
            adam.step(&mut theta, &g);
            params.load_flat(&theta)?;
        }
    }
    let (best_epoch, best_loss, params, x, report) = best.expect("at least one epoch evaluated");
    info!(
        "best total loss {:.6e} at epoch {best_epoch}",
        best_loss.total
    );
    Ok(TrainOutcome {
        params,
        x,
        best_epoch,
        best: best_loss,
        log,
        report,
    })
}

/// Result of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub sampled: usize,
    /// Largest error per tensor name.
    pub per_tensor: Vec<(String, f64)>,
}

/// Central-difference check of the total loss gradient on `n_sampled`
/// parameters (at least one from every tensor). The relative error of each
/// entry is measured against `max(|analytic|, |numeric|, floor)` where the
/// floor is `1e-6 * max(|loss|, 1)`, the scale below which differences at
/// step `1e-6` are dominated by roundoff.
pub fn loss_gradient_check(
    setup: &TrainingSetup,
    params: &Checkpoint,
    beta: f64,
    n_sampled: usize,
    seed: u64,
) -> Result<GradientCheck> {
    const STEP: f64 = 1e-6;
    let ev = setup.evaluate(params, beta, true)?;
    let analytic = ev.grads.expect("gradients requested").flatten();
    let theta = params.flatten();
    let floor = 1e-6 * ev.loss.total.abs().max(1.0);

    let shapes = params.tensor_shapes();
    let mut ranges = Vec::with_capacity(shapes.len());
    let mut at = 0;
    for (name, shape) in &shapes {
        let n: usize = shape.iter().product();
        ranges.push((name.clone(), at..at + n));
        at += n;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = ranges
        .iter()
        .filter(|(_, r)| !r.is_empty())
        .map(|(_, r)| r.start + rand::seq::index::sample(&mut rng, r.len(), 1).index(0))
        .collect();
    let extra = n_sampled.saturating_sub(picks.len()).min(theta.len());
    picks.extend(rand::seq::index::sample(&mut rng, theta.len(), extra));
    picks.sort_unstable();
    picks.dedup();

    let mut per_tensor: Vec<(String, f64)> = Vec::new();
    let mut worst = 0.0f64;
    for &t in &picks {
        let eval_at = |delta: f64| -> Result<f64> {
            let mut th = theta.clone();
            th[t] += delta;
            let mut p = params.clone();
            p.load_flat(&th)?;
            Ok(setup.evaluate(&p, beta, false)?.loss.total)
        };
        let numeric = (eval_at(STEP)? - eval_at(-STEP)?) / (2.0 * STEP);
        let a = analytic[t];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
        let name = ranges
            .iter()
            .find(|(_, r)| r.contains(&t))
            .map(|(n, _)| n.clone())
            .unwrap_or_default();
        match per_tensor.iter_mut().find(|(n, _)| *n == name) {
            Some(entry) => entry.1 = entry.1.max(err),
            None => per_tensor.push((name, err)),
        }
    }
    if worst >= 1e-4 {
        warn!("gradient check: max relative error {worst:.3e}");
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        sampled: picks.len(),
        per_tensor,
    })
}
