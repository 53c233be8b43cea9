//! The unrolled split-Bregman loop: a graph-network data update, Hessian
//! shrinkage, Bregman update and per-iteration positive hyperparameters,
//! with an exact reverse pass through all of it.

use ndarray::{Array3, Axis, Zip};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{DestripeError, Result};
use crate::graph::SpectralGraph;
use crate::hessian::{
    feedback_image, hessian_objective, prior_bregman_update, second_derivative,
    second_derivative_adjoint, split_residual, Boundary, HessianDirections, SplitState,
};
use crate::network::{
    stripe_subtract, stripe_subtract_backward, Checkpoint, DestripeNetwork, ForwardTrace,
};
use crate::spectral::{forward_spectrum_with, inverse_spectrum_with, SliceFft, SpectralVolume};

pub const MU_INIT: f64 = 1.0;
pub const ALPHA_INIT: f64 = 0.1;

/// `ln(1 + e^x)`, floored at the smallest positive normal so that it stays
/// strictly positive where `e^x` underflows.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        let y = x.exp().ln_1p();
        if y == 0.0 {
            f64::MIN_POSITIVE
        } else {
            y
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// `(mu_k, alpha_k)` of one unrolled iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationParams {
    pub mu: f64,
    pub alpha: f64,
}

impl IterationParams {
    pub fn threshold(&self) -> f64 {
        self.alpha / self.mu
    }
}

impl Checkpoint {
    /// Fresh parameters for `unroll_k` iterations. Network final layers start
    /// at zero so the initial model is the identity.
    pub fn initial<R: Rng>(cfg: &RunConfig, rng: &mut R) -> Self {
        let n_nets = if cfg.tie_weights { 1 } else { cfg.unroll_k };
        Checkpoint {
            nets: (0..n_nets)
                .map(|_| DestripeNetwork::from_config(cfg, rng, true))
                .collect(),
            mu_raw: vec![softplus_inv(MU_INIT); cfg.unroll_k],
            alpha_raw: vec![softplus_inv(ALPHA_INIT); cfg.unroll_k],
        }
    }

    pub fn unroll_k(&self) -> usize {
        self.mu_raw.len()
    }

    /// Index into `nets` used at iteration `k`.
    pub fn net_index(&self, k: usize) -> usize {
        if self.nets.len() == 1 {
            0
        } else {
            k
        }
    }

    pub fn hyperparams(&self, k: usize) -> IterationParams {
        IterationParams {
            mu: softplus(self.mu_raw[k]),
            alpha: softplus(self.alpha_raw[k]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Checkpoint {
            nets: self.nets.iter().map(|n| n.zeros_like()).collect(),
            mu_raw: vec![0.0; self.mu_raw.len()],
            alpha_raw: vec![0.0; self.alpha_raw.len()],
        }
    }
}

fn add_network(acc: &mut DestripeNetwork, g: &DestripeNetwork) {
    for (a, b) in acc.tensors_mut().into_iter().zip(g.tensors()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Everything fixed across iterations and epochs for one input volume.
#[derive(Debug, Clone)]
pub struct Problem {
    pub y: Array3<f64>,
    pub spectrum: SpectralVolume,
    pub graph: SpectralGraph,
    pub dirs: HessianDirections,
    pub fft: SliceFft,
}

impl Problem {
    pub fn new(
        y: Array3<f64>,
        spectrum: SpectralVolume,
        graph: SpectralGraph,
        cfg: &RunConfig,
    ) -> Self {
        let (d, h, w) = y.dim();
        Problem {
            dirs: HessianDirections::from_config(cfg, d),
            fft: SliceFft::new(h, w),
            y,
            spectrum,
            graph,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.y.dim()
    }
}

const BOUNDARY: Boundary = Boundary::Reflective;

fn check_finite(v: &Array3<f64>, iteration: usize, step: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(DestripeError::NonFiniteIntermediate { iteration, step })
    }
}

/// Feedback attributes at the graph nodes: the spectrum of
/// `Σ_i D_iᵀ (Z_i - B_i)`.
fn node_feedback(p: &Problem, st: &SplitState) -> Vec<Complex64> {
    let f = feedback_image(&p.dirs, st, BOUNDARY);
    let spec = forward_spectrum_with(&p.fft, &f);
    p.graph
        .nodes
        .iter()
        .map(|n| spec.coeffs[[n.slice, n.i, n.j]])
        .collect()
}

/// One data update `X^{k+1} = G(Y, Z^k, B^k)` through network `net`.
/// `iteration` (1-based) only labels errors. A zero stripe activation
/// returns `Y` itself.
pub fn data_update(
    p: &Problem,
    net: &DestripeNetwork,
    st: &SplitState,
    iteration: usize,
) -> Result<(Array3<f64>, ForwardTrace)> {
    if p.graph.corrupted_count == 0 {
        return Err(DestripeError::Invalid(
            "graph has no corrupted nodes".into(),
        ));
    }
    let fb = node_feedback(p, st);
    let (act, trace) = net.network_forward(&p.graph, Some(&fb))?;
    if act.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
        return Err(DestripeError::NonFiniteIntermediate {
            iteration,
            step: "network",
        });
    }
    if act.iter().all(|a| a.re == 0.0 && a.im == 0.0) {
        return Ok((p.y.clone(), trace));
    }
    let rec = stripe_subtract(&p.spectrum, &p.graph, &act);
    let x = inverse_spectrum_with(&p.fft, &rec)?;
    Ok((x, trace))
}

/// Report entry for one unrolled iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub mu: f64,
    pub alpha: f64,
    /// `||Y - X||² + α Σ_i ||λ_i D_i X||₁` at the new estimate.
    pub objective: f64,
    /// `Σ_i ||Z_i - λ_i D_i X - B_i||` after the prior and Bregman steps.
    pub split_residual: f64,
}

/// Intermediate values needed by [`unfolded_backward`].
#[derive(Debug, Clone)]
pub struct UnrolledTrace {
    /// Shrinkage arguments `T_i` of each iteration.
    args: Vec<Vec<Array3<f64>>>,
    nets: Vec<ForwardTrace>,
}

#[derive(Debug, Clone)]
pub struct UnrolledOutput {
    pub x: Array3<f64>,
    pub report: Vec<IterationReport>,
    pub trace: UnrolledTrace,
}

/// `X⁰ = Y`, `Z = B = 0`, then `K` rounds of data, prior and Bregman
/// updates. Returns `X^K`. Errors name iterations from 1, like the report.
pub fn unfolded_forward(p: &Problem, params: &Checkpoint) -> Result<UnrolledOutput> {
    let k_total = params.unroll_k();
    let mut st = SplitState::zeros(p.shape());
    let mut x = p.y.clone();
    let mut trace = UnrolledTrace {
        args: Vec::with_capacity(k_total),
        nets: Vec::with_capacity(k_total),
    };
    let mut report = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let it = k + 1;
        let hp = params.hyperparams(k);
        if !(hp.mu.is_finite() && hp.alpha.is_finite() && hp.threshold().is_finite()) {
            return Err(DestripeError::NonFiniteIntermediate {
                iteration: it,
                step: "hyperparams",
            });
        }
        let (xk, net_trace) = data_update(p, &params.nets[params.net_index(k)], &st, it)?;
        check_finite(&xk, it, "data")?;
        let (next, args) = prior_bregman_update(&p.dirs, &xk, &st, hp.threshold(), BOUNDARY);
        for z in &next.z {
            check_finite(z, it, "prior")?;
        }
        for b in &next.b {
            check_finite(b, it, "bregman")?;
        }
        report.push(IterationReport {
            iteration: it,
            mu: hp.mu,
            alpha: hp.alpha,
            objective: hessian_objective(&p.y, &xk, &p.dirs, hp.alpha, BOUNDARY),
            split_residual: split_residual(&p.dirs, &xk, &next, BOUNDARY),
        });
        st = next;
        trace.args.push(args);
        trace.nets.push(net_trace);
        x = xk;
    }
    Ok(UnrolledOutput { x, report, trace })
}

/// Gradient of a scalar loss with respect to every parameter, given its
/// gradient `g_x` on the final estimate.
pub fn unfolded_backward(
    p: &Problem,
    params: &Checkpoint,
    trace: &UnrolledTrace,
    g_x: &Array3<f64>,
) -> Result<Checkpoint> {
    let k_total = params.unroll_k();
    let shape = p.shape();
    let d = shape.0;
    let mut grads = params.zeros_like();
    // Gradient with respect to the split state produced by iteration k.
    let mut g_state = SplitState::zeros(shape);
    let mut g_xk = g_x.clone();
    for k in (0..k_total).rev() {
        if k + 1 < k_total {
            // Prior and Bregman steps of iteration k; their outputs only
            // matter through later iterations.
            let hp = params.hyperparams(k);
            let t = hp.threshold();
            let mut g_t = 0.0;
            g_xk = Array3::zeros(shape);
            let mut g_prev = SplitState::zeros(shape);
            for (i, dir, lambda) in p.dirs.active() {
                let mut g_arg = Array3::zeros(shape);
                Zip::from(&mut g_arg)
                    .and(&trace.args[k][i])
                    .and(&g_state.z[i])
                    .and(&g_state.b[i])
                    .for_each(|ga, &arg, &gz, &gb| {
                        if arg.abs() > t {
                            *ga = gz;
                            g_t -= (gz - gb) * arg.signum();
                        } else {
                            *ga = gb;
                        }
                    });
                g_xk.scaled_add(lambda, &second_derivative_adjoint(&g_arg, dir, BOUNDARY));
                g_prev.b[i] = g_arg;
            }
            let (mu, alpha) = (hp.mu, hp.alpha);
            grads.alpha_raw[k] += g_t * sigmoid(params.alpha_raw[k]) / mu;
            grads.mu_raw[k] += -g_t * alpha / (mu * mu) * sigmoid(params.mu_raw[k]);
            g_state = g_prev;
        } else {
            g_state = SplitState::zeros(shape);
        }

        // Data step of iteration k.
        let mut g_rec = Array3::<Complex64>::zeros(shape);
        for s in 0..d {
            let gs = p.fft.inverse_real_adjoint(g_xk.index_axis(Axis(0), s));
            g_rec.index_axis_mut(Axis(0), s).assign(&gs);
        }
        let g_act = stripe_subtract_backward(&g_rec, &p.graph);
        let net_idx = params.net_index(k);
        let net = &params.nets[net_idx];
        let g_out = DestripeNetwork::activation_backward(&p.graph, &g_act);
        let (g_net, g_in) = net.backward(&p.graph, &trace.nets[k], g_out)?;
        add_network(&mut grads.nets[net_idx], &g_net);

        if k > 0 {
            // Feedback channel: F = Σ_i D_iᵀ (Z_i - B_i).
            let mut g_spec = Array3::<Complex64>::zeros(shape);
            for (q, n) in p.graph.nodes.iter().enumerate() {
                g_spec[[n.slice, n.i, n.j]] += g_in[[q, 1]] / n.scale;
            }
            let mut g_f = Array3::zeros(shape);
            for s in 0..d {
                p.fft.forward_real_adjoint(
                    g_spec.index_axis(Axis(0), s),
                    g_f.index_axis_mut(Axis(0), s),
                );
            }
            for (i, dir, _) in p.dirs.active() {
                let dg = second_derivative(&g_f, dir, BOUNDARY);
                g_state.z[i] += &dg;
                g_state.b[i] -= &dg;
            }
        }
    }
    Ok(grads)
}
