//! Complex-valued graph network that predicts the stripe component of the
//! corrupted Fourier coefficients.
//!
//! The stack alternates two-branch message-passing layers (`Fgnn`) with
//! frequency-aware attention units (`Fatt`). Gradients are computed by hand;
//! for a real loss `L` and complex value `z` they are stored as
//! `dL/dRe z + i dL/dIm z`.

mod checkpoint;
mod linear;

pub use checkpoint::{
    load_checkpoint, manifest_path, save_checkpoint, Checkpoint, CheckpointManifest,
    CHECKPOINT_VERSION,
};
pub use linear::ComplexLinear;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{DestripeError, Result};
use crate::graph::SpectralGraph;
use crate::spectral::transform::mirror;

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);

/// Width of the per-node network input: the spectrum and the spectrum of
/// the prior feedback image.
pub const INPUT_WIDTH: usize = 2;

/// Number of polar frequency features appended to attention inputs.
pub const FREQ_FEATURES: usize = 3;

#[inline]
fn crelu(z: C) -> C {
    C::new(z.re.max(0.0), z.im.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FgnnLayer {
    /// Projection of uncorrupted nodes and of every aggregated message.
    pub w1: ComplexLinear,
    /// Projection of a corrupted node's own attribute.
    pub w2: ComplexLinear,
    /// Split rectifier on the output; off for the final layer.
    pub activation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FattLayer {
    /// Query and key maps from `[Re h, Im h, rho/rho_max, cos t, sin t]`.
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: ComplexLinear,
}

impl FattLayer {
    pub fn width(&self) -> usize {
        self.wv.n_in()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Fgnn(FgnnLayer),
    Fatt(FattLayer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DestripeNetwork {
    pub layers: Vec<Layer>,
}

/// Attention features of every node.
fn attention_features(g: &SpectralGraph, h: &Array2<C>) -> Array2<f64> {
    let w = h.ncols();
    let mut phi = Array2::zeros((g.len(), 2 * w + FREQ_FEATURES));
    for (p, mut row) in phi.outer_iter_mut().enumerate() {
        for b in 0..w {
            row[b] = h[[p, b]].re;
            row[w + b] = h[[p, b]].im;
        }
        let n = &g.nodes[p];
        let t = n.theta_deg.to_radians();
        row[2 * w] = n.rho_norm;
        row[2 * w + 1] = t.cos();
        row[2 * w + 2] = t.sin();
    }
    phi
}

#[derive(Debug, Clone)]
enum Cache {
    Fgnn {
        pre: Array2<C>,
    },
    Fatt {
        phi: Array2<f64>,
        q: Array2<f64>,
        k: Array2<f64>,
        v: Array2<C>,
        alpha: Vec<f64>,
    },
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Vec<Array2<C>>,
    caches: Vec<Cache>,
    pub output: Array2<C>,
}

fn check_corrupted_neighborhoods(g: &SpectralGraph) -> Result<()> {
    for (p, n) in g.nodes.iter().enumerate() {
        if n.corrupted && (!n.expanded || g.edge_range(p).is_empty()) {
            return Err(DestripeError::DegenerateNeighborhood { node: p });
        }
    }
    Ok(())
}

fn fgnn_step(
    layer: &FgnnLayer,
    g: &SpectralGraph,
    h: &Array2<C>,
    step: usize,
) -> (Array2<C>, Array2<C>) {
    let w = layer.w1.n_out();
    let u = layer.w1.apply(h);
    let mut pre = Array2::zeros((g.len(), w));
    pre.outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(p, mut row)| {
            if !g.active(p, step) {
                return;
            }
            let mut agg = vec![ZERO; w];
            for e in g.edge_range(p) {
                let q = g.neighbors[e] as usize;
                let a = g.norm_weights[e];
                for (b, x) in agg.iter_mut().enumerate() {
                    *x += u[[q, b]] * a;
                }
            }
            if g.nodes[p].corrupted {
                layer.w2.apply_row(h.row(p), row.view_mut());
                for (b, x) in agg.iter().enumerate() {
                    row[b] -= x;
                }
            } else {
                for (b, x) in agg.iter().enumerate() {
                    row[b] = (u[[p, b]] + x) * 0.5;
                }
            }
        });
    let out = if layer.activation {
        pre.mapv(crelu)
    } else {
        pre.clone()
    };
    (out, pre)
}

fn fatt_step(
    layer: &FattLayer,
    g: &SpectralGraph,
    h: &Array2<C>,
    step: usize,
) -> (Array2<C>, Cache) {
    let w = layer.width();
    let scale = 1.0 / (layer.wq.ncols() as f64).sqrt();
    let phi = attention_features(g, h);
    let q = phi.dot(&layer.wq);
    let k = phi.dot(&layer.wk);
    let v = layer.wv.apply(h);
    let per_node: Vec<Vec<f64>> = (0..g.len())
        .into_par_iter()
        .map(|p| {
            let r = g.edge_range(p);
            if !g.active(p, step) {
                return vec![0.0; r.len()];
            }
            let scores: Vec<f64> = r
                .map(|e| {
                    let nq = g.neighbors[e] as usize;
                    q.row(p).dot(&k.row(nq)) * scale
                })
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let total: f64 = ex.iter().sum();
            ex.into_iter().map(|x| x / total).collect()
        })
        .collect();
    let alpha: Vec<f64> = per_node.into_iter().flatten().collect();
    let mut out = Array2::zeros((g.len(), w));
    out.outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(p, mut row)| {
            if !g.active(p, step) {
                return;
            }
            row.assign(&h.row(p));
            for e in g.edge_range(p) {
                let nq = g.neighbors[e] as usize;
                for b in 0..w {
                    row[b] += v[[nq, b]] * alpha[e];
                }
            }
        });
    (
        out,
        Cache::Fatt {
            phi,
            q,
            k,
            v,
            alpha,
        },
    )
}

/// One two-branch message-passing layer evaluated at every node with a
/// neighbor list.
pub fn fgnn_forward(layer: &FgnnLayer, g: &SpectralGraph, h: &Array2<C>) -> Result<Array2<C>> {
    check_corrupted_neighborhoods(g)?;
    if h.ncols() != layer.w1.n_in() {
        return Err(DestripeError::Invalid(format!(
            "FGNN input width {} does not match layer width {}",
            h.ncols(),
            layer.w1.n_in()
        )));
    }
    Ok(fgnn_step(layer, g, h, 1).0)
}

/// One attention unit evaluated at every node with a neighbor list; also
/// returns the per-edge attention weights.
pub fn fatt_forward(
    layer: &FattLayer,
    g: &SpectralGraph,
    h: &Array2<C>,
) -> Result<(Array2<C>, Vec<f64>)> {
    check_corrupted_neighborhoods(g)?;
    if h.ncols() != layer.width() {
        return Err(DestripeError::Invalid(format!(
            "FAtt input width {} does not match layer width {}",
            h.ncols(),
            layer.width()
        )));
    }
    match fatt_step(layer, g, h, 1) {
        (out, Cache::Fatt { alpha, .. }) => Ok((out, alpha)),
        _ => unreachable!(),
    }
}

/// Node attributes `[y / s, f / s]` with `s` the annulus scale of the node.
pub fn node_inputs(g: &SpectralGraph, feedback: Option<&[C]>) -> Array2<C> {
    Array2::from_shape_fn((g.len(), INPUT_WIDTH), |(p, c)| {
        let n = &g.nodes[p];
        match c {
            0 => n.y / n.scale,
            _ => feedback.map_or(ZERO, |f| f[p] / n.scale),
        }
    })
}

impl DestripeNetwork {
    /// FGNN widths `widths[0] -> widths[1] -> ... -> widths[L]` with an
    /// attention unit after every FGNN layer but the last. Entries are drawn
    /// uniformly in `±1/sqrt(fan_in)`; with `zero_final` both projections of
    /// the last layer start at zero, so the initial output is zero.
    pub fn with_widths<R: Rng>(widths: &[usize], rng: &mut R, zero_final: bool) -> Self {
        assert!(widths.len() >= 2, "need at least one layer");
        let n_layers = widths.len() - 1;
        let mut layers = Vec::new();
        for l in 0..n_layers {
            let (a, b) = (widths[l], widths[l + 1]);
            let last = l + 1 == n_layers;
            let (w1, w2) = if last && zero_final {
                (ComplexLinear::zeros(a, b), ComplexLinear::zeros(a, b))
            } else {
                (
                    ComplexLinear::uniform(a, b, rng),
                    ComplexLinear::uniform(a, b, rng),
                )
            };
            layers.push(Layer::Fgnn(FgnnLayer {
                w1,
                w2,
                activation: !last,
            }));
            if !last {
                let f = 2 * b + FREQ_FEATURES;
                let bound = 1.0 / (f as f64).sqrt();
                let mut draw =
                    || Array2::from_shape_simple_fn((f, b), || rng.random_range(-bound..bound));
                let wq = draw();
                let wk = draw();
                layers.push(Layer::Fatt(FattLayer {
                    wq,
                    wk,
                    wv: ComplexLinear::uniform(b, b, rng),
                }));
            }
        }
        DestripeNetwork { layers }
    }

    /// Architecture from the run configuration.
    pub fn from_config<R: Rng>(
        cfg: &crate::config::RunConfig,
        rng: &mut R,
        zero_final: bool,
    ) -> Self {
        Self::with_widths(&Self::config_widths(cfg), rng, zero_final)
    }

    pub fn config_widths(cfg: &crate::config::RunConfig) -> Vec<usize> {
        let mut widths = vec![INPUT_WIDTH];
        widths.extend((0..cfg.layers_l - 1).map(|l| cfg.hidden_width(l)));
        widths.push(1);
        widths
    }

    pub fn input_width(&self) -> usize {
        match &self.layers[0] {
            Layer::Fgnn(l) => l.w1.n_in(),
            Layer::Fatt(l) => l.width(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        DestripeNetwork {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Fgnn(f) => Layer::Fgnn(FgnnLayer {
                        w1: f.w1.zeros_like(),
                        w2: f.w2.zeros_like(),
                        activation: f.activation,
                    }),
                    Layer::Fatt(a) => Layer::Fatt(FattLayer {
                        wq: Array2::zeros(a.wq.raw_dim()),
                        wk: Array2::zeros(a.wk.raw_dim()),
                        wv: a.wv.zeros_like(),
                    }),
                })
                .collect(),
        }
    }

    /// Parameter tensors in flattening order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Fgnn(f) => {
                    v.extend(f.w1.tensors());
                    v.extend(f.w2.tensors());
                }
                Layer::Fatt(a) => {
                    v.push(a.wq.as_slice().unwrap());
                    v.push(a.wk.as_slice().unwrap());
                    v.extend(a.wv.tensors());
                }
            }
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Fgnn(f) => {
                    v.extend(f.w1.tensors_mut());
                    v.extend(f.w2.tensors_mut());
                }
                Layer::Fatt(a) => {
                    v.push(a.wq.as_slice_mut().unwrap());
                    v.push(a.wk.as_slice_mut().unwrap());
                    v.extend(a.wv.tensors_mut());
                }
            }
        }
        v
    }

    /// Names and shapes of the parameter tensors, in flattening order.
    pub fn tensor_shapes(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for (t, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Fgnn(f) => {
                    v.extend(f.w1.shapes(&format!("{prefix}layer{t}.fgnn.w1")));
                    v.extend(f.w2.shapes(&format!("{prefix}layer{t}.fgnn.w2")));
                }
                Layer::Fatt(a) => {
                    v.push((format!("{prefix}layer{t}.fatt.wq"), a.wq.shape().to_vec()));
                    v.push((format!("{prefix}layer{t}.fatt.wk"), a.wk.shape().to_vec()));
                    v.extend(a.wv.shapes(&format!("{prefix}layer{t}.fatt.wv")));
                }
            }
        }
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(DestripeError::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        Ok(())
    }

    /// Runs the stack on node attributes `input` (one row per node).
    pub fn forward(&self, g: &SpectralGraph, input: Array2<C>) -> Result<ForwardTrace> {
        check_corrupted_neighborhoods(g)?;
        if input.nrows() != g.len() || input.ncols() != self.input_width() {
            return Err(DestripeError::Invalid(format!(
                "network input {:?} does not match {} nodes x width {}",
                input.dim(),
                g.len(),
                self.input_width()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = input;
        for (t, layer) in self.layers.iter().enumerate() {
            let (out, cache) = match layer {
                Layer::Fgnn(f) => {
                    let (out, pre) = fgnn_step(f, g, &h, t + 1);
                    (out, Cache::Fgnn { pre })
                }
                Layer::Fatt(a) => fatt_step(a, g, &h, t + 1),
            };
            inputs.push(h);
            caches.push(cache);
            h = out;
        }
        Ok(ForwardTrace {
            inputs,
            caches,
            output: h,
        })
    }

    /// Stripe activation `s_p * out_p` at the corrupted nodes `0..corrupted_count`.
    pub fn stripe_activation(g: &SpectralGraph, trace: &ForwardTrace) -> Vec<C> {
        (0..g.corrupted_count)
            .map(|p| trace.output[[p, 0]] * g.nodes[p].scale)
            .collect()
    }

    /// Forward pass from spectrum and feedback attributes to the stripe
    /// activation at corrupted nodes.
    pub fn network_forward(
        &self,
        g: &SpectralGraph,
        feedback: Option<&[C]>,
    ) -> Result<(Vec<C>, ForwardTrace)> {
        if g.is_empty() {
            return Err(DestripeError::Invalid("graph has no nodes".into()));
        }
        let trace = self.forward(g, node_inputs(g, feedback))?;
        Ok((Self::stripe_activation(g, &trace), trace))
    }

    /// Upstream gradient on the network output for a gradient on the
    /// stripe activation.
    pub fn activation_backward(g: &SpectralGraph, g_act: &[C]) -> Array2<C> {
        let mut g_out = Array2::zeros((g.len(), 1));
        for (p, ga) in g_act.iter().enumerate() {
            g_out[[p, 0]] = ga * g.nodes[p].scale;
        }
        g_out
    }

    /// Reverse pass. Returns the parameter gradients (in a network of the
    /// same shape) and the gradient on the input attributes.
    pub fn backward(
        &self,
        g: &SpectralGraph,
        trace: &ForwardTrace,
        g_out: Array2<C>,
    ) -> Result<(DestripeNetwork, Array2<C>)> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g_h = g_out;
        for (t, layer) in self.layers.iter().enumerate().rev() {
            let h_in = &trace.inputs[t];
            let (grad, g_in) = match (layer, &trace.caches[t]) {
                (Layer::Fgnn(f), Cache::Fgnn { pre }) => {
                    let (gl, gi) = fgnn_backward(f, g, h_in, pre, g_h, t + 1);
                    (Layer::Fgnn(gl), gi)
                }
                (
                    Layer::Fatt(a),
                    Cache::Fatt {
                        phi,
                        q,
                        k,
                        v,
                        alpha,
                    },
                ) => {
                    let (gl, gi) = fatt_backward(a, g, h_in, phi, q, k, v, alpha, g_h, t + 1);
                    (Layer::Fatt(gl), gi)
                }
                _ => unreachable!("trace does not match network"),
            };
            let finite = match &grad {
                Layer::Fgnn(f) => {
                    f.w1.tensors()
                        .iter()
                        .chain(f.w2.tensors().iter())
                        .all(|t| t.iter().all(|x| x.is_finite()))
                }
                Layer::Fatt(a) => {
                    a.wq.iter().chain(a.wk.iter()).all(|x| x.is_finite())
                        && a.wv
                            .tensors()
                            .iter()
                            .all(|t| t.iter().all(|x| x.is_finite()))
                }
            };
            if !finite {
                let kind = if matches!(layer, Layer::Fgnn(_)) {
                    "FGNN"
                } else {
                    "FAtt"
                };
                return Err(DestripeError::NonFiniteGradient {
                    layer: format!("layer {t} ({kind})"),
                });
            }
            grads.push(grad);
            g_h = g_in;
        }
        grads.reverse();
        Ok((DestripeNetwork { layers: grads }, g_h))
    }
}

fn fgnn_backward(
    layer: &FgnnLayer,
    g: &SpectralGraph,
    h_in: &Array2<C>,
    pre: &Array2<C>,
    g_out: Array2<C>,
    step: usize,
) -> (FgnnLayer, Array2<C>) {
    let n = g.len();
    let w = layer.w1.n_out();
    let mut g_pre = g_out;
    for ((p, b), gp) in g_pre.indexed_iter_mut() {
        if !g.active(p, step) {
            *gp = ZERO;
        } else if layer.activation {
            let z = pre[[p, b]];
            *gp = C::new(
                if z.re > 0.0 { gp.re } else { 0.0 },
                if z.im > 0.0 { gp.im } else { 0.0 },
            );
        }
    }
    let corrupted = |p: usize| g.nodes[p].corrupted;
    let mut g_u = Array2::zeros((n, w));
    g_u.outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(q, mut row)| {
            if !corrupted(q) {
                for b in 0..w {
                    row[b] = g_pre[[q, b]] * 0.5;
                }
            }
            for &(p, e) in g.incoming(q) {
                let p = p as usize;
                let a = g.norm_weights[e as usize];
                let f = if corrupted(p) { -a } else { 0.5 * a };
                for b in 0..w {
                    row[b] += g_pre[[p, b]] * f;
                }
            }
        });
    let mut g_v = g_pre;
    for (p, mut row) in g_v.outer_iter_mut().enumerate() {
        if !corrupted(p) {
            row.fill(ZERO);
        }
    }
    let mut g_h = Array2::zeros((n, layer.w1.n_in()));
    g_h.outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(p, mut row)| {
            layer.w1.backprop_row(g_u.row(p), row.view_mut());
            if corrupted(p) {
                layer.w2.backprop_row(g_v.row(p), row.view_mut());
            }
        });
    let w1 = layer.w1.gradient(h_in, &g_u, |_| true);
    let w2 = layer
        .w2
        .gradient(h_in, &g_v, |p| corrupted(p) && g.active(p, step));
    (
        FgnnLayer {
            w1,
            w2,
            activation: layer.activation,
        },
        g_h,
    )
}

#[allow(clippy::too_many_arguments)]
fn fatt_backward(
    layer: &FattLayer,
    g: &SpectralGraph,
    h_in: &Array2<C>,
    phi: &Array2<f64>,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<C>,
    alpha: &[f64],
    g_out: Array2<C>,
    step: usize,
) -> (FattLayer, Array2<C>) {
    let n = g.len();
    let w = layer.width();
    let dk = layer.wq.ncols();
    let scale = 1.0 / (dk as f64).sqrt();
    // Score gradients per edge, zero for inactive sources.
    let per_node: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let r = g.edge_range(p);
            if !g.active(p, step) {
                return vec![0.0; r.len()];
            }
            let ga: Vec<f64> = r
                .clone()
                .map(|e| {
                    let nq = g.neighbors[e] as usize;
                    (0..w)
                        .map(|b| (g_out[[p, b]].conj() * v[[nq, b]]).re)
                        .sum::<f64>()
                })
                .collect();
            let mean: f64 = r.clone().zip(&ga).map(|(e, x)| alpha[e] * x).sum();
            r.zip(&ga).map(|(e, x)| alpha[e] * (x - mean)).collect()
        })
        .collect();
    let g_s: Vec<f64> = per_node.into_iter().flatten().collect();

    let mut g_q = Array2::<f64>::zeros((n, dk));
    g_q.outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(p, mut row)| {
            for e in g.edge_range(p) {
                let nq = g.neighbors[e] as usize;
                let f = g_s[e] * scale;
                for c in 0..dk {
                    row[c] += f * k[[nq, c]];
                }
            }
        });
    let mut g_k = Array2::<f64>::zeros((n, dk));
    let mut g_v = Array2::<C>::zeros((n, w));
    g_k.outer_iter_mut()
        .into_par_iter()
        .zip(g_v.outer_iter_mut().into_par_iter())
        .enumerate()
        .for_each(|(nq, (mut krow, mut vrow))| {
            for &(p, e) in g.incoming(nq) {
                let (p, e) = (p as usize, e as usize);
                let f = g_s[e] * scale;
                for c in 0..dk {
                    krow[c] += f * q[[p, c]];
                }
                for b in 0..w {
                    vrow[b] += g_out[[p, b]] * alpha[e];
                }
            }
        });
    let g_phi = g_q.dot(&layer.wq.t()) + g_k.dot(&layer.wk.t());
    let mut g_h = Array2::zeros((n, w));
    g_h.outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(p, mut row)| {
            if g.active(p, step) {
                row.assign(&g_out.row(p));
            }
            for b in 0..w {
                row[b] += C::new(g_phi[[p, b]], g_phi[[p, w + b]]);
            }
            layer.wv.backprop_row(g_v.row(p), row.view_mut());
        });
    let wq = phi.t().dot(&g_q);
    let wk = phi.t().dot(&g_k);
    let wv = layer.wv.gradient(h_in, &g_v, |_| true);
    (FattLayer { wq, wk, wv }, g_h)
}

/// Subtracts the stripe activation at the corrupted bins, then replaces each
/// corrupted bin by the mean of itself and the conjugate of its mirror so the
/// result stays the spectrum of a real image.
pub fn stripe_subtract_coeffs(coeffs: &Array3<C>, g: &SpectralGraph, act: &[C]) -> Array3<C> {
    let (_, h, w) = coeffs.dim();
    let mut r = coeffs.clone();
    for (p, a) in act.iter().enumerate().take(g.corrupted_count) {
        let n = &g.nodes[p];
        r[[n.slice, n.i, n.j]] -= a;
    }
    let mut out = r.clone();
    for n in &g.nodes[..g.corrupted_count] {
        let (mi, mj) = (mirror(n.i, h), mirror(n.j, w));
        out[[n.slice, n.i, n.j]] = (r[[n.slice, n.i, n.j]] + r[[n.slice, mi, mj]].conj()) * 0.5;
    }
    out
}

/// Gradient on the stripe activation for a gradient on the output of
/// [`stripe_subtract_coeffs`].
pub fn stripe_subtract_backward(g_rec: &Array3<C>, g: &SpectralGraph) -> Vec<C> {
    let (_, h, w) = g_rec.dim();
    let mut g_r = g_rec.clone();
    for n in &g.nodes[..g.corrupted_count] {
        g_r[[n.slice, n.i, n.j]] = ZERO;
    }
    for n in &g.nodes[..g.corrupted_count] {
        let gv = g_rec[[n.slice, n.i, n.j]];
        let (mi, mj) = (mirror(n.i, h), mirror(n.j, w));
        g_r[[n.slice, n.i, n.j]] += gv * 0.5;
        g_r[[n.slice, mi, mj]] += gv.conj() * 0.5;
    }
    g.nodes[..g.corrupted_count]
        .iter()
        .map(|n| -g_r[[n.slice, n.i, n.j]])
        .collect()
}

/// [`stripe_subtract_coeffs`] on a spectral volume.
pub fn stripe_subtract(
    s: &crate::spectral::SpectralVolume,
    g: &SpectralGraph,
    act: &[C],
) -> crate::spectral::SpectralVolume {
    crate::spectral::SpectralVolume {
        coeffs: stripe_subtract_coeffs(&s.coeffs, g, act),
        source_shape: s.source_shape,
    }
}

/// Per-slice view helper for tests and reports: the stripe activation
/// scattered onto the bin grid.
pub fn scatter_activation(g: &SpectralGraph, act: &[C]) -> Array3<C> {
    let mut out = Array3::zeros(g.shape);
    for (p, a) in act.iter().enumerate() {
        let n = &g.nodes[p];
        out[[n.slice, n.i, n.j]] = *a;
    }
    out
}
