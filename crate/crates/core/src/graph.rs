//! Polar-coordinate neighborhood graph over Fourier coefficients.
//!
//! Every node is one frequency bin of one slice. A node's neighbors are
//! drawn uniformly without replacement from the uncorrupted bins of its own
//! annulus in the same slice, with a generator keyed by `(seed, k, i, j)` so
//! that each bin's neighbor set is fixed by the seed alone. The pruned graph
//! keeps the corrupted bins plus everything reachable from them within the
//! network's receptive depth; the full graph keeps every bin.

use std::io::Write;

use ndarray::Array3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{DestripeError, Result};
use crate::spectral::{
    bin_polar, whiten_magnitudes, AnnulusIndex, CorruptionField, SpectralVolume,
};

/// Sentinel in [`SpectralGraph::index`] for bins that are not nodes.
pub const NO_NODE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphNode {
    pub slice: usize,
    pub i: usize,
    pub j: usize,
    pub ring: usize,
    pub corrupted: bool,
    /// Edge distance from the nearest corrupted node.
    pub hops: usize,
    /// Whether the node owns a neighbor list (nodes on the depth frontier
    /// only feed their attributes to others).
    pub expanded: bool,
    /// Corruption-matrix value at the bin.
    pub w: f64,
    /// Robust Rayleigh scale of the node's annulus, used to normalize
    /// attributes. Falls back to 1 for all-zero annuli.
    pub scale: f64,
    pub rho_norm: f64,
    pub theta_deg: f64,
    /// Spectrum value at the bin (layer-0 attribute).
    #[serde(skip)]
    pub y: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGraph {
    pub shape: (usize, usize, usize),
    pub nodes: Vec<GraphNode>,
    /// CSR offsets into `neighbors` and `weights`, length `nodes + 1`.
    pub offsets: Vec<usize>,
    pub neighbors: Vec<u32>,
    /// Edge weights `a_pq = w_q`.
    pub weights: Vec<f64>,
    /// Edge weights divided by the sum over their source's neighbor set.
    pub norm_weights: Vec<f64>,
    /// Reverse CSR: for each node, incoming `(source, edge id)` pairs in
    /// ascending source order.
    pub rev_offsets: Vec<usize>,
    pub rev_edges: Vec<(u32, u32)>,
    /// Node id of every bin, or [`NO_NODE`].
    pub index: Array3<u32>,
    /// Number of neighbor-aggregating layers the node set supports.
    pub depth: usize,
    pub neighbors_n: usize,
    /// Expanded nodes whose neighbor set came out smaller than `neighbors_n`.
    pub shortfall: Vec<u32>,
    /// Corrupted bins left out because their annulus has no usable
    /// uncorrupted member in that slice.
    pub unrecoverable: Vec<(usize, usize, usize)>,
    /// Corrupted node ids; these are always `0..corrupted_count`.
    pub corrupted_count: usize,
}

impl SpectralGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn neighbors_of(&self, p: usize) -> &[u32] {
        &self.neighbors[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn edge_range(&self, p: usize) -> std::ops::Range<usize> {
        self.offsets[p]..self.offsets[p + 1]
    }

    pub fn incoming(&self, q: usize) -> &[(u32, u32)] {
        &self.rev_edges[self.rev_offsets[q]..self.rev_offsets[q + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Whether node `p` computes a fresh value at aggregation step `step`
    /// (1-based). Results at corrupted nodes after `depth` steps then only
    /// depend on nodes inside the graph.
    #[inline]
    pub fn active(&self, p: usize, step: usize) -> bool {
        let n = &self.nodes[p];
        n.expanded && n.hops + step <= self.depth
    }

    pub fn node_at(&self, k: usize, i: usize, j: usize) -> Option<usize> {
        match self.index[[k, i, j]] {
            NO_NODE => None,
            id => Some(id as usize),
        }
    }

    /// One JSON object per node and line.
    pub fn write_json_lines<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            id: usize,
            #[serde(flatten)]
            node: &'a GraphNode,
            y: [f64; 2],
            neighbors: &'a [u32],
            weights: &'a [f64],
        }
        for (id, node) in self.nodes.iter().enumerate() {
            let r = self.edge_range(id);
            let line = Line {
                id,
                node,
                y: [node.y.re, node.y.im],
                neighbors: &self.neighbors[r.clone()],
                weights: &self.weights[r],
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl SpectralGraph {
    /// A free-standing graph for unit tests and oracles: node `p` is
    /// corrupted when `corrupted[p]` holds (corrupted nodes must come first)
    /// and owns the weighted edge list `adjacency[p]`. Every node computes at
    /// every layer. Bins are laid out along one row of a single slice.
    pub fn synthetic(
        corrupted: &[bool],
        adjacency: &[Vec<(usize, f64)>],
        y: &[Complex64],
    ) -> Result<Self> {
        let n = corrupted.len();
        if adjacency.len() != n || y.len() != n {
            return Err(DestripeError::Invalid(
                "synthetic graph inputs differ in length".into(),
            ));
        }
        let corrupted_count = corrupted.iter().take_while(|&&c| c).count();
        if corrupted[corrupted_count..].iter().any(|&c| c) {
            return Err(DestripeError::Invalid(
                "corrupted nodes must come first".into(),
            ));
        }
        let mut drafts_nodes = Vec::with_capacity(n);
        let mut offsets = vec![0];
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        let mut norm_weights = Vec::new();
        for p in 0..n {
            for &(q, a) in &adjacency[p] {
                if q >= n || corrupted[q] || !(a > 0.0) {
                    return Err(DestripeError::Invalid(format!(
                        "bad edge {p} -> {q} with weight {a}"
                    )));
                }
                neighbors.push(q as u32);
                weights.push(a);
            }
            let start = offsets[p];
            let total: f64 = weights[start..].iter().sum();
            norm_weights.extend(weights[start..].iter().map(|&a| a / total));
            offsets.push(neighbors.len());
            drafts_nodes.push(GraphNode {
                slice: 0,
                i: 0,
                j: p,
                ring: 0,
                corrupted: corrupted[p],
                hops: 0,
                expanded: !adjacency[p].is_empty(),
                w: if corrupted[p] { 0.0 } else { 1.0 },
                scale: 1.0,
                rho_norm: (p + 1) as f64 / (n + 1) as f64,
                theta_deg: (p * 37 % 180) as f64,
                y: y[p],
            });
        }
        let mut rev: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
        for p in 0..n {
            for e in offsets[p]..offsets[p + 1] {
                rev[neighbors[e] as usize].push((p as u32, e as u32));
            }
        }
        let mut rev_offsets = vec![0];
        let mut rev_edges = Vec::new();
        for r in rev {
            rev_edges.extend(r);
            rev_offsets.push(rev_edges.len());
        }
        let index = Array3::from_shape_fn((1, 1, n), |(_, _, j)| j as u32);
        Ok(SpectralGraph {
            shape: (1, 1, n),
            nodes: drafts_nodes,
            offsets,
            neighbors,
            weights,
            norm_weights,
            rev_offsets,
            rev_edges,
            index,
            depth: usize::MAX / 4,
            neighbors_n: adjacency.iter().map(Vec::len).max().unwrap_or(0),
            shortfall: Vec::new(),
            unrecoverable: Vec::new(),
            corrupted_count,
        })
    }
}

/// Receptive depth of a network with `layers_l` FGNN layers and attention
/// units between them.
pub fn receptive_depth(layers_l: usize) -> usize {
    2 * layers_l - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub corrupted: usize,
    pub edges: usize,
    pub mean_degree: f64,
    pub shortfall: usize,
    pub unrecoverable: usize,
}

pub fn graph_stats(g: &SpectralGraph) -> GraphStats {
    let expanded = g.nodes.iter().filter(|n| n.expanded).count();
    GraphStats {
        nodes: g.nodes.len(),
        corrupted: g.nodes.iter().filter(|n| n.corrupted).count(),
        edges: g.edge_count(),
        mean_degree: if expanded == 0 {
            0.0
        } else {
            g.edge_count() as f64 / expanded as f64
        },
        shortfall: g.shortfall.len(),
        unrecoverable: g.unrecoverable.len(),
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn bin_seed(seed: u64, k: usize, i: usize, j: usize) -> u64 {
    let mut h = splitmix(seed);
    for v in [k, i, j] {
        h = splitmix(h ^ v as u64);
    }
    h
}

/// Shared read-only inputs of the neighbor sampler.
struct Sampler<'a> {
    field: &'a CorruptionField,
    annuli: &'a AnnulusIndex,
    n: usize,
    seed: u64,
    /// Usable (uncorrupted, positive weight) members per `(slice, ring)`.
    pools: Vec<Vec<Vec<(usize, usize)>>>,
}

impl<'a> Sampler<'a> {
    fn new(field: &'a CorruptionField, annuli: &'a AnnulusIndex, n: usize, seed: u64) -> Self {
        let d = field.mask.dim().0;
        let pools = (0..d)
            .map(|k| {
                annuli
                    .ring_members
                    .iter()
                    .map(|members| {
                        members
                            .iter()
                            .copied()
                            .filter(|&(i, j)| !field.mask[[k, i, j]] && field.w[[k, i, j]] > 0.0)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Sampler {
            field,
            annuli,
            n,
            seed,
            pools,
        }
    }

    fn usable_pool_size(&self, k: usize, i: usize, j: usize) -> usize {
        self.pools[k][self.annuli.ring_of(i, j)].len()
    }

    /// Neighbor bins of `(k, i, j)` in pool order.
    fn sample(&self, k: usize, i: usize, j: usize) -> Vec<(usize, usize)> {
        let pool: Vec<(usize, usize)> = self.pools[k][self.annuli.ring_of(i, j)]
            .iter()
            .copied()
            .filter(|&b| b != (i, j))
            .collect();
        if pool.is_empty() {
            // The bin is the only usable member of its annulus.
            return if !self.field.mask[[k, i, j]] && self.field.w[[k, i, j]] > 0.0 {
                vec![(i, j)]
            } else {
                Vec::new()
            };
        }
        if pool.len() <= self.n {
            return pool;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(bin_seed(self.seed, k, i, j));
        let mut picks = rand::seq::index::sample(&mut rng, pool.len(), self.n).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|t| pool[t]).collect()
    }
}

struct Draft {
    bin: (usize, usize, usize),
    corrupted: bool,
    hops: usize,
    neighbors: Option<Vec<(usize, usize)>>,
}

fn check_inputs(s: &SpectralVolume, c: &CorruptionField, a: &AnnulusIndex) -> Result<()> {
    let shape = s.dim();
    if c.mask.dim() != shape || c.w.dim() != shape || a.dims() != (shape.1, shape.2) {
        return Err(DestripeError::Invalid(format!(
            "corruption field {:?} or annuli {:?} do not match spectrum {shape:?}",
            c.mask.dim(),
            a.dims()
        )));
    }
    Ok(())
}

/// Corrupted bins, split into recoverable ones and those whose annulus has
/// no usable uncorrupted member.
fn corrupted_bins(
    sampler: &Sampler,
    shape: (usize, usize, usize),
) -> (Vec<(usize, usize, usize)>, Vec<(usize, usize, usize)>) {
    let (d, h, w) = shape;
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for k in 0..d {
        for i in 0..h {
            for j in 0..w {
                if sampler.field.mask[[k, i, j]] {
                    if sampler.usable_pool_size(k, i, j) == 0 {
                        bad.push((k, i, j));
                    } else {
                        ok.push((k, i, j));
                    }
                }
            }
        }
    }
    (ok, bad)
}

/// Corrupted bins and their neighborhoods out to `depth` hops.
pub fn build_spectral_graph(
    s: &SpectralVolume,
    c: &CorruptionField,
    a: &AnnulusIndex,
    cfg: &RunConfig,
    seed: u64,
) -> Result<SpectralGraph> {
    check_inputs(s, c, a)?;
    let shape = s.dim();
    let depth = receptive_depth(cfg.layers_l);
    let sampler = Sampler::new(c, a, cfg.neighbors_n, seed);
    let (seeds, unrecoverable) = corrupted_bins(&sampler, shape);
    if !unrecoverable.is_empty() {
        log::warn!(
            "{} corrupted bins have no uncorrupted annulus neighbors and are left as is",
            unrecoverable.len()
        );
    }

    let mut index = Array3::from_elem(shape, NO_NODE);
    let mut drafts: Vec<Draft> = Vec::new();
    for &bin in &seeds {
        index[bin] = drafts.len() as u32;
        drafts.push(Draft {
            bin,
            corrupted: true,
            hops: 0,
            neighbors: None,
        });
    }
    let mut level = 0..drafts.len();
    for hop in 0..depth {
        let lists: Vec<Vec<(usize, usize)>> = drafts[level.clone()]
            .par_iter()
            .map(|d| sampler.sample(d.bin.0, d.bin.1, d.bin.2))
            .collect();
        let start = drafts.len();
        for (offset, list) in lists.into_iter().enumerate() {
            let k = drafts[level.start + offset].bin.0;
            for &(i, j) in &list {
                if index[[k, i, j]] == NO_NODE {
                    index[[k, i, j]] = drafts.len() as u32;
                    drafts.push(Draft {
                        bin: (k, i, j),
                        corrupted: false,
                        hops: hop + 1,
                        neighbors: None,
                    });
                }
            }
            drafts[level.start + offset].neighbors = Some(list);
        }
        level = start..drafts.len();
    }
    assemble(
        s,
        c,
        a,
        drafts,
        index,
        depth,
        cfg.neighbors_n,
        unrecoverable,
        seeds.len(),
    )
}

/// Every bin of the volume as a node, each with its own neighbor set.
/// Corrupted bins come first, then the rest in slice-major, row-major order.
pub fn build_full_graph(
    s: &SpectralVolume,
    c: &CorruptionField,
    a: &AnnulusIndex,
    cfg: &RunConfig,
    seed: u64,
) -> Result<SpectralGraph> {
    check_inputs(s, c, a)?;
    let shape = s.dim();
    let (d, h, w) = shape;
    let depth = receptive_depth(cfg.layers_l);
    let sampler = Sampler::new(c, a, cfg.neighbors_n, seed);
    let (seeds, unrecoverable) = corrupted_bins(&sampler, shape);
    let mut bins = seeds.clone();
    for k in 0..d {
        for i in 0..h {
            for j in 0..w {
                if !c.mask[[k, i, j]] {
                    bins.push((k, i, j));
                }
            }
        }
    }
    let lists: Vec<Vec<(usize, usize)>> = bins
        .par_iter()
        .map(|&(k, i, j)| sampler.sample(k, i, j))
        .collect();
    let mut index = Array3::from_elem(shape, NO_NODE);
    for (id, &bin) in bins.iter().enumerate() {
        index[bin] = id as u32;
    }
    let drafts = bins
        .into_iter()
        .zip(lists)
        .enumerate()
        .map(|(id, (bin, list))| Draft {
            bin,
            corrupted: id < seeds.len(),
            hops: 0,
            neighbors: if list.is_empty() { None } else { Some(list) },
        })
        .collect();
    assemble(
        s,
        c,
        a,
        drafts,
        index,
        depth,
        cfg.neighbors_n,
        unrecoverable,
        seeds.len(),
    )
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    s: &SpectralVolume,
    c: &CorruptionField,
    a: &AnnulusIndex,
    drafts: Vec<Draft>,
    index: Array3<u32>,
    depth: usize,
    neighbors_n: usize,
    unrecoverable: Vec<(usize, usize, usize)>,
    corrupted_count: usize,
) -> Result<SpectralGraph> {
    let shape = s.dim();
    let (_, h, w) = shape;
    let rho_max = ((h / 2) as f64).hypot((w / 2) as f64);
    let scales = whiten_magnitudes(s, a).scales;
    let mut nodes = Vec::with_capacity(drafts.len());
    let mut offsets = vec![0usize];
    let mut neighbors = Vec::new();
    let mut weights = Vec::new();
    let mut norm_weights = Vec::new();
    let mut shortfall = Vec::new();
    for (id, d) in drafts.iter().enumerate() {
        let (k, i, j) = d.bin;
        let (rho, theta) = bin_polar(i, j, h, w);
        let ring = a.ring_of(i, j);
        let scale = match scales[[k, ring]] {
            v if v > 0.0 => v,
            _ => 1.0,
        };
        nodes.push(GraphNode {
            slice: k,
            i,
            j,
            ring,
            corrupted: d.corrupted,
            hops: d.hops,
            expanded: d.neighbors.is_some(),
            w: c.w[[k, i, j]],
            scale,
            rho_norm: rho / rho_max,
            theta_deg: theta,
            y: s.coeffs[[k, i, j]],
        });
        if let Some(list) = &d.neighbors {
            if list.len() < neighbors_n {
                shortfall.push(id as u32);
            }
            let start = weights.len();
            for &(ni, nj) in list {
                let q = index[[k, ni, nj]];
                if q == NO_NODE {
                    return Err(DestripeError::Invalid(format!(
                        "neighbor ({k}, {ni}, {nj}) missing from graph"
                    )));
                }
                neighbors.push(q);
                weights.push(c.w[[k, ni, nj]]);
            }
            let total: f64 = weights[start..].iter().sum();
            if !(total > 0.0) {
                return Err(DestripeError::DegenerateNeighborhood { node: id });
            }
            norm_weights.extend(weights[start..].iter().map(|&a| a / total));
        }
        offsets.push(neighbors.len());
    }

    let n = nodes.len();
    let mut rev_count = vec![0usize; n + 1];
    for &q in &neighbors {
        rev_count[q as usize + 1] += 1;
    }
    for t in 0..n {
        rev_count[t + 1] += rev_count[t];
    }
    let rev_offsets = rev_count.clone();
    let mut fill = rev_count;
    let mut rev_edges = vec![(0u32, 0u32); neighbors.len()];
    for p in 0..n {
        for e in offsets[p]..offsets[p + 1] {
            let q = neighbors[e] as usize;
            rev_edges[fill[q]] = (p as u32, e as u32);
            fill[q] += 1;
        }
    }
    Ok(SpectralGraph {
        shape,
        nodes,
        offsets,
        neighbors,
        weights,
        norm_weights,
        rev_offsets,
        rev_edges,
        index,
        depth,
        neighbors_n,
        shortfall,
        unrecoverable,
        corrupted_count,
    })
}
