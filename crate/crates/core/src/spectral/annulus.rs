use ndarray::Array2;

use super::transform::center;

/// Radius (in bins) and orientation (degrees in `[0, 180)`) of a centered
/// frequency bin. Orientation 0 is the horizontal frequency axis.
#[inline]
pub fn bin_polar(i: usize, j: usize, h: usize, w: usize) -> (f64, f64) {
    let di = i as f64 - center(h) as f64;
    let dj = j as f64 - center(w) as f64;
    let rho = di.hypot(dj);
    let theta = di.atan2(dj).to_degrees().rem_euclid(180.0);
    (rho, theta)
}

/// Partition of a slice's frequency bins into concentric annuli.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnulusIndex {
    pub width: f64,
    pub ring_id: Array2<usize>,
    /// Bins of each ring in row-major order.
    pub ring_members: Vec<Vec<(usize, usize)>>,
}

impl AnnulusIndex {
    pub fn dims(&self) -> (usize, usize) {
        self.ring_id.dim()
    }

    pub fn ring_count(&self) -> usize {
        self.ring_members.len()
    }

    pub fn ring_of(&self, i: usize, j: usize) -> usize {
        self.ring_id[[i, j]]
    }
}

pub fn build_annuli(n_h: usize, n_v: usize, annulus_width_px: f64) -> AnnulusIndex {
    let ring_id = Array2::from_shape_fn((n_h, n_v), |(i, j)| {
        let (rho, _) = bin_polar(i, j, n_h, n_v);
        (rho / annulus_width_px).floor() as usize
    });
    let rings = ring_id.iter().copied().max().unwrap_or(0) + 1;
    let mut ring_members = vec![Vec::new(); rings];
    for ((i, j), &r) in ring_id.indexed_iter() {
        ring_members[r].push((i, j));
    }
    AnnulusIndex {
        width: annulus_width_px,
        ring_id,
        ring_members,
    }
}
