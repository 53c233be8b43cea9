use serde::Serialize;

use super::annulus::{bin_polar, AnnulusIndex};
use super::corruption::whiten_magnitudes;
use super::SpectralVolume;

/// Confidence (a z-score) above which a stripe direction is considered
/// dominant. Isotropic noise peaks around 3 to 4 over 180 bins.
pub const DOMINANCE_THRESHOLD: f64 = 8.0;

/// Mean and variance of the squared whitened magnitude under the Rayleigh
/// null with a correctly estimated scale.
const NULL_MEAN: f64 = 2.0;
const NULL_STD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectionEstimate {
    /// Stripe direction in degrees, 0 = horizontal, 90 = vertical.
    pub stripe_degrees: f64,
    /// Orientation of the frequency axis carrying the stripe energy.
    pub spectral_degrees: f64,
    /// Standardized excess energy of the winning angular bin.
    pub confidence: f64,
    pub dominant: bool,
}

/// Finds the 1°-wide spectral orientation carrying the most excess whitened
/// energy outside the DC guard, pooled over slices.
pub fn detect_stripe_direction(
    s: &SpectralVolume,
    a: &AnnulusIndex,
    dc_guard_radius_px: usize,
) -> DirectionEstimate {
    let (d, h, w) = s.dim();
    let white = whiten_magnitudes(s, a);
    let mut energy = [0.0f64; 180];
    let mut count = [0usize; 180];
    for i in 0..h {
        for j in 0..w {
            let (rho, theta) = bin_polar(i, j, h, w);
            if rho <= dc_guard_radius_px as f64 {
                continue;
            }
            let bin = (theta.round() as usize) % 180;
            for k in 0..d {
                let x = white.values[[k, i, j]];
                energy[bin] += x * x;
                count[bin] += 1;
            }
        }
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for b in 0..180 {
        if count[b] == 0 {
            continue;
        }
        let n = count[b] as f64;
        let z = (energy[b] / n - NULL_MEAN) * n.sqrt() / NULL_STD;
        if z > best.1 {
            best = (b, z);
        }
    }
    let spectral = best.0 as f64;
    DirectionEstimate {
        stripe_degrees: (spectral + 90.0).rem_euclid(180.0),
        spectral_degrees: spectral,
        confidence: best.1,
        dominant: best.1 >= DOMINANCE_THRESHOLD,
    }
}
