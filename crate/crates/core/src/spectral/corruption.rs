use log::warn;
use ndarray::{Array2, Array3};
use serde::Serialize;

use super::annulus::{bin_polar, build_annuli, AnnulusIndex};
use super::transform::mirror;
use super::SpectralVolume;
use crate::config::RunConfig;
use crate::volume::StripeAxis;

/// Median of a Rayleigh(σ) variable divided by σ, i.e. `sqrt(ln 4)`.
pub const RAYLEIGH_MEDIAN_FACTOR: f64 = 1.177_410_022_515_474_6;

/// Rayleigh survival function `exp(-x^2 / 2)`.
#[inline]
pub fn survival(x: f64) -> f64 {
    (-0.5 * x * x).exp()
}

/// Annulus-whitened spectral magnitudes.
#[derive(Debug, Clone)]
pub struct Whitened {
    pub values: Array3<f64>,
    /// Robust Rayleigh scale per `(slice, ring)`.
    pub scales: Array2<f64>,
    /// `(slice, ring)` pairs whose scale estimate was zero.
    pub zero_rings: Vec<(usize, usize)>,
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mid = n / 2;
    let (_, &mut upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Divides every magnitude by its annulus' robust Rayleigh scale
/// `median(|c|) / sqrt(ln 4)`, slice by slice.
pub fn whiten_magnitudes(s: &SpectralVolume, a: &AnnulusIndex) -> Whitened {
    let (d, h, w) = s.dim();
    debug_assert_eq!(a.dims(), (h, w));
    let rings = a.ring_count();
    let mut values = Array3::zeros((d, h, w));
    let mut scales = Array2::zeros((d, rings));
    let mut zero_rings = Vec::new();
    let mut buf = Vec::new();
    for k in 0..d {
        for (r, members) in a.ring_members.iter().enumerate() {
            buf.clear();
            buf.extend(members.iter().map(|&(i, j)| s.coeffs[[k, i, j]].norm()));
            let sigma = median(&mut buf) / RAYLEIGH_MEDIAN_FACTOR;
            scales[[k, r]] = sigma;
            if sigma > 0.0 {
                for &(i, j) in members {
                    values[[k, i, j]] = s.coeffs[[k, i, j]].norm() / sigma;
                }
            } else {
                zero_rings.push((k, r));
            }
        }
    }
    Whitened {
        values,
        scales,
        zero_rings,
    }
}

/// Probability that each coefficient is uncorrupted under the Rayleigh model.
pub fn corruption_matrix(s: &SpectralVolume, a: &AnnulusIndex) -> Array3<f64> {
    whiten_magnitudes(s, a).values.mapv(survival)
}

/// Bins whose orientation lies within `half_angle_deg` of the frequency axis
/// perpendicular to the stripes.
pub fn wedge_mask(
    h: usize,
    w: usize,
    stripe_axis: StripeAxis,
    half_angle_deg: f64,
) -> Array2<bool> {
    let axis = stripe_axis.spectral_degrees();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (_, theta) = bin_polar(i, j, h, w);
        let d = (theta - axis).rem_euclid(180.0);
        d.min(180.0 - d) <= half_angle_deg
    })
}

/// Survival scores, the binary corruption mask and the wedge it was gated by.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionField {
    pub w: Array3<f64>,
    pub mask: Array3<bool>,
    pub wedge: Array2<bool>,
    pub warnings: Vec<String>,
}

impl CorruptionField {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn mask_u8(&self) -> Array3<u8> {
        self.mask.mapv(u8::from)
    }

    /// A field with nothing masked, for running the pipeline as an identity.
    pub fn empty(shape: (usize, usize, usize)) -> Self {
        CorruptionField {
            w: Array3::ones(shape),
            mask: Array3::from_elem(shape, false),
            wedge: Array2::from_elem((shape.1, shape.2), false),
            warnings: Vec::new(),
        }
    }
}

/// Thresholds `W` inside the wedge and outside the DC guard, then closes the
/// mask under the Hermitian mirror so that masked recovery stays real.
pub fn corruption_mask(
    w: &Array3<f64>,
    cfg: &RunConfig,
    stripe_axis: StripeAxis,
) -> CorruptionField {
    let (d, h, wd) = w.dim();
    let wedge = wedge_mask(h, wd, stripe_axis, cfg.wedge_half_angle_deg);
    let guard = cfg.dc_guard_radius_px as f64;
    let mut mask = Array3::from_shape_fn((d, h, wd), |(k, i, j)| {
        let (rho, _) = bin_polar(i, j, h, wd);
        w[[k, i, j]] < cfg.mask_threshold && wedge[[i, j]] && rho > guard
    });
    let mut w_sym = w.clone();
    for k in 0..d {
        for i in 0..h {
            let mi = mirror(i, h);
            for j in 0..wd {
                let mj = mirror(j, wd);
                if mask[[k, mi, mj]] {
                    mask[[k, i, j]] = true;
                }
                w_sym[[k, i, j]] = w[[k, i, j]].min(w[[k, mi, mj]]);
            }
        }
    }
    let annuli = build_annuli(h, wd, cfg.annulus_width_px);
    let mut warnings = Vec::new();
    for k in 0..d {
        for (r, members) in annuli.ring_members.iter().enumerate() {
            let masked = members.iter().filter(|&&(i, j)| mask[[k, i, j]]).count();
            if masked * 2 > members.len() {
                let msg = format!(
                    "slice {k}, ring {r}: {masked} of {} bins masked; recovery is ill-posed",
                    members.len()
                );
                warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    CorruptionField {
        w: w_sym,
        mask,
        wedge,
        warnings,
    }
}

/// Summary of one annulus accumulated over slices, for detection reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingStats {
    pub ring: usize,
    pub members: usize,
    pub masked: usize,
    pub mean_scale: f64,
}

impl RingStats {
    pub fn collect(
        field: &CorruptionField,
        a: &AnnulusIndex,
        whitened: &Whitened,
    ) -> Vec<RingStats> {
        let d = field.mask.dim().0;
        a.ring_members
            .iter()
            .enumerate()
            .map(|(r, members)| {
                let masked = (0..d)
                    .map(|k| {
                        members
                            .iter()
                            .filter(|&&(i, j)| field.mask[[k, i, j]])
                            .count()
                    })
                    .sum();
                let mean_scale = (0..d).map(|k| whitened.scales[[k, r]]).sum::<f64>() / d as f64;
                RingStats {
                    ring: r,
                    members: members.len(),
                    masked,
                    mean_scale,
                }
            })
            .collect()
    }
}
