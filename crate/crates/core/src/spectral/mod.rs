//! Fourier-domain analysis: per-slice spectra, annuli, Rayleigh-survival
//! corruption scoring and the wedge-gated corruption mask.

mod annulus;
mod corruption;
mod direction;
pub mod transform;

pub use annulus::{bin_polar, build_annuli, AnnulusIndex};
pub use corruption::{
    corruption_mask, corruption_matrix, survival, wedge_mask, whiten_magnitudes, CorruptionField,
    RingStats, Whitened, RAYLEIGH_MEDIAN_FACTOR,
};
pub use direction::{detect_stripe_direction, DirectionEstimate, DOMINANCE_THRESHOLD};
pub use transform::{center, mirror, SliceFft};

use ndarray::{Array3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{DestripeError, Result};
use crate::volume::Volume;

/// Largest tolerated `max|Im| / max|Re|` after an inverse transform.
pub const HERMITIAN_TOLERANCE: f64 = 1e-8;

/// Centered 2D spectra of every slice of a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVolume {
    pub coeffs: Array3<Complex64>,
    pub source_shape: (usize, usize, usize),
}

impl SpectralVolume {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.coeffs.dim()
    }

    /// `max |s(p) - conj(s(mirror p))|` relative to the largest magnitude.
    pub fn hermitian_defect(&self) -> f64 {
        let (d, h, w) = self.dim();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for k in 0..d {
            for i in 0..h {
                let mi = transform::mirror(i, h);
                for j in 0..w {
                    let mj = transform::mirror(j, w);
                    let a = self.coeffs[[k, i, j]];
                    let b = self.coeffs[[k, mi, mj]].conj();
                    worst = worst.max((a - b).norm());
                    scale = scale.max(a.norm());
                }
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }
}

pub fn forward_spectrum(v: &Volume) -> SpectralVolume {
    let (_, h, w) = v.shape();
    forward_spectrum_with(&SliceFft::new(h, w), &v.data)
}

/// Forward transform of every slice of a raw grid with a pre-planned FFT.
pub fn forward_spectrum_with(fft: &SliceFft, data: &Array3<f64>) -> SpectralVolume {
    let (d, h, w) = data.dim();
    let slices: Vec<_> = data
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|s| fft.forward_real(s))
        .collect();
    let mut coeffs = Array3::zeros((d, h, w));
    for (k, s) in slices.into_iter().enumerate() {
        coeffs.index_axis_mut(Axis(0), k).assign(&s);
    }
    SpectralVolume {
        coeffs,
        source_shape: (d, h, w),
    }
}

/// Inverse transform; fails when the spectrum was not Hermitian-symmetric.
pub fn inverse_spectrum(s: &SpectralVolume) -> Result<Volume> {
    let (_, h, w) = s.dim();
    let data = inverse_spectrum_with(&SliceFft::new(h, w), s)?;
    Volume::from_array(data)
}

pub fn inverse_spectrum_with(fft: &SliceFft, s: &SpectralVolume) -> Result<Array3<f64>> {
    let (d, h, w) = s.dim();
    let slices: Vec<_> = s
        .coeffs
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|sl| fft.inverse_complex(sl))
        .collect();
    let mut max_re = 0.0f64;
    let mut max_im = 0.0f64;
    let mut out = Array3::zeros((d, h, w));
    for (k, sl) in slices.into_iter().enumerate() {
        for ((i, j), z) in sl.indexed_iter() {
            max_re = max_re.max(z.re.abs());
            max_im = max_im.max(z.im.abs());
            out[[k, i, j]] = z.re;
        }
    }
    let ratio = if max_im == 0.0 {
        0.0
    } else {
        max_im / max_re.max(f64::MIN_POSITIVE)
    };
    if ratio >= HERMITIAN_TOLERANCE {
        return Err(DestripeError::HermitianViolation {
            ratio,
            limit: HERMITIAN_TOLERANCE,
        });
    }
    Ok(out)
}
