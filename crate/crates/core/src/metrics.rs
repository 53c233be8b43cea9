//! Image quality scores against a reference volume.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DestripeError, Result};
use crate::volume::Volume;

/// PSNR in dB, or `Identical` when the mean squared error is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Psnr {
    Db(f64),
    #[serde(with = "identical")]
    Identical,
}

mod identical {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("identical")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "identical" {
            Ok(())
        } else {
            Err(serde::de::Error::custom("expected \"identical\""))
        }
    }
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Identical => f64::INFINITY,
        }
    }
}

fn check_shapes(a: &Volume, b: &Volume) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(DestripeError::Invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn mse(a: &Volume, b: &Volume) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.data.len() as f64;
    Ok(a.data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// `10 log10(peak² / mse)`.
pub fn psnr(estimate: &Volume, reference: &Volume, peak: f64) -> Result<Psnr> {
    let m = mse(estimate, reference)?;
    if m == 0.0 {
        return Ok(Psnr::Identical);
    }
    Ok(Psnr::Db(10.0 * (peak * peak / m).log10()))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> Array1<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g = Array1::from_shape_fn(SSIM_WINDOW, |i| {
        let x = i as f64 - c;
        (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let total = g.sum();
    g / total
}

/// Separable filter over the valid region.
fn filter_valid(img: ArrayView2<f64>, g: &Array1<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = g.len();
    let rows = Array2::from_shape_fn((h, w + 1 - n), |(i, j)| {
        (0..n).map(|t| g[t] * img[[i, j + t]]).sum::<f64>()
    });
    Array2::from_shape_fn((h + 1 - n, w + 1 - n), |(i, j)| {
        (0..n).map(|t| g[t] * rows[[i + t, j]]).sum::<f64>()
    })
}

fn ssim_slice(a: ArrayView2<f64>, b: ArrayView2<f64>, peak: f64, g: &Array1<f64>) -> f64 {
    let c1 = (K1 * peak).powi(2);
    let c2 = (K2 * peak).powi(2);
    let mu_a = filter_valid(a, g);
    let mu_b = filter_valid(b, g);
    let aa = filter_valid((&a * &a).view(), g);
    let bb = filter_valid((&b * &b).view(), g);
    let ab = filter_valid((&a * &b).view(), g);
    let mut total = 0.0;
    for (idx, &ma) in mu_a.indexed_iter() {
        let mb = mu_b[idx];
        let va = aa[idx] - ma * ma;
        let vb = bb[idx] - mb * mb;
        let cov = ab[idx] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

/// Mean SSIM per slice, Gaussian 11x11 window (sigma 1.5) over the valid
/// region.
pub fn ssim_per_slice(estimate: &Volume, reference: &Volume, peak: f64) -> Result<Vec<f64>> {
    check_shapes(estimate, reference)?;
    let (_, h, w) = estimate.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(DestripeError::Invalid(format!(
            "SSIM needs slices of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let g = gaussian_window();
    Ok(estimate
        .data
        .axis_iter(Axis(0))
        .zip(reference.data.axis_iter(Axis(0)))
        .map(|(a, b)| ssim_slice(a, b, peak, &g))
        .collect())
}

/// SSIM averaged over slices.
pub fn ssim(estimate: &Volume, reference: &Volume, peak: f64) -> Result<f64> {
    let per = ssim_per_slice(estimate, reference, peak)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Crop `margin` pixels from each in-plane border.
pub fn crop_border(v: &Volume, margin: usize) -> Result<Volume> {
    let (_, h, w) = v.shape();
    if 2 * margin + 8 > h || 2 * margin + 8 > w {
        return Err(DestripeError::Invalid(format!(
            "border {margin} too large for {h}x{w}"
        )));
    }
    let data = v
        .data
        .slice(s![.., margin..h - margin, margin..w - margin])
        .to_owned();
    Ok(v.with_data(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vol(d: Array3<f64>) -> Volume {
        Volume::from_array(d).unwrap()
    }

    #[test]
    fn psnr_identical_and_constant_offset() {
        let a = vol(Array3::from_elem((2, 16, 16), 0.5));
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), Psnr::Identical);
        let b = vol(Array3::from_elem((2, 16, 16), 0.6));
        let p = psnr(&b, &a, 1.0).unwrap().db();
        assert!((p - 20.0).abs() < 1e-9, "{p}");
        assert_eq!(
            serde_json::to_string(&Psnr::Identical).unwrap(),
            "\"identical\""
        );
        assert_eq!(
            serde_json::from_str::<Psnr>("\"identical\"").unwrap(),
            Psnr::Identical
        );
        assert_eq!(
            serde_json::from_str::<Psnr>("12.5").unwrap(),
            Psnr::Db(12.5)
        );
    }

    #[test]
    fn ssim_self_is_one_and_inverse_is_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = vol(Array3::from_shape_fn((2, 24, 24), |_| {
            if rng.random_bool(0.5) {
                1.0
            } else {
                0.0
            }
        }));
        let s = ssim(&a, &a, 1.0).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let inv = a.with_data(a.data.mapv(|v| 1.0 - v));
        assert!(ssim(&inv, &a, 1.0).unwrap() < 0.1);
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = vol(Array3::from_shape_fn((1, 16, 16), |_| rng.random::<f64>()));
        let b = vol(Array3::from_shape_fn((1, 16, 16), |_| rng.random::<f64>()));
        let x = ssim(&a, &b, 1.0).unwrap();
        let y = ssim(&b, &a, 1.0).unwrap();
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn psnr_falls_as_noise_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let clean = vol(Array3::from_shape_fn((2, 16, 16), |_| rng.random::<f64>()));
        let noise = Array3::from_shape_fn((2, 16, 16), |_| rng.random::<f64>() - 0.5);
        let ladder: Vec<f64> = [0.01, 0.02, 0.05, 0.1, 0.2]
            .iter()
            .map(|&a| {
                psnr(&clean.with_data(&clean.data + &(&noise * a)), &clean, 1.0)
                    .unwrap()
                    .db()
            })
            .collect();
        assert!(ladder.windows(2).all(|w| w[1] < w[0]), "{ladder:?}");
    }

    proptest::proptest! {
        #[test]
        fn ssim_stays_in_range(seed in 0u64..1000, scale in 0.01f64..10.0, offset in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = vol(Array3::from_shape_fn((1, 12, 12), |_| rng.random::<f64>()));
            let b = vol(Array3::from_shape_fn((1, 12, 12), |_| scale * rng.random::<f64>() + offset));
            let s = ssim(&a, &b, 1.0).unwrap();
            proptest::prop_assert!((-1.0..=1.0).contains(&s), "{}", s);
        }
    }

    #[test]
    fn shape_checks() {
        let a = vol(Array3::zeros((1, 16, 16)));
        let b = vol(Array3::zeros((1, 16, 12)));
        assert!(psnr(&a, &b, 1.0).is_err());
        let small = vol(Array3::zeros((1, 8, 8)));
        assert!(ssim(&small, &small, 1.0).is_err());
        assert_eq!(crop_border(&a, 2).unwrap().shape(), (1, 12, 12));
    }
}
