//! Synthetic stripe degradation and clean phantoms for evaluation.
//!
//! Stripes are multiplicative absorption bands: `S = exp(-a(t) * g(u))`
//! where `t` runs across the stripes and `u` along them. The attenuation
//! profile `a(t)` is a sum of Gaussian bumps, thin ones placed
//! quasi-periodically and thick ones at random; `g(u)` in `[0.8, 1]` is a
//! slow modulation along the stripe. All slices share the profile up to a
//! per-slice gain.

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DestripeError, Result};
use crate::spectral::{bin_polar, forward_spectrum_with, SliceFft};
use crate::volume::{StripeAxis, Volume};

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripeComponent {
    pub count: usize,
    /// Peak attenuation exponent; each bump draws from `[0.5, 1] * amplitude`.
    pub amplitude: f64,
    /// Full width at half maximum range, pixels.
    pub width_px: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StripeModel {
    /// Stripe direction in degrees (0 horizontal, 90 vertical).
    pub direction_deg: f64,
    pub thin_quasi_periodic: StripeComponent,
    pub thick_aperiodic: StripeComponent,
    /// Period of the along-stripe modulation; `None` keeps stripes constant.
    pub modulation_length_px: Option<f64>,
    /// Random displacement of thin stripes as a fraction of their spacing.
    pub position_jitter: f64,
    /// Per-slice relative gain jitter of the attenuation.
    pub slice_jitter: f64,
}

impl Default for StripeModel {
    fn default() -> Self {
        StripeModel {
            direction_deg: 90.0,
            thin_quasi_periodic: StripeComponent {
                count: 4,
                amplitude: 1.0,
                width_px: [1.0, 3.0],
            },
            thick_aperiodic: StripeComponent {
                count: 1,
                amplitude: 0.03,
                width_px: [10.0, 40.0],
            },
            modulation_length_px: Some(128.0),
            position_jitter: 0.05,
            slice_jitter: 0.1,
        }
    }
}

impl StripeModel {
    /// A model with no stripes at all.
    pub fn none() -> Self {
        StripeModel {
            thin_quasi_periodic: StripeComponent {
                count: 0,
                ..StripeModel::default().thin_quasi_periodic
            },
            thick_aperiodic: StripeComponent {
                count: 0,
                ..StripeModel::default().thick_aperiodic
            },
            ..StripeModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [
            ("thin_quasi_periodic", &self.thin_quasi_periodic),
            ("thick_aperiodic", &self.thick_aperiodic),
        ] {
            if !(c.amplitude.is_finite() && c.amplitude >= 0.0) {
                return Err(DestripeError::config(name, "amplitude must be nonnegative"));
            }
            if !(c.width_px[0] > 0.0 && c.width_px[0] <= c.width_px[1]) {
                return Err(DestripeError::config(
                    name,
                    "width_px must be an increasing positive range",
                ));
            }
        }
        if let Some(l) = self.modulation_length_px {
            if !(l.is_finite() && l > 0.0) {
                return Err(DestripeError::config(
                    "modulation_length_px",
                    "must be positive",
                ));
            }
        }
        if !(0.0..0.5).contains(&self.position_jitter) || !(0.0..1.0).contains(&self.slice_jitter) {
            return Err(DestripeError::config(
                "position_jitter",
                "jitter out of range",
            ));
        }
        if !self.direction_deg.is_finite() {
            return Err(DestripeError::config("direction_deg", "must be finite"));
        }
        Ok(())
    }

    pub fn stripe_axis(&self) -> StripeAxis {
        match self.direction_deg.rem_euclid(180.0) {
            a if a == 90.0 => StripeAxis::Vertical,
            a if a == 0.0 => StripeAxis::Horizontal,
            a => StripeAxis::Angle(a),
        }
    }
}

/// One Gaussian attenuation bump across the stripe coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

/// Everything random about a stripe field, drawn once per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct StripeRealization {
    pub direction_deg: f64,
    pub bumps: Vec<Bump>,
    pub modulation_length_px: Option<f64>,
    pub modulation_phase: f64,
    pub slice_gains: Vec<f64>,
}

struct StripeFrame {
    sin: f64,
    cos: f64,
    t_min: f64,
    extent: f64,
    periodic: bool,
}

impl StripeFrame {
    fn new(direction_deg: f64, h: usize, w: usize) -> Self {
        let a = direction_deg.rem_euclid(180.0);
        let (sin, cos) = match a {
            x if x == 0.0 => (0.0, 1.0),
            x if x == 90.0 => (1.0, 0.0),
            _ => direction_deg.to_radians().sin_cos(),
        };
        let corners = [
            (0.0, 0.0),
            (w as f64 - 1.0, 0.0),
            (0.0, h as f64 - 1.0),
            (w as f64 - 1.0, h as f64 - 1.0),
        ];
        let ts: Vec<f64> = corners.iter().map(|&(x, y)| x * sin - y * cos).collect();
        let t_min = ts.iter().copied().fold(f64::INFINITY, f64::min);
        let t_max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let periodic = a == 0.0 || a == 90.0;
        let extent = if periodic {
            if a == 90.0 {
                w as f64
            } else {
                h as f64
            }
        } else {
            t_max - t_min + 1.0
        };
        StripeFrame {
            sin,
            cos,
            t_min,
            extent,
            periodic,
        }
    }

    /// `(across, along)` coordinates of pixel `(y, x)`.
    fn coords(&self, y: usize, x: usize) -> (f64, f64) {
        let (x, y) = (x as f64, y as f64);
        (
            x * self.sin - y * self.cos - self.t_min,
            x * self.cos + y * self.sin,
        )
    }

    fn offset(&self, t: f64, center: f64) -> f64 {
        let d = t - center;
        if self.periodic {
            (d + 0.5 * self.extent).rem_euclid(self.extent) - 0.5 * self.extent
        } else {
            d
        }
    }
}

impl StripeRealization {
    pub fn sample(model: &StripeModel, shape: (usize, usize, usize), seed: u64) -> Self {
        let (d, h, w) = shape;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = StripeFrame::new(model.direction_deg, h, w);
        let mut bumps = Vec::new();
        let thin = &model.thin_quasi_periodic;
        if thin.count > 0 {
            let spacing = frame.extent / thin.count as f64;
            let offset = rng.random_range(0.0..spacing);
            for i in 0..thin.count {
                let jitter = rng.random_range(-1.0..=1.0) * model.position_jitter * spacing;
                bumps.push(draw_bump(
                    &mut rng,
                    thin,
                    offset + i as f64 * spacing + jitter,
                ));
            }
        }
        let thick = &model.thick_aperiodic;
        for _ in 0..thick.count {
            let center = rng.random_range(0.0..frame.extent);
            bumps.push(draw_bump(&mut rng, thick, center));
        }
        let modulation_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let slice_gains = (0..d)
            .map(|_| 1.0 + model.slice_jitter * rng.random_range(-1.0..=1.0))
            .collect();
        StripeRealization {
            direction_deg: model.direction_deg,
            bumps,
            modulation_length_px: model.modulation_length_px,
            modulation_phase,
            slice_gains,
        }
    }

    /// Attenuation exponent `a(t)` at an across-stripe coordinate.
    pub fn profile(&self, frame_t: f64, h: usize, w: usize) -> f64 {
        let frame = StripeFrame::new(self.direction_deg, h, w);
        self.profile_in(&frame, frame_t)
    }

    fn profile_in(&self, frame: &StripeFrame, t: f64) -> f64 {
        self.bumps
            .iter()
            .map(|b| {
                let z = frame.offset(t, b.center) / b.sigma;
                b.amplitude * (-0.5 * z * z).exp()
            })
            .sum()
    }

    fn modulation(&self, u: f64) -> f64 {
        match self.modulation_length_px {
            None => 1.0,
            Some(l) => 0.9 + 0.1 * (std::f64::consts::TAU * u / l + self.modulation_phase).cos(),
        }
    }

    pub fn render(&self, shape: (usize, usize, usize)) -> Array3<f64> {
        let (d, h, w) = shape;
        let frame = StripeFrame::new(self.direction_deg, h, w);
        let mut plane = ndarray::Array2::zeros((h, w));
        for ((y, x), v) in plane.indexed_iter_mut() {
            let (t, u) = frame.coords(y, x);
            *v = self.profile_in(&frame, t) * self.modulation(u);
        }
        Array3::from_shape_fn((d, h, w), |(k, y, x)| {
            let gain = self.slice_gains.get(k).copied().unwrap_or(1.0);
            (-gain * plane[[y, x]]).exp()
        })
    }
}

fn draw_bump(rng: &mut ChaCha8Rng, c: &StripeComponent, center: f64) -> Bump {
    let fwhm = if c.width_px[0] < c.width_px[1] {
        rng.random_range(c.width_px[0]..c.width_px[1])
    } else {
        c.width_px[0]
    };
    let amplitude = c.amplitude * rng.random_range(0.5..=1.0);
    Bump {
        center,
        sigma: fwhm / FWHM_PER_SIGMA,
        amplitude,
    }
}

/// Multiplicative stripe field `S` with values in `(0, 1]`.
pub fn generate_stripe_field(
    shape: (usize, usize, usize),
    model: &StripeModel,
    seed: u64,
) -> Result<Volume> {
    model.validate()?;
    let s = StripeRealization::sample(model, shape, seed).render(shape);
    let mut v = Volume::from_array(s)?;
    v.stripe_axis = model.stripe_axis();
    Ok(v)
}

/// `Y = S ⊙ X`.
pub fn degrade(x: &Volume, s: &Volume) -> Result<Volume> {
    if x.shape() != s.shape() {
        return Err(DestripeError::Invalid(format!(
            "shape mismatch: clean {:?} vs stripe field {:?}",
            x.shape(),
            s.shape()
        )));
    }
    let mut y = x.with_data(&x.data * &s.data);
    y.stripe_axis = s.stripe_axis;
    Ok(y)
}

/// Background level of the phantom after normalization.
pub const PHANTOM_BACKGROUND: f64 = 0.2;
/// Relative amplitude of the fine isotropic texture under the blobs.
pub const PHANTOM_TEXTURE: f64 = 0.005;
const PHANTOM_ATTEMPTS: u64 = 16;

/// Smooth isotropic phantom: 20 to 60 Gaussian blobs over a dim, faintly
/// textured background, scaled into `[0, 1]`. Blobs wrap around the slice
/// borders so the in-plane spectrum has no edge cross.
pub fn make_phantom(shape: (usize, usize, usize), seed: u64) -> Result<Volume> {
    let (d, h, w) = shape;
    if h < 8 || w < 8 || d == 0 {
        return Err(DestripeError::Invalid(format!(
            "phantom shape {shape:?} too small"
        )));
    }
    if h < 48 || w < 48 {
        // Below this the steep radial falloff inside each annulus biases the
        // orientation histogram and the isotropy check cannot be met.
        log::warn!("phantom slices {h}x{w} are small; isotropy check may fail");
    }
    for attempt in 0..PHANTOM_ATTEMPTS {
        let data = phantom_candidate(shape, seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)));
        let flat = angular_flatness(&data);
        log::trace!("phantom attempt {attempt}: flatness {flat:.3}");
        if flat <= 2.0 {
            return Volume::from_array(data);
        }
        log::debug!("phantom attempt {attempt} failed the isotropy check ({d}x{h}x{w})");
    }
    Err(DestripeError::Invalid(format!(
        "could not draw an isotropic phantom of shape {shape:?} in {PHANTOM_ATTEMPTS} attempts"
    )))
}

fn phantom_candidate(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let (d, h, w) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_blobs = rng.random_range(20..=60);
    let blobs: Vec<[f64; 5]> = (0..n_blobs)
        .map(|_| {
            [
                rng.random_range(0.0..d as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(3.0..8.0),
                rng.random_range(0.3..1.0),
            ]
        })
        .collect();
    let wrap = |delta: f64, n: usize| {
        let n = n as f64;
        (delta + 0.5 * n).rem_euclid(n) - 0.5 * n
    };
    let mut v = Array3::from_shape_fn(shape, |(z, y, x)| {
        blobs
            .iter()
            .map(|&[cz, cy, cx, sigma, amp]| {
                let dz = z as f64 - cz;
                let dy = wrap(y as f64 - cy, h);
                let dx = wrap(x as f64 - cx, w);
                amp * (-(dx * dx + dy * dy + dz * dz) / (2.0 * sigma * sigma)).exp()
            })
            .sum::<f64>()
    });
    for x in v.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *x += PHANTOM_TEXTURE * n;
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    v.mapv_inplace(|x| PHANTOM_BACKGROUND + (1.0 - PHANTOM_BACKGROUND) * (x - lo) / span);
    v
}

const MIN_FLATNESS_SAMPLES: usize = 400;

/// Ratio between the largest and smallest mean ring-normalized spectral
/// energy over orientation bins, for radii in `(3, min(h, w) / 2]`. Bins are
/// 1° wide when degrees hold 400 samples on average, wider otherwise.
pub fn angular_flatness(data: &Array3<f64>) -> f64 {
    let (_, h, w) = data.dim();
    let spec = forward_spectrum_with(&SliceFft::new(h, w), data);
    let r_max = (h.min(w) / 2) as f64;
    let rings = r_max as usize + 1;
    let mut sum = [0.0f64; 180];
    let mut cnt = [0usize; 180];
    for slice in spec.coeffs.axis_iter(Axis(0)) {
        let mut ring_energy = vec![0.0f64; rings];
        let mut ring_count = vec![0usize; rings];
        for ((i, j), z) in slice.indexed_iter() {
            let (rho, _) = bin_polar(i, j, h, w);
            if rho > 3.0 && rho <= r_max {
                ring_energy[rho as usize] += z.norm_sqr();
                ring_count[rho as usize] += 1;
            }
        }
        for ((i, j), z) in slice.indexed_iter() {
            let (rho, theta) = bin_polar(i, j, h, w);
            if rho > 3.0 && rho <= r_max {
                let r = rho as usize;
                let mean = ring_energy[r] / ring_count[r] as f64;
                if mean > 0.0 {
                    let b = (theta.round() as usize) % 180;
                    sum[b] += z.norm_sqr() / mean;
                    cnt[b] += 1;
                }
            }
        }
    }
    // Small slices have few samples per degree; merge neighboring degrees
    // until sampling noise alone cannot break the factor-of-two bound.
    let mean_count = (cnt.iter().sum::<usize>() / 180).max(1);
    let group = [
        1usize, 2, 3, 4, 5, 6, 9, 10, 12, 15, 18, 20, 30, 36, 45, 60, 90,
    ]
    .into_iter()
    .find(|g| g * mean_count >= MIN_FLATNESS_SAMPLES)
    .unwrap_or(90);
    let means: Vec<f64> = (0..180 / group)
        .map(|g| {
            let r = g * group..(g + 1) * group;
            sum[r.clone()].iter().sum::<f64>() / cnt[r].iter().sum::<usize>() as f64
        })
        .collect();
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_components_give_unit_field() {
        let s = generate_stripe_field((2, 16, 16), &StripeModel::none(), 1).unwrap();
        assert!(s.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_bump_minimum_is_exp_minus_amplitude() {
        let a = 0.7;
        let r = StripeRealization {
            direction_deg: 90.0,
            bumps: vec![Bump {
                center: 5.0,
                sigma: 0.8,
                amplitude: a,
            }],
            modulation_length_px: None,
            modulation_phase: 0.0,
            slice_gains: vec![1.0; 2],
        };
        let s = r.render((2, 16, 16));
        let min = s.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((min - (-a).exp()).abs() < 1e-15);
        for ((_, _, x), &v) in s.indexed_iter() {
            if x == 5 {
                assert_eq!(v, min);
            }
        }
    }

    #[test]
    fn field_in_unit_interval_and_constant_along_stripes() {
        let model = StripeModel {
            modulation_length_px: None,
            ..StripeModel::default()
        };
        let s = generate_stripe_field((3, 32, 32), &model, 5).unwrap();
        assert!(s.data.iter().all(|&v| v > 0.0 && v <= 1.0));
        for k in 0..3 {
            for x in 0..32 {
                let col = s.data[[k, 0, x]];
                assert!((0..32).all(|y| s.data[[k, y, x]] == col));
            }
        }
        let horiz = StripeModel {
            direction_deg: 0.0,
            modulation_length_px: None,
            ..StripeModel::default()
        };
        let s = generate_stripe_field((1, 32, 32), &horiz, 5).unwrap();
        for y in 0..32 {
            assert!((0..32).all(|x| s.data[[0, y, x]] == s.data[[0, y, 0]]));
        }
    }

    #[test]
    fn stripe_field_is_seed_deterministic() {
        let m = StripeModel::default();
        let a = generate_stripe_field((2, 16, 16), &m, 7).unwrap();
        let b = generate_stripe_field((2, 16, 16), &m, 7).unwrap();
        let c = generate_stripe_field((2, 16, 16), &m, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn degrade_is_elementwise() {
        let x = Volume::from_array(Array3::from_shape_fn((1, 8, 8), |(_, i, j)| {
            (i * 8 + j) as f64
        }))
        .unwrap();
        let s = generate_stripe_field((1, 8, 8), &StripeModel::default(), 3).unwrap();
        let y = degrade(&x, &s).unwrap();
        assert_eq!(y.data[[0, 3, 4]], x.data[[0, 3, 4]] * s.data[[0, 3, 4]]);
        let ones = Volume::from_array(Array3::ones((1, 8, 8))).unwrap();
        assert_eq!(degrade(&x, &ones).unwrap().data, x.data);
        let zeros = Volume::from_array(Array3::zeros((1, 8, 8))).unwrap();
        assert!(degrade(&zeros, &s).unwrap().data.iter().all(|&v| v == 0.0));
        let other = Volume::from_array(Array3::ones((1, 8, 9))).unwrap();
        assert!(degrade(&x, &other).is_err());
    }

    #[test]
    fn phantom_range_determinism_isotropy() {
        let shape = (4, 64, 64);
        let a = make_phantom(shape, 11).unwrap();
        let b = make_phantom(shape, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(angular_flatness(&a.data) <= 2.0);
    }
}
