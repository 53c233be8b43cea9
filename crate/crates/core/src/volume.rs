//! Spatial-domain volume type.
//!
//! Axis order is always `(z, y, x)`: `N_d` slices of `N_h` rows by `N_v`
//! columns. Stripes run within a slice; their direction is measured in
//! degrees from the x axis, so horizontal stripes are 0° and vertical
//! stripes (constant along y) are 90°.

use std::fmt;

use ndarray::Array3;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{DestripeError, Result};

pub const MIN_SLICE_EXTENT: usize = 8;

/// In-slice direction along which stripes run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StripeAxis {
    Horizontal,
    #[default]
    Vertical,
    /// Degrees from the x axis, folded into `[0, 180)`.
    Angle(f64),
}

impl StripeAxis {
    /// Stripe direction in degrees within `[0, 180)`.
    pub fn degrees(self) -> f64 {
        match self {
            StripeAxis::Horizontal => 0.0,
            StripeAxis::Vertical => 90.0,
            StripeAxis::Angle(a) => a.rem_euclid(180.0),
        }
    }

    /// Angle of the frequency axis on which stripe energy concentrates.
    pub fn spectral_degrees(self) -> f64 {
        (self.degrees() + 90.0).rem_euclid(180.0)
    }
}

impl fmt::Display for StripeAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StripeAxis::Horizontal => write!(f, "horizontal"),
            StripeAxis::Vertical => write!(f, "vertical"),
            StripeAxis::Angle(a) => write!(f, "{a}"),
        }
    }
}

impl std::str::FromStr for StripeAxis {
    type Err = DestripeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "horizontal" => Ok(StripeAxis::Horizontal),
            "vertical" => Ok(StripeAxis::Vertical),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|a| a.is_finite())
                .map(StripeAxis::Angle)
                .ok_or_else(|| DestripeError::config("stripe_axis", format!("cannot parse `{s}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StripeAxisRepr {
    Named(String),
    Degrees(f64),
}

impl Serialize for StripeAxis {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StripeAxis::Angle(a) => StripeAxisRepr::Degrees(*a),
            named => StripeAxisRepr::Named(named.to_string()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StripeAxis {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match StripeAxisRepr::deserialize(deserializer)? {
            StripeAxisRepr::Named(s) => s.parse().map_err(serde::de::Error::custom),
            StripeAxisRepr::Degrees(a) => Ok(StripeAxis::Angle(a)),
        }
    }
}

/// Physical voxel size in micrometers, `(z, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpacing(pub [f64; 3]);

impl Default for VoxelSpacing {
    fn default() -> Self {
        VoxelSpacing([10.0, 1.06, 1.06])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub data: Array3<f64>,
    pub voxel_spacing: VoxelSpacing,
    pub stripe_axis: StripeAxis,
}

impl Volume {
    /// Wraps a grid after checking the shape, spacing and finiteness invariants.
    pub fn new(
        data: Array3<f64>,
        voxel_spacing: VoxelSpacing,
        stripe_axis: StripeAxis,
    ) -> Result<Self> {
        let v = Volume {
            data,
            voxel_spacing,
            stripe_axis,
        };
        v.validate()?;
        Ok(v)
    }

    /// Volume with default metadata; used heavily by tests and the simulator.
    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        Volume::new(data, VoxelSpacing::default(), StripeAxis::default())
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, w) = self.data.dim();
        if d < 1 || h < MIN_SLICE_EXTENT || w < MIN_SLICE_EXTENT {
            return Err(DestripeError::Invalid(format!(
                "volume shape ({d}, {h}, {w}) too small: need N_d >= 1, N_h >= 8, N_v >= 8"
            )));
        }
        if self
            .voxel_spacing
            .0
            .iter()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(DestripeError::Invalid(format!(
                "voxel spacing {:?} must be strictly positive",
                self.voxel_spacing.0
            )));
        }
        let count = self.data.iter().filter(|v| !v.is_finite()).count();
        if count > 0 {
            return Err(DestripeError::NonFinite { count });
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Same metadata, new voxel values.
    pub fn with_data(&self, data: Array3<f64>) -> Volume {
        Volume {
            data,
            voxel_spacing: self.voxel_spacing,
            stripe_axis: self.stripe_axis,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_and_nonfinite() {
        assert!(Volume::from_array(Array3::zeros((1, 7, 8))).is_err());
        let mut a = Array3::zeros((2, 8, 8));
        a[[0, 1, 1]] = f64::NAN;
        a[[1, 2, 2]] = f64::INFINITY;
        match Volume::from_array(a) {
            Err(DestripeError::NonFinite { count }) => assert_eq!(count, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stripe_axis_serde() {
        let v: StripeAxis = serde_json::from_str("\"vertical\"").unwrap();
        assert_eq!(v, StripeAxis::Vertical);
        let a: StripeAxis = serde_json::from_str("30.5").unwrap();
        assert_eq!(a, StripeAxis::Angle(30.5));
        assert_eq!(
            serde_json::to_string(&StripeAxis::Horizontal).unwrap(),
            "\"horizontal\""
        );
        assert_eq!(StripeAxis::Vertical.spectral_degrees(), 0.0);
        assert_eq!(StripeAxis::Horizontal.spectral_degrees(), 90.0);
    }
}
