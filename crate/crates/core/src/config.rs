//! Run configuration and its JSON file format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DestripeError, Result};

/// Every tunable of the pipeline. Absent keys in a config file take the
/// values of [`RunConfig::default`]; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Radial width of one annulus, in frequency bins.
    pub annulus_width_px: f64,
    /// Survival-probability threshold below which a bin counts as corrupted.
    pub mask_threshold: f64,
    pub wedge_half_angle_deg: f64,
    /// Bins with radius at or below this are never masked.
    pub dc_guard_radius_px: usize,
    /// Neighbors sampled per graph node.
    pub neighbors_n: usize,
    /// Number of FGNN layers.
    pub layers_l: usize,
    pub hidden_dims: Vec<usize>,
    /// Number of unrolled split-Bregman iterations.
    pub unroll_k: usize,
    pub loss_beta: f64,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub lambda_z: f64,
    pub train_epochs: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    /// Share one network across all unrolled iterations.
    pub tie_weights: bool,
    /// Redraw graph neighbor sets at every training epoch.
    pub resample_neighbors: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            annulus_width_px: 1.0,
            mask_threshold: 1e-3,
            wedge_half_angle_deg: 10.0,
            dc_guard_radius_px: 3,
            neighbors_n: 32,
            layers_l: 2,
            hidden_dims: vec![16, 16],
            unroll_k: 3,
            loss_beta: 1.0,
            lambda_x: 1.0,
            lambda_y: 1.0,
            lambda_z: 0.1,
            train_epochs: 300,
            learning_rate: 1e-3,
            rng_seed: 42,
            tie_weights: false,
            resample_neighbors: false,
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(DestripeError::config(
            key,
            format!("{v} must be a positive real"),
        ))
    }
}

fn positive_int(key: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(DestripeError::config(key, "must be a positive integer"))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        positive("annulus_width_px", self.annulus_width_px)?;
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(DestripeError::config(
                "mask_threshold",
                format!("{} is outside (0, 1)", self.mask_threshold),
            ));
        }
        if !(self.wedge_half_angle_deg > 0.0 && self.wedge_half_angle_deg < 90.0) {
            return Err(DestripeError::config(
                "wedge_half_angle_deg",
                format!("{} is outside (0, 90)", self.wedge_half_angle_deg),
            ));
        }
        positive_int("neighbors_n", self.neighbors_n)?;
        positive_int("layers_l", self.layers_l)?;
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(DestripeError::config(
                "hidden_dims",
                "must be a non-empty list of positive integers",
            ));
        }
        positive_int("unroll_k", self.unroll_k)?;
        if !(self.loss_beta.is_finite() && self.loss_beta >= 0.0) {
            return Err(DestripeError::config(
                "loss_beta",
                "must be a nonnegative real",
            ));
        }
        positive("lambda_x", self.lambda_x)?;
        positive("lambda_y", self.lambda_y)?;
        positive("lambda_z", self.lambda_z)?;
        positive_int("train_epochs", self.train_epochs)?;
        positive("learning_rate", self.learning_rate)?;
        Ok(())
    }

    /// Width of hidden FGNN layer `l` (0-based). Entries beyond `layers_l - 1`
    /// are ignored; a short list repeats its last entry.
    pub fn hidden_width(&self, l: usize) -> usize {
        let last = self.hidden_dims.len() - 1;
        self.hidden_dims[l.min(last)]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            // serde reports unknown keys as "unknown field `x`"
            let msg = e.to_string();
            let key = msg.split('`').nth(1).unwrap_or("<config>").to_string();
            DestripeError::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| DestripeError::io(path, e))?;
    RunConfig::from_json(&text)
}

pub fn save_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    cfg.validate()?;
    fs::write(path, cfg.to_json()).map_err(|e| DestripeError::io(path, e))
}
