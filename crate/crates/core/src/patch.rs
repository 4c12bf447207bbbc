//! Appearance filters for custom imagery: uniformity, saturation and vegetation.
//!
//! All statistics are computed on the unit scale `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RgbImage;

/// How raw channel values passed to [`keep_patch_values`] are scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueScale {
    #[default]
    Unit,
    Byte,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchFilterConfig {
    pub enabled: bool,
    pub tau_std: f64,
    pub tau_sat: f64,
    pub tau_exg: f64,
    pub value_scale: ValueScale,
}

impl Default for PatchFilterConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            tau_std: 0.08,
            tau_sat: 0.15,
            tau_exg: 0.35,
            value_scale: ValueScale::Unit,
        }
    }
}

impl PatchFilterConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = self.tau_std.is_finite() && self.tau_sat.is_finite() && self.tau_exg.is_finite();
        if !finite || self.tau_std < 0.0 || !(0.0..=1.0).contains(&self.tau_sat) {
            return Err(Error::Config(format!(
                "patch_filter thresholds out of range: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Uniformity,
    Saturation,
    Vegetation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "reason")]
pub enum PatchDecision {
    Keep,
    Reject(RejectReason),
}

/// Converts an 8-bit image to unit-scale pixels.
pub fn unit_pixels(patch: &RgbImage) -> Vec<[f64; 3]> {
    patch
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect()
}

fn nonempty(px: &[[f64; 3]]) -> Result<()> {
    if px.is_empty() {
        return Err(Error::Contract("patch statistics need a nonempty patch".into()));
    }
    Ok(())
}

/// Population standard deviation of per-pixel luma (channel mean).
pub fn intensity_std(px: &[[f64; 3]]) -> Result<f64> {
    nonempty(px)?;
    // Welford
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for (i, p) in px.iter().enumerate() {
        let v = (p[0] + p[1] + p[2]) / 3.0;
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    Ok((m2 / px.len() as f64).max(0.0).sqrt())
}

/// Mean HSV saturation, `(max - min) / max` per pixel, zero for black pixels.
pub fn mean_saturation(px: &[[f64; 3]]) -> Result<f64> {
    nonempty(px)?;
    let sum: f64 = px
        .iter()
        .map(|p| {
            let max = p[0].max(p[1]).max(p[2]);
            let min = p[0].min(p[1]).min(p[2]);
            if max <= 0.0 {
                0.0
            } else {
                (max - min) / max
            }
        })
        .sum();
    Ok(sum / px.len() as f64)
}

/// Mean Excess Green index `2G - R - B`.
pub fn mean_exg(px: &[[f64; 3]]) -> Result<f64> {
    nonempty(px)?;
    let sum: f64 = px.iter().map(|p| 2.0 * p[1] - p[0] - p[2]).sum();
    Ok(sum / px.len() as f64)
}

/// Applies the three filters in fixed order and reports the first failure.
pub fn keep_unit_pixels(px: &[[f64; 3]], cfg: &PatchFilterConfig) -> Result<PatchDecision> {
    if intensity_std(px)? < cfg.tau_std {
        return Ok(PatchDecision::Reject(RejectReason::Uniformity));
    }
    if mean_saturation(px)? < cfg.tau_sat {
        return Ok(PatchDecision::Reject(RejectReason::Saturation));
    }
    if mean_exg(px)? > cfg.tau_exg {
        return Ok(PatchDecision::Reject(RejectReason::Vegetation));
    }
    Ok(PatchDecision::Keep)
}

/// Same as [`keep_unit_pixels`] for raw values scaled per `cfg.value_scale`.
pub fn keep_patch_values(values: &[[f64; 3]], cfg: &PatchFilterConfig) -> Result<PatchDecision> {
    match cfg.value_scale {
        ValueScale::Unit => keep_unit_pixels(values, cfg),
        ValueScale::Byte => {
            let unit: Vec<[f64; 3]> = values
                .iter()
                .map(|p| [p[0] / 255.0, p[1] / 255.0, p[2] / 255.0])
                .collect();
            keep_unit_pixels(&unit, cfg)
        }
    }
}

/// Filters an 8-bit patch.
pub fn keep_patch(patch: &RgbImage, cfg: &PatchFilterConfig) -> Result<PatchDecision> {
    keep_unit_pixels(&unit_pixels(patch), cfg)
}
