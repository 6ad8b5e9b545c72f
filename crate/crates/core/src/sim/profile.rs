use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SimError;

const DEFAULT_SHAPES: &str = include_str!("../../data/load_shapes.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    #[default]
    Summer,
    Winter,
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Season::Summer => "summer",
            Season::Winter => "winter",
        })
    }
}

impl FromStr for Season {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "summer" => Ok(Season::Summer),
            "winter" => Ok(Season::Winter),
            other => Err(SimError::InvalidConfig(format!("unknown season {other:?}"))),
        }
    }
}

/// Hourly demand model: per-season 24-hour multiplier templates, relative
/// Gaussian noise on every node-hour, and a feeder-wide demand scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfileModel {
    pub base_shape: BTreeMap<Season, [f64; 24]>,
    /// Relative std-dev of the multiplicative demand noise.
    pub noise_sigma: f64,
    /// Multiplier applied to every node's mean demand.
    pub customer_scale: f64,
    /// Additive std-dev of voltage measurement noise, p.u.
    pub voltage_noise_pu: f64,
}

impl Default for LoadProfileModel {
    fn default() -> Self {
        let base_shape: BTreeMap<Season, [f64; 24]> =
            serde_json::from_str(DEFAULT_SHAPES).expect("bundled load shapes are valid");
        LoadProfileModel {
            base_shape,
            noise_sigma: 0.05,
            customer_scale: 1.0,
            voltage_noise_pu: 0.0,
        }
    }
}

impl LoadProfileModel {
    pub fn validate(&self) -> Result<(), SimError> {
        for (season, shape) in &self.base_shape {
            if shape.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
                return Err(SimError::InvalidConfig(format!(
                    "{season} shape multipliers must be positive"
                )));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.voltage_noise_pu >= 0.0 && self.customer_scale > 0.0) {
            return Err(SimError::InvalidConfig(
                "noise levels must be non-negative and customer_scale positive".into(),
            ));
        }
        Ok(())
    }

    pub fn multiplier(&self, season: Season, hour_of_day: usize) -> Result<f64, SimError> {
        self.base_shape
            .get(&season)
            .map(|s| s[hour_of_day % 24])
            .ok_or_else(|| SimError::InvalidConfig(format!("no load shape for {season}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_shapes_cover_both_seasons() {
        let lp = LoadProfileModel::default();
        lp.validate().unwrap();
        for s in [Season::Summer, Season::Winter] {
            let mean: f64 = (0..24).map(|h| lp.multiplier(s, h).unwrap()).sum::<f64>() / 24.0;
            assert!((mean - 1.0).abs() < 0.05, "{s} mean {mean}");
        }
        assert_eq!("winter".parse::<Season>().unwrap(), Season::Winter);
    }
}
