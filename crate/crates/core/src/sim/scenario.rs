use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    generate_series, BadDataEvent, Corruption, LoadProfileModel, MeasurementSeries, OutageEvent, Season, SimError,
};
use crate::feeder::{BranchId, FeederGraph, NodeId};

/// Scenario file: profile, horizon, events and seed for one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Topology document, relative to the scenario file.
    #[serde(default)]
    pub topology: Option<PathBuf>,
    pub seed: u64,
    #[serde(default)]
    pub season: Season,
    pub horizon: usize,
    #[serde(default)]
    pub profile: ProfileOverrides,
    #[serde(default)]
    pub outages: Vec<OutageSpec>,
    #[serde(default)]
    pub bad_data: Vec<BadDataSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOverrides {
    pub noise_sigma: Option<f64>,
    pub customer_scale: Option<f64>,
    pub voltage_noise_pu: Option<f64>,
}

impl ProfileOverrides {
    pub fn apply(&self, mut lp: LoadProfileModel) -> LoadProfileModel {
        if let Some(v) = self.noise_sigma {
            lp.noise_sigma = v;
        }
        if let Some(v) = self.customer_scale {
            lp.customer_scale = v;
        }
        if let Some(v) = self.voltage_noise_pu {
            lp.voltage_noise_pu = v;
        }
        lp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageSpec {
    pub branch: u32,
    pub start: usize,
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BadDataSpec {
    pub node: u32,
    pub timestep: usize,
    #[serde(default)]
    pub corruption: Corruption,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
}

fn default_magnitude() -> f64 {
    0.05
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }

    pub fn profile(&self) -> LoadProfileModel {
        self.profile.apply(LoadProfileModel::default())
    }

    pub fn events(&self, g: &FeederGraph) -> Result<(Vec<OutageEvent>, Vec<BadDataEvent>), SimError> {
        let outages = self
            .outages
            .iter()
            .map(|o| OutageEvent::new(g, BranchId(o.branch), o.start, o.duration))
            .collect::<Result<_, _>>()?;
        let bad = self
            .bad_data
            .iter()
            .map(|b| BadDataEvent {
                node: NodeId(b.node),
                timestep: b.timestep,
                corruption: b.corruption,
                magnitude: b.magnitude,
            })
            .collect();
        Ok((outages, bad))
    }

    pub fn generate(&self, g: &FeederGraph) -> Result<MeasurementSeries, SimError> {
        let (outages, bad) = self.events(g)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        generate_series(g, &self.profile(), self.season, self.horizon, &outages, &bad, &mut rng)
    }
}
