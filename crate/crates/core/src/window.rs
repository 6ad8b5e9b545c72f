//! Sliding measurement windows: the unit of data the per-zone models see.

use serde::{Deserialize, Serialize};

use crate::sim::{Label, MeasurementSeries, Season, SimError};
use crate::zones::Zone;

/// Default window length in hourly steps.
pub const DEFAULT_WINDOW: usize = 6;

/// `T` consecutive steps of one zone, flattened to
/// `[ΔV^1..ΔV^T, P_up^1..P_up^T, P_down^1..P_down^T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementWindow {
    pub values: Vec<f64>,
    pub zone: usize,
    pub season: Season,
    /// Timestamp of the last step in the window.
    pub timestamp: usize,
    #[serde(skip, default = "normal_label")]
    pub label: Label,
}

fn normal_label() -> Label {
    Label::Normal
}

impl MeasurementWindow {
    pub fn len_steps(&self) -> usize {
        self.values.len() / 3
    }

    pub fn delta_v(&self) -> &[f64] {
        &self.values[..self.len_steps()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// All stride-1 windows of length `t_len` for `zone`. Each window carries the
/// most severe label among its steps.
pub fn window_stream(ms: &MeasurementSeries, zone: &Zone, t_len: usize) -> Result<Vec<MeasurementWindow>, SimError> {
    if t_len == 0 {
        return Err(SimError::InvalidConfig("window length must be at least 1".into()));
    }
    if ms.len() < t_len {
        return Err(SimError::SeriesTooShort {
            len: ms.len(),
            needed: t_len,
        });
    }
    let (vu, pu) = (ms.voltage_of(zone.upstream)?, ms.demand_of(zone.upstream)?);
    let (vd, pd) = (ms.voltage_of(zone.downstream)?, ms.demand_of(zone.downstream)?);
    Ok((t_len - 1..ms.len())
        .map(|end| {
            let r = end + 1 - t_len..=end;
            let mut values = Vec::with_capacity(3 * t_len);
            values.extend(r.clone().map(|t| vu[t] - vd[t]));
            values.extend_from_slice(&pu[r.clone()]);
            values.extend_from_slice(&pd[r.clone()]);
            let label = ms.labels[r].iter().copied().max().unwrap_or(Label::Normal);
            MeasurementWindow {
                values,
                zone: zone.index,
                season: ms.season,
                timestamp: end,
                label,
            }
        })
        .collect())
}
