use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{BadDataEvent, Corruption, LoadProfileModel, OutageEvent, Season, SimError};
use crate::feeder::{BranchId, FeederGraph, NodeId};

/// Drop factors are in percent; divide by this to get per-unit.
pub const PERCENT_PER_PU: f64 = 100.0;

/// Ground truth for one timestep. Ordered by severity so the worst label of a
/// window is its maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Normal,
    BadData,
    Outage(BranchId),
}

impl Label {
    pub fn is_outage(self) -> bool {
        matches!(self, Label::Outage(_))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Normal => f.write_str("normal"),
            Label::BadData => f.write_str("bad_data"),
            Label::Outage(b) => write!(f, "outage:{}", b.0),
        }
    }
}

impl FromStr for Label {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Label::Normal),
            "bad_data" => Ok(Label::BadData),
            _ => s
                .strip_prefix("outage:")
                .and_then(|b| b.parse().ok())
                .map(|b| Label::Outage(BranchId(b)))
                .ok_or_else(|| SimError::MalformedFile(format!("unknown label {s:?}"))),
        }
    }
}

/// Hourly readings for every observable node on a shared timestamp grid.
/// Timestamps are hour offsets from the start of the series; hour of day is
/// `t % 24`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub season: Season,
    pub nodes: Vec<NodeId>,
    /// `voltage[i][t]`, p.u., for `nodes[i]`.
    pub voltage: Vec<Vec<f64>>,
    /// `demand[i][t]`, kW (equal to kWh for hourly intervals).
    pub demand: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl MeasurementSeries {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn position(&self, n: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&m| m == n)
    }

    pub fn voltage_of(&self, n: NodeId) -> Result<&[f64], SimError> {
        self.position(n)
            .map(|i| self.voltage[i].as_slice())
            .ok_or(SimError::UnknownNode(n))
    }

    pub fn demand_of(&self, n: NodeId) -> Result<&[f64], SimError> {
        self.position(n)
            .map(|i| self.demand[i].as_slice())
            .ok_or(SimError::UnknownNode(n))
    }
}

/// Node voltages (p.u., by dense node index) for the given per-node demand
/// (kW, by dense node index). The root is held at 1.0 p.u.
pub fn voltages_dense(g: &FeederGraph, demand: &[f64]) -> Vec<f64> {
    let n = g.node_count();
    let order = g.preorder_indices();
    let mut flow: Vec<f64> = (0..n).map(|v| demand[v] / g.load_at(v).power_factor).collect();
    for &v in order.iter().rev() {
        if let Some(p) = g.parent_index(v) {
            flow[p] += flow[v];
        }
    }
    let mut volt = vec![1.0; n];
    for &v in order {
        if let (Some(p), Some(b)) = (g.parent_index(v), g.branch_at(v)) {
            volt[v] = volt[p] - b.k_l() * flow[v] / PERCENT_PER_PU;
        }
    }
    volt
}

/// Linearized voltage profile for a demand map. Nodes absent from the map
/// draw no power.
pub fn simulate_voltage_drop(
    g: &FeederGraph,
    demands: &BTreeMap<NodeId, f64>,
) -> Result<BTreeMap<NodeId, f64>, SimError> {
    let mut dense = vec![0.0; g.node_count()];
    for (&node, &value) in demands {
        let v = g.index_of(node).ok_or(SimError::UnknownNode(node))?;
        if !(value >= 0.0) {
            return Err(SimError::NegativeDemand { node, value });
        }
        dense[v] = value;
    }
    let volt = voltages_dense(g, &dense);
    Ok(g.nodes().zip(volt).collect())
}

/// Generate an hourly measurement series.
///
/// The random stream is consumed identically whatever events are supplied,
/// so a scenario with and without an outage shares the same noise.
pub fn generate_series<R: Rng + ?Sized>(
    g: &FeederGraph,
    lp: &LoadProfileModel,
    season: Season,
    horizon: usize,
    outages: &[OutageEvent],
    bad_data: &[BadDataEvent],
    rng: &mut R,
) -> Result<MeasurementSeries, SimError> {
    lp.validate()?;
    for o in outages {
        if g.branch(o.faulted_branch).is_none() {
            return Err(SimError::UnknownBranch(o.faulted_branch));
        }
        if o.end() > horizon {
            return Err(SimError::EventOutOfRange(format!(
                "outage on {} at [{}, {})",
                o.faulted_branch,
                o.start,
                o.end()
            )));
        }
    }
    for b in bad_data {
        b.validate(g)?;
        if b.timestep >= horizon {
            return Err(SimError::EventOutOfRange(format!(
                "bad data at {} step {}",
                b.node, b.timestep
            )));
        }
    }

    let n = g.node_count();
    let obs: Vec<NodeId> = g.observables().to_vec();
    let obs_idx: Vec<usize> = obs.iter().map(|&o| g.index_of(o).expect("observable exists")).collect();
    let affected: Vec<Vec<usize>> = outages
        .iter()
        .map(|o| {
            o.affected_nodes
                .iter()
                .map(|&a| g.index_of(a).expect("affected node exists"))
                .collect()
        })
        .collect();

    let mut voltage = vec![Vec::with_capacity(horizon); obs.len()];
    let mut demand = vec![Vec::with_capacity(horizon); obs.len()];
    let mut labels = Vec::with_capacity(horizon);
    let mut node_demand = vec![0.0; n];
    let mut energized = vec![true; n];
    let mut noise_v = vec![0.0; obs.len()];

    for t in 0..horizon {
        let mult = lp.multiplier(season, t % 24)? * lp.customer_scale;
        for (v, d) in node_demand.iter_mut().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            *d = g.load_at(v).mean_demand * mult * (1.0 + lp.noise_sigma * eps).max(0.0);
        }
        for e in noise_v.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *e = lp.voltage_noise_pu * eps;
        }

        energized.fill(true);
        let mut label = Label::Normal;
        for (o, nodes) in outages.iter().zip(&affected) {
            if o.active_at(t) {
                for &v in nodes {
                    energized[v] = false;
                }
                if label == Label::Normal {
                    label = Label::Outage(o.faulted_branch);
                }
            }
        }
        for (d, &on) in node_demand.iter_mut().zip(&energized) {
            if !on {
                *d = 0.0;
            }
        }
        let volt = voltages_dense(g, &node_demand);
        for (i, &v) in obs_idx.iter().enumerate() {
            let (vm, pm) = if energized[v] {
                (volt[v] + noise_v[i], node_demand[v])
            } else {
                (0.0, 0.0)
            };
            voltage[i].push(vm);
            demand[i].push(pm);
        }
        labels.push(label);
    }

    let mut series = MeasurementSeries {
        season,
        nodes: obs,
        voltage,
        demand,
        labels,
    };
    let mut ordered: Vec<&BadDataEvent> = bad_data.iter().collect();
    ordered.sort_by_key(|b| b.timestep);
    for b in ordered {
        let i = series.position(b.node).ok_or(SimError::NotObservable(b.node))?;
        let t = b.timestep;
        match b.corruption {
            Corruption::Spike => series.voltage[i][t] *= 1.0 + b.magnitude,
            Corruption::Dropout => {
                series.voltage[i][t] = 0.0;
                series.demand[i][t] = 0.0;
            }
            Corruption::Stuck if t > 0 => {
                series.voltage[i][t] = series.voltage[i][t - 1];
                series.demand[i][t] = series.demand[i][t - 1];
            }
            Corruption::Stuck => {}
        }
        if series.labels[t] == Label::Normal {
            series.labels[t] = Label::BadData;
        }
    }
    Ok(series)
}
