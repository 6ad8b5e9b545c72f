use serde::{Deserialize, Serialize};

use super::SimError;
use crate::feeder::{BranchId, FeederGraph, NodeId};

/// A permanent fault isolated by the upstream protective device: every node
/// below `faulted_branch` loses supply for `duration` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OutageEvent {
    pub faulted_branch: BranchId,
    pub start: usize,
    pub duration: usize,
    /// Nominal interrupted demand (kW): mean demand of all affected nodes.
    /// Applied with a negative sign to upstream flows.
    pub lost_demand: f64,
    pub affected_nodes: Vec<NodeId>,
}

impl OutageEvent {
    pub fn new(g: &FeederGraph, faulted_branch: BranchId, start: usize, duration: usize) -> Result<Self, SimError> {
        if g.branch(faulted_branch).is_none() {
            return Err(SimError::UnknownBranch(faulted_branch));
        }
        if duration == 0 {
            return Err(SimError::InvalidEvent(format!(
                "outage on {faulted_branch} has zero duration"
            )));
        }
        let affected_nodes = g.subtree(faulted_branch.child())?;
        let lost_demand: f64 = affected_nodes
            .iter()
            .filter_map(|&n| g.load(n))
            .map(|l| l.mean_demand)
            .sum();
        if lost_demand <= 0.0 {
            return Err(SimError::InvalidEvent(format!(
                "outage on {faulted_branch} interrupts no demand"
            )));
        }
        Ok(OutageEvent {
            faulted_branch,
            start,
            duration,
            lost_demand,
            affected_nodes,
        })
    }

    pub fn active_at(&self, t: usize) -> bool {
        t >= self.start && t < self.start + self.duration
    }

    pub fn end(&self) -> usize {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    /// Voltage reading multiplied by `1 + magnitude`.
    #[default]
    Spike,
    /// Both readings lost and reported as zero.
    Dropout,
    /// Both readings repeat the previous step's reported values.
    Stuck,
}

/// A single corrupted meter reading, applied after the physics.
#[derive(Debug, Clone, PartialEq)]
pub struct BadDataEvent {
    pub node: NodeId,
    pub timestep: usize,
    pub corruption: Corruption,
    pub magnitude: f64,
}

impl BadDataEvent {
    /// Single-step +5% voltage spike.
    pub fn spike(node: NodeId, timestep: usize) -> Self {
        BadDataEvent {
            node,
            timestep,
            corruption: Corruption::Spike,
            magnitude: 0.05,
        }
    }

    pub fn validate(&self, g: &FeederGraph) -> Result<(), SimError> {
        if !g.contains(self.node) {
            return Err(SimError::UnknownNode(self.node));
        }
        if !g.is_observable(self.node) {
            return Err(SimError::NotObservable(self.node));
        }
        if !self.magnitude.is_finite() {
            return Err(SimError::InvalidEvent(format!(
                "bad-data magnitude at {} is not finite",
                self.node
            )));
        }
        Ok(())
    }
}
