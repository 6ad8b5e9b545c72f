//! Synthetic AMI data: hourly voltage magnitudes and demand for every
//! observable node, driven by the linearized radial voltage-drop model.
//!
//! The drop across a branch is `K·l · S / 100` p.u., where `S` is the apparent
//! power (kVA) of all demand downstream of the branch and `K` is expressed in
//! % drop per kVA·mile. An outage disconnects everything below the faulted
//! branch, which removes that demand from every upstream branch flow.

mod events;
mod io;
mod profile;
mod scenario;
mod series;

pub use events::{BadDataEvent, Corruption, OutageEvent};
pub use io::{read_measurements, write_measurements, MEASUREMENT_FORMAT};
pub use profile::{LoadProfileModel, Season};
pub use scenario::{BadDataSpec, OutageSpec, ProfileOverrides, ScenarioConfig};
pub use series::{generate_series, simulate_voltage_drop, voltages_dense, Label, MeasurementSeries, PERCENT_PER_PU};

use thiserror::Error;

use crate::feeder::{BranchId, FeederError, NodeId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("negative demand {value} at node {node}")]
    NegativeDemand { node: NodeId, value: f64 },
    #[error("event {0} does not fit inside the simulation horizon")]
    EventOutOfRange(String),
    #[error("unknown branch {0}")]
    UnknownBranch(BranchId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not observable")]
    NotObservable(NodeId),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("series has {len} steps, window needs {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed measurement file: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
