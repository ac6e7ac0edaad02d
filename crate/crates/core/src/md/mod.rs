//! Molecular dynamics: neighbor lists, integrators, thermostats and staged protocols.

mod engine;
pub mod neighbor;
mod protocol;
mod thermostat;

pub use engine::{MdEngine, MdError};
pub use neighbor::{build_neighbor_list, NeighborError, NeighborList};
pub use protocol::{
    run_protocol, run_protocol_streaming, run_protocol_with, Ensemble, PressureKeyword, PressureTarget, ProtocolError,
    ProtocolRun, ProtocolSpec, RunOptions, Stage, StageSummary,
};
pub use thermostat::{
    assign_velocities, sample_maxwell_boltzmann, Barostat, BarostatSpec, NoseHooverChain, ThermostatError, EV_PER_A3_TO_BAR,
};
