pub mod core;
pub mod deck;
pub mod equilibrium;
pub mod flow;
pub mod hydraulics;
pub mod kinetics;
pub mod orchestrator;
pub mod sweep;
pub mod transport;

pub use crate::core::{GridSpec, GridState, MassLedger};
pub use crate::deck::{parse_deck, serialize_deck, SimulationDeck};
