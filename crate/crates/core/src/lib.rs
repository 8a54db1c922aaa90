//! Byzantine reliable broadcast on partially connected networks: Bracha's
//! protocol layered over Dolev's path-based reliable communication, with
//! switchable optimizations, a discrete-event simulator and an experiment
//! harness.

pub mod adversary;
pub mod bracha;
pub mod config;
pub mod dolev;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod pathstore;
pub mod props;
pub mod topology;
pub mod sim;
pub mod types;
pub mod wire;

pub use config::ModificationConfig;
pub use error::*;
pub use topology::{Graph, TopologySpec};
pub use types::{Delivery, MessageType, PayloadId, ProcSet, ProcessId};
pub use wire::{decode_frame, encode_frame, frame_size_bits, Frame, Message};
