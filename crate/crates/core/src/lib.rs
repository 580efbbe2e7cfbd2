//! Gauge-invariant PEPS toolkit.

pub mod cli;
pub mod gauge;
pub mod geometry;
pub mod network;
pub mod oracle;
pub mod tensor;
pub mod transfer;
pub mod verify;
