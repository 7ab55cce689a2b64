//! Host side of the OpenPneu software twin: the simulated device server, a
//! client for talking to any device speaking the serial protocol, recording
//! and trajectory tools, and the WebSocket bridge for the console.

pub mod analysis;
pub mod cli;
pub mod client;
pub mod drive;
pub mod recording;
pub mod server;
pub mod trajectory;
pub mod ui;
