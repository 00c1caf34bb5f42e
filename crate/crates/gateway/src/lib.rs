//! Network boundary for the closed loop: streams loop state to clients and
//! accepts live parameter, intent and reference updates.
//!
//! The control loop runs on its own thread ([`LoopRunner`]) and talks to the
//! network side only through queues, so a slow or failing client never
//! delays a tick.

pub mod protocol;
mod runner;
mod server;

pub use protocol::{IntentInput, MessageType, RefSpecUpdate, Request, StateUpdate, WireMessage};
pub use runner::{LoopHandle, LoopOutcome, LoopRunner, Pace, RunnerOptions};
pub use server::{
    serve, Gateway, GatewayConfig, GatewayError, DEFAULT_TCP_ADDR, DEFAULT_WS_ADDR, MAX_FRAME,
    TCP_ADDR_ENV, WS_ADDR_ENV,
};
