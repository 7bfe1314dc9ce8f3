//! HTTP service and command-line front ends for the analogy pipeline.
//!
//! [`api::router`] exposes every pipeline stage over HTTP with server-sent
//! progress events; [`cli`] implements the `analogy` binary.

pub mod api;
pub mod cli;
pub mod remote;
