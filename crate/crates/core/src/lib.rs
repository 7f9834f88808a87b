//! Packet-level discrete-event simulator for QoE-aware video streaming over a
//! shared bottleneck link.
//!
//! The crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation: the event kernel, synthetic VBR trace ladders, the QoE-aware
//! admission controller, the droptail data plane with ECN feedback, the
//! sender-side rate controller, and the metrics pipeline. File formats, the
//! CLI and batch orchestration live in the `qoesim` crate.
//!
//! A run is driven by [`sim::run_scenario`], which wires one of three
//! architectures:
//!
//! * `non_adaptive`: every session is admitted and streams the QP=2 variant.
//! * `adaptive`: every session is admitted and the sender walks the QP ladder
//!   on ECN/loss feedback.
//! * `cross_layer`: sender adaptation plus gateway admission control based on
//!   the measured aggregate rate (Pro-IAAR).
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod admission;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod netsim;
pub mod observer;
pub mod ratecontrol;
pub mod rng;
pub mod sim;
pub mod traces;
pub mod units;

pub use units::{BitRate, SimTime};
