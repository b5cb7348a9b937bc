//! Orchestration of undefined-behavior repair for Rust programs.
//!
//! A [`fsm::RepairSession`] walks a state machine whose repair states are
//! agents from [`agents`], scored after every step by the defect waveform
//! in [`waveform`], and finishes once [`validation`] accepts a clean
//! candidate. [`harness`] runs single files, corpora and experiments.

pub mod agents;
pub mod detection;
pub mod fsm;
pub mod harness;
pub mod process;
pub mod provider;
pub mod validation;
pub mod waveform;
