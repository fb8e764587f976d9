//! Simulation and learning library behind the `slrl` command line tool.
//!
//! The crate is organised around a small deterministic navigation world
//! ([`env`]) and three learners that consume it: tabular Q-learning with
//! demonstration bootstrapping ([`qlearn`], [`demo`]), an episodic
//! policy-gradient learner ([`pg`]), and an online multi-task learner that
//! shares structure across tasks through a latent basis ([`ella`]).
//! [`harness`] wires those pieces into reproducible experiments and [`plot`]
//! renders their curve files as SVG.
//!
//! Everything is seeded explicitly; two runs with the same seeds and
//! configuration produce byte-identical outputs.

pub mod config;
pub mod demo;
pub mod ella;
pub mod env;
pub mod harness;
pub mod pg;
pub mod plot;
pub mod qlearn;
pub mod seeds;

pub use harness::CurveRecord;

// Re-exported so downstream binaries share the exact RNG versions and can
// build the matrix arguments the multi-task API takes.
pub use nalgebra;
pub use rand;
pub use rand_chacha;

pub use env::{
    ActionContinuous, ActionDiscrete, ContinuousObs, DiscreteObs2, DiscreteObs3, DiscreteState,
    Pose2D, StateDim, Task, WorldState,
};
