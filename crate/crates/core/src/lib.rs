//! Counterfactual simulatability of natural-language explanations.
//!
//! A model explains its answer on an input; a generator proposes related
//! follow-up inputs; a simulator (LLM or human) guesses from the explanation
//! what the model would answer on each follow-up. The explanation is scored
//! by how often those guesses match the model's real outputs (precision)
//! and by how diverse the follow-ups it can be simulated on are (generality).

pub mod domain;
pub mod gateway;
pub mod parse;
pub mod pipeline;
pub mod stats;
pub mod tasks;
pub mod text;

pub use domain::*;
