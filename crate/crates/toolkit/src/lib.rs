//! Tooling around the `shape-macros` discovery engine.

pub mod cli;
pub mod corpus;
pub mod metrics;
pub mod perturb;
pub mod service;
