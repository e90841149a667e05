pub mod dataset;
pub mod discovery;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod lang;
pub mod library;
pub mod order;
pub mod scalar;
pub mod search;

#[cfg(test)]
mod arb;
