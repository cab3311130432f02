//! Reinforcement-learning based parameter sizing for analog/RF circuits.
//!
//! The crate turns a device netlist into a graph, trains a graph-network
//! policy with PPO to walk device parameters toward a target specification,
//! and ships genetic-algorithm and random-search baselines plus analytical
//! circuit evaluators to optimize against. The `circuit-sizer` binary exposes
//! training, deployment, figure-of-merit search, baseline comparison, and
//! netlist inspection.

pub mod baselines;
pub mod config;
pub mod env;
pub mod mat;
pub mod metrics;
pub mod netlist;
pub mod plot;
pub mod policy;
pub mod ppo;
pub mod rng;
pub mod tensor;

pub use mat::Mat;
