//! Pairwise preference elicitation over publication venues, spring-model
//! ranking, consensus analytics and the null-model simulations around them.

pub mod model;
pub mod rank;
pub mod scheduler;
pub mod discovery;
pub mod analytics;
pub mod stats;
pub mod sim;
pub mod config;
pub mod service;
pub mod cli;
