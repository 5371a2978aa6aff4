pub mod api;
pub mod cache;
pub mod curriculum;
pub mod digest;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graybox;
pub mod gridworld;
pub mod learner;
pub mod optim;
pub mod schedule;
pub mod taskgen;
pub mod tiles;
