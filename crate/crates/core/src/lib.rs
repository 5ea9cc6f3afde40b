pub mod autodiff;
pub mod calendar;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod profile;
pub mod rotary;
pub mod selftest;
pub mod train;

pub use error::{Error, Result};
