//! Configuration, scenario runs, artifacts and re-verification for the
//! anthracnose model.

pub mod check;
pub mod cli;
pub mod config;
pub mod plot;
pub mod run;
pub mod scenario;
