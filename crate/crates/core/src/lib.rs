pub mod config;
pub mod ensemble;
pub mod error;
pub mod exchange;
pub mod io;
pub mod ladder;
pub mod observables;
pub mod physics;
pub mod trace;
