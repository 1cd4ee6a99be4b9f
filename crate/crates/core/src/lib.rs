pub mod config;
pub mod ensemble;
pub mod grid;
pub mod measurement;
pub mod observables;
pub mod physmap;
pub mod propagator;
pub mod runner;
pub mod zeno;
