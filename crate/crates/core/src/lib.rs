pub mod cli;
pub mod curvature;
pub mod error;
pub mod generator;
pub mod linalg;
pub mod metric;
pub mod models;
pub mod observables;
pub mod ode;
pub mod transport;
