//! FCFS matching of two infinite i.i.d. sequences over a bipartite
//! compatibility graph: exact stationary analysis and simulation.

pub mod analytic;
pub mod chains;
pub mod cli;
pub mod fcfs;
pub mod model;
pub mod sim;
