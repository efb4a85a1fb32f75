pub mod ansatz;
pub mod cli;
pub mod dataset;
pub mod diagram;
pub mod encoders;
pub mod model;
pub mod pregroup;
pub mod runner;
pub mod simulator;
