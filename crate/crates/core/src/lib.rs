pub mod risk;
pub mod session;
pub mod mdp;
pub mod learner;
pub mod scheduler;
pub mod cli;
pub mod config;
