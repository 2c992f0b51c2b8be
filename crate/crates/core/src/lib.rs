pub mod cli;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod hilbert;
pub mod noise;
