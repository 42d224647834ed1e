pub mod balance;
pub mod cli;
pub mod data;
pub mod distance;
pub mod inference;
pub mod ip;
pub mod matcher;
pub mod sample;
pub mod stats;
