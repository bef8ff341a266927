pub mod bench;
pub mod blocks;
pub mod cli;
pub mod config;
pub mod platform;
pub mod replay;
pub mod state;
