pub mod agent;
pub mod codec;
pub mod config;
pub mod desk_tools;
pub mod gateway;
pub mod stack;
pub mod tiler;
pub mod trace;
pub mod transport;
