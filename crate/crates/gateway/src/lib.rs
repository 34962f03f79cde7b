//! HTTP/JSON service and command line over `cnnlab-core`.

pub mod cli;
pub mod http;
