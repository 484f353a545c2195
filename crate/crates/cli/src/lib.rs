//! Command-line tools and the HTTP session service.

pub mod cli;
pub mod model;
pub mod rle;
pub mod service;
