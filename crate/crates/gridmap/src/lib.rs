//! File formats, command line and benchmark harness around `gridmap-core`.

pub mod archfile;
pub mod bench;
pub mod cli;
pub mod dfgfile;
pub mod kernelfile;
pub mod mapfile;
pub mod pipeline;
