//! Loop-kernel to CGRA compilation: architecture model, loop IR, dataflow
//! graphs, initiation-interval bounds, mappers and a cycle-accurate simulator.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod arch;
pub mod dfg;
pub mod loopir;
pub mod mapper;
pub mod sched;
pub mod sim;
