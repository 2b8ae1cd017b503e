//! Lazy GNSS/vision fusion for teach-and-repeat path following.
//!
//! Builds without `std` (needs `alloc`). The companion `lazynav` crate adds
//! simulation, file formats and the command line.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod fusion;
pub mod geodesy;
pub mod geometry;
pub mod gnss_local;
pub mod mapgraph;
pub mod metrics;
pub mod repeat;
