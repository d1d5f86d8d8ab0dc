//! Federated learning over a contention-based wireless channel.
//!
//! Each user trains the broadcast global model locally, derives a priority
//! from how far its fresh model moved away from the global one, and shrinks
//! its CSMA contention window accordingly. The server merges the first
//! `k` uploads that make it through the channel. A per-user fairness counter
//! keeps frequent winners from dominating the aggregate.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and
//! the command-line front end live in the `fedaccess` crate.
#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod data;
mod error;
pub mod fl;
pub mod mac;
pub mod nn;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
