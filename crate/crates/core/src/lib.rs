//! Benchmarking toolkit for Lennard-Jones argon and learned pair surrogates.

pub mod dynamics;
pub mod forcefield;
pub mod io;
pub mod md;
pub mod melting;
pub mod par;
pub mod solid;
pub mod structure;
pub mod system;
pub mod units;
pub mod workflow;
pub mod xpcs;
