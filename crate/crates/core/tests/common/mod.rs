//! Shared oracles for the integration suites.
#![allow(dead_code)]

pub mod cli;
pub mod equations;
pub mod grad;
pub mod spectral;
