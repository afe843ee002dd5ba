//! Analytic and stochastic spectra for the sum-frequency up-conversion of
//! broadband parametric down-converted light in χ(2) crystals.

pub mod analysis;
pub mod config;
pub mod dispersion;
pub mod phasematch;
pub mod fft;
pub mod io;
pub mod pwpa;
pub mod simulator;
pub mod spectrum;
pub mod units;
