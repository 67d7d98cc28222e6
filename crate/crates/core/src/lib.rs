pub mod artifacts;
pub mod cli;
pub mod datamodel;
pub mod dsp;
pub mod error;
pub mod formats;
pub mod fusion;
pub mod ica;
pub mod phantom;
pub mod pipeline;
pub mod plot;
