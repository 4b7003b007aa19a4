//! Command-line front end: configuration loading, output files and figures.

pub mod plot;
pub mod report;
