pub mod cli;
pub mod diagnostics;
pub mod fit;
pub mod intensity;
pub mod latentcde;
pub mod metrics;
pub mod signature;
pub mod simulate;
pub mod timeseries;
