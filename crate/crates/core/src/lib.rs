pub mod dataio;
pub mod deform;
pub mod dsp;
pub mod features;
pub mod metrics;
pub mod orchestrator;
pub mod plan;
pub mod probes;
pub mod process;
pub mod report;
