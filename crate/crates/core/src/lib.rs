pub mod descriptors;
pub mod eps;
pub mod tunnel;
pub mod netem;
pub mod orchestrator;
pub mod relation_bus;
pub mod bench;
