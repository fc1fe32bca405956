pub mod cli;
pub mod dataset;
pub mod ensembles;
pub mod flowmeter;
pub mod metrics;
pub mod model_store;
pub mod rng;
pub mod svm;
pub mod tree;
