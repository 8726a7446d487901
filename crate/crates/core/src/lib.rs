pub mod dataset;
pub mod extractor;
pub mod harness;
pub mod interpret;
pub mod minilang;
pub mod mutator;
pub mod neural;
pub mod trainer;
