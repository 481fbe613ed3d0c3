pub mod baselines;
pub mod concepts;
pub mod dataset;
pub mod decision;
pub mod embedding;
pub mod eval;
pub mod llm;
pub mod orchestrator;
pub mod retry;
