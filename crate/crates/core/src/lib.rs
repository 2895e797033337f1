pub mod concept;
pub mod engine;
pub mod eval;
pub mod gateway;
pub mod index;
pub mod ingest;
pub mod instance;
pub mod qa;
pub mod retriever;
pub mod store;
pub mod text;

#[cfg(test)]
mod testkit;
