//! Building blocks of a small deep-learning workbench: the prototxt-style
//! net language, static shape inference, a CPU training engine, dataset
//! handling, experiments, and a concurrent task hub.

pub mod datastore;
pub mod engine;
pub mod experiment;
pub mod jobs;
pub mod netspec;
pub mod par;
pub mod shapecheck;
pub mod taskhub;
pub mod tensor;
pub mod workspace;
