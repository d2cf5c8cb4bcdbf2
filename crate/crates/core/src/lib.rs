//! Semantic SLAM back-end built on a variational object observation model.
//!
//! Objects are observed through Gaussian latent features conditioned on their
//! category, instance and viewpoint orientation. Data association is solved by
//! expectation-maximization over one-to-one assignments, robot and landmark
//! poses by weighted pose-graph optimization, and landmark shape features in
//! closed form. A synthetic world simulator drives the pipeline.

pub mod association;
pub mod generative;
pub mod geometry;
pub mod io_eval;
pub mod optimizer;
pub mod simulator;
