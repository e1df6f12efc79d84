//! Minimal neural-network stack for the pose models: hand-rolled layers with
//! explicit forward/backward passes over a single flat parameter vector, a
//! small convolutional image encoder, the per-point field decoder plus the
//! two regression baselines, and the training loop that fits them.

pub mod encoder;
pub mod layers;
pub mod loss;
pub mod checkpoint;
pub mod infer;
pub mod model;
pub mod params;
pub mod train;
