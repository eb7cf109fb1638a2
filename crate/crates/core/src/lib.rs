//! Flow-matching action policies on a small 2D manipulation world, with
//! low-data post-training that penalizes encoder drift, contrastive prompt
//! guidance at sampling time, and a harness that measures instruction
//! following before and after post-training.
//!
//! Module map: [`world`] simulates scenes and scripted demonstrations,
//! [`nn`] holds the dense layers, optimizer and checkpoints, [`policy`] the
//! factored velocity model, [`trainer`] pretraining and post-training,
//! [`sampler`] guided denoising and rollouts, [`harness`] experiments and
//! probes, and [`cli`] the `lockin` command.

pub mod cli;
pub mod error;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod sampler;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
