//! Distortion-agnostic deep image watermarking.
//!
//! The system embeds a short binary message into an image so that it
//! survives distortions that were never modelled at training time. Two
//! mechanisms provide the robustness:
//!
//! * a small CNN ([`attack::AttackNet`]) trained adversarially against the
//!   watermark decoder, replacing hand-picked distortions during training;
//! * a learned channel codec ([`channel::ChannelModel`]) that expands the
//!   `D`-bit message into an `N`-bit redundant code trained against a binary
//!   symmetric channel.
//!
//! [`distortion`] holds the evaluation distortions (known and unknown suites)
//! and the differentiable JPEG used by the baseline trainers, [`trainer`] the
//! losses and training procedures, and [`pipeline`] the embed / extract /
//! evaluate operations behind the `wmark` command line tool.

pub mod attack;
pub mod channel;
pub mod checkpoint;
pub mod dataset;
pub mod distortion;
pub mod error;
pub mod image_plane;
pub mod layers;
pub mod message;
pub mod metrics;
pub mod nets;
pub mod pipeline;
pub mod report;
pub mod tensor_util;
pub mod trainer;

pub use error::{Error, Result};
pub use image_plane::ImagePlane;
pub use message::{BitMessage, SoftMessage};
