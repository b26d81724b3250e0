//! Link-level simulator and Bayesian receiver for MIMO unsourced random
//! access with sparse Kronecker-product (SKP) coding.

pub mod bigamp;
pub mod bound;
pub mod channel;
pub mod codec;
pub mod config;
pub mod constellation;
pub mod decoder_g;
pub mod decoder_x;
pub mod fec;
pub mod messages;
pub mod receiver;
pub mod scalar;
pub mod seed;

pub use config::{FecMode, Scheme, SkpConfig, SkpParams};
pub use scalar::{Cpx, Real};

pub type Cpx64 = Cpx<f64>;
pub type Cpx32 = Cpx<f32>;
pub type FrameTruth64 = channel::FrameTruth<f64>;
pub type FrameTruth32 = channel::FrameTruth<f32>;
pub type AmpState64 = bigamp::AmpState<f64>;
pub type AmpState32 = bigamp::AmpState<f32>;
pub type BigAmpOpts64 = bigamp::BigAmpOpts<f64>;
pub type BigAmpOpts32 = bigamp::BigAmpOpts<f32>;
pub type ReceiverOpts64 = receiver::ReceiverOpts<f64>;
pub type ReceiverOpts32 = receiver::ReceiverOpts<f32>;
