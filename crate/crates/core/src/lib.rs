//! Desk-scale neural text-to-speech stack: a three-tier sample-level vocoder,
//! recurrent and self-attention acoustic decoders, training loops and
//! objective evaluation. Numeric code is generic over [`Real`]; the aliases
//! below fix the scalar to `f64`, which training and evaluation use.

pub mod codec;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod nn;
pub mod real;
pub mod train;
pub mod vocoder;

pub use error::{Error, Result};
pub use real::Real;

pub type Tensor = nn::tensor::SampleFrameTensor<f64>;
pub type Wave = codec::Waveform<f64>;
pub type Vocoder = vocoder::VocoderModel<f64>;
pub type VocoderState = vocoder::VocoderState<f64>;
pub type Decoder = decoder::AcousticDecoder<f64>;
pub type DecoderState = decoder::DecoderState<f64>;
pub type Optimizer = train::OptimizerState<f64>;
