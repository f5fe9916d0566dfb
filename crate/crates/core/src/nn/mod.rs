//! Dense layers with hand-coded gradients.

pub mod activation;
pub mod attention;
pub mod block;
pub mod conv;
pub mod dropout;
pub mod ffn;
pub mod gradcheck;
pub mod linear;
pub mod norm;
pub mod params;
pub mod recurrent;
pub mod tensor;

/// Random source used for initialisation, dropout masks and sampling.
pub type NnRng = rand_chacha::ChaCha8Rng;

pub use activation::{relu, relu_backward, softmax, softmax_xent};
pub use attention::{mha_forward, MultiHeadAttention};
pub use block::DecoderBlock;
pub use conv::{conv1d_forward, tconv1d_forward, Conv1d, TransposedConv1d};
pub use dropout::DropoutSpec;
pub use ffn::FeedForwardNet;
pub use linear::{linear_forward, LinearLayer};
pub use norm::LayerNorm;
pub use params::{load_checkpoint, save_checkpoint, Parameterized};
pub use recurrent::{gru_step, lstm_step, GruCell, LstmCell};
pub use tensor::SampleFrameTensor;
