//! Neural-network models, plaintext reference inference and compilation to
//! MIPS programs.

mod compile;
pub mod fixed;
mod infer;
mod model;
pub mod synth;

pub use compile::{
    bnn_words, compile_bnn, compile_mlp, decode_output, encode_bnn_input, encode_mlp_input,
    mlp_input_words, pack_bits, CompileOptions,
};
pub use infer::{argmax, binarize, binarize_input, infer_plain, infer_plain_bnn, xnor_popcount};
pub use model::{Activation, BnnLayer, BnnModel, DenseLayer, MlpModel, Model};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NnError {
    #[error("malformed number {0:?}")]
    Number(String),
    #[error("value {0:?} outside Q8.8 range")]
    Range(String),
    #[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Dimension {
        layer: Option<usize>,
        line: Option<usize>,
        message: String,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("expected {expected} inputs, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("input {index} = {value} is outside 0..=255")]
    InputRange { index: usize, value: i32 },
    #[error("model needs a data memory of {required} words")]
    DmemOverflow { required: usize },
    #[error("layer {layer} neuron {neuron}: accumulator may exceed 32 bits")]
    Accumulator { layer: usize, neuron: usize },
    #[error("bad configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mips(#[from] crate::mips::MipsError),
}

impl NnError {
    pub(crate) fn dim(layer: Option<usize>, message: impl Into<String>) -> NnError {
        NnError::Dimension {
            layer,
            line: None,
            message: message.into(),
        }
    }
}
