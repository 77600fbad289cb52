//! Small encoder-decoder transformer trained on CPU with a tape-based
//! autodiff in f64.

pub mod checkpoint;
pub mod decode;
pub mod error;
pub mod graph;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod tokenizer;

pub use decode::{Decoding, Generation};
pub use error::ModelError;
pub use graph::{Gradients, Graph, ParamKey, Var};
pub use model::{EncodedMemory, ModelConfig, Segment, SegmentTag, Seq2Seq, TeacherForced};
pub use optim::{Adam, AdamConfig};
pub use tensor::Matrix;
pub use tokenizer::Tokenizer;
