//! Small reverse-mode autodiff kernel for the agents' networks.

mod checkpoint;
mod layers;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, CheckpointManifest, ManifestEntry};
pub use layers::{
    bilstm_apply, complete_graph, dense_apply, gcn_apply, lstm_gates, lstm_step, lstm_unroll, normalized_adjacency, Activation,
    Dense, LstmCell, LstmVars,
};
pub use optim::{adam_step, grad_check, Adam, AdamConfig, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{ParamId, ParamStore, Tensor};
