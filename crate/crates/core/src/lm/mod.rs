//! Held-out-word LSTM language model: vocabulary, architecture, training,
//! and persistence.

mod io;
mod model;
mod train;
mod vocab;

pub use io::{load_model, manifest_path, save_model, vocab_path, weight_bytes, weights_path, LmManifest};
pub use model::{holdout_window, softmax, LmConfig, LmParams, BLOCK_ORDER};
pub use train::{loss_and_grads, loss_for, train_lm, LmGrads, TrainReport};
pub(crate) use vocab::hex_string;
pub use vocab::{
    Vocab, HOLDOUT_ID, HOLDOUT_TOKEN, PAD_ID, PAD_TOKEN, RESERVED, UNK_ID, UNK_TOKEN,
};
