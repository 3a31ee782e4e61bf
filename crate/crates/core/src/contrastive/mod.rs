//! Sub-document splits, in-batch NCE losses, and the pretraining loop.

mod loss;
mod pretrain;
mod split;

pub use loss::{nce_loss, nce_loss_one_sided, nce_loss_one_sided_value, nce_loss_value, Similarity};
pub use pretrain::{
    batch_loss, embed_batch, pretrain, pretrain_steps, pretraining_gradcheck, split_document, PretrainConfig,
    StepRecord, TrainLog,
};
pub use split::{split_even, split_ict, SplitMode, SubDocumentPair};
