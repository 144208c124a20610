//! Two-step training: Enc_S with its classifier first, then Enc_Z and the
//! decoder against an adversarial Z→Y classifier with Enc_S frozen.

mod history;
mod train;

pub use history::{Phase, Record, TrainHistory};
pub use train::{
    accuracy, adversary_update, argmax, encdec_update, encode, s_accuracy, stage1_update, train,
    train_stage1, train_stage2, BatchSampler, ClassifierStep, EncDecStep, TrainConfig,
};
