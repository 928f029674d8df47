//! Student/teacher self-distillation: encoder, heads, DINO, iBOT and KoLeo
//! objectives, EMA teacher, centering, the training step and checkpoint I/O.

mod io;
mod loss;
mod model;
mod train;

pub use io::{
    checkpoint_from_bytes, checkpoint_to_bytes, features_from_bytes, features_to_bytes, load_checkpoint, load_features,
    save_checkpoint, save_features,
};
pub use loss::{
    dino_loss, ema_update, ibot_loss, koleo_loss, mean_entropy, sample_token_mask, teacher_probs, update_center, Pairs,
    KOLEO_EPS,
};
pub use model::{
    encode, head, image_tokens, init_params, register_params, teacher_feature, Encoded, ModelConfig, Path, Vars,
};
pub use train::{
    extract_features, next_batch, pretrain, train_step, SslHyper, SslState, StepMetrics, PROTOTYPE_PARAMS,
};

use thiserror::Error;

use crate::numeric::TensorError;
use crate::slide::SlideError;

#[derive(Debug, Error)]
pub enum SslError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error("prototype dimension mismatch: student {student:?}, teacher {teacher:?}")]
    PrototypeMismatch { student: Vec<usize>, teacher: Vec<usize> },
    #[error("mask has {mask} entries for {tokens} tokens")]
    MaskLength { mask: usize, tokens: usize },
    #[error("the teacher path never takes a token mask")]
    TeacherMask,
    #[error("koleo needs at least 2 features, got {0}")]
    KoleoTooFew(usize),
    #[error("no teacher/student view pairs remain after exclusions")]
    NoViewPairs,
    #[error("mask ratio range [{0}, {1}] invalid")]
    BadMaskRatio(f64, f64),
    #[error("view {width}x{height} smaller than the {cells}-cell token grid")]
    ViewTooSmall { width: u32, height: u32, cells: usize },
    #[error("parameter {0} missing")]
    MissingParam(String),
    #[error("invalid hyperparameters: {0}")]
    BadHyper(String),
    #[error("no training images")]
    NoData,
    #[error("non-finite loss at step {step}: dino={dino} ibot={ibot} koleo={koleo}")]
    NonFiniteLoss { step: u64, dino: f64, ibot: f64, koleo: f64 },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
