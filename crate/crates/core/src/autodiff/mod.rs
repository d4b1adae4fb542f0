//! Small reverse-mode automatic differentiation engine over `f64` tensors.
//!
//! A [`Tape`] borrows a [`ParamStore`], records each operation together with
//! whatever it needs for the reverse pass, and produces [`Gradients`] for the
//! parameters and for any input created with [`Tape::input_with_grad`].

mod checkpoint;
pub(crate) mod gemm;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, restore_into, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use optim::Adam;
pub use tape::{derivative_l1_row, gelu_scalar, GeluMode, Gradients, Mode, Tape, Var};
pub use tensor::{ParamId, ParamStore, Tensor};
