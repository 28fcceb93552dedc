//! Parameters, the recurrent cell, sampling and optimisation.

mod adam;
pub mod gradcheck;
mod lstm;
mod sampling;
mod store;
pub mod tape;
mod tensor;

pub use adam::{optimizer_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use lstm::{recurrent_step, LstmCell, StepCache};
pub use sampling::{argmax, draw_index, log_softmax, sample_categorical, softmax, CategoricalDraw, Mode};
pub use store::{Checkpoint, ParamId, ParamStore};
pub use tape::{ChoiceRecord, EpisodeTrace, InputKey, NodeId, RecurrentNet, Tape, ABSENT, EMPTY_KEY, ROOT};
pub use tensor::{axpy, dot, sigmoid, Tensor};
