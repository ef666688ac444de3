//! Joint training, evaluation and synthetic data.

pub mod experiment;
pub mod gradcheck;
mod loss;
mod metrics;
mod optim;
pub mod synth;
mod trainer;

pub use loss::{joint_loss, JointLoss};
pub use metrics::{span_f1, EvalReport, Prf, SpanCounter};
pub use optim::Adam;
pub use trainer::{evaluate, prepare_example, train, EpochLog, PreparedExample, TrainConfig, TrainOutcome};
