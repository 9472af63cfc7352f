//! Modality-informed learning-rate scheduling for bimodal joint-fusion networks.
//!
//! The crate contains a small tensor engine with reverse-mode gradients, a
//! two-encoder fusion model trained on the sum of a fused loss and two
//! auxiliary unimodal losses, the MILES scheduler together with simple
//! baselines, classification and utilization metrics, and a seeded synthetic
//! data generator.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases at
//! the crate root fix the scalar to `f64`, which is what the training harness
//! uses. Randomness comes from ChaCha8 (`rand_chacha`) so that runs replay
//! bit-exactly on any platform.

pub mod datagen;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod schedulers;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use metrics::{MetricKind, Split, UtilizationRecord};
pub use model::{FusionKind, JointLoss, ModelConfig};
pub use optim::GroupId;
pub use scalar::Scalar;
pub use schedulers::{Action, EpochObservation, MilesConfig, MslrVariant, SchedulerKind, SchedulerState, TripleMetric};

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type GradientTape = tape::GradientTape<f64>;
pub type Gradients = tape::Gradients<f64>;
pub type ParamGroup = optim::ParamGroup<f64>;
pub type MultimodalModel = model::MultimodalModel<f64>;
pub type MultimodalModel32 = model::MultimodalModel<f32>;
pub type PredictionBundle = model::PredictionBundle<f64>;
