//! Provider-rule estimation and provider-specific next-action models on
//! simulated clinical encounters.
//!
//! - [`scm`]: the encounter simulator and its counterfactual oracle.
//! - [`corpus`]: vocabulary, order-set pairs and encounter-level splits.
//! - [`tensor`]: a small reverse-mode autodiff tape over dense tensors.
//! - [`lcbm`]: the causal transformer policy model, training and checkpoints.
//! - [`causal`]: nuisance fits, A-IPW / TMLE / plug-in values, rule learners.
//! - [`metrics`]: rank-based accuracy, q-accuracy and separation.
//! - [`pipeline`]: run directories, stages, manifests and queries.
//!
//! Model code is generic over [`scalar::Scalar`]; the aliases below pin the
//! two supported precisions.

pub mod corpus;
pub mod scalar;
pub mod scm;
pub mod seeding;
pub mod tensor;
pub mod lcbm;
pub mod causal;
pub mod metrics;
pub mod pipeline;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type PolicyModel32 = lcbm::PolicyModel<f32>;
pub type PolicyModel64 = lcbm::PolicyModel<f64>;
