//! GAN laboratory: matching objectives, generator regularizers, sharpness-aware
//! training and parameter-perturbation probes, built on a small
//! reverse-mode autodiff tape.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod objectives;
pub mod optim;
pub mod rng;

pub use autodiff::{Gradients, NodeId, Tape, Tensor};
pub use data::{make_dataset, DatasetKind, DatasetSpec};
pub use error::{Error, Result};
pub use eval::{EvalOptions, EvalTarget, MetricReport, ProbeConfig, ProbeReport, QuantReport};
pub use models::{Checkpoint, LatentPrior, NetworkRole, NetworkSpec, ParamVector};
pub use objectives::{FDivergence, KernelSpec, LossPair, ObjectiveKind, ObjectiveSpec};
pub use optim::{train, OptState, TrainConfig, TrainedModel};
