//! Representation learning from bag-level class proportions on ordinal
//! classes.
//!
//! A backbone is trained so that the histogram of pairwise feature
//! similarities between two bags matches the similarity distribution implied
//! by their class proportions. A classifier head is then trained on the
//! frozen features with a proportion loss. Everything is generic over the
//! [`Scalar`] type; the `*64` and `*32` aliases pin the precision.

pub mod bags;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ordinal;
pub mod scalar;
pub mod seeds;
pub mod simhist;
pub mod synth;
pub mod train;

pub use bags::{build_bags, Bag, BagPair, BagSampler};
pub use config::ExperimentConfig;
pub use data::{Dataset, Instance, ProportionTable};
pub use diffcore::{grad_check, GradCheck, Gradients, Op, Tape, Var};
pub use error::{Error, Result};
pub use experiment::{generate_data, run_experiment, RunResult, SyntheticData};
pub use losses::{
    aggregate_predictions, prop_loss, sim_prop_loss, GroundTruthMode, PairingMode, SimPropConfig,
};
pub use metrics::{evaluate, ClassOrder, MetricsReport};
pub use model::{
    init_params, Architecture, Backbone, ClassifierHead, FreezePolicy, Mlp, ModelParams,
};
pub use ordinal::{ground_truth_pdf, ClassSimilarityMatrix, GroundTruthSimPdf, ProportionVector};
pub use scalar::Scalar;
pub use simhist::{Bins, Kernel, SimilarityHistogram};
pub use train::{run_training, CheckpointPoint, OptimizerConfig, OptimizerKind, TrainConfig, TrainLog};

pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type ProportionTable64 = ProportionTable<f64>;
pub type ProportionTable32 = ProportionTable<f32>;
pub type ProportionVector64 = ProportionVector<f64>;
pub type ProportionVector32 = ProportionVector<f32>;
pub type Backbone64 = Backbone<f64>;
pub type Backbone32 = Backbone<f32>;
pub type ClassifierHead64 = ClassifierHead<f64>;
pub type ClassifierHead32 = ClassifierHead<f32>;
pub type Model64 = ModelParams<f64>;
pub type Model32 = ModelParams<f32>;
pub type Bag64 = Bag<f64>;
pub type Bag32 = Bag<f32>;
