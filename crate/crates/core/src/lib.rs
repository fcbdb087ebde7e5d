pub mod autodiff;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod lambda;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod rng;

pub use autodiff::{AutodiffError, GradientMap, Tape, Tensor, Var};
pub use data::{
    generate, AugmentationSpec, DataError, GenerateParams, HierarchicalDataset, NeighborIndex,
};
pub use eval::{EnsembleReport, EvalError, EvalOptions, PredictionSet};
pub use lambda::{LambdaError, LambdaTemplate, LambdaVector, SeriesSpec};
pub use losses::{EntropyStateRecord, LossError, ScanTermValues};
pub use model::{ClusterHead, EncoderParams, ModelConfig, ModelError};
pub use pipeline::{
    Checkpoint, CheckpointError, EnsembleSpec, PipelineConfig, PipelineError, Stage, TrainConfig,
};
