//! IPN, IPN-V2 and the global retraining network: architecture, parameters,
//! checkpoints, the two training stages and patchwise inference.

mod config;
mod layers;
mod model;
mod params;
mod train;

pub use config::{GlobalNetConfig, IpnConfig, NetworkConfig, PlanePerceptronConfig, Variant};
pub use model::{init_params, FeatureMap2D, GlobalTrace, Network, Stage1Trace, STAGE1_PREFIXES, STAGE2_PREFIXES};
pub use params::{ModelParams, ParamId, ParamSpec};
pub use train::{
    build_distance_map, class_map, global_probabilities, patchwise, predict, train_stage1, train_stage2, LogEntry,
    PatchConfig, Patchwise, StageConfig, StageResult, Subject, Task, TrainLog,
};
