//! Federated learning: datasets, differentiable models and the training loop.

pub mod data;
pub mod model;
pub mod train;

pub use data::{gen_synthetic, load_mnist_idx, partition, Dataset, LocalDataset, Partition};
pub use model::{ModelKind, Model};
pub use train::{
    global_update, train, AggOutput, Aggregator, Descent, HistoryRow, IdealAggregator,
    LinkSource, OtaAggregator, TrainHistory, TrainSetup,
};
