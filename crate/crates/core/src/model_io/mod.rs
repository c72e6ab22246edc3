//! Model file format, MNIST (IDX) ingestion and experiment configuration.

mod config;
mod mnist;
mod model;

pub use config::{
    load_config, ConfigError, ExperimentConfig, DEFAULT_EVAL_SUBSET, DEFAULT_PERCENTILE,
    DEFAULT_RECORD_FRACTION,
};
pub use mnist::{
    load_mnist, parse_idx_images, parse_idx_labels, write_idx, Dataset, DatasetError, Split,
    IMAGES_MAGIC, LABELS_MAGIC,
};
pub use model::{
    load_model, save_model, AvgPoolLayer, Conv2dLayer, DenseLayer, LayerSpec, LayeredModel,
    ModelError, Padding, Shape, FORMAT_VERSION,
};
