//! Reference bag classifiers: layers, pooling networks, Adam and the
//! training loop.

pub mod layers;
pub mod model;
pub mod optim;
pub mod train;

pub use layers::Activation;
pub use model::{bce_with_logit, sigmoid, Architecture, BagTrace, ModelKind, ModelParams, Network};
pub use optim::Adam;
pub use train::{
    check_gradients, score_bags, train, train_architecture, TrainConfig, TrainedModel,
};
