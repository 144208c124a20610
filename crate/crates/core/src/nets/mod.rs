//! Layer construction, optimizers and checkpoints.

mod bundle;
pub mod checkpoint;
mod network;
mod optim;
mod spec;

pub use bundle::{network_hash, ModelBundle};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use network::{Layer, Network, Trace, BN_MOMENTUM};
pub use optim::{Optimizer, OptimizerConfig};
pub use spec::{classifier, encoder, Activation, BundleSpec, Dims, LayerSpec, NetworkSpec};
