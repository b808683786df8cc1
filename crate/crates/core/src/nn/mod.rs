//! Dense numeric layer: MLPs with reverse-mode gradients, a categorical
//! policy head, the Adam optimizer and text checkpoints.

mod adam;
pub mod checkpoint;
mod mlp;
mod policy;

pub use adam::{Adam, AdamConfig};
pub use mlp::{Activation, ForwardCache, LayerShape, Mlp, ParamGrad};
pub use policy::{log_softmax, softmax, CategoricalPolicy};

use serde::{Deserialize, Serialize};

/// Architecture and optimizer settings shared by actors and critics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Hidden layer widths; hidden layers use rectifiers, outputs are linear.
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { hidden: vec![64, 64], adam: AdamConfig::default() }
    }
}
