//! The trainable point-context student: a local-geometry descriptor and a
//! small MLP with a unit-norm output layer and hand-written reverse mode.

mod context;
mod net;

pub use context::{featurize_context, featurize_with_index, Descriptors, BASE_DESCRIPTOR_DIM, DEFAULT_K_CTX};
pub use net::{ForwardCache, LayerGroup, StudentNet, DEFAULT_WIDTHS};
