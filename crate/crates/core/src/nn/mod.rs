//! Dense numerical core: linear layers, ReLU, a tanh-Gaussian head,
//! hand-written backpropagation and Adam.

pub mod adam;
pub mod gaussian;
pub mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState, MlpAdam};
pub use mlp::{
    Activation, ForwardCache, Gradients, LayerGrad, LinearLayer, Mlp, MlpSpec, OutputHead,
};
pub use gaussian::{deterministic_action, sample, HeadSample};
