//! A minimal deterministic neural-network engine: exactly the layers the
//! fused classifier needs, with analytic backprop, closed-form
//! parameter/MAC counters, and bit-exact checkpoint I/O.

mod checkpoint;
mod count;
mod layers;
mod model;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use count::{backbone_macs, count_macs, count_params, MacBreakdown};
pub use layers::{conv1d, cross_entropy, cross_entropy_logit_grad, depthwise_separable};
pub use model::{
    argmax, expected_shapes, init_params, AuxCache, BackboneCache, BackboneConfig, ConvSpec,
    Domain, DomainTensors, ForwardMode, FusedCache, HeadCache, Model, ModelConfig, ParameterSet,
    Scope, NUM_CLASSES,
};
pub use tensor::{Scalar, Tensor};
