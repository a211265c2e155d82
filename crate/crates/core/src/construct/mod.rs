//! Explicit ReLU constructions: a sparse network type, approximation
//! gadgets, and the network that memorizes training balls on top of a clean
//! classifier.

pub mod cgro;
pub mod gadgets;
pub mod net;

pub use cgro::{
    attack_succeeds, build_cgro_net, eval_f_s, halfspace_clean_net, overlapping_pairs,
    probe_points, separated_task, verify, CgroBuildSpec, LabeledPoint, VerificationReport,
};
pub use gadgets::{product_gadget, soft_indicator, sqdist_gadget, square_gadget};
pub use net::{Layer, ReluNet};
