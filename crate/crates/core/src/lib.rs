//! Diffeomorphic displacement-field algebra on 2D grids.
//!
//! * [`field`]: grids, images, displacement fields, composition, warping, Jacobians.
//! * [`lie`]: inversion, square roots, root chains, log/exp maps.
//! * [`registration`]: inverse-consistent pairwise registration.
//! * [`latent`]: Log-Euclidean PCA basis, encode/decode, modes of variation.
//! * [`metrics`]: consistency losses, Dice.
//! * [`atlas`]: iterative atlas estimation in latent space.
//! * [`synth`]: phantoms and random diffeomorphisms with known logarithms.
//! * [`io`]: PGM images, MFLD field files, basis files.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atlas;
pub mod error;
pub mod field;
pub mod io;
pub mod latent;
pub mod lie;
pub mod metrics;
pub mod registration;
pub mod smooth;
pub mod synth;

pub use error::{Error, Result};
pub use field::{
    compose, field_rms_diff, identity_field, jacobian_determinant, neg_jacobian_fraction, sample_field, self_compose_m,
    warp_image, warp_labels, DisplacementField, Grid, LabelImage, ScalarImage,
};
pub use lie::{exp_field, invert, log_field, root_chain, sqrt_field, LogField, RootChain, SolverConfig};
