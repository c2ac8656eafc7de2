//! Divergences between finite distributions and the min-max duality behind
//! f-GANs, Wasserstein GANs and their hybrids.
//!
//! The modules build on each other: [`dist`] holds the data types, [`fdiv`] and
//! [`transport`] the two divergence families, [`hybrid`] their infimal
//! convolution, [`duality`] the discriminator-class identities, [`neuralgan`]
//! the trainable models and [`experiments`] the reproducible drivers.

pub mod ascent;
pub mod dist;
pub mod duality;
pub mod error;
pub mod experiments;
pub mod fdiv;
pub mod hybrid;
pub mod lp;
pub mod neuralgan;
pub mod transport;

pub use dist::{
    coupling_marginals, expectation, pushforward, Coupling, FiniteDistribution, GeneratorFamily,
    RandomSource, Support, SupportPoint, Witness,
};
pub use error::{Error, Result};
pub use fdiv::FGenerator;
