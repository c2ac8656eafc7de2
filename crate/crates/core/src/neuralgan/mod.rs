//! Toy-scale neural GANs: dense networks, Lipschitz control, the perturbation
//! player and the mixture-discriminator construction.

pub mod loss;
pub mod mixture;
pub mod mlp;
pub mod spectral;
pub mod train;

pub use loss::{
    disc_gradient, fake_gradient, gan_loss, generator_gradient, gradient_penalty, objective,
    wrm_inner_solve, Frozen, HeadParams, LossKind, WrmSolution,
};
pub use mixture::{mixture_approx_error, mixture_scaling, MixtureDiscriminator, ScalingRow};
pub use mlp::{load_snapshot, save_snapshot, Activation, Layer, MlpParams};
pub use spectral::{spectral_normalize, SpectralNormState};
pub use train::{train, DataSource, OptimizerKind, TrainConfig, TrainLog, TrainRecord};
