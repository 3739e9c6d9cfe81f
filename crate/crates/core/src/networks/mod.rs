//! Generator and discriminator networks.

mod discriminator;
mod generator;
mod params;
mod spectral;

pub use discriminator::{Discriminator, DiscriminatorConfig, SN_LAYERS};
pub use generator::{Generator, GeneratorConfig};
pub(crate) use params::ConvSpec;
pub use params::{ConvLayer, ParamStore, Parameter};
pub use spectral::{initial_u, power_iteration, spectral_normalize, SpectralEstimate};

/// Negative slope of every leaky ReLU in both networks.
pub const LEAKY_SLOPE: f64 = 0.2;
