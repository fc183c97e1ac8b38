//! Cross-domain template matching with multi-channel normalized cross-correlation.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common concrete instantiations.

pub mod correlate;
pub mod error;
pub mod eval;
pub mod filter;
pub mod io;
pub mod learn;
pub mod normalize;
pub mod scalar;
pub mod tensor;
pub mod whiten;

pub use correlate::{AlignmentConfig, ChannelWeights, MatchScore, Scorer};
pub use error::{Error, Result};
pub use learn::SiameseModel;
pub use normalize::{GlobalStats, NormalizationScheme};
pub use scalar::{DType, Scalar};
pub use tensor::{FeatureMap, SupportRegion};
pub use whiten::Projection;

pub type FeatureMap32 = FeatureMap<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type Scorer32 = Scorer<f32>;
pub type Scorer64 = Scorer<f64>;
pub type Projection32 = Projection<f32>;
pub type Projection64 = Projection<f64>;
pub type SiameseModel32 = SiameseModel<f32>;
pub type SiameseModel64 = SiameseModel<f64>;
pub type GlobalStats32 = GlobalStats<f32>;
pub type GlobalStats64 = GlobalStats<f64>;
