//! Compact visual place recognition with fly-inspired DrosoNet classifiers
//! and windowed multi-model voting.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tool and model files.

pub mod drosonet;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod persist;
pub mod scalar;
pub mod seed;
pub mod synth;
pub mod voting;

pub use drosonet::{
    binarize, encode, forward, train, DrosoNet, FeatureTag, ProjectionMatrix, QuantizedWeights,
    ScoreVector, TrainConfig, WeightMatrix, Weights,
};
pub use error::{Error, Result};
pub use eval::{benchmark, evaluate, match_correct, pr_curve, GroundTruth, LatencyStats, MatchResult, PRCurve};
pub use imaging::{preprocess, ImageVector, RawFrame, IMAGE_LEN};
pub use scalar::{argmax, Scalar};
pub use synth::SynthConfig;
pub use voting::{
    aggregate, fuse_scores, mask_scores, softmax_normalize, window_bounds, Ensemble, EnsembleConfig,
    MaskedScoreVector,
};

pub type DrosoNet32 = DrosoNet<f32>;
pub type DrosoNet64 = DrosoNet<f64>;
pub type Ensemble32 = Ensemble<f32>;
pub type Ensemble64 = Ensemble<f64>;
pub type ImageVector32 = ImageVector<f32>;
pub type ImageVector64 = ImageVector<f64>;

/// Preprocesses a batch of frames.
pub fn preprocess_all<T: Scalar>(frames: &[RawFrame]) -> Result<Vec<ImageVector<T>>> {
    frames.iter().map(preprocess).collect()
}
