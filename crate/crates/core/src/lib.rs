//! Single-channel STFT-domain dereverberation toolkit.
//!
//! * [`dsp`]: WAV I/O, STFT/ISTFT, convolution.
//! * [`rir`]: randomized image-method room impulse responses and RT60 estimation.
//! * [`ncfir`]: per-bin non-causal MSE-optimal complex FIR filters.
//! * [`featurize`]: log-Mel energies, per-utterance MVN, context stacking.
//! * [`mlp`]: feed-forward reverberant-to-clean feature mapper.
//! * [`mixing`]: semi-enhanced feature mixing and lambda tuning.
//! * [`diagnostics`]: bin-trajectory autocorrelation, spectrogram export, MSE reports.
//! * [`corpus`]: synthetic utterances and reverberant corpus assembly.
//!
//! Numeric code is generic over [`Real`] (`f32`/`f64`); the aliases below
//! fix the scalar for the common cases.

pub mod corpus;
pub mod diagnostics;
pub mod dsp;
pub mod error;
pub mod featurize;
pub mod linalg;
pub mod mixing;
pub mod mlp;
pub mod ncfir;
pub mod rir;
pub mod scalar;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Real;

pub type Waveform = dsp::Waveform<f64>;
pub type ComplexSpectrogram = dsp::ComplexSpectrogram<f64>;
pub type RoomSpec = rir::RoomSpec<f64>;
pub type Rir = rir::Rir<f64>;
pub type BinTrajectory = ncfir::BinTrajectory<f64>;
pub type NcFirFilter = ncfir::NcFirFilter<f64>;
pub type NormalSystem = ncfir::NormalSystem<f64>;
pub type FeatureMatrix = featurize::FeatureMatrix<f64>;
pub type MelFilterBank = featurize::MelFilterBank<f64>;
pub type ContextSeq = featurize::ContextSeq<f64>;
/// Single precision is the default for training.
pub type MlpModel = mlp::MlpModel<f32>;
pub type MlpModel64 = mlp::MlpModel<f64>;
pub type AutocorrCurve = diagnostics::AutocorrCurve<f64>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
