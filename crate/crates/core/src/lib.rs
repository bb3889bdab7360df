//! Lead-time pricing: reference-price choice models, market segmentation
//! trees, policy optimization, a hierarchical time-window extension, a
//! synthetic marketplace and the artifacts and engine used for serving.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the common concrete types.

pub mod artifact;
pub mod calendar;
pub mod choice;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod features;
pub mod mst;
pub mod optim;
pub mod predictors;
pub mod pricer;
pub mod quotelog;
pub mod scalar;
pub mod second_level;
pub mod simulator;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MnlParamsF64 = choice::MnlParams<f64>;
pub type MnlParamsF32 = choice::MnlParams<f32>;
pub type ChoiceObservationF64 = choice::ChoiceObservation<f64>;
pub type ChoiceObservationF32 = choice::ChoiceObservation<f32>;
pub type SegmentationTreeF64 = mst::SegmentationTree<f64>;
pub type SegmentationTreeF32 = mst::SegmentationTree<f32>;
pub type TrainingSetF64 = dataset::TrainingSet<f64>;
pub type TrainingSetF32 = dataset::TrainingSet<f32>;
pub type GuardrailsF64 = pricer::Guardrails<f64>;
pub type WindowMnlParamsF64 = second_level::WindowMnlParams<f64>;
