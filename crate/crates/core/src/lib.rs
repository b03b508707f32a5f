//! Desk-scale toolkit for transfer-based adversarial attacks: dark-surrogate
//! training (teacher soft labels plus mixing augmentations), gradient-sign
//! attack optimizers, a transfer-evaluation harness, and a face-verification
//! attack pipeline.

pub mod attacks;
pub mod augment;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod labeling;
pub mod evalharness;
pub mod faceverify;
pub mod image;
pub mod label;
pub mod loss;
pub mod model;
pub mod plot;
pub mod reference;
pub mod training;
pub mod rng;

pub use error::{Error, Result};
pub use image::ImageBatch;
pub use label::LabelDistribution;
pub use model::ClassifierModel;
pub use rng::Rng;
