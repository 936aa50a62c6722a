//! Training and analysis toolkit for binary text-veracity classifiers whose
//! latent article space is shaped during optimization by cosine-distance
//! constraints against user-generated content.
//!
//! Pipeline: [`corpus`] loads or generates data, [`textpipe`] turns text
//! into index encodings, [`encoders`] computes latent representations on a
//! [`veracity_autodiff`] graph, [`objectives`] combines the prediction and
//! distance losses, [`trainer`] optimizes with Adam and early stopping, and
//! [`evaluation`] / [`diagnostics`] measure class separation afterwards.

pub mod corpus;
pub mod diagnostics;
pub mod encoders;
pub mod evaluation;
pub mod objectives;
pub mod params;
pub mod trainer;
pub mod textpipe;
