//! Desk-scale sensorimotor body-image laboratory.
//!
//! A 2D articulated arm is rendered over procedural backgrounds to produce
//! image/motor pairs with exact ground-truth body masks. A two-branch
//! deconvolutional network learns to predict the image and its own
//! prediction error from the motor state alone; thresholding the predicted
//! error at the intersection of a 2-component Gaussian mixture segments the
//! arm from the background without labels.

pub mod arm_scene;
pub mod dataset;
pub mod evaluation;
pub mod imageio;
pub mod model;
pub mod segmentation;
