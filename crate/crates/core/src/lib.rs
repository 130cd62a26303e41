//! Bimodal (face + voice) biometric authentication.
//!
//! The face side detects and aligns a face, normalizes it to a 70×70 canonical
//! crop and matches it in an Eigenfaces subspace. The voice side extracts MFCC
//! frames and matches them against per-user LBG codebooks. Both distances are
//! mapped through a double-sigmoid normalization and combined as a weighted
//! sum of scores.

pub mod face_detect;
pub mod imaging;
pub mod face_pipeline;
pub mod speech_features;
pub mod synthetic;
pub mod binio;
pub mod eigenfaces;
pub mod fusion;
pub mod linalg;
pub mod vq_model;
pub mod profile_store;
pub mod config;
pub mod authenticator;
pub mod evaluation;
pub mod authsvc;
