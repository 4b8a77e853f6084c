//! Toolkit for evaluating synthetic-speech (deepfake) detectors under
//! telephony conditions.
//!
//! The crate covers the whole desk-scale pipeline: energy VAD and net-speech
//! bookkeeping ([`audio`]), log-mel features ([`features`]), the ResNet-CoT
//! detector forward pass ([`detector`]), channel simulation and augmentation
//! ([`presentation`]), manifests and pooled test sets ([`corpus`]) and the
//! EER / MDR-at-FAR scoring protocol ([`eval`]).

pub mod audio;
pub mod corpus;
pub mod detector;
pub mod eval;
pub mod features;
pub mod presentation;
pub mod seed;
