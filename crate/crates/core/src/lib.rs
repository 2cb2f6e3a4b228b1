//! Score-oriented losses for binary classification.
//!
//! A skill score computed on a thresholded confusion matrix is a step
//! function of the model outputs and cannot be maximized by gradient
//! descent. Treating the decision threshold as a random variable with
//! cdf `F` replaces the indicator functions in the confusion matrix by
//! `F` evaluated at the model outputs, which makes every derived score
//! differentiable. Negating such a score yields a trainable loss.
//!
//! The crate is organized around two strategy families selected by name
//! at runtime:
//!
//! * [`distributions`]: the threshold distributions (uniform, raised
//!   cosine) behind [`distributions::ThresholdDist`];
//! * [`scores`]: the skill scores (accuracy, f1, tss, csi) behind
//!   [`scores::SkillScore`], plus the loss family behind
//!   [`scores::Loss`].
//!
//! On top of those sit the expected confusion matrix ([`confusion`]),
//! a small feed-forward classifier with reverse-mode gradients
//! ([`network`]), a training loop ([`train`]), a-posteriori threshold
//! maximization ([`threshold_opt`]), dataset preprocessing ([`ingest`]),
//! a repeated-run experiment harness ([`experiment`]) and a statistical
//! verification suite for the concentration bounds ([`verify`]).

pub mod confusion;
pub mod distributions;
pub mod experiment;
pub mod ingest;
pub mod network;
pub mod scores;
pub mod threshold_opt;
pub mod train;
pub mod verify;
