//! Weakly supervised anomaly detection for tabular data.
//!
//! An autoencoder, a bank of normal prototypes in the L2-normalized latent
//! space and a small scoring network are trained jointly from a large
//! unlabeled pool plus a handful of labeled anomalies. Unlabeled samples
//! are down-weighted by how unlike every prototype they look, so anomalies
//! hiding in the unlabeled pool pull less on the model.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod prototypes;
pub mod recon;
pub mod scorer;
pub mod snapshot;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{BatchEval, Detached, Inference, LossTerms, Model, ObjectiveSettings, Term, TermCoefficients};
pub use prototypes::{KChoice, PrototypeBank};
pub use recon::Autoencoder;
pub use scorer::{ScoreLossKind, Scorer};
pub use snapshot::ModelSnapshot;
pub use trainer::{fit, Ablation, EpochReport, FitOutput, StoppingRule, TrainConfig};
pub use metrics::{auc_pr, auc_roc, EvalResult};
