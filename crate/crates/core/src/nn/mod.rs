//! Dense-network numerics: parameter tensors, MLPs with explicit tapes,
//! Adam, and the clustering used to seed prototypes.

mod adam;
mod cluster;
mod mlp;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use cluster::{
    kmeans, select_k, silhouette_score, KCandidate, KMeansResult, KSelection, KMEANS_MAX_ITER,
    MIN_SILHOUETTE_FOR_SPLIT, SILHOUETTE_SAMPLE_CAP,
};
pub(crate) use mlp::sigmoid;
pub use mlp::{mlp_backward, mlp_forward, HiddenActivation, Mlp, MlpSpec, OutputActivation, Tape};
pub use tensor::{ParamTensor, Shape};
