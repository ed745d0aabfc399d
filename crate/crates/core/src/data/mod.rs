//! Samples, CSV ingestion, normalization, weak-label splits, mini-batch
//! sampling and synthetic multi-modal data.

mod batch;
mod csv_io;
mod norm;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

pub use batch::{sample_batch, Batch};
pub use csv_io::{load_csv, load_csv_for_scoring, write_csv};
pub use norm::{apply_norm, fit_norm, NormStats};
pub use split::{make_weak_split, split_weak_labels, SplitConfig, WeakSplit};
pub use synth::{synth_multimodal, AnomalyKind, MixtureGenerator, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakLabel {
    Unlabeled,
    LabeledAnomaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Normal,
    Anomaly,
}

impl Truth {
    pub fn is_anomaly(self) -> bool {
        self == Truth::Anomaly
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f64>,
    pub weak_label: WeakLabel,
    pub truth: Option<Truth>,
}

impl Sample {
    pub fn unlabeled(id: usize, features: Vec<f64>, truth: Option<Truth>) -> Self {
        Self {
            id,
            features,
            weak_label: WeakLabel::Unlabeled,
            truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_anomalies(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.truth == Some(Truth::Anomaly))
            .count()
    }

    pub fn default_feature_names(dim: usize) -> Vec<String> {
        (0..dim).map(|i| format!("f{i}")).collect()
    }
}
