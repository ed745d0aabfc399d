use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use protoad::data::AnomalyKind;
use protoad::experiment::ExperimentKind;
use protoad::{Ablation, KChoice, ScoreLossKind, StoppingRule, TrainConfig};

/// Weakly supervised tabular anomaly detection with multiple normal prototypes.
///
/// CSV files are comma-separated with a header row and numeric features.
/// The label column means different things per subcommand: for `fit` it
/// holds weak labels (1 = labeled anomaly, 0 = unlabeled) unless
/// `--labeled-ratio` is given, in which case it is ground truth and the weak
/// labels are drawn from it. For `eval` it is always ground truth.
#[derive(Debug, Parser)]
#[command(name = "protoad", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, global = true, default_value = "label")]
    pub label_column: String,

    /// Output path. Defaults to stdout for tabular and JSON results.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a detector and write a model snapshot (`--out` is required).
    Fit(FitArgs),
    /// Score rows of a CSV with a saved model; writes `id,score`.
    Score(ScoreArgs),
    /// Compare a scores CSV with ground truth; prints metrics JSON.
    Eval(EvalArgs),
    /// Silhouette per candidate k on pretrained latents, and the chosen k.
    SelectK(SelectKArgs),
    /// Generate a synthetic multi-cluster dataset with a ground-truth column.
    Synth(SynthArgs),
    /// Run a seeded experiment grid; writes one CSV row per run.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training CSV.
    #[arg(long)]
    pub train: PathBuf,

    /// Treat the label column as ground truth and label this fraction of the
    /// training anomalies (e.g. 0.01). Enables a held-out test split.
    #[arg(long)]
    pub labeled_ratio: Option<f64>,

    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,

    /// Only with `--labeled-ratio`.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,

    /// Per-epoch report CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,

    /// Write the held-out test rows (features and truth) to this CSV.
    /// Only with `--labeled-ratio`.
    #[arg(long)]
    pub test_out: Option<PathBuf>,

    #[command(flatten)]
    pub train_opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// Rows to score. A label column, if present, is ignored.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// CSV with `id,score` columns.
    #[arg(long)]
    pub scores: PathBuf,

    /// CSV with the label column and optionally an `id` column; without one,
    /// ids are row numbers starting at 0.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectKArgs {
    #[arg(long)]
    pub input: PathBuf,

    #[command(flatten)]
    pub train_opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Total rows.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,

    #[arg(long, default_value_t = 0.05)]
    pub anomaly_rate: f64,

    #[arg(long, default_value_t = 10)]
    pub dim: usize,

    #[arg(long, default_value_t = 3)]
    pub k_true: usize,

    #[arg(long, value_enum, default_value_t = KindArg::UniformFar)]
    pub anomaly_kind: KindArg,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub kind: ExperimentArg,

    /// Comma-separated grid. Percent for the sweeps, k for k-sensitivity,
    /// component index for ablation (0 = full model). Ignored by `unseen`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Vec<f64>,

    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,

    #[arg(long, default_value_t = 2000)]
    pub n: usize,

    #[arg(long, default_value_t = 0.05)]
    pub anomaly_rate: f64,

    #[arg(long, default_value_t = 10)]
    pub dim: usize,

    #[arg(long, default_value_t = 3)]
    pub k_true: usize,

    #[arg(long, value_enum, default_value_t = KindArg::UniformFar)]
    pub anomaly_kind: KindArg,

    /// Test-only anomaly kind for `unseen`.
    #[arg(long, value_enum, default_value_t = KindArg::ShiftedCluster)]
    pub unseen_kind: KindArg,

    #[arg(long, default_value_t = 0.01)]
    pub labeled_ratio: f64,

    #[command(flatten)]
    pub train_opts: TrainOpts,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    UniformFar,
    ShiftedCluster,
}

impl From<KindArg> for AnomalyKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::UniformFar => AnomalyKind::UniformFar,
            KindArg::ShiftedCluster => AnomalyKind::ShiftedCluster,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExperimentArg {
    RatioSweep,
    ContaminationSweep,
    Unseen,
    KSensitivity,
    Ablation,
}

impl From<ExperimentArg> for ExperimentKind {
    fn from(k: ExperimentArg) -> Self {
        match k {
            ExperimentArg::RatioSweep => ExperimentKind::RatioSweep,
            ExperimentArg::ContaminationSweep => ExperimentKind::ContaminationSweep,
            ExperimentArg::Unseen => ExperimentKind::Unseen,
            ExperimentArg::KSensitivity => ExperimentKind::KSensitivity,
            ExperimentArg::Ablation => ExperimentKind::Ablation,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StoppingArg {
    ValObjective,
    ValAucPr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScoreLossArg {
    SquaredError,
    Bce,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ComponentArg {
    ReconLoss,
    NpLoss,
    Weights,
    Decoder,
    MultiPrototype,
}

impl ComponentArg {
    fn name(self) -> &'static str {
        match self {
            ComponentArg::ReconLoss => "use_recon_loss",
            ComponentArg::NpLoss => "use_np_loss",
            ComponentArg::Weights => "use_weights",
            ComponentArg::Decoder => "use_decoder",
            ComponentArg::MultiPrototype => "multi_prototype",
        }
    }
}

/// Overrides on top of the default training configuration.
#[derive(Debug, Args)]
pub struct TrainOpts {
    /// Prototype count: an integer or `auto`.
    #[arg(long)]
    pub k: Option<KChoice>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub scorer_hidden: Option<usize>,
    #[arg(long)]
    pub batch_unlabeled: Option<usize>,
    #[arg(long)]
    pub batch_anomaly: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub m1: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub dwa_temperature: Option<f64>,
    #[arg(long, value_enum)]
    pub stopping: Option<StoppingArg>,
    #[arg(long, value_enum)]
    pub score_loss: Option<ScoreLossArg>,
    /// Switch off a model component; repeatable.
    #[arg(long, value_enum)]
    pub ablate: Vec<ComponentArg>,
    /// Let gradients flow through the normality weights.
    #[arg(long)]
    pub live_weights: bool,
}

impl TrainOpts {
    pub fn to_config(&self, seed: u64) -> protoad::Result<TrainConfig> {
        let mut c = TrainConfig { seed, ..TrainConfig::default() };
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = self.$field { c.$target = v; })*
            };
        }
        set!(
            k => k, k_max => k_max, epochs => epochs_max, pretrain_epochs => pretrain_epochs,
            patience => patience, latent_dim => latent_dim, hidden_dim => hidden_dim,
            scorer_hidden => scorer_hidden, batch_unlabeled => batch_unlabeled,
            batch_anomaly => batch_anomaly, lr => learning_rate, weight_decay => weight_decay,
            m1 => m1, alpha => alpha, beta => beta, dwa_temperature => dwa_temperature,
        );
        if let Some(s) = self.stopping {
            c.stopping = match s {
                StoppingArg::ValObjective => StoppingRule::ValObjective,
                StoppingArg::ValAucPr => StoppingRule::ValAucPr,
            };
        }
        if let Some(l) = self.score_loss {
            c.score_loss = match l {
                ScoreLossArg::SquaredError => ScoreLossKind::SquaredError,
                ScoreLossArg::Bce => ScoreLossKind::BinaryCrossEntropy,
            };
        }
        let mut ablation = Ablation::default();
        for a in &self.ablate {
            ablation.switch_off(a.name())?;
        }
        c.ablation = ablation;
        c.detach_weights = !self.live_weights;
        c.validate()?;
        Ok(c)
    }
}
