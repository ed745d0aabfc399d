//! Autoencoder pretraining, prototype initialization and the joint
//! optimization loop with dynamic loss weighting and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{apply_norm, fit_norm, sample_batch, Sample, WeakLabel, WeakSplit};
use crate::error::{Error, Result};
use crate::metrics::auc_pr;
use crate::model::{LossTerms, Model, ObjectiveSettings, TermCoefficients};
use crate::nn::{adam_step, select_k, AdamConfig, KSelection, ParamTensor};
use crate::prototypes::{init_prototypes, l2_normalize, KChoice};
use crate::recon::{recon_error, recon_error_grad, Autoencoder};
use crate::scorer::{ScoreLossKind, Scorer};
use crate::snapshot::ModelSnapshot;

/// Component switches; every flag `true` is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_recon_loss: bool,
    pub use_np_loss: bool,
    pub use_weights: bool,
    pub use_decoder: bool,
    pub multi_prototype: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_recon_loss: true,
            use_np_loss: true,
            use_weights: true,
            use_decoder: true,
            multi_prototype: true,
        }
    }
}

impl Ablation {
    pub const COMPONENTS: [&'static str; 5] = [
        "use_recon_loss",
        "use_np_loss",
        "use_weights",
        "use_decoder",
        "multi_prototype",
    ];

    /// The full model with one named component switched off.
    pub fn without(component: &str) -> Result<Self> {
        let mut a = Self::default();
        a.switch_off(component)?;
        Ok(a)
    }

    pub fn switch_off(&mut self, component: &str) -> Result<()> {
        match component {
            "use_recon_loss" => self.use_recon_loss = false,
            "use_np_loss" => self.use_np_loss = false,
            "use_weights" => self.use_weights = false,
            "use_decoder" => self.use_decoder = false,
            "multi_prototype" => self.multi_prototype = false,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown ablation component '{other}' (expected one of {})",
                    Self::COMPONENTS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Zeroes the coefficients of switched-off terms.
    pub fn mask(&self, mut c: TermCoefficients) -> TermCoefficients {
        if !self.use_recon_loss || !self.use_decoder {
            c.recon_u = 0.0;
            c.recon_a = 0.0;
        }
        if !self.use_np_loss {
            c.kl = 0.0;
            c.con = 0.0;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingRule {
    /// Unweighted total loss on the weakly labeled validation split.
    #[default]
    ValObjective,
    /// `1 - AUC-PR` on validation ground truth.
    ValAucPr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_unlabeled: usize,
    pub batch_anomaly: usize,
    pub m1: f64,
    pub alpha: f64,
    pub beta: f64,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub scorer_hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub k: KChoice,
    pub k_max: usize,
    pub epochs_max: usize,
    pub pretrain_epochs: usize,
    pub patience: usize,
    pub dwa_temperature: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub score_loss: ScoreLossKind,
    pub detach_weights: bool,
    pub stopping: StoppingRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_unlabeled: 128,
            batch_anomaly: 32,
            m1: 0.02,
            alpha: 1.0,
            beta: 1.0,
            latent_dim: 8,
            hidden_dim: 64,
            scorer_hidden: 32,
            learning_rate: 5e-3,
            weight_decay: 5e-4,
            k: KChoice::Auto,
            k_max: 10,
            epochs_max: 50,
            pretrain_epochs: 20,
            patience: 10,
            dwa_temperature: 2.0,
            seed: 0,
            ablation: Ablation::default(),
            score_loss: ScoreLossKind::SquaredError,
            detach_weights: true,
            stopping: StoppingRule::ValObjective,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_int = [
            ("batch_unlabeled", self.batch_unlabeled),
            ("batch_anomaly", self.batch_anomaly),
            ("latent_dim", self.latent_dim),
            ("hidden_dim", self.hidden_dim),
            ("scorer_hidden", self.scorer_hidden),
            ("k_max", self.k_max),
            ("patience", self.patience),
        ];
        for (name, v) in positive_int {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        let positive_real = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("learning_rate", self.learning_rate),
            ("dwa_temperature", self.dwa_temperature),
        ];
        for (name, v) in positive_real {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.m1.is_finite() && self.m1 >= 0.0) {
            return Err(Error::InvalidConfig(format!("m1 must be non-negative, got {}", self.m1)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.k == KChoice::Fixed(0) {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            m1: self.m1,
            use_weights: self.ablation.use_weights,
            use_decoder: self.ablation.use_decoder,
            detach_weights: self.detach_weights,
            score_loss: self.score_loss,
        }
    }

    fn network_adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub recon: f64,
    pub np: f64,
    pub score: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub val_objective: Option<f64>,
    pub stopped_early: bool,
}

/// Per-epoch task weights from the recent rate of descent of each loss.
///
/// `history[t]` holds `[L_recon, L_np, L_score]` of epoch `t + 1`. Fewer
/// than two past epochs gives `(1, 1, 1)`. A zero previous-but-one loss
/// gives a ratio of 1 for that term.
pub fn dynamic_weights(history: &[[f64; 3]], temperature: f64) -> [f64; 3] {
    let n = history.len();
    if n < 2 {
        return [1.0; 3];
    }
    let (last, prev) = (history[n - 1], history[n - 2]);
    let r: [f64; 3] = std::array::from_fn(|m| if prev[m] == 0.0 { 1.0 } else { last[m] / prev[m] });
    let top = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: [f64; 3] = std::array::from_fn(|m| ((r[m] - top) / temperature).exp());
    let total: f64 = ex.iter().sum();
    std::array::from_fn(|m| 3.0 * ex[m] / total)
}

/// Plain reconstruction training on unlabeled rows. Returns the mean
/// per-sample error of each epoch.
pub fn pretrain(
    ae: &mut Autoencoder,
    unlabeled: &[Vec<f64>],
    epochs: usize,
    batch_size: usize,
    adam: &AdamConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if unlabeled.is_empty() {
        return Err(Error::EmptyInput("no unlabeled samples for pretraining".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..unlabeled.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(batch_size).enumerate() {
            ae.zero_grad();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let x = &unlabeled[i];
                let (z, enc_tape) = ae.encoder.forward(x)?;
                let (x_hat, dec_tape) = ae.decoder.forward(&z)?;
                let e = recon_error(x, &x_hat)?;
                if !e.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step: step + 1,
                        detail: "pretraining reconstruction error".into(),
                    });
                }
                total += e;
                let g: Vec<f64> = recon_error_grad(x, &x_hat).into_iter().map(|v| v * scale).collect();
                let dz = ae.decoder.backward(&dec_tape, &g)?;
                ae.encoder.backward(&enc_tape, &dz)?;
            }
            adam_step(
                ae.encoder.params_mut().iter_mut().chain(ae.decoder.params_mut().iter_mut()),
                adam,
            )?;
        }
        history.push(total / unlabeled.len() as f64);
    }
    Ok(history)
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub snapshot: ModelSnapshot,
    pub reports: Vec<EpochReport>,
    pub pretrain_losses: Vec<f64>,
    pub k_selection: Option<KSelection>,
    /// Epoch of the returned parameters (0 means right after init).
    pub best_epoch: usize,
}

fn features(samples: &[Sample]) -> Vec<Vec<f64>> {
    samples.iter().map(|s| s.features.clone()).collect()
}

/// Unit task weights without the clustering term. Its target is rebuilt
/// from the model under evaluation, so its value tracks cluster sharpness
/// rather than fit and grows as training succeeds.
pub fn validation_coefficients(ablation: &Ablation) -> TermCoefficients {
    let mut c = ablation.mask(TermCoefficients::from_task_weights([1.0; 3]));
    c.kl = 0.0;
    c
}

struct Validation {
    unlabeled: Vec<Vec<f64>>,
    anomalies: Vec<Vec<f64>>,
    all: Vec<Vec<f64>>,
    truth: Option<Vec<bool>>,
}

impl Validation {
    fn new(val: &[Sample]) -> Self {
        let (anom, unl): (Vec<&Sample>, Vec<&Sample>) =
            val.iter().partition(|s| s.weak_label == WeakLabel::LabeledAnomaly);
        let truth: Option<Vec<bool>> = val.iter().map(|s| s.truth.map(|t| t.is_anomaly())).collect();
        let truth = truth.filter(|t| t.iter().any(|&b| b) && t.iter().any(|&b| !b));
        Self {
            unlabeled: unl.iter().map(|s| s.features.clone()).collect(),
            anomalies: anom.iter().map(|s| s.features.clone()).collect(),
            all: val.iter().map(|s| s.features.clone()).collect(),
            truth,
        }
    }

    fn objective(&self, model: &Model, config: &TrainConfig) -> Result<Option<f64>> {
        match config.stopping {
            StoppingRule::ValObjective => {
                if self.unlabeled.is_empty() || self.anomalies.is_empty() {
                    return Ok(None);
                }
                let u: Vec<&[f64]> = self.unlabeled.iter().map(Vec::as_slice).collect();
                let a: Vec<&[f64]> = self.anomalies.iter().map(Vec::as_slice).collect();
                let eval = model.evaluate(&u, &a, &config.objective(), None)?;
                Ok(Some(eval.terms.combined(&validation_coefficients(&config.ablation))))
            }
            StoppingRule::ValAucPr => {
                let Some(truth) = &self.truth else {
                    return Ok(None);
                };
                let scores: Vec<f64> = self
                    .all
                    .iter()
                    .map(|x| model.infer_normalized(x).map(|i| i.score))
                    .collect::<Result<_>>()?;
                Ok(Some(1.0 - auc_pr(&scores, truth)?))
            }
        }
    }
}

fn joint_params(model: &mut Model, use_decoder: bool) -> (Vec<&mut ParamTensor>, &mut ParamTensor) {
    let mut net: Vec<&mut ParamTensor> = model.ae.encoder.params_mut().iter_mut().collect();
    if use_decoder {
        net.extend(model.ae.decoder.params_mut().iter_mut());
    }
    net.extend(model.scorer.net.params_mut().iter_mut());
    (net, &mut model.bank.u)
}

/// The prototype count `fit` would pick with `k = auto` when every row is
/// unlabeled: normalize, pretrain, then select on the unit latents.
pub fn select_prototype_count(rows: &[Vec<f64>], config: &TrainConfig) -> Result<KSelection> {
    config.validate()?;
    let samples: Vec<Sample> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| Sample::unlabeled(i, r.clone(), None))
        .collect();
    let norm = fit_norm(&samples)?;
    let unl = features(&apply_norm(&norm, &samples)?);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ae = Autoencoder::new(norm.dim(), config.latent_dim, config.hidden_dim, &mut rng)?;
    pretrain(&mut ae, &unl, config.pretrain_epochs, config.batch_unlabeled, &config.network_adam(), &mut rng)?;
    let latents: Vec<Vec<f64>> = unl
        .iter()
        .map(|x| ae.encoder.predict(x).and_then(|z| l2_normalize(&z).map(|(u, _)| u)))
        .collect::<Result<_>>()?;
    select_k(&latents, config.k_max, config.seed)
}

/// Trains a detector on a weak split.
///
/// Normalization statistics are fitted on the training rows. The returned
/// snapshot holds the parameters of the epoch with the best validation
/// objective, or of the last epoch when validation is unavailable.
pub fn fit(split: &WeakSplit, config: &TrainConfig) -> Result<FitOutput> {
    config.validate()?;
    if split.train_anomalies.is_empty() {
        return Err(Error::NoLabeledAnomalies);
    }
    if split.train_unlabeled.is_empty() {
        return Err(Error::EmptyInput("no unlabeled training samples".into()));
    }
    let train_rows: Vec<Sample> = split
        .train_unlabeled
        .iter()
        .chain(&split.train_anomalies)
        .cloned()
        .collect();
    let norm = fit_norm(&train_rows)?;
    let unl = features(&apply_norm(&norm, &split.train_unlabeled)?);
    let anom = features(&apply_norm(&norm, &split.train_anomalies)?);
    let validation = Validation::new(&apply_norm(&norm, &split.val)?);
    let dim = norm.dim();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let network_adam = config.network_adam();
    let proto_adam = network_adam.with_weight_decay(0.0);

    let mut ae = Autoencoder::new(dim, config.latent_dim, config.hidden_dim, &mut rng)?;
    let pretrain_losses = pretrain(
        &mut ae,
        &unl,
        config.pretrain_epochs,
        config.batch_unlabeled,
        &network_adam,
        &mut rng,
    )?;

    let k = if config.ablation.multi_prototype { config.k } else { KChoice::Fixed(1) };
    let (bank, k_selection) = init_prototypes(
        &ae.encoder,
        &unl,
        k,
        config.k_max,
        config.alpha,
        config.beta,
        config.seed,
    )?;
    let use_decoder = config.ablation.use_decoder;
    let scorer = Scorer::new(config.latent_dim, config.scorer_hidden, use_decoder, &mut rng)?;
    let mut model = Model::from_parts(ae, bank, scorer)?;
    let inputs: Vec<_> = unl.iter().map(|x| model.score_input(x)).collect::<Result<_>>()?;
    model.scorer.standardize_inputs(&inputs)?;
    for p in model.params_mut() {
        p.reset_optimizer();
    }

    let settings = config.objective();
    let steps = unl.len().div_ceil(config.batch_unlabeled);
    let mut history: Vec<[f64; 3]> = Vec::new();
    let mut reports = Vec::new();
    let mut best: Option<(f64, Model, usize)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs_max {
        let [w1, w2, w3] = dynamic_weights(&history, config.dwa_temperature);
        let coeffs = config.ablation.mask(TermCoefficients::from_task_weights([w1, w2, w3]));
        let mut sums = LossTerms::default();
        for step in 1..=steps {
            let batch = sample_batch(&unl, &anom, config.batch_unlabeled, config.batch_anomaly, &mut rng)?;
            let u: Vec<&[f64]> = batch.unlabeled.iter().map(|&i| unl[i].as_slice()).collect();
            let a: Vec<&[f64]> = batch.anomalies.iter().map(|&i| anom[i].as_slice()).collect();
            let eval = model.evaluate(&u, &a, &settings, None)?;
            let t = eval.terms;
            if !t.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!(
                        "recon_u={} recon_a={} kl={} con={} score={}",
                        t.recon_u, t.recon_a, t.kl, t.con, t.score
                    ),
                });
            }
            sums.recon_u += t.recon_u;
            sums.recon_a += t.recon_a;
            sums.kl += t.kl;
            sums.con += t.con;
            sums.score += t.score;

            model.zero_grad();
            model.backward(&eval, &settings, &coeffs)?;
            let (net, protos) = joint_params(&mut model, use_decoder);
            adam_step(net, &network_adam)?;
            adam_step(std::iter::once(protos), &proto_adam)?;
        }
        let n = steps as f64;
        let means = [sums.recon() / n, sums.np() / n, sums.score / n];
        history.push(means);

        let val_objective = validation.objective(&model, config)?;
        let mut stopped_early = false;
        match val_objective {
            Some(v) if best.as_ref().is_none_or(|(b, _, _)| v < *b) => {
                best = Some((v, model.clone(), epoch));
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                stopped_early = since_best >= config.patience;
            }
            None => {}
        }
        reports.push(EpochReport {
            epoch,
            recon: means[0],
            np: means[1],
            score: means[2],
            w1,
            w2,
            w3,
            val_objective,
            stopped_early,
        });
        if stopped_early {
            break;
        }
    }

    let last_epoch = reports.len();
    let (model, best_epoch) = match best {
        Some((_, m, e)) => (m, e),
        None => (model, last_epoch),
    };
    Ok(FitOutput {
        snapshot: ModelSnapshot::new(model, norm, config.clone())?,
        reports,
        pretrain_losses,
        k_selection,
        best_epoch,
    })
}
