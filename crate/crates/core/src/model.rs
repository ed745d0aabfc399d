//! The joint model and its per-batch objective.
//!
//! [`Model::evaluate`] runs the forward pass for one mini-batch and returns
//! every loss term together with the quantities that are held constant
//! during differentiation (normality weights, the unlabeled reconstruction
//! mean used by the hinge, and the clustering target). Passing those back
//! in as `frozen` re-evaluates the same surrogate objective at perturbed
//! parameters, which is what a finite-difference check needs.
//! [`Model::backward`] then accumulates the gradient of any weighted
//! combination of the terms into every parameter tensor in one pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, ParamTensor, Tape};
use crate::prototypes::{
    contrastive_grads, contrastive_loss, kl_divergence, kl_grad_wrt_similarity, l2_normalize,
    l2_normalize_backward, normality_weight, soft_assignments, student_t_similarity_grad,
    target_distribution, PrototypeBank, SimilarityRow,
};
use crate::recon::{
    loss_recon_anomaly, loss_recon_anomaly_grad, loss_recon_unlabeled, recon_error, recon_error_grad,
    Autoencoder,
};
use crate::scorer::{score_loss, score_loss_grads, ScoreInput, ScoreLossKind, Scorer};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub ae: Autoencoder,
    pub bank: PrototypeBank,
    pub scorer: Scorer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSettings {
    pub m1: f64,
    /// When false every unlabeled weight is 1.
    pub use_weights: bool,
    /// When false the decoder is bypassed: no reconstruction terms and no
    /// `e` scorer input.
    pub use_decoder: bool,
    /// Treat normality weights as constants in the gradient.
    pub detach_weights: bool,
    pub score_loss: ScoreLossKind,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        Self {
            m1: 0.02,
            use_weights: true,
            use_decoder: true,
            detach_weights: true,
            score_loss: ScoreLossKind::SquaredError,
        }
    }
}

/// Values of the five elementary terms for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub recon_u: f64,
    pub recon_a: f64,
    pub kl: f64,
    pub con: f64,
    pub score: f64,
}

impl LossTerms {
    pub fn recon(&self) -> f64 {
        self.recon_u + self.recon_a
    }

    pub fn np(&self) -> f64 {
        self.con + self.kl
    }

    pub fn combined(&self, c: &TermCoefficients) -> f64 {
        c.recon_u * self.recon_u + c.recon_a * self.recon_a + c.kl * self.kl + c.con * self.con + c.score * self.score
    }

    pub fn is_finite(&self) -> bool {
        [self.recon_u, self.recon_a, self.kl, self.con, self.score]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Multipliers of the elementary terms in the differentiated objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TermCoefficients {
    pub recon_u: f64,
    pub recon_a: f64,
    pub kl: f64,
    pub con: f64,
    pub score: f64,
}

impl TermCoefficients {
    /// `w1 L_recon + w2 L_np + w3 L_score`.
    pub fn from_task_weights(w: [f64; 3]) -> Self {
        Self {
            recon_u: w[0],
            recon_a: w[0],
            kl: w[1],
            con: w[1],
            score: w[2],
        }
    }

    pub fn only(term: Term) -> Self {
        let mut c = Self::default();
        match term {
            Term::ReconUnlabeled => c.recon_u = 1.0,
            Term::ReconAnomaly => c.recon_a = 1.0,
            Term::Kl => c.kl = 1.0,
            Term::Contrastive => c.con = 1.0,
            Term::Score => c.score = 1.0,
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    ReconUnlabeled,
    ReconAnomaly,
    Kl,
    Contrastive,
    Score,
}

/// Quantities held constant while differentiating a batch objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Detached {
    pub weights: Vec<f64>,
    pub mean_u: f64,
    pub target: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct SampleCache {
    x: Vec<f64>,
    enc_tape: Tape,
    z_unit: Vec<f64>,
    z_norm: f64,
    dec_tape: Option<Tape>,
    e: f64,
    sims: SimilarityRow,
    d2: Vec<f64>,
    score_tape: Tape,
    score: f64,
}

impl SampleCache {
    fn x_hat(&self) -> &[f64] {
        self.dec_tape.as_ref().expect("decoder tape").output()
    }
}

/// Forward state of one batch.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub terms: LossTerms,
    pub detached: Detached,
    /// Live normality weights (equal to `detached.weights` unless frozen
    /// weights were supplied).
    pub weights: Vec<f64>,
    unl: Vec<SampleCache>,
    anom: Vec<SampleCache>,
    units: Vec<(Vec<f64>, f64)>,
}

impl BatchEval {
    pub fn unlabeled_scores(&self) -> Vec<f64> {
        self.unl.iter().map(|c| c.score).collect()
    }

    pub fn anomaly_scores(&self) -> Vec<f64> {
        self.anom.iter().map(|c| c.score).collect()
    }
}

/// Per-sample output of the inference path.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub z: Vec<f64>,
    pub e: f64,
    pub s_max: f64,
    pub score: f64,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        latent: usize,
        hidden: usize,
        scorer_hidden: usize,
        bank: PrototypeBank,
        use_decoder: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let ae = Autoencoder::new(dim, latent, hidden, rng)?;
        let scorer = Scorer::new(latent, scorer_hidden, use_decoder, rng)?;
        Self::from_parts(ae, bank, scorer)
    }

    pub fn from_parts(ae: Autoencoder, bank: PrototypeBank, scorer: Scorer) -> Result<Self> {
        let h = ae.latent_dim();
        if bank.latent_dim() != h {
            return Err(Error::dim("prototype latent dimension", h, bank.latent_dim()));
        }
        if scorer.latent_dim() != h {
            return Err(Error::dim("scorer latent dimension", h, scorer.latent_dim()));
        }
        if ae.decoder.input_dim() != h || ae.decoder.output_dim() != ae.input_dim() {
            return Err(Error::dim("decoder shape", ae.input_dim(), ae.decoder.output_dim()));
        }
        Ok(Self { ae, bank, scorer })
    }

    pub fn input_dim(&self) -> usize {
        self.ae.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.ae.latent_dim()
    }

    pub fn uses_decoder(&self) -> bool {
        self.scorer.include_error
    }

    /// Every parameter tensor in a fixed order: encoder, decoder,
    /// prototypes, scorer.
    pub fn params(&self) -> Vec<&ParamTensor> {
        self.ae
            .encoder
            .params()
            .iter()
            .chain(self.ae.decoder.params())
            .chain(std::iter::once(&self.bank.u))
            .chain(self.scorer.net.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.ae
            .encoder
            .params_mut()
            .iter_mut()
            .chain(self.ae.decoder.params_mut().iter_mut())
            .chain(std::iter::once(&mut self.bank.u))
            .chain(self.scorer.net.params_mut().iter_mut())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn forward_sample(&self, x: &[f64], units: &[(Vec<f64>, f64)], use_decoder: bool) -> Result<SampleCache> {
        let (z, enc_tape) = self.ae.encoder.forward(x)?;
        let (z_unit, z_norm) = l2_normalize(&z)?;
        let (dec_tape, e) = if use_decoder {
            let (x_hat, tape) = self.ae.decoder.forward(&z)?;
            let e = recon_error(x, &x_hat)?;
            (Some(tape), e)
        } else {
            (None, 0.0)
        };
        let d2: Vec<f64> = units
            .iter()
            .map(|(u, _)| z_unit.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let sims = self.bank.similarity_unit(&z_unit, units);
        let (score, score_tape) = self.scorer.forward(&ScoreInput { e, z, s: sims.s_max })?;
        Ok(SampleCache {
            x: x.to_vec(),
            enc_tape,
            z_unit,
            z_norm,
            dec_tape,
            e,
            sims,
            d2,
            score_tape,
            score,
        })
    }

    /// Scorer input `(e, z, s_max)` of one already-normalized sample.
    pub fn score_input(&self, x: &[f64]) -> Result<ScoreInput> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("inference input", self.input_dim(), x.len()));
        }
        let z = self.ae.encode(x)?;
        let e = if self.uses_decoder() {
            recon_error(x, &self.ae.decode(&z)?)?
        } else {
            0.0
        };
        let s = self.bank.similarity(&z)?.s_max;
        Ok(ScoreInput { e, z, s })
    }

    /// Inference on one already-normalized sample.
    pub fn infer_normalized(&self, x: &[f64]) -> Result<Inference> {
        let input = self.score_input(x)?;
        let score = self.scorer.score(&input)?;
        Ok(Inference {
            e: input.e,
            s_max: input.s,
            z: input.z,
            score,
        })
    }

    /// Forward pass and loss terms for one batch. With `frozen`, the
    /// detached quantities are taken from it instead of being recomputed.
    pub fn evaluate(
        &self,
        unlabeled: &[&[f64]],
        anomalies: &[&[f64]],
        settings: &ObjectiveSettings,
        frozen: Option<&Detached>,
    ) -> Result<BatchEval> {
        if unlabeled.is_empty() {
            return Err(Error::EmptyInput("unlabeled batch".into()));
        }
        if anomalies.is_empty() {
            return Err(Error::NoLabeledAnomalies);
        }
        if settings.use_decoder != self.uses_decoder() {
            return Err(Error::InvalidConfig(
                "objective use_decoder does not match the scorer input layout".into(),
            ));
        }
        let units = self.bank.normalized()?;
        let unl: Vec<SampleCache> = unlabeled
            .iter()
            .map(|x| self.forward_sample(x, &units, settings.use_decoder))
            .collect::<Result<_>>()?;
        let anom: Vec<SampleCache> = anomalies
            .iter()
            .map(|x| self.forward_sample(x, &units, settings.use_decoder))
            .collect::<Result<_>>()?;

        let live_weights: Vec<f64> = unl
            .iter()
            .map(|c| {
                if settings.use_weights {
                    normality_weight(c.sims.s_max, self.bank.beta)
                } else {
                    1.0
                }
            })
            .collect();
        let weights = match frozen {
            Some(f) if settings.detach_weights => f.weights.clone(),
            _ => live_weights,
        };

        let unl_e: Vec<f64> = unl.iter().map(|c| c.e).collect();
        let anom_e: Vec<f64> = anom.iter().map(|c| c.e).collect();
        let (recon_u, recon_a, mean_u) = if settings.use_decoder {
            let recon_u = loss_recon_unlabeled(&unl_e, &weights)?;
            let mean_u = frozen.map_or(recon_u, |f| f.mean_u);
            (recon_u, loss_recon_anomaly(&anom_e, mean_u, settings.m1)?, mean_u)
        } else {
            (0.0, 0.0, 0.0)
        };

        let sims: Vec<Vec<f64>> = unl.iter().map(|c| c.sims.s.clone()).collect();
        let q = soft_assignments(&sims);
        let target = match frozen {
            Some(f) => f.target.clone(),
            None => target_distribution(&q),
        };
        let kl = kl_divergence(&target, &q);

        let unl_smax: Vec<f64> = unl.iter().map(|c| c.sims.s_max).collect();
        let anom_smax: Vec<f64> = anom.iter().map(|c| c.sims.s_max).collect();
        let con = contrastive_loss(&unl_smax, &weights, &anom_smax)?;

        let unl_scores: Vec<f64> = unl.iter().map(|c| c.score).collect();
        let anom_scores: Vec<f64> = anom.iter().map(|c| c.score).collect();
        let score = score_loss(&unl_scores, &weights, &anom_scores, settings.score_loss)?;

        Ok(BatchEval {
            terms: LossTerms {
                recon_u,
                recon_a,
                kl,
                con,
                score,
            },
            detached: Detached {
                weights: weights.clone(),
                mean_u,
                target,
            },
            weights,
            unl,
            anom,
            units,
        })
    }

    /// Accumulates `d(Σ c_m L_m)/dθ` into every parameter's gradient.
    pub fn backward(&mut self, eval: &BatchEval, settings: &ObjectiveSettings, c: &TermCoefficients) -> Result<()> {
        let nu = eval.unl.len() as f64;
        let w = &eval.weights;
        let unl_smax: Vec<f64> = eval.unl.iter().map(|s| s.sims.s_max).collect();
        let anom_smax: Vec<f64> = eval.anom.iter().map(|s| s.sims.s_max).collect();
        let con_g = contrastive_grads(&unl_smax, w, &anom_smax)?;
        let score_g = score_loss_grads(
            &eval.unlabeled_scores(),
            w,
            &eval.anomaly_scores(),
            settings.score_loss,
        )?;
        let anom_e: Vec<f64> = eval.anom.iter().map(|s| s.e).collect();
        let hinge_g = loss_recon_anomaly_grad(&anom_e, eval.detached.mean_u, settings.m1);
        let weights_live = settings.use_weights && !settings.detach_weights;

        let k = self.bank.k();
        let h = self.latent_dim();
        let mut grad_units = vec![vec![0.0; h]; k];

        // (cache, dL/de, dL/ds_max, dL/ds_j extra, dL/dscore)
        let mut jobs: Vec<(&SampleCache, f64, f64, Vec<f64>, f64)> = Vec::with_capacity(eval.unl.len() + eval.anom.len());
        for (i, cache) in eval.unl.iter().enumerate() {
            let mut de = 0.0;
            if settings.use_decoder {
                de += c.recon_u * w[i] / nu;
            }
            let mut ds = c.con * con_g.unl_smax[i];
            if weights_live {
                let mut dw = c.con * con_g.unl_w[i] + c.score * score_g.unl_w[i];
                if settings.use_decoder {
                    dw += c.recon_u * cache.e / nu;
                }
                let sw = sigmoid(self.bank.beta * cache.sims.s_max);
                ds += dw * self.bank.beta * sw * (1.0 - sw);
            }
            let ds_j: Vec<f64> = if c.kl != 0.0 {
                kl_grad_wrt_similarity(&cache.sims.s, &eval.detached.target[i])
                    .into_iter()
                    .map(|g| c.kl * g)
                    .collect()
            } else {
                vec![0.0; k]
            };
            jobs.push((cache, de, ds, ds_j, c.score * score_g.unl_scores[i]));
        }
        for (i, cache) in eval.anom.iter().enumerate() {
            let de = if settings.use_decoder { c.recon_a * hinge_g[i] } else { 0.0 };
            let ds = c.con * con_g.anom_smax[i];
            jobs.push((cache, de, ds, vec![0.0; k], c.score * score_g.anom_scores[i]));
        }

        for (cache, mut de, mut ds, mut ds_j, dscore) in jobs {
            let sg = self.scorer.backward(&cache.score_tape, dscore)?;
            de += sg.e;
            ds += sg.s;
            let mut dz = sg.z;

            ds_j[cache.sims.argmax] += ds;
            let mut g_zunit = vec![0.0; h];
            for (j, (u, _)) in eval.units.iter().enumerate() {
                if ds_j[j] == 0.0 {
                    continue;
                }
                let dd2 = ds_j[j] * student_t_similarity_grad(cache.d2[j], self.bank.alpha);
                for d in 0..h {
                    let diff = 2.0 * (cache.z_unit[d] - u[d]);
                    g_zunit[d] += dd2 * diff;
                    grad_units[j][d] -= dd2 * diff;
                }
            }
            let back = l2_normalize_backward(&cache.z_unit, cache.z_norm, &g_zunit);
            dz.iter_mut().zip(back).for_each(|(a, b)| *a += b);

            if settings.use_decoder && de != 0.0 {
                let dx_hat: Vec<f64> = recon_error_grad(&cache.x, cache.x_hat())
                    .into_iter()
                    .map(|g| g * de)
                    .collect();
                let dz_dec = self
                    .ae
                    .decoder
                    .backward(cache.dec_tape.as_ref().expect("decoder tape"), &dx_hat)?;
                dz.iter_mut().zip(dz_dec).for_each(|(a, b)| *a += b);
            }
            self.ae.encoder.backward(&cache.enc_tape, &dz)?;
        }

        for (j, (u, norm)) in eval.units.iter().enumerate() {
            let g = l2_normalize_backward(u, *norm, &grad_units[j]);
            let grad = self.bank.u.grad_mut();
            for d in 0..h {
                grad[j * h + d] += g[d];
            }
        }
        Ok(())
    }
}
