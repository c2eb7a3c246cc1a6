//! Multi-task training: one class-aware batch per step feeds the
//! classification, image-text and multi-view losses.

mod checkpoint;
mod optim;

pub use checkpoint::{
    load_checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION,
};
pub use optim::{adamw_step, AdamW, AdamWConfig, Moments};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PatentRecord};
use crate::encoders::{self, bag_of_tokens, image_batch, EncoderConfig, Model, ModelParams, ParamVars};
use crate::error::{Error, Result};
use crate::objectives::{self, BatchPairs, LossWeights, Temperature, ViewPairs};
use crate::sampling::{build_multiview_pairs, MultiViewPlan, SamplerState, DEFAULT_SMOOTHING};
use crate::tensor::{Tape, Tensor, Var};

/// Smallest temperature a learnable `tau` may reach.
pub const MIN_TEMPERATURE: f64 = 1e-3;

/// Where the `f_i` in the loss weights comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreqScope {
    /// Class counts over the whole training corpus.
    #[default]
    Dataset,
    /// Class counts inside the current batch.
    Batch,
}

impl FromStr for FreqScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(Self::Dataset),
            "batch" => Ok(Self::Batch),
            other => Err(Error::Config(format!("freq_scope must be dataset or batch, got {other:?}"))),
        }
    }
}

impl fmt::Display for FreqScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dataset => "dataset",
            Self::Batch => "batch",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub loss: LossWeights,
    pub encoder: EncoderConfig,
    pub seed: u64,
    pub symmetric_loss: bool,
    pub freq_scope: FreqScope,
    /// Off means batches are drawn uniformly over records.
    pub class_aware_sampling: bool,
    pub sampler_smoothing: f64,
}

impl Default for TrainConfig {
    /// Desk-scale profile.
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 500,
            batch_size: 32,
            loss: LossWeights::default(),
            encoder: EncoderConfig::default(),
            seed: 0,
            symmetric_loss: false,
            freq_scope: FreqScope::Dataset,
            class_aware_sampling: true,
            sampler_smoothing: DEFAULT_SMOOTHING,
        }
    }
}

impl TrainConfig {
    /// Large-scale pre-training hyperparameters.
    pub fn pretraining_profile() -> Self {
        Self {
            lr: 5e-6,
            batch_size: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be nonnegative, got {}", self.weight_decay)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.steps < 1 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.sampler_smoothing > 0.0 && self.sampler_smoothing.is_finite()) {
            return Err(Error::Config(format!(
                "sampler_smoothing must be positive, got {}",
                self.sampler_smoothing
            )));
        }
        self.loss.validate()?;
        self.encoder.validate()
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Encoder settings with the class count and temperature this run uses.
    pub fn resolved_encoder(&self, n_classes: usize) -> EncoderConfig {
        EncoderConfig {
            n_classes,
            init_temperature: self.loss.tau,
            ..self.encoder.clone()
        }
    }
}

/// Errors unless the corpus matches the encoder's image size and class count.
pub fn ensure_compatible(config: &EncoderConfig, corpus: &Corpus) -> Result<()> {
    if corpus.n_classes() != config.n_classes {
        return Err(Error::shape("class count", &[config.n_classes], &[corpus.n_classes()]));
    }
    if let Some((w, h)) = corpus.image_dims() {
        if (w, h) != (config.image_side, config.image_side) {
            return Err(Error::shape(
                "image size",
                &[config.image_side, config.image_side],
                &[h, w],
            ));
        }
    }
    Ok(())
}

/// Dense inputs for one training step.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub front: Tensor,
    pub bags: Tensor,
    pub class_ids: Vec<usize>,
    pub class_freqs: Vec<f64>,
    pub mv_rows: Vec<usize>,
    pub other: Option<Tensor>,
}

impl PreparedBatch {
    pub fn new(
        records: &[&PatentRecord],
        plan: &MultiViewPlan,
        class_freqs: Vec<f64>,
        config: &EncoderConfig,
    ) -> Result<Self> {
        let fronts: Vec<_> = records.iter().map(|r| r.front()).collect();
        let captions: Vec<&str> = records.iter().map(|r| r.caption.as_str()).collect();
        let other = if plan.is_empty() {
            None
        } else {
            let imgs: Vec<_> = plan
                .rows
                .iter()
                .zip(&plan.views)
                .map(|(&i, &v)| {
                    records[i]
                        .view(v)
                        .ok_or_else(|| Error::Contract(format!("record {} lacks view {}", records[i].id, v.as_str())))
                })
                .collect::<Result<_>>()?;
            Some(image_batch(&imgs, config.image_side)?)
        };
        Ok(Self {
            front: image_batch(&fronts, config.image_side)?,
            bags: bag_of_tokens(&captions, config.vocab_buckets)?,
            class_ids: records.iter().map(|r| r.class_id).collect(),
            class_freqs,
            mv_rows: plan.rows.clone(),
            other,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub cacls: Var,
    pub cacl: Var,
    pub mvcl: Var,
    pub total: Var,
}

/// Temperature handle for `p`, learned or fixed per `learnable`.
pub fn temperature(tape: &Tape, p: &ParamVars, learnable: bool) -> Result<Temperature> {
    Ok(if learnable {
        Temperature::Learned(p.temperature)
    } else {
        Temperature::Fixed(tape.value(p.temperature).item()?)
    })
}

/// Records the full forward pass and all three losses.
pub fn batch_losses(tape: &mut Tape, p: &ParamVars, batch: &PreparedBatch, config: &TrainConfig) -> Result<LossVars> {
    let temp = temperature(tape, p, config.encoder.learnable_temperature)?;
    let beta = config.loss.beta;
    let sym = config.symmetric_loss;

    let px = tape.constant(batch.front.clone());
    let v = encoders::image_features(tape, p, px)?;
    let zi = encoders::project_image(tape, p, v)?;
    let bags = tape.constant(batch.bags.clone());
    let t = encoders::text_features(tape, p, bags)?;
    let zt = encoders::project_text(tape, p, t)?;

    let pairs = BatchPairs {
        image_emb: zi,
        text_emb: zt,
        class_ids: &batch.class_ids,
        class_freqs: &batch.class_freqs,
    };
    let cacl = objectives::cacl_loss(tape, &pairs, beta, temp, sym)?;

    let (_, h) = encoders::fuse_attention(tape, p, v, t)?;
    let cacls = objectives::cacls_loss(tape, h, &batch.class_ids, p.cls_w, &batch.class_freqs, beta)?;

    let mvcl = match &batch.other {
        None => objectives::mvcl_loss(tape, None, &batch.class_freqs, beta, temp, sym)?,
        Some(other) => {
            let po = tape.constant(other.clone());
            let vo = encoders::image_features(tape, p, po)?;
            let zo = encoders::project_image(tape, p, vo)?;
            let anchors = tape.select_rows(zi, &batch.mv_rows)?;
            let ids: Vec<usize> = batch.mv_rows.iter().map(|&i| batch.class_ids[i]).collect();
            let vp = ViewPairs {
                anchor_emb: anchors,
                other_emb: zo,
                class_ids: &ids,
            };
            objectives::mvcl_loss(tape, Some(&vp), &batch.class_freqs, beta, temp, sym)?
        }
    };
    let total = objectives::combined_loss(tape, cacls, cacl, mvcl, &config.loss)?;
    Ok(LossVars {
        cacls,
        cacl,
        mvcl,
        total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_cacls: f64,
    pub loss_cacl: f64,
    pub loss_mvcl: f64,
}

impl TraceRow {
    pub fn is_finite(&self) -> bool {
        [self.loss_total, self.loss_cacls, self.loss_cacl, self.loss_mvcl]
            .iter()
            .all(|x| x.is_finite())
    }
}

pub const TRACE_HEADER: &str = "step,loss_total,loss_cacls,loss_cacl,loss_mvcl";

pub fn write_trace<W: Write>(trace: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?}",
            r.step, r.loss_total, r.loss_cacls, r.loss_cacl, r.loss_mvcl
        )?;
    }
    out.flush()
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub trace: Vec<TraceRow>,
}

fn batch_class_counts(class_ids: &[usize], n_classes: usize) -> Vec<f64> {
    let mut f = vec![0.0; n_classes];
    for &c in class_ids {
        f[c] += 1.0;
    }
    f
}

pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("cannot train on an empty corpus".into()));
    }
    let enc = config.resolved_encoder(corpus.n_classes());
    ensure_compatible(&enc, corpus)?;
    let mut params = ModelParams::init(&enc, config.seed)?;
    let mut opt = AdamW::new(config.optimizer(), &params);
    let mut sampler = SamplerState::new(corpus, config.loss.beta, config.sampler_smoothing, config.seed)?;
    let mut view_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_7a11);
    let dataset_freqs: Vec<f64> = corpus.class_counts.iter().map(|&c| c as f64).collect();
    let mut trace = Vec::with_capacity(config.steps);

    for step in 1..=config.steps {
        let batch = if config.class_aware_sampling {
            sampler.sample_batch(config.batch_size)?
        } else {
            sampler.sample_uniform_batch(config.batch_size)?
        };
        let records = batch.records(corpus);
        let plan = build_multiview_pairs(&records, &mut view_rng);
        let freqs = match config.freq_scope {
            FreqScope::Dataset => dataset_freqs.clone(),
            FreqScope::Batch => {
                let ids: Vec<usize> = records.iter().map(|r| r.class_id).collect();
                batch_class_counts(&ids, corpus.n_classes())
            }
        };
        let prepared = PreparedBatch::new(&records, &plan, freqs, &enc)?;

        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let losses = batch_losses(&mut tape, &vars, &prepared, config)?;
        let row = TraceRow {
            step,
            loss_total: tape.value(losses.total).item()?,
            loss_cacls: tape.value(losses.cacls).item()?,
            loss_cacl: tape.value(losses.cacl).item()?,
            loss_mvcl: tape.value(losses.mvcl).item()?,
        };
        if !row.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let grads = tape.backward(losses.total)?;
        params.zero_grads();
        params.accumulate(&vars, &grads)?;
        opt.step(&mut params)?;
        if enc.learnable_temperature {
            let t = &mut params.temperature.data_mut()[0];
            *t = t.max(MIN_TEMPERATURE);
        }
        trace.push(row);
    }
    params.clear_grads();

    let final_loss = trace.last().map_or(f64::NAN, |r| r.loss_total);
    let mut snapshot = config.clone();
    snapshot.encoder = enc;
    Ok(TrainOutput {
        checkpoint: Checkpoint::new(snapshot, params, config.steps as u64, final_loss),
        trace,
    })
}

impl Checkpoint {
    pub fn model(&self) -> Model {
        let mut params = self.params.clone();
        for (_, t) in params.named_mut() {
            t.set_requires_grad(false);
        }
        Model {
            config: self.config.encoder.clone(),
            params,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};

    fn small_corpus() -> Corpus {
        generate_corpus(&CorpusConfig {
            n_records: 300,
            ..CorpusConfig::default()
        })
        .unwrap()
    }

    fn quick(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 16,
            encoder: EncoderConfig {
                hidden: 16,
                d_v: 8,
                d_t: 8,
                d: 8,
                vocab_buckets: 64,
                ..EncoderConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::pretraining_profile().validate().is_ok());
        assert!(TrainConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn one_step_moves_parameters() {
        let c = small_corpus();
        let cfg = quick(1);
        let out = train(&c, &cfg).unwrap();
        let init = ModelParams::init(&cfg.resolved_encoder(c.n_classes()), cfg.seed).unwrap();
        assert_ne!(out.checkpoint.params.img_w1.data(), init.img_w1.data());
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.checkpoint.step, 1);
    }

    #[test]
    fn trace_is_deterministic() {
        let c = small_corpus();
        let cfg = quick(5);
        let a = train(&c, &cfg).unwrap();
        let b = train(&c, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
    }

    #[test]
    fn masked_lambdas_leave_classification_only() {
        let c = small_corpus();
        let mut cfg = quick(3);
        cfg.loss.lambda2 = 0.0;
        cfg.loss.lambda3 = 0.0;
        for r in train(&c, &cfg).unwrap().trace {
            assert_eq!(r.loss_total, r.loss_cacls);
        }
    }

    #[test]
    fn batch_scope_and_uniform_sampling_run() {
        let c = small_corpus();
        let mut cfg = quick(2);
        cfg.freq_scope = FreqScope::Batch;
        cfg.class_aware_sampling = false;
        cfg.symmetric_loss = true;
        cfg.encoder.learnable_temperature = true;
        let out = train(&c, &cfg).unwrap();
        assert!(out.trace.iter().all(TraceRow::is_finite));
        assert_ne!(out.checkpoint.params.temperature.data()[0], cfg.loss.tau);
    }

    #[test]
    fn incompatible_corpus_is_a_shape_error() {
        let c = small_corpus();
        let enc = EncoderConfig {
            image_side: 8,
            ..EncoderConfig::default()
        };
        assert!(matches!(ensure_compatible(&enc, &c), Err(Error::Shape { .. })));
        let enc = EncoderConfig {
            n_classes: 5,
            ..EncoderConfig::default()
        };
        assert!(matches!(ensure_compatible(&enc, &c), Err(Error::Shape { .. })));
    }

    #[test]
    fn trace_text_format() {
        let rows = [TraceRow {
            step: 1,
            loss_total: 1.5,
            loss_cacls: 1.0,
            loss_cacl: 2.0,
            loss_mvcl: 0.0,
        }];
        let mut buf = Vec::new();
        write_trace(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,loss_total,loss_cacls,loss_cacl,loss_mvcl\n1,1.5,1.0,2.0,0.0\n"
        );
    }
}
