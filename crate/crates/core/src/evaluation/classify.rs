//! Zero-shot and linear-probe classification, plus head/tail summaries.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::retrieval::cosine;
use crate::corpus::{Corpus, PatentRecord};
use crate::encoders::Model;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::trainer::{adamw_step, AdamWConfig, Moments};

pub const DEFAULT_PROMPT_TEMPLATE: &str = "a design patent image of {class_name}";

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// `None` for classes without test samples.
    pub per_class: Vec<Option<f64>>,
    pub n_samples: usize,
    pub warnings: Vec<String>,
}

/// Index of the largest value; earliest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy_report(predicted: &[usize], truth: &[usize], n_classes: usize) -> ClassificationReport {
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        totals[t] += 1;
        hits[t] += usize::from(p == t);
    }
    let correct: usize = hits.iter().sum();
    ClassificationReport {
        accuracy: if truth.is_empty() {
            0.0
        } else {
            correct as f64 / truth.len() as f64
        },
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
        n_samples: truth.len(),
        warnings: Vec::new(),
    }
}

pub fn render_prompt(template: &str, class_name: &str) -> String {
    template.replace("{class_name}", class_name)
}

/// Predicts, for each image embedding, the prompt with the highest cosine.
pub fn zero_shot_predict(image_embs: &[Vec<f64>], prompt_embs: &[Vec<f64>]) -> Vec<usize> {
    image_embs
        .iter()
        .map(|e| argmax(&prompt_embs.iter().map(|p| cosine(e, p)).collect::<Vec<_>>()))
        .collect()
}

pub fn zero_shot_classify(model: &Model, corpus: &Corpus, template: &str) -> Result<ClassificationReport> {
    if !template.contains("{class_name}") {
        return Err(Error::Config(format!("prompt template {template:?} lacks {{class_name}}")));
    }
    let prompts: Vec<String> = corpus.class_names.iter().map(|c| render_prompt(template, c)).collect();
    let prompt_refs: Vec<&str> = prompts.iter().map(String::as_str).collect();
    let prompt_embs = model.encode_texts(&prompt_refs)?;
    let fronts: Vec<_> = corpus.records.iter().map(PatentRecord::front).collect();
    let image_embs = model.encode_images(&fronts)?;
    let truth: Vec<usize> = corpus.records.iter().map(|r| r.class_id).collect();
    Ok(accuracy_report(
        &zero_shot_predict(&image_embs, &prompt_embs),
        &truth,
        corpus.n_classes(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 1e-4,
            epochs: 15,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

/// A trained `C × d` head with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearHead {
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits: Vec<f64> = self
            .weight
            .iter_rows()
            .zip(self.bias.data())
            .map(|(w, b)| crate::tensor::dot(w, x) + b)
            .collect();
        argmax(&logits)
    }
}

/// Trains a zero-initialized softmax head on fixed features with AdamW.
pub fn fit_linear_head(x: &[Vec<f64>], y: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<LinearHead> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Config(format!(
            "probe needs matching nonempty features and labels, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::Config("probe batch_size, epochs and lr must be positive".into()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Index { index: bad, n_classes });
    }
    let d = x[0].len();
    let mut weight = Tensor::zeros(vec![n_classes, d])?.with_grad();
    let mut bias = Tensor::zeros(vec![n_classes])?.with_grad();
    let mut mw = Moments::zeros(weight.len());
    let mut mb = Moments::zeros(bias.len());
    let opt = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut t = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| x[i].clone()).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(Tensor::from_rows(&rows)?);
            let (wv, bv) = (tape.leaf(&weight), tape.leaf(&bias));
            let wt = tape.transpose(wv)?;
            let logits = tape.matmul(xv, wt)?;
            let logits = tape.add_bias(logits, bv)?;
            let lp = tape.log_softmax(logits)?;
            let loss = tape.weighted_nll(lp, &targets, &vec![1.0; targets.len()])?;
            let grads = tape.backward(loss)?;
            t += 1;
            let gw = grads.get(wv).expect("weight is trainable").to_vec();
            let gb = grads.get(bv).expect("bias is trainable").to_vec();
            adamw_step(weight.data_mut(), &gw, &mut mw, &opt, t);
            adamw_step(bias.data_mut(), &gb, &mut mb, &opt, t);
        }
    }
    Ok(LinearHead { weight, bias })
}

/// Fits on `train_*` and scores on `test_*`. Classes missing from training
/// are still scored and produce a warning.
pub fn linear_probe_embeddings(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ClassificationReport> {
    let head = fit_linear_head(train_x, train_y, n_classes, cfg)?;
    let predicted: Vec<usize> = test_x.iter().map(|e| head.predict(e)).collect();
    let mut report = accuracy_report(&predicted, test_y, n_classes);
    let mut seen = vec![false; n_classes];
    train_y.iter().for_each(|&c| seen[c] = true);
    report.warnings = seen
        .iter()
        .enumerate()
        .filter(|(_, s)| !**s)
        .map(|(c, _)| format!("class {c} has no training samples"))
        .collect();
    Ok(report)
}

/// Linear probe on frozen Front-view image embeddings.
pub fn linear_probe(model: &Model, train: &Corpus, test: &Corpus, cfg: &ProbeConfig) -> Result<ClassificationReport> {
    let embed = |c: &Corpus| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let fronts: Vec<_> = c.records.iter().map(PatentRecord::front).collect();
        Ok((model.encode_images(&fronts)?, c.records.iter().map(|r| r.class_id).collect()))
    };
    let (tx, ty) = embed(train)?;
    let (ex, ey) = embed(test)?;
    linear_probe_embeddings(&tx, &ty, &ex, &ey, train.n_classes(), cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Breakdown {
    pub head: f64,
    pub tail: f64,
    pub head_classes: Vec<usize>,
    pub tail_classes: Vec<usize>,
}

fn macro_mean(values: &[Option<f64>], classes: &[usize]) -> f64 {
    let defined: Vec<f64> = classes.iter().filter_map(|&c| values[c]).collect();
    if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// Macro averages over the `head_k` most frequent classes and over the rest.
/// Classes with no value are skipped; an all-empty group yields NaN.
pub fn tail_head_breakdown(per_class: &[Option<f64>], class_counts: &[usize], head_k: usize) -> Result<Breakdown> {
    let c = class_counts.len();
    if per_class.len() != c {
        return Err(Error::shape("tail_head_breakdown", &[per_class.len()], &[c]));
    }
    if head_k == 0 || head_k >= c {
        return Err(Error::Config(format!("head_k must be in 1..{c}, got {head_k}")));
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| class_counts[b].cmp(&class_counts[a]).then(a.cmp(&b)));
    let (head, tail) = order.split_at(head_k);
    Ok(Breakdown {
        head: macro_mean(per_class, head),
        tail: macro_mean(per_class, tail),
        head_classes: head.to_vec(),
        tail_classes: tail.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn single_prompt_is_forced() {
        let p = zero_shot_predict(&[vec![1.0, 0.0], vec![-1.0, 0.3]], &[vec![0.0, 1.0]]);
        assert_eq!(p, vec![0, 0]);
        assert_eq!(accuracy_report(&p, &[0, 0], 1).accuracy, 1.0);
    }

    #[test]
    fn zero_shot_ignores_prompt_rescaling() {
        let imgs = vec![vec![0.3, 0.9, -0.1], vec![-0.5, 0.2, 0.8], vec![0.7, -0.7, 0.1]];
        let prompts = vec![vec![1.0, 0.1, 0.0], vec![0.0, 1.0, 0.2], vec![0.1, 0.0, 1.0]];
        let scaled: Vec<Vec<f64>> = prompts.iter().map(|p| p.iter().map(|x| x * 7.5).collect()).collect();
        assert_eq!(zero_shot_predict(&imgs, &prompts), zero_shot_predict(&imgs, &scaled));
    }

    #[test]
    fn prompt_template() {
        assert_eq!(
            render_prompt(DEFAULT_PROMPT_TEMPLATE, "Lighting"),
            "a design patent image of Lighting"
        );
    }

    #[test]
    fn separable_probe_is_perfect_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        use rand::Rng;
        let mut x = Vec::new();
        let mut y = Vec::new();
        // Unit embeddings clustered around two orthogonal directions.
        for i in 0..200 {
            let c = i % 2;
            let mut e: Vec<f64> = (0..8).map(|_| rng.random_range(-0.15..0.15)).collect();
            e[c] += 1.0;
            let n = crate::tensor::norm(&e);
            x.push(e.into_iter().map(|v| v / n).collect());
            y.push(c);
        }
        let cfg = ProbeConfig::default();
        let r = linear_probe_embeddings(&x, &y, &x, &y, 2, &cfg).unwrap();
        assert_eq!(r.accuracy, 1.0, "{r:?}");
        let again = linear_probe_embeddings(&x, &y, &x, &y, 2, &cfg).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn missing_training_class_warns() {
        let x = vec![vec![1.0], vec![2.0]];
        let r = linear_probe_embeddings(&x, &[0, 0], &x, &[0, 2], 3, &ProbeConfig::default()).unwrap();
        assert_eq!(r.warnings.len(), 2);
        assert_eq!(r.per_class[2], Some(0.0));
    }

    #[test]
    fn breakdown_examples() {
        let counts: Vec<usize> = (0..33).map(|c| 100 - c).collect();
        let uniform = vec![Some(0.4); 33];
        let b = tail_head_breakdown(&uniform, &counts, 6).unwrap();
        assert!((b.head - 0.4).abs() < 1e-15 && (b.tail - 0.4).abs() < 1e-15);
        assert_eq!(b.tail_classes.len(), 27);
        assert!(tail_head_breakdown(&uniform, &counts, 33).is_err());

        let vals = vec![Some(1.0), Some(0.0), Some(0.5), Some(0.25), None];
        let counts = [5, 50, 1, 20, 3];
        let b = tail_head_breakdown(&vals, &counts, 2).unwrap();
        assert_eq!(b.head_classes, vec![1, 3]);
        assert!((b.head - 0.125).abs() < 1e-15);
        assert!((b.tail - 0.75).abs() < 1e-15);
    }
}
