//! Contrastive, classification and multi-view objectives.
//!
//! Every per-sample term is `-w_i * log p_i` where `p_i` is a softmax
//! probability and `w_i = f_i^-beta` for the sample's class frequency `f_i`.
//! Batch losses are arithmetic means over samples. Contrastive terms are
//! one-directional (anchor rows against candidate columns) unless
//! `symmetric` is set, in which case both directions are averaged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub tau: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            tau: 0.07,
            beta: 1.2,
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be nonnegative, got {}", self.beta)));
        }
        let lambdas = [self.lambda1, self.lambda2, self.lambda3];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("lambdas must be nonnegative, got {lambdas:?}")));
        }
        if lambdas.iter().all(|&l| l == 0.0) {
            return Err(Error::Config("at least one lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Temperature used to scale cosine similarities.
#[derive(Clone, Copy, Debug)]
pub enum Temperature {
    Fixed(f64),
    /// A recorded `[1]` scalar that receives gradients.
    Learned(Var),
}

/// Image/text embedding pairs; row `i` of each comes from the same record.
#[derive(Clone, Copy, Debug)]
pub struct BatchPairs<'a> {
    pub image_emb: Var,
    pub text_emb: Var,
    pub class_ids: &'a [usize],
    pub class_freqs: &'a [f64],
}

/// Anchor/other-view embedding pairs; row `i` of each comes from the same record.
#[derive(Clone, Copy, Debug)]
pub struct ViewPairs<'a> {
    pub anchor_emb: Var,
    pub other_emb: Var,
    pub class_ids: &'a [usize],
}

/// `f^-beta` for the class's frequency.
pub fn class_weight(class_id: usize, class_freqs: &[f64], beta: f64) -> Result<f64> {
    let f = *class_freqs.get(class_id).ok_or(Error::Index {
        index: class_id,
        n_classes: class_freqs.len(),
    })?;
    if !(f >= 1.0 && f.is_finite()) {
        return Err(Error::InvalidFrequency { class_id, freq: f });
    }
    Ok(f.powf(-beta))
}

pub fn class_weights(class_ids: &[usize], class_freqs: &[f64], beta: f64) -> Result<Vec<f64>> {
    class_ids
        .iter()
        .map(|&c| class_weight(c, class_freqs, beta))
        .collect()
}

fn check_unit_rows(tape: &Tape, v: Var, what: &str) -> Result<()> {
    for (i, row) in tape.value(v).iter_rows().enumerate() {
        let n = crate::tensor::norm(row);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!("{what} row {i} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

fn scale_by_temperature(tape: &mut Tape, x: Var, temp: Temperature) -> Result<Var> {
    match temp {
        Temperature::Fixed(tau) => {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::Config(format!("tau must be positive, got {tau}")));
            }
            Ok(tape.scale(x, 1.0 / tau))
        }
        Temperature::Learned(t) => {
            let inv = tape.recip(t)?;
            tape.mul_scalar(x, inv)
        }
    }
}

/// Weighted InfoNCE with positives on the diagonal of `anchors · candidatesᵀ`.
fn weighted_info_nce(
    tape: &mut Tape,
    anchors: Var,
    candidates: Var,
    temp: Temperature,
    weights: &[f64],
    symmetric: bool,
) -> Result<Var> {
    let (na, nc) = (tape.value(anchors).rows(), tape.value(candidates).rows());
    if na != nc || na != weights.len() || tape.value(anchors).cols() != tape.value(candidates).cols() {
        return Err(Error::shape(
            "contrastive loss",
            tape.value(anchors).shape(),
            tape.value(candidates).shape(),
        ));
    }
    check_unit_rows(tape, anchors, "anchor embedding")?;
    check_unit_rows(tape, candidates, "candidate embedding")?;
    let ct = tape.transpose(candidates)?;
    let sim = tape.matmul(anchors, ct)?;
    let logits = scale_by_temperature(tape, sim, temp)?;
    let diag: Vec<usize> = (0..na).collect();
    let lp = tape.log_softmax(logits)?;
    let forward = tape.weighted_nll(lp, &diag, weights)?;
    if !symmetric {
        return Ok(forward);
    }
    let lt = tape.transpose(logits)?;
    let lpt = tape.log_softmax(lt)?;
    let backward = tape.weighted_nll(lpt, &diag, weights)?;
    let both = tape.add(forward, backward)?;
    Ok(tape.scale(both, 0.5))
}

/// Unweighted image-to-text contrastive loss.
pub fn clip_loss(tape: &mut Tape, batch: &BatchPairs, temp: Temperature, symmetric: bool) -> Result<Var> {
    let n = tape.value(batch.image_emb).rows();
    weighted_info_nce(tape, batch.image_emb, batch.text_emb, temp, &vec![1.0; n], symmetric)
}

/// Image-to-text contrastive loss with per-sample weights `f_i^-beta`.
pub fn cacl_loss(
    tape: &mut Tape,
    batch: &BatchPairs,
    beta: f64,
    temp: Temperature,
    symmetric: bool,
) -> Result<Var> {
    let w = class_weights(batch.class_ids, batch.class_freqs, beta)?;
    weighted_info_nce(tape, batch.image_emb, batch.text_emb, temp, &w, symmetric)
}

/// Class-weighted cross-entropy over logits `w_c · h_i` (no bias).
/// `classifier_w` is `[C, d]`, `h` is `[N, d]`.
pub fn cacls_loss(
    tape: &mut Tape,
    h: Var,
    class_ids: &[usize],
    classifier_w: Var,
    class_freqs: &[f64],
    beta: f64,
) -> Result<Var> {
    let n_classes = tape.value(classifier_w).rows();
    if let Some(&bad) = class_ids.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Index {
            index: bad,
            n_classes,
        });
    }
    let w = class_weights(class_ids, class_freqs, beta)?;
    let wt = tape.transpose(classifier_w)?;
    let logits = tape.matmul(h, wt)?;
    let lp = tape.log_softmax(logits)?;
    tape.weighted_nll(lp, class_ids, &w)
}

/// Image-to-image contrastive loss between anchor and other views. An empty
/// pair set contributes a constant zero.
pub fn mvcl_loss(
    tape: &mut Tape,
    pairs: Option<&ViewPairs>,
    class_freqs: &[f64],
    beta: f64,
    temp: Temperature,
    symmetric: bool,
) -> Result<Var> {
    let Some(pairs) = pairs else {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    };
    let w = class_weights(pairs.class_ids, class_freqs, beta)?;
    weighted_info_nce(tape, pairs.anchor_emb, pairs.other_emb, temp, &w, symmetric)
}

/// `lambda1 * cacls + lambda2 * cacl + lambda3 * mvcl` on the tape.
pub fn combined_loss(tape: &mut Tape, cacls: Var, cacl: Var, mvcl: Var, weights: &LossWeights) -> Result<Var> {
    let a = tape.scale(cacls, weights.lambda1);
    let b = tape.scale(cacl, weights.lambda2);
    let c = tape.scale(mvcl, weights.lambda3);
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

/// Scalar form of [`combined_loss`].
pub fn combine_values(cacls: f64, cacl: f64, mvcl: f64, weights: &LossWeights) -> f64 {
    weights.lambda1 * cacls + weights.lambda2 * cacl + weights.lambda3 * mvcl
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let nr = crate::tensor::norm(&r);
                r.into_iter().map(|x| x / nr).collect()
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    /// Direct per-sample `-log softmax` terms of the similarity diagonal.
    fn per_sample_oracle(u: &Tensor, v: &Tensor, tau: f64) -> Vec<f64> {
        (0..u.rows())
            .map(|i| {
                let logits: Vec<f64> = (0..v.rows())
                    .map(|k| crate::tensor::dot(u.row(i), v.row(k)) / tau)
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                -(logits[i].exp() / z).ln()
            })
            .collect()
    }

    fn eval(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
        let mut tape = Tape::new();
        let v = f(&mut tape)?;
        tape.value(v).item()
    }

    #[test]
    fn class_weight_examples() {
        assert_eq!(class_weight(0, &[37.0], 0.0).unwrap(), 1.0);
        assert_eq!(class_weight(0, &[1.0], 1.2).unwrap(), 1.0);
        let w = class_weight(0, &[100.0], 1.2).unwrap();
        assert!((w - 0.003981071705534973).abs() < 1e-15, "{w}");
        assert!(matches!(
            class_weight(1, &[3.0, 0.0], 1.0),
            Err(Error::InvalidFrequency { class_id: 1, .. })
        ));
        assert!(matches!(class_weight(5, &[3.0], 1.0), Err(Error::Index { .. })));
    }

    #[test]
    fn single_pair_clip_loss_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (u, v) = (unit_rows(&mut rng, 1, 4), unit_rows(&mut rng, 1, 4));
        let loss = eval(|tp| {
            let b = BatchPairs {
                image_emb: tp.leaf(&u),
                text_emb: tp.leaf(&v),
                class_ids: &[0],
                class_freqs: &[1.0],
            };
            clip_loss(tp, &b, Temperature::Fixed(0.07), false)
        })
        .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn identity_similarity_closed_form() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss = eval(|tp| {
            let b = BatchPairs {
                image_emb: tp.leaf(&eye),
                text_emb: tp.leaf(&eye),
                class_ids: &[0, 0],
                class_freqs: &[1.0],
            };
            clip_loss(tp, &b, Temperature::Fixed(1.0), false)
        })
        .unwrap();
        let e = std::f64::consts::E;
        let want = -(e / (e + 1.0)).ln();
        assert!((loss - want).abs() < 1e-15);
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn clip_loss_is_permutation_invariant_and_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (u, v) = (unit_rows(&mut rng, 5, 6), unit_rows(&mut rng, 5, 6));
        let run = |u: &Tensor, v: &Tensor| {
            eval(|tp| {
                let b = BatchPairs {
                    image_emb: tp.leaf(u),
                    text_emb: tp.leaf(v),
                    class_ids: &[0; 5],
                    class_freqs: &[1.0],
                };
                clip_loss(tp, &b, Temperature::Fixed(0.3), false)
            })
            .unwrap()
        };
        let base = run(&u, &v);
        let oracle: f64 = per_sample_oracle(&u, &v, 0.3).iter().sum::<f64>() / 5.0;
        assert!((base - oracle).abs() < 1e-12);
        let perm = [3, 0, 4, 1, 2];
        let pick = |t: &Tensor| Tensor::from_rows(&perm.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        assert!((run(&pick(&u), &pick(&v)) - base).abs() < 1e-12);
    }

    #[test]
    fn symmetric_mode_averages_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (u, v) = (unit_rows(&mut rng, 4, 3), unit_rows(&mut rng, 4, 3));
        let sym = eval(|tp| {
            let b = BatchPairs {
                image_emb: tp.leaf(&u),
                text_emb: tp.leaf(&v),
                class_ids: &[0; 4],
                class_freqs: &[1.0],
            };
            clip_loss(tp, &b, Temperature::Fixed(0.5), true)
        })
        .unwrap();
        let i2t: f64 = per_sample_oracle(&u, &v, 0.5).iter().sum::<f64>() / 4.0;
        let t2i: f64 = per_sample_oracle(&v, &u, 0.5).iter().sum::<f64>() / 4.0;
        assert!((sym - 0.5 * (i2t + t2i)).abs() < 1e-12);
    }

    #[test]
    fn non_unit_rows_are_contract_violations() {
        let a = Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let err = eval(|tp| {
            let b = BatchPairs {
                image_emb: tp.leaf(&a),
                text_emb: tp.leaf(&a),
                class_ids: &[0, 0],
                class_freqs: &[1.0],
            };
            clip_loss(tp, &b, Temperature::Fixed(1.0), false)
        });
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn cacl_matches_per_sample_reweighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (u, v) = (unit_rows(&mut rng, 4, 5), unit_rows(&mut rng, 4, 5));
        let ids = [0, 1, 1, 0];
        let freqs = [10.0, 1.0];
        let loss = eval(|tp| {
            let b = BatchPairs {
                image_emb: tp.leaf(&u),
                text_emb: tp.leaf(&v),
                class_ids: &ids,
                class_freqs: &freqs,
            };
            cacl_loss(tp, &b, 1.0, Temperature::Fixed(0.2), false)
        })
        .unwrap();
        let per = per_sample_oracle(&u, &v, 0.2);
        let want: f64 = per
            .iter()
            .zip(ids)
            .map(|(l, c)| l / freqs[c])
            .sum::<f64>()
            / 4.0;
        assert!((loss - want).abs() < 1e-12);

        let beta0 = eval(|tp| {
            let b = BatchPairs {
                image_emb: tp.leaf(&u),
                text_emb: tp.leaf(&v),
                class_ids: &ids,
                class_freqs: &freqs,
            };
            cacl_loss(tp, &b, 0.0, Temperature::Fixed(0.2), false)
        })
        .unwrap();
        let unweighted: f64 = per.iter().sum::<f64>() / 4.0;
        assert!((beta0 - unweighted).abs() < 1e-12);
    }

    #[test]
    fn cacls_examples() {
        // Two classes, zero logits: ln 2.
        let h = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let loss = eval(|tp| {
            let (h, w) = (tp.leaf(&h), tp.leaf(&w));
            cacls_loss(tp, h, &[1], w, &[5.0, 1.0], 0.0)
        })
        .unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);

        // C = 3, logits [2, 1, 0], true class 0 with f = 4 and beta = 1.
        let h = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let w = Tensor::new(vec![3, 1], vec![2.0, 1.0, 0.0]).unwrap();
        let loss = eval(|tp| {
            let (h, w) = (tp.leaf(&h), tp.leaf(&w));
            cacls_loss(tp, h, &[0], w, &[4.0, 1.0, 1.0], 1.0)
        })
        .unwrap();
        let e = std::f64::consts::E;
        let ce = -(e * e / (e * e + e + 1.0)).ln();
        assert!((ce - 0.407606).abs() < 1e-6);
        assert!((loss - 0.25 * ce).abs() < 1e-15);
        assert!((loss - 0.101901).abs() < 1e-6);

        let bad = eval(|tp| {
            let (h, w) = (tp.leaf(&h), tp.leaf(&w));
            cacls_loss(tp, h, &[3], w, &[4.0, 1.0, 1.0], 1.0)
        });
        assert!(matches!(bad, Err(Error::Index { index: 3, .. })));
    }

    #[test]
    fn mvcl_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, o) = (unit_rows(&mut rng, 1, 4), unit_rows(&mut rng, 1, 4));
        let single = eval(|tp| {
            let p = ViewPairs {
                anchor_emb: tp.leaf(&a),
                other_emb: tp.leaf(&o),
                class_ids: &[0],
            };
            mvcl_loss(tp, Some(&p), &[7.0], 1.2, Temperature::Fixed(0.07), false)
        })
        .unwrap();
        assert_eq!(single, 0.0);

        let empty = eval(|tp| mvcl_loss(tp, None, &[7.0], 1.2, Temperature::Fixed(0.07), false)).unwrap();
        assert_eq!(empty, 0.0);

        // sim = [[1, -1], [-1, 1]] at tau = 0.07.
        let a = Tensor::new(vec![2, 2], vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let loss = eval(|tp| {
            let p = ViewPairs {
                anchor_emb: tp.leaf(&a),
                other_emb: tp.leaf(&a),
                class_ids: &[0, 0],
            };
            mvcl_loss(tp, Some(&p), &[1.0], 1.2, Temperature::Fixed(0.07), false)
        })
        .unwrap();
        assert!(loss < 1e-9, "{loss}");
        let x: f64 = 1.0 / 0.07;
        let want = -(x.exp() / (x.exp() + (-x).exp())).ln();
        assert!((loss - want).abs() < 1e-15);
    }

    #[test]
    fn mvcl_matches_clip_with_text_substituted() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (u, v) = (unit_rows(&mut rng, 5, 4), unit_rows(&mut rng, 5, 4));
        let ids = [0, 1, 2, 1, 0];
        let freqs = [3.0, 9.0, 2.0];
        let clip = eval(|tp| {
            let b = BatchPairs {
                image_emb: tp.leaf(&u),
                text_emb: tp.leaf(&v),
                class_ids: &ids,
                class_freqs: &freqs,
            };
            clip_loss(tp, &b, Temperature::Fixed(0.1), false)
        })
        .unwrap();
        let mv = eval(|tp| {
            let p = ViewPairs {
                anchor_emb: tp.leaf(&u),
                other_emb: tp.leaf(&v),
                class_ids: &ids,
            };
            mvcl_loss(tp, Some(&p), &freqs, 0.0, Temperature::Fixed(0.1), false)
        })
        .unwrap();
        assert!((clip - mv).abs() < 1e-12);
    }

    #[test]
    fn combined_examples() {
        let w = LossWeights::default();
        assert!((combine_values(1.0, 2.0, 3.0, &w) - 1.8).abs() < 1e-12);
        let masked = LossWeights {
            lambda2: 0.0,
            lambda3: 0.0,
            ..w.clone()
        };
        assert_eq!(combine_values(0.7, 2.0, 3.0, &masked), 0.7);
        let zero = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..w.clone()
        };
        assert_eq!(combine_values(0.7, 2.0, 3.0, &zero), 0.0);
        assert!(zero.validate().is_err());

        let mut tape = Tape::new();
        let parts: Vec<Var> = [1.0, 2.0, 3.0].iter().map(|&x| tape.constant(Tensor::scalar(x))).collect();
        let c = combined_loss(&mut tape, parts[0], parts[1], parts[2], &w).unwrap();
        assert_eq!(tape.value(c).item().unwrap(), combine_values(1.0, 2.0, 3.0, &w));
    }

    #[test]
    fn learned_temperature_matches_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (u, v) = (unit_rows(&mut rng, 3, 4), unit_rows(&mut rng, 3, 4));
        let fixed = eval(|tp| {
            let b = BatchPairs {
                image_emb: tp.leaf(&u),
                text_emb: tp.leaf(&v),
                class_ids: &[0; 3],
                class_freqs: &[1.0],
            };
            clip_loss(tp, &b, Temperature::Fixed(0.25), false)
        })
        .unwrap();
        let learned = eval(|tp| {
            let t = tp.leaf(&Tensor::scalar(0.25).with_grad());
            let b = BatchPairs {
                image_emb: tp.leaf(&u),
                text_emb: tp.leaf(&v),
                class_ids: &[0; 3],
                class_freqs: &[1.0],
            };
            clip_loss(tp, &b, Temperature::Learned(t), false)
        })
        .unwrap();
        assert!((fixed - learned).abs() < 1e-14);
    }

    #[test]
    fn loss_weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        for bad in [
            LossWeights { tau: 0.0, ..Default::default() },
            LossWeights { beta: -0.1, ..Default::default() },
            LossWeights { lambda2: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
