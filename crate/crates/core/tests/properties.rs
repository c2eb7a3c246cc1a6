use std::collections::BTreeSet;

use proptest::prelude::*;

use tailclip::corpus::parse_corpus;
use tailclip::encoders::{EncoderConfig, Model};
use tailclip::evaluation::{
    mean_average_precision, rank_by_scores, recall_at_k, retrieve_embeddings, zero_shot_predict, Query,
};
use tailclip::objectives::{cacl_loss, cacls_loss, mvcl_loss, BatchPairs, Temperature, ViewPairs};
use tailclip::sampling::class_sampling_probs;
use tailclip::trainer::parse_checkpoint;
use tailclip::{Tape, Tensor};

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn vecs(n: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(-1.0f64..1.0, d).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3)),
        n,
    )
}

fn rows(v: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(&v.iter().map(|r| unit(r)).collect::<Vec<_>>()).unwrap()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i:02}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_sum_to_one(x in prop::collection::vec(-1e4f64..1e4, 12)) {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::new(vec![3, 4], x).unwrap());
        let s = tape.softmax(v).unwrap();
        for row in tape.value(s).iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_is_associative(a in prop::collection::vec(-2.0f64..2.0, 6), b in prop::collection::vec(-2.0f64..2.0, 12), c in prop::collection::vec(-2.0f64..2.0, 8)) {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(vec![2, 3], a).unwrap());
        let b = tape.constant(Tensor::new(vec![3, 4], b).unwrap());
        let c = tape.constant(Tensor::new(vec![4, 2], c).unwrap());
        let ab = tape.matmul(a, b).unwrap();
        let left = tape.matmul(ab, c).unwrap();
        let bc = tape.matmul(b, c).unwrap();
        let right = tape.matmul(a, bc).unwrap();
        for (x, y) in tape.value(left).data().iter().zip(tape.value(right).data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn sampling_probs_form_a_distribution(counts in prop::collection::vec(0usize..200, 1..40), beta in 0.0f64..3.0) {
        let p = class_sampling_probs(&counts, beta, 1.0).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn sampling_prob_falls_as_count_rises(counts in prop::collection::vec(0usize..200, 2..20), c in 0usize..20, extra in 1usize..50, beta in 0.05f64..3.0) {
        let c = c % counts.len();
        let before = class_sampling_probs(&counts, beta, 1.0).unwrap()[c];
        let mut more = counts.clone();
        more[c] += extra;
        let after = class_sampling_probs(&more, beta, 1.0).unwrap()[c];
        prop_assert!(after < before);
    }

    #[test]
    fn losses_are_nonnegative(
        a in vecs(2..8, 4),
        b in vecs(8..9, 4),
        class_seed in prop::collection::vec(0usize..3, 8),
        freqs in prop::collection::vec(1.0f64..1e3, 3),
        beta in 0.0f64..2.0,
        tau in 0.02f64..2.0,
    ) {
        let n = a.len();
        let class_ids = &class_seed[..n];
        let mut tape = Tape::new();
        let va = tape.constant(rows(&a));
        let vb = tape.constant(rows(&b[..n]));
        let pairs = BatchPairs { image_emb: va, text_emb: vb, class_ids, class_freqs: &freqs };
        let cacl = cacl_loss(&mut tape, &pairs, beta, Temperature::Fixed(tau), true).unwrap();
        let vp = ViewPairs { anchor_emb: va, other_emb: vb, class_ids };
        let mvcl = mvcl_loss(&mut tape, Some(&vp), &freqs, beta, Temperature::Fixed(tau), false).unwrap();
        let w = tape.constant(Tensor::from_rows(&b[..3]).unwrap());
        let cacls = cacls_loss(&mut tape, va, class_ids, w, &freqs, beta).unwrap();
        for l in [cacl, mvcl, cacls] {
            prop_assert!(tape.value(l).item().unwrap() >= 0.0);
        }
    }

    /// Rotating t_i towards v_i changes only sim(v_i, t_i); the loss must drop.
    #[test]
    fn raising_a_positive_similarity_lowers_the_loss(n in 2usize..6, i in 0usize..6, t1 in 0.2f64..1.5, dt in 0.01f64..0.2) {
        let i = i % n;
        let d = n + 1;
        let loss_at = |theta: f64| {
            let mut img = vec![vec![0.0; d]; n];
            let mut txt = vec![vec![0.0; d]; n];
            for k in 0..n {
                img[k][k] = 1.0;
                let th = if k == i { theta } else { 0.7 };
                txt[k][k] = th.cos();
                txt[k][n] = th.sin();
            }
            let mut tape = Tape::new();
            let a = tape.constant(Tensor::from_rows(&img).unwrap());
            let b = tape.constant(Tensor::from_rows(&txt).unwrap());
            let class_ids = vec![0; n];
            let freqs = [5.0];
            let pairs = BatchPairs { image_emb: a, text_emb: b, class_ids: &class_ids, class_freqs: &freqs };
            let l = cacl_loss(&mut tape, &pairs, 1.2, Temperature::Fixed(0.1), false).unwrap();
            tape.value(l).item().unwrap()
        };
        prop_assert!(loss_at(t1 - dt) < loss_at(t1));
    }

    #[test]
    fn recall_is_monotone_in_k(scores in prop::collection::vec(prop::collection::vec(0u8..6, 1..12), 1..20)) {
        let results: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(q, s)| {
                let cands = ids(s.len());
                let f: Vec<f64> = s.iter().map(|&x| x as f64).collect();
                rank_by_scores(&format!("q{q}"), &cands, &f, BTreeSet::from([cands[q % s.len()].clone()])).unwrap()
            })
            .collect();
        let mut last = 0.0;
        for k in 1..14 {
            let r = recall_at_k(&results, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(r >= last);
            last = r;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn map_is_one_exactly_when_relevants_lead(scores in prop::collection::vec(0u8..4, 2..10), mask in prop::collection::vec(any::<bool>(), 10)) {
        let cands = ids(scores.len());
        let f: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
        let rel: BTreeSet<String> = cands.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| c.clone()).collect();
        prop_assume!(!rel.is_empty());
        let r = rank_by_scores("q", &cands, &f, rel.clone()).unwrap();
        let leading = r.ranked_ids.iter().take(rel.len()).all(|id| rel.contains(id));
        let map = mean_average_precision(&[r]).value;
        prop_assert_eq!(map == 1.0, leading);
    }

    #[test]
    fn rankings_ignore_candidate_rescaling(q in vecs(1..4, 5), c in vecs(2..12, 5), exps in prop::collection::vec(-8i32..8, 12)) {
        let queries: Vec<Query> = q
            .iter()
            .enumerate()
            .map(|(i, e)| Query { id: format!("q{i}"), embedding: e.clone(), relevant: BTreeSet::from([format!("c{:02}", i)]) })
            .collect();
        let names = ids(c.len());
        let base: Vec<(String, Vec<f64>)> = names.iter().cloned().zip(c.iter().cloned()).collect();
        let scaled: Vec<(String, Vec<f64>)> = names
            .iter()
            .cloned()
            .zip(c.iter().zip(&exps).map(|(e, &x)| e.iter().map(|v| v * 2f64.powi(x)).collect()))
            .collect();
        let a = retrieve_embeddings(&queries, &base, false).unwrap();
        let b = retrieve_embeddings(&queries, &scaled, false).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.ranked_ids, &y.ranked_ids);
            prop_assert_eq!(x.rank_of_ground_truth, y.rank_of_ground_truth);
        }
    }

    #[test]
    fn zero_shot_ignores_prompt_rescaling(imgs in vecs(1..6, 4), prompts in vecs(2..5, 4), e in -10i32..10) {
        let scaled: Vec<Vec<f64>> = prompts.iter().map(|p| p.iter().map(|v| v * 2f64.powi(e)).collect()).collect();
        prop_assert_eq!(zero_shot_predict(&imgs, &prompts), zero_shot_predict(&imgs, &scaled));
    }

    #[test]
    fn parsers_never_panic(text in "\\PC{0,400}") {
        let _ = parse_corpus(&text);
        let _ = parse_checkpoint(&text);
        let _ = tailclip::config::parse_config(&text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn encoders_emit_unit_rows_and_attention_distributions(
        seed in any::<u64>(),
        px in prop::collection::vec(0.0f64..=1.0, 3 * 64),
        words in prop::collection::vec("[a-z]{1,8}", 1..12),
    ) {
        let cfg = EncoderConfig { image_side: 8, n_classes: 5, ..EncoderConfig::default() };
        let model = Model::new(cfg.clone(), seed).unwrap();
        let imgs: Vec<_> = px
            .chunks(64)
            .map(|c| tailclip::corpus::Image::new(8, 8, c.to_vec()).unwrap())
            .collect();
        let refs: Vec<_> = imgs.iter().collect();
        let text = words.join(" ");
        let texts = vec![text.as_str(); 3];
        for e in model.encode_images(&refs).unwrap().iter().chain(&model.encode_texts(&texts).unwrap()) {
            prop_assert!((e.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        }
        let (alpha, _) = model.fuse(&refs, &texts).unwrap();
        for row in alpha.iter_rows() {
            prop_assert!(row.iter().all(|&a| a >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let twin = Model::new(cfg, seed).unwrap();
        prop_assert_eq!(model.encode_images(&refs).unwrap(), twin.encode_images(&refs).unwrap());
    }
}
