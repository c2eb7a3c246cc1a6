//! Class-aware batch construction and multi-view pair assembly.
//!
//! Classes are drawn one slot at a time with `p_c ∝ (f_c + smoothing)^-beta`,
//! where `f_c` counts how often class `c` already appears in the batch being
//! built. Counts reset when the batch is complete.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, PatentRecord, ViewKind};
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING: f64 = 1.0;

/// `p_c ∝ (counts[c] + smoothing)^-beta`, normalized.
pub fn class_sampling_probs(in_batch_counts: &[usize], beta: f64, smoothing: f64) -> Result<Vec<f64>> {
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::Config(format!("smoothing must be positive, got {smoothing}")));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be nonnegative, got {beta}")));
    }
    if in_batch_counts.is_empty() {
        return Err(Error::Config("no classes to sample from".into()));
    }
    let w: Vec<f64> = in_batch_counts
        .iter()
        .map(|&f| (f as f64 + smoothing).powf(-beta))
        .collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// Record indices into the corpus, in draw order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn records<'a>(&self, corpus: &'a Corpus) -> Vec<&'a PatentRecord> {
        self.indices.iter().map(|&i| &corpus.records[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct SamplerState {
    pub beta: f64,
    pub smoothing: f64,
    pub in_batch_counts: Vec<usize>,
    pub rng_seed: u64,
    rng: ChaCha8Rng,
    /// Per-class record indices; the first `taken[c]` are used in this batch.
    pools: Vec<Vec<usize>>,
    taken: Vec<usize>,
    /// `(k + smoothing)^-beta` for k = 0, 1, ...
    weight_table: Vec<f64>,
    n_records: usize,
}

impl SamplerState {
    pub fn new(corpus: &Corpus, beta: f64, smoothing: f64, seed: u64) -> Result<Self> {
        class_sampling_probs(&[0], beta, smoothing)?;
        let c = corpus.n_classes();
        let mut pools = vec![Vec::new(); c];
        for (i, r) in corpus.records.iter().enumerate() {
            pools[r.class_id].push(i);
        }
        if let Some(empty) = pools.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("class {empty} has no records to sample")));
        }
        Ok(Self {
            beta,
            smoothing,
            in_batch_counts: vec![0; c],
            rng_seed: seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pools,
            taken: vec![0; c],
            weight_table: Vec::new(),
            n_records: corpus.len(),
        })
    }

    pub fn probs(&self) -> Vec<f64> {
        class_sampling_probs(&self.in_batch_counts, self.beta, self.smoothing)
            .expect("validated at construction")
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn weight(&mut self, count: usize) -> f64 {
        while self.weight_table.len() <= count {
            let k = self.weight_table.len() as f64;
            self.weight_table.push((k + self.smoothing).powf(-self.beta));
        }
        self.weight_table[count]
    }

    fn draw_class(&mut self) -> usize {
        let weights: Vec<f64> = (0..self.in_batch_counts.len())
            .map(|c| self.weight(self.in_batch_counts[c]))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.random::<f64>() * total;
        for (c, w) in weights.iter().enumerate() {
            if u < *w {
                return c;
            }
            u -= w;
        }
        weights.len() - 1
    }

    fn draw_record(&mut self, c: usize) -> usize {
        let pool = &mut self.pools[c];
        let t = self.taken[c];
        if t >= pool.len() {
            // Class exhausted within this batch: draw with replacement.
            return pool[self.rng.random_range(0..pool.len())];
        }
        let j = self.rng.random_range(t..pool.len());
        pool.swap(t, j);
        self.taken[c] += 1;
        pool[t]
    }

    fn check_batch_size(&self, batch_size: usize) -> Result<()> {
        if batch_size < 2 {
            return Err(Error::Config(format!("batch size must be at least 2, got {batch_size}")));
        }
        if batch_size > self.n_records {
            return Err(Error::Config(format!(
                "batch size {batch_size} exceeds corpus size {}",
                self.n_records
            )));
        }
        Ok(())
    }

    /// Builds one class-aware batch.
    pub fn sample_batch(&mut self, batch_size: usize) -> Result<Batch> {
        self.check_batch_size(batch_size)?;
        let mut indices = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let c = self.draw_class();
            indices.push(self.draw_record(c));
            self.in_batch_counts[c] += 1;
        }
        self.in_batch_counts.iter_mut().for_each(|x| *x = 0);
        self.taken.iter_mut().for_each(|x| *x = 0);
        Ok(Batch { indices })
    }

    /// Uniform over records without replacement; ignores class structure.
    pub fn sample_uniform_batch(&mut self, batch_size: usize) -> Result<Batch> {
        self.check_batch_size(batch_size)?;
        let indices = index::sample(&mut self.rng, self.n_records, batch_size).into_vec();
        Ok(Batch { indices })
    }
}

/// Free-function form of [`SamplerState::sample_batch`].
pub fn sample_batch(state: &mut SamplerState, batch_size: usize) -> Result<Batch> {
    state.sample_batch(batch_size)
}

/// Anchor/positive assignments for one batch: row `rows[i]` of the batch pairs
/// its Front view with `views[i]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MultiViewPlan {
    pub rows: Vec<usize>,
    pub views: Vec<ViewKind>,
}

impl MultiViewPlan {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Front view is the anchor; the positive is uniform among the record's other
/// present views. Front-only records are skipped.
pub fn build_multiview_pairs<R: Rng>(records: &[&PatentRecord], rng: &mut R) -> MultiViewPlan {
    let mut plan = MultiViewPlan::default();
    for (i, r) in records.iter().enumerate() {
        let others: Vec<ViewKind> = r.present_views().filter(|&v| v != ViewKind::Front).collect();
        if others.is_empty() {
            continue;
        }
        let pick = if others.len() == 1 {
            others[0]
        } else {
            others[rng.random_range(0..others.len())]
        };
        plan.rows.push(i);
        plan.views.push(pick);
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Image, PatentRecord};
    use std::collections::BTreeMap;

    fn record(id: usize, class_id: usize, views: &[ViewKind]) -> PatentRecord {
        let views: BTreeMap<ViewKind, Image> = views.iter().map(|&v| (v, Image::blank(2, 2))).collect();
        PatentRecord {
            id: format!("r{id}"),
            class_id,
            title: "t".into(),
            caption: "c".into(),
            views,
        }
    }

    fn toy(sizes: &[usize]) -> Corpus {
        let mut records = Vec::new();
        for (c, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                records.push(record(records.len(), c, &ViewKind::ALL));
            }
        }
        let names = (0..sizes.len()).map(|c| format!("c{c}")).collect();
        Corpus::new(records, names).unwrap()
    }

    #[test]
    fn probs_examples() {
        let p = class_sampling_probs(&[3, 0], 1.0, 1.0).unwrap();
        assert!((p[0] - 0.2).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        let p = class_sampling_probs(&[9, 0, 4], 0.0, 1.0).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = class_sampling_probs(&[5, 5, 5, 5], 1.2, 1.0).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!(class_sampling_probs(&[1], 1.0, 0.0).is_err());
    }

    #[test]
    fn batch_without_replacement_and_counts_reset() {
        let c = toy(&[20, 10, 10]);
        let mut s = SamplerState::new(&c, 1.2, 1.0, 5).unwrap();
        for _ in 0..50 {
            let b = s.sample_batch(6).unwrap();
            assert_eq!(b.len(), 6);
            let mut seen = b.indices.clone();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), 6);
            assert!(s.in_batch_counts.iter().all(|&x| x == 0));
        }
    }

    #[test]
    fn exhausted_class_falls_back_to_replacement() {
        let c = toy(&[1, 1]);
        let mut s = SamplerState::new(&c, 0.0, 1.0, 1).unwrap();
        // Two records, batch of two: duplicates are possible once a class runs out.
        let mut dup = false;
        for _ in 0..200 {
            let b = s.sample_batch(2).unwrap();
            dup |= b.indices[0] == b.indices[1];
        }
        assert!(dup);
    }

    #[test]
    fn batch_size_errors() {
        let c = toy(&[2, 2]);
        let mut s = SamplerState::new(&c, 1.0, 1.0, 0).unwrap();
        assert!(matches!(s.sample_batch(5), Err(Error::Config(_))));
        assert!(matches!(s.sample_batch(1), Err(Error::Config(_))));
        assert!(matches!(s.sample_uniform_batch(5), Err(Error::Config(_))));
    }

    #[test]
    fn empty_class_is_rejected() {
        let mut c = toy(&[2, 2]);
        c.class_names.push("ghost".into());
        c.class_counts.push(0);
        assert!(SamplerState::new(&c, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn same_seed_same_batches() {
        let c = toy(&[30, 5, 2]);
        let run = || {
            let mut s = SamplerState::new(&c, 1.2, 1.0, 99).unwrap();
            (0..20).map(|_| s.sample_batch(8).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn second_slot_follows_updated_counts() {
        // After the first draw lands in class c, the second slot's law is
        // class_sampling_probs with a 1 at c.
        let c = toy(&[50, 50]);
        let mut s = SamplerState::new(&c, 1.2, 1.0, 3).unwrap();
        let trials = 100_000;
        let mut same = 0usize;
        for _ in 0..trials {
            let b = s.sample_batch(2).unwrap();
            let (a, b) = (c.records[b.indices[0]].class_id, c.records[b.indices[1]].class_id);
            same += usize::from(a == b);
        }
        let analytic = class_sampling_probs(&[1, 0], 1.2, 1.0).unwrap()[0];
        let empirical = same as f64 / trials as f64;
        assert!((empirical - analytic).abs() < 0.01, "{empirical} vs {analytic}");
    }

    #[test]
    fn multiview_rules() {
        let full = record(0, 0, &ViewKind::ALL);
        let front = record(1, 0, &[ViewKind::Front]);
        let side = record(2, 0, &[ViewKind::Front, ViewKind::Side]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);

        let plan = build_multiview_pairs(&[&front, &front], &mut rng);
        assert!(plan.is_empty());

        let plan = build_multiview_pairs(&[&side, &side, &side], &mut rng);
        assert_eq!(plan.rows, vec![0, 1, 2]);
        assert!(plan.views.iter().all(|&v| v == ViewKind::Side));

        let plan = build_multiview_pairs(&[&front, &full, &side], &mut rng);
        assert_eq!(plan.rows, vec![1, 2]);

        let trials = 100_000;
        let mut sides = 0usize;
        for _ in 0..trials {
            let p = build_multiview_pairs(&[&full], &mut rng);
            assert_ne!(p.views[0], ViewKind::Front);
            sides += usize::from(p.views[0] == ViewKind::Side);
        }
        let frac = sides as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }
}
