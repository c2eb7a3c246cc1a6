//! Synthetic long-tailed, multi-view, captioned corpus.
//!
//! Class sizes follow a Zipf law whose exponent is solved by bisection so the
//! six largest classes hold a requested share of the records. Every record has
//! a Front view; Side and Top views are each dropped with `view_dropout`.

mod io;
mod render;
mod words;

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_corpus, parse_corpus, save_corpus, write_corpus, CORPUS_FORMAT_VERSION};
use render::{ClassStyle, Instance};

/// Number of head classes whose share the generator targets.
pub const HEAD_CLASSES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Front,
    Side,
    Top,
}

impl ViewKind {
    pub const ALL: [ViewKind; 3] = [ViewKind::Front, ViewKind::Side, ViewKind::Top];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::Front => "front",
            ViewKind::Side => "side",
            ViewKind::Top => "top",
        }
    }
}

/// Row-major grayscale image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Image {
    #[serde(rename = "w")]
    pub width: usize,
    #[serde(rename = "h")]
    pub height: usize,
    #[serde(rename = "px")]
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        let img = Self {
            width,
            height,
            pixels,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width.checked_mul(self.height) != Some(self.pixels.len()) {
            return Err(Error::InvalidTensor(format!(
                "image {}x{} has {} pixels",
                self.width,
                self.height,
                self.pixels.len()
            )));
        }
        if let Some(p) = self.pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidTensor(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatentRecord {
    pub id: String,
    pub class_id: usize,
    pub title: String,
    pub caption: String,
    pub views: BTreeMap<ViewKind, Image>,
}

impl PatentRecord {
    pub fn front(&self) -> &Image {
        self.views
            .get(&ViewKind::Front)
            .expect("records always carry a front view")
    }

    pub fn view(&self, kind: ViewKind) -> Option<&Image> {
        self.views.get(&kind)
    }

    pub fn present_views(&self) -> impl Iterator<Item = ViewKind> + '_ {
        self.views.keys().copied()
    }

    pub(crate) fn validate(&self, n_classes: usize) -> Result<()> {
        if self.class_id >= n_classes {
            return Err(Error::Index {
                index: self.class_id,
                n_classes,
            });
        }
        if !self.views.contains_key(&ViewKind::Front) {
            return Err(Error::Contract(format!("record {} has no front view", self.id)));
        }
        if self.caption.is_empty() {
            return Err(Error::Contract(format!("record {} has an empty caption", self.id)));
        }
        for img in self.views.values() {
            img.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub records: Vec<PatentRecord>,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
}

impl Corpus {
    /// Builds a corpus, validating records and deriving `class_counts`.
    pub fn new(records: Vec<PatentRecord>, class_names: Vec<String>) -> Result<Self> {
        let n_classes = class_names.len();
        for r in &records {
            r.validate(n_classes)?;
        }
        let mut corpus = Self {
            records,
            class_names,
            class_counts: Vec::new(),
        };
        corpus.class_counts = class_frequencies(&corpus);
        Ok(corpus)
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Width and height of the front view of the first record, if any.
    pub fn image_dims(&self) -> Option<(usize, usize)> {
        self.records.first().map(|r| (r.front().width, r.front().height))
    }

    /// Class ids sorted by descending count, ties by ascending id.
    pub fn classes_by_frequency(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_classes()).collect();
        order.sort_by_key(|&c| (std::cmp::Reverse(self.class_counts[c]), c));
        order
    }

    /// Sub-corpus of the given record indices, keeping all class names.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        let records: Vec<PatentRecord> = indices.iter().map(|&i| self.records[i].clone()).collect();
        let mut sub = Corpus {
            records,
            class_names: self.class_names.clone(),
            class_counts: Vec::new(),
        };
        sub.class_counts = class_frequencies(&sub);
        sub
    }

    /// Deterministic per-class split: within each class, every `every`-th
    /// record (in corpus order) goes to evaluation. A class with at least two
    /// records always keeps one on each side. Returns `(train, eval)`.
    pub fn stratified_split(&self, every: usize) -> Result<(Corpus, Corpus)> {
        if every < 2 {
            return Err(Error::Config(format!("split period must be at least 2, got {every}")));
        }
        let mut by_class = vec![Vec::new(); self.n_classes()];
        for (i, r) in self.records.iter().enumerate() {
            by_class[r.class_id].push(i);
        }
        let (mut train, mut eval) = (Vec::new(), Vec::new());
        for members in by_class {
            let n = members.len();
            for (k, &i) in members.iter().enumerate() {
                let to_eval = k % every == every - 1 || (n >= 2 && n < every && k == n - 1);
                if to_eval {
                    eval.push(i);
                } else {
                    train.push(i);
                }
            }
        }
        train.sort_unstable();
        eval.sort_unstable();
        Ok((self.subset(&train), self.subset(&eval)))
    }
}

/// Exact per-class record counts by a direct scan.
pub fn class_frequencies(corpus: &Corpus) -> Vec<usize> {
    let mut counts = vec![0; corpus.n_classes()];
    for r in &corpus.records {
        counts[r.class_id] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub n_records: usize,
    pub n_classes: usize,
    pub top6_share: f64,
    pub seed: u64,
    pub view_dropout: f64,
    pub image_side: usize,
    pub noise_std: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_records: 5000,
            n_classes: 33,
            top6_share: 0.4458,
            seed: 7,
            view_dropout: 0.2,
            image_side: 16,
            noise_std: 0.04,
        }
    }
}

fn head_share_for_exponent(exponent: f64, n_classes: usize) -> f64 {
    let weights: Vec<f64> = (1..=n_classes).map(|k| (k as f64).powf(-exponent)).collect();
    let total: f64 = weights.iter().sum();
    weights[..HEAD_CLASSES].iter().sum::<f64>() / total
}

/// Zipf exponent `s` (sizes proportional to `rank^-s`) giving the six largest
/// classes `top_share` of the mass. Solved by bisection; the share is
/// increasing in `s`.
pub fn tune_zipf_exponent(n_classes: usize, top_share: f64) -> Result<f64> {
    if n_classes <= HEAD_CLASSES {
        return Err(Error::Config(format!(
            "need at least {} classes, got {n_classes}",
            HEAD_CLASSES + 1
        )));
    }
    let uniform = HEAD_CLASSES as f64 / n_classes as f64;
    if !(top_share > 0.0 && top_share < 1.0) || top_share < uniform - 1e-12 {
        return Err(Error::Config(format!(
            "top-6 share {top_share} is infeasible for {n_classes} classes (minimum {uniform:.4})"
        )));
    }
    if top_share <= uniform + 1e-12 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while head_share_for_exponent(hi, n_classes) < top_share {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::Config(format!("top-6 share {top_share} is unreachable")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if head_share_for_exponent(mid, n_classes) < top_share {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Integer class sizes in rank order (largest first), each at least one,
/// summing to `n_records`, with the head share within two points of target.
pub fn zipf_class_sizes(n_records: usize, n_classes: usize, top_share: f64) -> Result<Vec<usize>> {
    if n_records < n_classes {
        return Err(Error::Config(format!(
            "{n_records} records cannot cover {n_classes} classes"
        )));
    }
    let exponent = tune_zipf_exponent(n_classes, top_share)?;
    let weights: Vec<f64> = (1..=n_classes).map(|k| (k as f64).powf(-exponent)).collect();
    let total: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| n_records as f64 * w / total).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| (r.floor() as usize).max(1)).collect();

    let assigned: usize = sizes.iter().sum();
    if assigned < n_records {
        // Largest remainders first; ties go to the higher-ranked class.
        let mut order: Vec<usize> = (0..n_classes).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &c in order.iter().cycle().take(n_records - assigned) {
            sizes[c] += 1;
        }
    } else {
        let mut excess = assigned - n_records;
        while excess > 0 {
            let c = (0..n_classes)
                .filter(|&c| sizes[c] > 1)
                .max_by_key(|&c| (sizes[c], std::cmp::Reverse(c)))
                .expect("n_records >= n_classes leaves a class above one");
            sizes[c] -= 1;
            excess -= 1;
        }
    }
    let head: usize = sizes[..HEAD_CLASSES].iter().sum();
    let share = head as f64 / n_records as f64;
    if (share - top_share).abs() > 0.02 {
        return Err(Error::Config(format!(
            "top-6 share {top_share} not reachable with {n_records} records (got {share:.4})"
        )));
    }
    Ok(sizes)
}

/// Generates a corpus deterministically from `config`.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    if !(0.0..1.0).contains(&config.view_dropout) {
        return Err(Error::Config(format!(
            "view dropout {} must lie in [0, 1)",
            config.view_dropout
        )));
    }
    if config.image_side < 4 {
        return Err(Error::Config("image side must be at least 4".into()));
    }
    let n_classes = config.n_classes;
    let sizes_by_rank = zipf_class_sizes(config.n_records, n_classes, config.top6_share)?;
    let mut class_sizes = vec![0; n_classes];
    for (rank, &class_id) in words::frequency_rank(n_classes).iter().enumerate() {
        class_sizes[class_id] = sizes_by_rank[rank];
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let styles: Vec<ClassStyle> = (0..n_classes)
        .map(|c| ClassStyle::for_class(c, &mut rng))
        .collect();
    let mut labels: Vec<usize> = class_sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    labels.shuffle(&mut rng);

    let class_names = words::class_names(n_classes);
    let side = config.image_side;
    let records = labels
        .iter()
        .enumerate()
        .map(|(i, &class_id)| {
            let style = &styles[class_id];
            let size_idx = rng.random_range(0..words::SIZE_WORDS.len());
            let inst = Instance {
                size: [0.6, 0.8, 1.0][size_idx],
                count: rng.random_range(3..=6),
                yaw: rng.random_range(-0.25..0.25),
                offset: [
                    rng.random_range(-0.06..0.06),
                    rng.random_range(-0.06..0.06),
                    rng.random_range(-0.06..0.06),
                ],
            };
            let points = render::instantiate(style, &inst);
            let mut views = BTreeMap::new();
            for view in ViewKind::ALL {
                let keep = view == ViewKind::Front || rng.random::<f64>() >= config.view_dropout;
                if keep {
                    let px = render::render_view(&points, view, side, config.noise_std, &mut rng);
                    views.insert(view, Image::new(side, side, px).expect("renderer output is valid"));
                }
            }

            let nouns = words::class_nouns(class_id, n_classes);
            let noun = nouns.choose(&mut rng).expect("word banks are nonempty");
            let adjective = words::ADJECTIVES.choose(&mut rng).expect("word banks are nonempty");
            let title = format!("{adjective} {noun}");
            let (shape_phrase, part) = style.family.phrases();
            let caption = format!(
                "This is the front view image of {title}. What is the shape of the image? \
                 It is a {size} {shape_phrase} with {count} {part}. What is the functionality \
                 of {title}? It is a {class} design used for {function}.",
                size = words::SIZE_WORDS[size_idx],
                count = words::COUNT_WORDS[inst.count],
                class = class_names[class_id].to_lowercase(),
                function = words::class_function(class_id, n_classes),
            );
            PatentRecord {
                id: format!("P{i:06}"),
                class_id,
                title,
                caption,
                views,
            }
        })
        .collect();
    Corpus::new(records, class_names)
}
