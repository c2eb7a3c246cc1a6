//! Dual encoders and the attention-fusion classification head.
//!
//! Image path: centred pixels -> tanh hidden layer -> `v` (dim `d_v`) ->
//! shared projection -> unit vector in `R^d`.
//! Text path: hashed bag of tokens -> averaged table rows -> tanh -> `t`
//! (dim `d_t`) -> shared projection -> unit vector in `R^d`.
//! Fusion works on the pre-projection features `v` and `t`:
//! `alpha = softmax(v·W_v + t·W_t + b_a)` over the `d` components of one
//! sample, `h = alpha ⊙ (v·W_v' + t·W_t')`. All weight matrices are stored as
//! `[in, out]` and applied on the right of row-major batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Image;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Upper bound on any single encoder dimension.
pub const MAX_DIM: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_side: usize,
    pub hidden: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub d: usize,
    pub vocab_buckets: usize,
    pub n_classes: usize,
    pub init_temperature: f64,
    pub learnable_temperature: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_side: 16,
            hidden: 64,
            d_v: 32,
            d_t: 32,
            d: 32,
            vocab_buckets: 512,
            n_classes: 33,
            init_temperature: 0.07,
            learnable_temperature: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("image_side", self.image_side),
            ("hidden", self.hidden),
            ("d_v", self.d_v),
            ("d_t", self.d_t),
            ("d", self.d),
            ("vocab_buckets", self.vocab_buckets),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, v)) = dims.iter().find(|(_, v)| *v < 2) {
            return Err(Error::Config(format!("{name} must be at least 2, got {v}")));
        }
        if let Some((name, v)) = dims.iter().find(|(_, v)| *v > MAX_DIM) {
            return Err(Error::Config(format!("{name} must be at most {MAX_DIM}, got {v}")));
        }
        if !(self.init_temperature > 0.0 && self.init_temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.init_temperature
            )));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.image_side * self.image_side
    }
}

/// Generates `ModelParams`, `ParamVars` and their name tables from one list.
macro_rules! param_set {
    ($($field:ident => $name:literal),* $(,)?) => {
        /// Every learnable tensor, in a fixed registration order.
        #[derive(Clone, Debug, PartialEq)]
        pub struct ModelParams {
            $(pub $field: Tensor,)*
        }

        /// Tape handles for one forward pass over `ModelParams`.
        #[derive(Clone, Copy, Debug)]
        pub struct ParamVars {
            $(pub $field: Var,)*
        }

        impl ModelParams {
            pub const NAMES: &'static [&'static str] = &[$($name),*];

            pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
                vec![$(($name, &self.$field)),*]
            }

            pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
                vec![$(($name, &mut self.$field)),*]
            }

            pub fn bind(&self, tape: &mut Tape) -> ParamVars {
                ParamVars { $($field: tape.leaf(&self.$field),)* }
            }

            /// Rebuilds from tensors given in `NAMES` order.
            pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
                let n = tensors.len();
                let mut it = tensors.into_iter();
                let mut next = || it.next().ok_or_else(|| {
                    Error::Integrity(format!("expected {} tensors, got {n}", Self::NAMES.len()))
                });
                Ok(Self { $($field: next()?,)* })
            }

            /// Adds gradients from `grads` into each tensor's grad buffer.
            pub fn accumulate(&mut self, vars: &ParamVars, grads: &crate::tensor::Gradients) -> Result<()> {
                $(
                    if let Some(g) = grads.get(vars.$field) {
                        self.$field.accumulate_grad(g)?;
                    }
                )*
                Ok(())
            }
        }
    };
}

param_set! {
    img_w1 => "image.w1",
    img_b1 => "image.b1",
    img_w2 => "image.w2",
    img_b2 => "image.b2",
    img_proj => "image.proj",
    txt_table => "text.table",
    txt_w1 => "text.w1",
    txt_b1 => "text.b1",
    txt_proj => "text.proj",
    fuse_wv => "fusion.w_v",
    fuse_wt => "fusion.w_t",
    fuse_ba => "fusion.b_a",
    fuse_wv2 => "fusion.w_v_prime",
    fuse_wt2 => "fusion.w_t_prime",
    cls_w => "classifier.w",
    temperature => "temperature",
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], data)
        .expect("dims validated")
        .with_grad()
}

fn dense(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
}

fn zeros(n: usize) -> Tensor {
    Tensor::zeros(vec![n]).expect("dims validated").with_grad()
}

impl ModelParams {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero, token table uniform
    /// in `±1`. Deterministic in `seed`.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut temperature = Tensor::scalar(c.init_temperature);
        temperature.set_requires_grad(c.learnable_temperature);
        Ok(Self {
            img_w1: dense(&mut rng, c.pixels(), c.hidden),
            img_b1: zeros(c.hidden),
            img_w2: dense(&mut rng, c.hidden, c.d_v),
            img_b2: zeros(c.d_v),
            img_proj: dense(&mut rng, c.d_v, c.d),
            txt_table: uniform(&mut rng, c.vocab_buckets, c.hidden, 1.0),
            txt_w1: dense(&mut rng, c.hidden, c.d_t),
            txt_b1: zeros(c.d_t),
            txt_proj: dense(&mut rng, c.d_t, c.d),
            fuse_wv: dense(&mut rng, c.d_v, c.d),
            fuse_wt: dense(&mut rng, c.d_t, c.d),
            fuse_ba: zeros(c.d),
            fuse_wv2: dense(&mut rng, c.d_v, c.d),
            fuse_wt2: dense(&mut rng, c.d_t, c.d),
            cls_w: dense(&mut rng, c.d, c.n_classes).transposed(),
            temperature,
        })
    }

    /// Expected shape of every named tensor under `config`.
    pub fn expected_shapes(config: &EncoderConfig) -> Vec<(&'static str, Vec<usize>)> {
        let c = config;
        let shapes = vec![
            vec![c.pixels(), c.hidden],
            vec![c.hidden],
            vec![c.hidden, c.d_v],
            vec![c.d_v],
            vec![c.d_v, c.d],
            vec![c.vocab_buckets, c.hidden],
            vec![c.hidden, c.d_t],
            vec![c.d_t],
            vec![c.d_t, c.d],
            vec![c.d_v, c.d],
            vec![c.d_t, c.d],
            vec![c.d],
            vec![c.d_v, c.d],
            vec![c.d_t, c.d],
            vec![c.n_classes, c.d],
            vec![1],
        ];
        Self::NAMES.iter().copied().zip(shapes).collect()
    }

    pub fn clear_grads(&mut self) {
        for (_, t) in self.named_mut() {
            t.clear_grad();
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_mut() {
            t.zero_grad();
        }
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// 64-bit FNV-1a, used so token buckets are stable across platforms.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn token_bucket(token: &str, buckets: usize) -> usize {
    (fnv1a(token.as_bytes()) % buckets as u64) as usize
}

/// `[n, buckets]` matrix whose row `i` averages the one-hot buckets of text `i`.
pub fn bag_of_tokens(texts: &[&str], buckets: usize) -> Result<Tensor> {
    let mut data = vec![0.0; texts.len() * buckets];
    for (i, text) in texts.iter().enumerate() {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyText(text.to_string()));
        }
        let w = 1.0 / tokens.len() as f64;
        for t in &tokens {
            data[i * buckets + token_bucket(t, buckets)] += w;
        }
    }
    Tensor::new(vec![texts.len(), buckets], data)
}

/// Stacks images into a `[n, side*side]` matrix of centred pixels (`p - 0.5`).
pub fn image_batch(images: &[&Image], side: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(images.len() * side * side);
    for img in images {
        if img.width != side || img.height != side {
            return Err(Error::shape("encode_image", &[img.height, img.width], &[side, side]));
        }
        data.extend(img.pixels.iter().map(|p| p - 0.5));
    }
    Tensor::new(vec![images.len(), side * side], data)
}

/// Pre-projection image features `v`, shape `[n, d_v]`.
pub fn image_features(tape: &mut Tape, p: &ParamVars, pixels: Var) -> Result<Var> {
    let h = tape.matmul(pixels, p.img_w1)?;
    let h = tape.add_bias(h, p.img_b1)?;
    let h = tape.tanh(h);
    let v = tape.matmul(h, p.img_w2)?;
    tape.add_bias(v, p.img_b2)
}

/// Pre-projection text features `t`, shape `[n, d_t]`.
pub fn text_features(tape: &mut Tape, p: &ParamVars, bags: Var) -> Result<Var> {
    let e = tape.matmul(bags, p.txt_table)?;
    let e = tape.tanh(e);
    let t = tape.matmul(e, p.txt_w1)?;
    tape.add_bias(t, p.txt_b1)
}

/// Unit-norm image embeddings in the shared space.
pub fn project_image(tape: &mut Tape, p: &ParamVars, v: Var) -> Result<Var> {
    let z = tape.matmul(v, p.img_proj)?;
    tape.l2_normalize(z)
}

/// Unit-norm text embeddings in the shared space.
pub fn project_text(tape: &mut Tape, p: &ParamVars, t: Var) -> Result<Var> {
    let z = tape.matmul(t, p.txt_proj)?;
    tape.l2_normalize(z)
}

/// Attention fusion. Returns `(alpha, h)`, both `[n, d]`.
pub fn fuse_attention(tape: &mut Tape, p: &ParamVars, v: Var, t: Var) -> Result<(Var, Var)> {
    let (nv, nt) = (tape.value(v).rows(), tape.value(t).rows());
    if nv != nt {
        return Err(Error::shape("fuse_attention", tape.value(v).shape(), tape.value(t).shape()));
    }
    let av = tape.matmul(v, p.fuse_wv)?;
    let at = tape.matmul(t, p.fuse_wt)?;
    let logits = tape.add(av, at)?;
    let logits = tape.add_bias(logits, p.fuse_ba)?;
    let alpha = tape.softmax(logits)?;
    let gv = tape.matmul(v, p.fuse_wv2)?;
    let gt = tape.matmul(t, p.fuse_wt2)?;
    let g = tape.add(gv, gt)?;
    let h = tape.mul(alpha, g)?;
    Ok((alpha, h))
}

/// Class logits `w_c · h_i` (no bias), shape `[n, C]`.
pub fn classifier_logits(tape: &mut Tape, p: &ParamVars, h: Var) -> Result<Var> {
    let wt = tape.transpose(p.cls_w)?;
    tape.matmul(h, wt)
}

/// Frozen model with no-grad batch encoding helpers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn temperature(&self) -> f64 {
        self.params.temperature.data()[0]
    }

    pub fn encode_images(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let px = tape.constant(image_batch(images, self.config.image_side)?);
        let v = image_features(&mut tape, &p, px)?;
        let z = project_image(&mut tape, &p, v)?;
        Ok(tape.value(z).iter_rows().map(<[f64]>::to_vec).collect())
    }

    pub fn encode_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let bags = tape.constant(bag_of_tokens(texts, self.config.vocab_buckets)?);
        let t = text_features(&mut tape, &p, bags)?;
        let z = project_text(&mut tape, &p, t)?;
        Ok(tape.value(z).iter_rows().map(<[f64]>::to_vec).collect())
    }

    pub fn encode_image(&self, img: &Image) -> Result<Vec<f64>> {
        Ok(self.encode_images(&[img])?.remove(0))
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.encode_texts(&[text])?.remove(0))
    }

    /// Attention weights and fused vectors for image/text pairs.
    pub fn fuse(&self, images: &[&Image], texts: &[&str]) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let px = tape.constant(image_batch(images, self.config.image_side)?);
        let bags = tape.constant(bag_of_tokens(texts, self.config.vocab_buckets)?);
        let v = image_features(&mut tape, &p, px)?;
        let t = text_features(&mut tape, &p, bags)?;
        let (alpha, h) = fuse_attention(&mut tape, &p, v, t)?;
        Ok((tape.value(alpha).clone(), tape.value(h).clone()))
    }
}
