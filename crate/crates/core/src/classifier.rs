//! The trainable policy `p(a|s)`: slot embeddings, one tanh hidden layer
//! and a softmax over the legal actions.
//!
//! Per-example gradients of the two dense layers are rank one, so they are
//! kept in factored form ([`Outer`]) and only expanded on request.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{ActionDistribution, ActionId, Scorer, Task};
use crate::seed;

pub const MAGIC: &[u8; 4] = b"SKDM";
pub const FORMAT_VERSION: u32 = 1;

/// Which symbol table feeds each feature slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub slot_tables: Vec<usize>,
    pub table_sizes: Vec<usize>,
}

/// A featurised state: one symbol id per slot plus the legal action ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<u32>,
    pub legal: Vec<ActionId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            hidden_dim: 64,
            seed: 1,
        }
    }
}

/// Interpolation weight and top-K truncation of the distillation loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub top_k: usize,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top-K must be at least 1".into()));
        }
        Ok(())
    }
}

/// Self-describing part of a model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub task: String,
    /// Task vocabularies and settings, owned by the task implementation.
    pub task_meta: serde_json::Value,
    pub layout: FeatureLayout,
    pub num_actions: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub header: ModelHeader,
    embeddings: Vec<Vec<f64>>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Rank-one matrix `left ⊗ right`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outer {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Outer {
    pub fn dense(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.left.len() * self.right.len());
        for l in &self.left {
            out.extend(self.right.iter().map(|r| l * r));
        }
        out
    }

    fn sq_norm(&self) -> f64 {
        sq(&self.left) * sq(&self.right)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedGrad {
    pub table: usize,
    pub row: u32,
    pub grad: Vec<f64>,
}

/// Gradient of a per-state loss with respect to every parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    /// One entry per distinct embedding row touched.
    pub embed: Vec<EmbedGrad>,
    pub w1: Outer,
    pub b1: Vec<f64>,
    pub w2: Outer,
    pub b2: Vec<f64>,
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        let e: f64 = self.embed.iter().map(|g| sq(&g.grad)).sum();
        (e + self.w1.sq_norm() + sq(&self.b1) + self.w2.sq_norm() + sq(&self.b2)).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.norm() == 0.0
    }

    /// Dense gradient in [`ClassifierModel::flat_params`] order.
    pub fn flatten(&self, model: &ClassifierModel) -> Vec<f64> {
        let mut out = Vec::with_capacity(model.num_params());
        let dim = model.header.embed_dim;
        for (t, table) in model.embeddings.iter().enumerate() {
            let start = out.len();
            out.resize(start + table.len(), 0.0);
            for g in self.embed.iter().filter(|g| g.table == t) {
                let off = start + g.row as usize * dim;
                for (o, v) in out[off..off + dim].iter_mut().zip(&g.grad) {
                    *o += v;
                }
            }
        }
        let dense_or_zero = |o: &Outer, len: usize| {
            if o.left.is_empty() {
                vec![0.0; len]
            } else {
                o.dense()
            }
        };
        out.extend(dense_or_zero(&self.w1, model.w1.len()));
        out.extend(if self.b1.is_empty() { vec![0.0; model.b1.len()] } else { self.b1.clone() });
        out.extend(dense_or_zero(&self.w2, model.w2.len()));
        out.extend(if self.b2.is_empty() { vec![0.0; model.b2.len()] } else { self.b2.clone() });
        out
    }

    fn scale(&mut self, s: f64) {
        for g in &mut self.embed {
            g.grad.iter_mut().for_each(|x| *x *= s);
        }
        // scaling one factor scales the outer product
        self.w1.left.iter_mut().for_each(|x| *x *= s);
        self.b1.iter_mut().for_each(|x| *x *= s);
        self.w2.left.iter_mut().for_each(|x| *x *= s);
        self.b2.iter_mut().for_each(|x| *x *= s);
    }
}

/// What a single state is trained towards.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    /// Negative log-likelihood of the reference action.
    Hard(ActionId),
    /// Distillation loss against the top-`k` entries of `q`.
    Soft { q: &'a ActionDistribution, k: usize },
    /// `alpha * KD + (1 - alpha) * NLL`.
    Interpolated {
        reference: ActionId,
        q: &'a ActionDistribution,
        alpha: f64,
        k: usize,
    },
}

struct Activations {
    x: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

static WARNED_TOPK_CLAMP: AtomicBool = AtomicBool::new(false);

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

impl ClassifierModel {
    /// Glorot-uniform initialisation from `config.seed`.
    pub fn new(
        task: &str,
        task_meta: serde_json::Value,
        layout: FeatureLayout,
        num_actions: usize,
        config: ModelConfig,
    ) -> Self {
        let mut rng = seed::rng(seed::derive(config.seed, seed::STREAM_INIT, &[]));
        let d = config.embed_dim;
        let input = layout.slot_tables.len() * d;
        let h = config.hidden_dim;
        let embeddings = layout
            .table_sizes
            .iter()
            .map(|&size| glorot(&mut rng, size, d, size * d))
            .collect();
        let w1 = glorot(&mut rng, input, h, input * h);
        let w2 = glorot(&mut rng, h, num_actions, h * num_actions);
        ClassifierModel {
            header: ModelHeader {
                task: task.to_string(),
                task_meta,
                layout,
                num_actions,
                embed_dim: d,
                hidden_dim: h,
                seed: config.seed,
            },
            embeddings,
            w1,
            b1: vec![0.0; h],
            w2,
            b2: vec![0.0; num_actions],
        }
    }

    pub fn for_task<T: TaskMeta>(task: &T, config: ModelConfig) -> Self {
        Self::new(T::NAME, task.meta(), task.layout(), task.num_actions(), config)
    }

    pub fn num_actions(&self) -> usize {
        self.header.num_actions
    }

    fn input_dim(&self) -> usize {
        self.header.layout.slot_tables.len() * self.header.embed_dim
    }

    pub fn num_params(&self) -> usize {
        self.embeddings.iter().map(Vec::len).sum::<usize>()
            + self.w1.len()
            + self.b1.len()
            + self.w2.len()
            + self.b2.len()
    }

    /// Every parameter in a fixed order: embedding tables, W1, b1, W2, b2.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in &self.embeddings {
            out.extend_from_slice(t);
        }
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut rest = flat;
        let mut take = |dst: &mut Vec<f64>| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for t in &mut self.embeddings {
            take(t);
        }
        take(&mut self.w1);
        take(&mut self.b1);
        take(&mut self.w2);
        take(&mut self.b2);
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.legal.is_empty() {
            return Err(Error::Invariant("no legal actions".into()));
        }
        if ex.features.len() != self.header.layout.slot_tables.len() {
            return Err(Error::Invariant(format!(
                "expected {} feature slots, got {}",
                self.header.layout.slot_tables.len(),
                ex.features.len()
            )));
        }
        Ok(())
    }

    fn activate(&self, ex: &Example) -> Result<Activations> {
        self.check_example(ex)?;
        let d = self.header.embed_dim;
        let input = self.input_dim();
        let mut x = Vec::with_capacity(input);
        for (slot, &id) in ex.features.iter().enumerate() {
            let table = &self.embeddings[self.header.layout.slot_tables[slot]];
            let off = id as usize * d;
            x.extend_from_slice(&table[off..off + d]);
        }
        let h: Vec<f64> = self
            .w1
            .chunks_exact(input)
            .zip(&self.b1)
            .map(|(row, b)| (b + dot(row, &x)).tanh())
            .collect();
        let hd = self.header.hidden_dim;
        let mut probs = vec![0.0; self.num_actions()];
        let mut max = f64::NEG_INFINITY;
        for &a in &ex.legal {
            let z = self.b2[a] + dot(&self.w2[a * hd..(a + 1) * hd], &h);
            probs[a] = z;
            max = max.max(z);
        }
        let mut total = 0.0;
        for &a in &ex.legal {
            let e = (probs[a] - max).exp();
            probs[a] = e;
            total += e;
        }
        for &a in &ex.legal {
            probs[a] /= total;
        }
        Ok(Activations { x, h, probs })
    }

    /// Masked softmax over the legal actions of `ex`.
    pub fn forward(&self, ex: &Example) -> Result<ActionDistribution> {
        Ok(ActionDistribution::new(self.activate(ex)?.probs))
    }

    /// Loss value and gradients for `target` at `ex`.
    pub fn loss(&self, ex: &Example, target: Target<'_>) -> Result<(f64, Gradients)> {
        let acts = self.activate(ex)?;
        let (loss, gz) = output_gradient(&acts.probs, &ex.legal, target)?;
        Ok((loss, self.backward(ex, &acts, gz)))
    }

    pub fn nll_loss(&self, ex: &Example, reference: ActionId) -> Result<(f64, Gradients)> {
        self.loss(ex, Target::Hard(reference))
    }

    pub fn kd_loss(&self, ex: &Example, q: &ActionDistribution, k: usize) -> Result<(f64, Gradients)> {
        self.loss(ex, Target::Soft { q, k })
    }

    pub fn interpolated_loss(
        &self,
        ex: &Example,
        reference: ActionId,
        q: &ActionDistribution,
        alpha: f64,
        k: usize,
    ) -> Result<(f64, Gradients)> {
        self.loss(
            ex,
            Target::Interpolated {
                reference,
                q,
                alpha,
                k,
            },
        )
    }

    fn backward(&self, ex: &Example, acts: &Activations, gz: Vec<f64>) -> Gradients {
        let hd = self.header.hidden_dim;
        let input = self.input_dim();
        let mut dh = vec![0.0; hd];
        for &a in &ex.legal {
            let g = gz[a];
            if g != 0.0 {
                for (d, w) in dh.iter_mut().zip(&self.w2[a * hd..(a + 1) * hd]) {
                    *d += g * w;
                }
            }
        }
        let dpre: Vec<f64> = dh.iter().zip(&acts.h).map(|(d, h)| d * (1.0 - h * h)).collect();
        let mut dx = vec![0.0; input];
        for (row, &g) in self.w1.chunks_exact(input).zip(&dpre) {
            if g != 0.0 {
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
        let d = self.header.embed_dim;
        let mut embed: Vec<EmbedGrad> = Vec::with_capacity(ex.features.len());
        for (slot, (&id, chunk)) in ex.features.iter().zip(dx.chunks_exact(d)).enumerate() {
            let table = self.header.layout.slot_tables[slot];
            match embed.iter_mut().find(|g| g.table == table && g.row == id) {
                Some(g) => g.grad.iter_mut().zip(chunk).for_each(|(a, b)| *a += b),
                None => embed.push(EmbedGrad {
                    table,
                    row: id,
                    grad: chunk.to_vec(),
                }),
            }
        }
        Gradients {
            embed,
            w1: Outer {
                left: dpre.clone(),
                right: acts.x.clone(),
            },
            b1: dpre,
            w2: Outer {
                left: gz.clone(),
                right: acts.h.clone(),
            },
            b2: gz,
        }
    }

    /// One clipped gradient-descent update.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, clip: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        let norm = grads.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient norm {norm} (embedding rows {}, |db1|^2 {}, |db2|^2 {})",
                grads.embed.len(),
                sq(&grads.b1),
                sq(&grads.b2)
            )));
        }
        if norm == 0.0 {
            return Ok(());
        }
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        let step = lr * scale;
        let d = self.header.embed_dim;
        for g in &grads.embed {
            let row = &mut self.embeddings[g.table][g.row as usize * d..(g.row as usize + 1) * d];
            for (p, v) in row.iter_mut().zip(&g.grad) {
                *p -= step * v;
            }
        }
        apply_outer(&mut self.w1, &grads.w1, step);
        axpy(&mut self.b1, &grads.b1, step);
        apply_outer(&mut self.w2, &grads.w2, step);
        axpy(&mut self.b2, &grads.b2, step);
        Ok(())
    }

    /// Clip a gradient in place to norm at most `clip`.
    pub fn clip_gradients(grads: &mut Gradients, clip: f64) {
        let norm = grads.norm();
        if clip > 0.0 && norm > clip {
            grads.scale(clip / norm);
        }
    }

    /// Computes the loss at `ex` and applies one SGD update.
    pub fn train_step(&mut self, ex: &Example, target: Target<'_>, lr: f64, clip: f64) -> Result<f64> {
        let (loss, grads) = self.loss(ex, target)?;
        self.sgd_step(&grads, lr, clip)?;
        Ok(loss)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Binary container:
    ///
    /// ```text
    /// magic      4 bytes  "SKDM"
    /// version    u32 LE
    /// header     u64 LE length + UTF-8 JSON (ModelHeader)
    /// arrays     embed.0 .. embed.{T-1}, w1, b1, w2, b2;
    ///            each u64 LE count + count f64 LE values
    /// ```
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let arrays = self
            .embeddings
            .iter()
            .chain([&self.w1, &self.b1, &self.w2, &self.b2]);
        for a in arrays {
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format("field `magic`: not a searchkd model file".into()));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "field `version`: unsupported version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let hlen = r.u64("header_len")? as usize;
        let header: ModelHeader = serde_json::from_slice(r.take(hlen, "header")?)
            .map_err(|e| Error::Format(format!("field `header`: {e}")))?;
        let d = header.embed_dim;
        let h = header.hidden_dim;
        let input = header.layout.slot_tables.len() * d;
        let mut embeddings = Vec::new();
        for (t, &size) in header.layout.table_sizes.iter().enumerate() {
            embeddings.push(r.array(&format!("embed.{t}"), size * d)?);
        }
        let w1 = r.array("w1", input * h)?;
        let b1 = r.array("b1", h)?;
        let w2 = r.array("w2", h * header.num_actions)?;
        let b2 = r.array("b2", header.num_actions)?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "trailing {} bytes after field `b2`",
                bytes.len() - r.pos
            )));
        }
        Ok(ClassifierModel {
            header,
            embeddings,
            w1,
            b1,
            w2,
            b2,
        })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("truncated file while reading field `{field}`")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn array(&mut self, field: &str, expected: usize) -> Result<Vec<f64>> {
        let n = self.u64(field)? as usize;
        if n != expected {
            return Err(Error::Format(format!(
                "field `{field}`: expected {expected} values, found {n}"
            )));
        }
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format(field.into()))?, field)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(dst: &mut [f64], g: &[f64], step: f64) {
    for (p, v) in dst.iter_mut().zip(g) {
        *p -= step * v;
    }
}

fn apply_outer(dst: &mut [f64], g: &Outer, step: f64) {
    let cols = g.right.len();
    for (row, &l) in dst.chunks_exact_mut(cols).zip(&g.left) {
        if l != 0.0 {
            let s = step * l;
            for (p, r) in row.iter_mut().zip(&g.right) {
                *p -= s * r;
            }
        }
    }
}

fn clamp_k(k: usize, legal: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::Config("top-K must be at least 1".into()));
    }
    if k > legal {
        if !WARNED_TOPK_CLAMP.swap(true, Ordering::Relaxed) {
            log::warn!("top-K {k} exceeds {legal} legal actions; clamping");
        }
        return Ok(legal);
    }
    Ok(k)
}

/// Truncated cross-entropy `-sum_{k<=K} q(a_k) log p(a_k)` over the K most
/// probable actions under `q`, without renormalising the truncated `q`.
fn kd_terms(probs: &[f64], legal: &[ActionId], q: &ActionDistribution, k: usize) -> Result<(f64, Vec<f64>)> {
    let k = clamp_k(k, legal.len())?;
    let mut gz = vec![0.0; probs.len()];
    let mut loss = 0.0;
    let mut mass = 0.0;
    for a in q.top_k(legal, k) {
        let qa = q.probs[a];
        if qa == 0.0 {
            continue;
        }
        loss -= qa * probs[a].ln();
        mass += qa;
        gz[a] -= qa;
    }
    for &a in legal {
        gz[a] += probs[a] * mass;
    }
    Ok((loss, gz))
}

fn nll_terms(probs: &[f64], legal: &[ActionId], reference: ActionId) -> Result<(f64, Vec<f64>)> {
    if !legal.contains(&reference) {
        return Err(Error::IllegalAction {
            action: reference.to_string(),
            reason: "reference action is not legal at this state".into(),
        });
    }
    let mut gz = vec![0.0; probs.len()];
    for &a in legal {
        gz[a] = probs[a];
    }
    gz[reference] -= 1.0;
    Ok((-probs[reference].ln(), gz))
}

/// Loss and its gradient with respect to the output logits.
pub fn output_gradient(probs: &[f64], legal: &[ActionId], target: Target<'_>) -> Result<(f64, Vec<f64>)> {
    match target {
        Target::Hard(a) => nll_terms(probs, legal, a),
        Target::Soft { q, k } => kd_terms(probs, legal, q, k),
        Target::Interpolated {
            reference,
            q,
            alpha,
            k,
        } => {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Config(format!("alpha must lie in [0,1], got {alpha}")));
            }
            let (lk, gk) = kd_terms(probs, legal, q, k)?;
            let (ln, gn) = nll_terms(probs, legal, reference)?;
            let beta = 1.0 - alpha;
            let g = gk.iter().zip(&gn).map(|(a, b)| alpha * a + beta * b).collect();
            Ok((alpha * lk + beta * ln, g))
        }
    }
}

/// Tasks that can be persisted alongside a model.
pub trait TaskMeta: Task + Sized {
    const NAME: &'static str;

    fn meta(&self) -> serde_json::Value;

    fn from_meta(meta: &serde_json::Value) -> Result<Self>;

    fn from_model(model: &ClassifierModel) -> Result<Self> {
        if model.header.task != Self::NAME {
            return Err(Error::Config(format!(
                "model was trained for task `{}`, not `{}`",
                model.header.task,
                Self::NAME
            )));
        }
        Self::from_meta(&model.header.task_meta)
    }
}

impl<T: Task> Scorer<T> for ClassifierModel {
    fn distribution(&self, task: &T, state: &T::State) -> Result<ActionDistribution> {
        self.forward(&task.example(state))
    }
}
