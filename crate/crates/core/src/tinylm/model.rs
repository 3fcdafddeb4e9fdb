use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::MASK;
use crate::error::{Error, Result};
use crate::maskplan::{Objective, TrainingExample};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attention {
    Causal,
    Bidirectional,
}

impl Attention {
    pub fn for_objective(objective: Objective) -> Self {
        match objective {
            Objective::Masked => Attention::Bidirectional,
            Objective::Causal => Attention::Causal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context_length: usize,
    pub hidden_dim: usize,
    pub attention: Attention,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, attention: Attention, seed: u64) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 32,
            context_length: 64,
            hidden_dim: 64,
            attention,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        if self.context_length < 2 {
            problems.push("context_length must be at least 2".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    v: usize,
    d: usize,
    t: usize,
    h: usize,
    pub tok: usize,
    pub pos: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub wout: usize,
    pub bout: usize,
    pub total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let (v, d, t, h) = (c.vocab_size, c.embed_dim, c.context_length, c.hidden_dim);
        let tok = 0;
        let pos = tok + v * d;
        let wq = pos + t * d;
        let wk = wq + d * d;
        let wv = wk + d * d;
        let wo = wv + d * d;
        let w1 = wo + d * d;
        let b1 = w1 + h * d;
        let w2 = b1 + h;
        let b2 = w2 + d * h;
        let wout = b2 + d;
        let bout = wout + v * d;
        Layout {
            v,
            d,
            t,
            h,
            tok,
            pos,
            wq,
            wk,
            wv,
            wo,
            w1,
            b1,
            w2,
            b2,
            wout,
            bout,
            total: bout + v,
        }
    }

    /// (name, offset, shape) for every tensor, in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, usize, Vec<usize>)> {
        let (v, d, t, h) = (self.v, self.d, self.t, self.h);
        vec![
            ("token_embedding", self.tok, vec![v, d]),
            ("position_embedding", self.pos, vec![t, d]),
            ("query", self.wq, vec![d, d]),
            ("key", self.wk, vec![d, d]),
            ("value", self.wv, vec![d, d]),
            ("attention_output", self.wo, vec![d, d]),
            ("ff_in", self.w1, vec![h, d]),
            ("ff_in_bias", self.b1, vec![h]),
            ("ff_out", self.w2, vec![d, h]),
            ("ff_out_bias", self.b2, vec![d]),
            ("output", self.wout, vec![v, d]),
            ("output_bias", self.bout, vec![v]),
        ]
    }
}

/// One attention block plus a GELU feed-forward layer, both residual, with
/// an untied output projection. Parameters live in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<f64>,
}

/// A slot whose logits feed the loss with the given weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSlot {
    pub slot: usize,
    pub target: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// (slot, logits) for every loss-bearing slot.
    pub logits: Vec<(usize, Vec<f64>)>,
    /// Mean cross-entropy over loss-bearing slots; 0 when there are none.
    pub loss: f64,
    pub loss_slots: usize,
}

struct Cache {
    n: usize,
    tokens: Vec<u32>,
    offset: usize,
    h0: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    ctx: Vec<f64>,
    h1: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    h2: Vec<f64>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// out = W x for row-major W (rows × cols).
fn matvec(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// out += Wᵀ y.
fn matvec_t_add(w: &[f64], cols: usize, y: &[f64], out: &mut [f64]) {
    for (r, &yr) in y.iter().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yr;
        }
    }
}

/// G += y xᵀ.
fn outer_add(g: &mut [f64], cols: usize, y: &[f64], x: &[f64]) {
    for (r, &yr) in y.iter().enumerate() {
        let row = &mut g[r * cols..(r + 1) * cols];
        for (gi, xi) in row.iter_mut().zip(x) {
            *gi += yr * xi;
        }
    }
}

fn log_softmax_at(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    ((logits[target] - max) - sum.ln(), probs)
}

/// Softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax_at(logits, 0).1
}

/// Token ids ranked by logit descending, ties by id ascending.
pub fn rank(logits: &[f64]) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..logits.len() as u32).collect();
    ids.sort_by(|&a, &b| {
        logits[b as usize]
            .total_cmp(&logits[a as usize])
            .then(a.cmp(&b))
    });
    ids
}

impl Model {
    /// Seeded init: matrices ~ N(0, 1/√fan_in), embeddings ~ N(0, 1/√d),
    /// biases zero.
    pub fn init(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let l = Layout::new(&config);
        let mut rng = seed::rng(seed::derive(config.seed, "init"));
        let mut params = vec![0.0; l.total];
        let d = config.embed_dim as f64;
        let h = config.hidden_dim as f64;
        let mut fill = |range: std::ops::Range<usize>, fan_in: f64| {
            let normal = Normal::new(0.0, 1.0 / fan_in.sqrt()).expect("positive scale");
            for p in &mut params[range] {
                *p = normal.sample(&mut rng);
            }
        };
        fill(l.tok..l.wq, d);
        fill(l.wq..l.w1, d);
        fill(l.w1..l.b1, d);
        fill(l.w2..l.b2, h);
        fill(l.wout..l.bout, d);
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: Vec<f64>) -> Result<Model> {
        config.validate()?;
        let expected = Layout::new(&config).total;
        if params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameters, found {}",
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Checkpoint(format!("parameter {i} is not finite")));
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    /// Row-major view of a named tensor.
    pub fn tensor(&self, name: &str) -> Option<(&[f64], Vec<usize>)> {
        self.layout()
            .tensors()
            .into_iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, off, shape)| {
                let len: usize = shape.iter().product();
                (&self.params[off..off + len], shape)
            })
    }

    fn check_tokens(&self, tokens: &[u32], offset: usize) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty input".into()));
        }
        if offset + tokens.len() > self.config.context_length {
            return Err(Error::InvalidArgument(format!(
                "input of {} tokens at offset {offset} exceeds context length {}",
                tokens.len(),
                self.config.context_length
            )));
        }
        match tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn forward(&self, tokens: &[u32], offset: usize) -> Cache {
        let l = self.layout();
        let (d, h) = (l.d, l.h);
        let n = tokens.len();
        let p = &self.params;

        let mut h0 = vec![0.0; n * d];
        for (i, &tok) in tokens.iter().enumerate() {
            let te = &p[l.tok + tok as usize * d..][..d];
            let pe = &p[l.pos + (offset + i) * d..][..d];
            for (j, x) in h0[i * d..(i + 1) * d].iter_mut().enumerate() {
                *x = te[j] + pe[j];
            }
        }
        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        for i in 0..n {
            let x = &h0[i * d..(i + 1) * d];
            matvec(&p[l.wq..l.wk], d, x, &mut q[i * d..(i + 1) * d]);
            matvec(&p[l.wk..l.wv], d, x, &mut k[i * d..(i + 1) * d]);
            matvec(&p[l.wv..l.wo], d, x, &mut v[i * d..(i + 1) * d]);
        }

        let scale = 1.0 / (d as f64).sqrt();
        let causal = self.config.attention == Attention::Causal;
        let mut attn = vec![0.0; n * n];
        let mut ctx = vec![0.0; n * d];
        for i in 0..n {
            let visible = if causal { i + 1 } else { n };
            let qi = &q[i * d..(i + 1) * d];
            let row = &mut attn[i * n..i * n + visible];
            for (j, s) in row.iter_mut().enumerate() {
                let kj = &k[j * d..(j + 1) * d];
                *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            for s in row.iter_mut() {
                *s /= sum;
            }
            let ci = &mut ctx[i * d..(i + 1) * d];
            for (j, &a) in row.iter().enumerate() {
                for (c, vj) in ci.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                    *c += a * vj;
                }
            }
        }

        let mut h1 = h0.clone();
        let mut u = vec![0.0; n * h];
        let mut g = vec![0.0; n * h];
        let mut h2 = vec![0.0; n * d];
        let mut tmp = vec![0.0; d];
        for i in 0..n {
            matvec(&p[l.wo..l.w1], d, &ctx[i * d..(i + 1) * d], &mut tmp);
            for (x, t) in h1[i * d..(i + 1) * d].iter_mut().zip(&tmp) {
                *x += t;
            }
            let ui = &mut u[i * h..(i + 1) * h];
            matvec(&p[l.w1..l.b1], d, &h1[i * d..(i + 1) * d], ui);
            for (x, b) in ui.iter_mut().zip(&p[l.b1..l.w2]) {
                *x += b;
            }
            for (gx, ux) in g[i * h..(i + 1) * h].iter_mut().zip(ui.iter()) {
                *gx = gelu(*ux);
            }
            matvec(&p[l.w2..l.b2], h, &g[i * h..(i + 1) * h], &mut tmp);
            for j in 0..d {
                h2[i * d + j] = h1[i * d + j] + tmp[j] + p[l.b2 + j];
            }
        }

        Cache {
            n,
            tokens: tokens.to_vec(),
            offset,
            h0,
            q,
            k,
            v,
            attn,
            ctx,
            h1,
            u,
            g,
            h2,
        }
    }

    fn slot_logits(&self, cache: &Cache, slot: usize) -> Vec<f64> {
        let l = self.layout();
        let mut z = vec![0.0; l.v];
        matvec(
            &self.params[l.wout..l.bout],
            l.d,
            &cache.h2[slot * l.d..(slot + 1) * l.d],
            &mut z,
        );
        for (zi, b) in z.iter_mut().zip(&self.params[l.bout..]) {
            *zi += b;
        }
        z
    }

    /// Logits at the requested slots of `tokens`.
    pub fn logits(&self, tokens: &[u32], slots: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.logits_at_offset(tokens, 0, slots)
    }

    /// As [`Model::logits`], with the input placed at positions starting at `offset`.
    pub fn logits_at_offset(
        &self,
        tokens: &[u32],
        offset: usize,
        slots: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        self.check_tokens(tokens, offset)?;
        if let Some(s) = slots.iter().find(|&&s| s >= tokens.len()) {
            return Err(Error::InvalidArgument(format!(
                "slot {s} outside input of {} tokens",
                tokens.len()
            )));
        }
        let cache = self.forward(tokens, offset);
        Ok(slots.iter().map(|&s| self.slot_logits(&cache, s)).collect())
    }

    fn check_example(&self, ex: &TrainingExample) -> Result<()> {
        let expected = Attention::for_objective(ex.objective);
        if expected != self.config.attention {
            return Err(Error::ObjectiveMismatch(format!(
                "{:?} example on a {:?} model",
                ex.objective, self.config.attention
            )));
        }
        if ex.len == 0 {
            return Err(Error::InvalidArgument("example has no slots".into()));
        }
        if let Some(&id) = ex.target[..ex.len]
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        self.check_tokens(&ex.input[..ex.len], 0)
    }

    fn loss_slots(ex: &TrainingExample) -> Vec<WeightedSlot> {
        let m = ex.loss_slots();
        (0..ex.len)
            .filter(|&i| ex.loss_mask[i])
            .map(|i| WeightedSlot {
                slot: i,
                target: ex.target[i],
                weight: 1.0 / m as f64,
            })
            .collect()
    }

    /// Input tokens actually fed to the model. Causal examples read one token
    /// per target slot.
    fn example_input(ex: &TrainingExample) -> &[u32] {
        &ex.input[..ex.len]
    }

    pub fn evaluate(&self, ex: &TrainingExample) -> Result<Evaluation> {
        self.check_example(ex)?;
        let slots = Self::loss_slots(ex);
        if slots.is_empty() {
            return Ok(Evaluation {
                logits: Vec::new(),
                loss: 0.0,
                loss_slots: 0,
            });
        }
        let cache = self.forward(Self::example_input(ex), 0);
        let mut loss = 0.0;
        let logits = slots
            .iter()
            .map(|s| {
                let z = self.slot_logits(&cache, s.slot);
                loss -= s.weight * log_softmax_at(&z, s.target as usize).0;
                (s.slot, z)
            })
            .collect();
        Ok(Evaluation {
            logits,
            loss,
            loss_slots: slots.len(),
        })
    }

    /// Loss of an example and its gradient written into `grad` (overwritten).
    pub fn loss_and_gradient(&self, ex: &TrainingExample, grad: &mut [f64]) -> Result<f64> {
        self.check_example(ex)?;
        let slots = Self::loss_slots(ex);
        self.weighted_loss_and_gradient(Self::example_input(ex), &slots, grad)
    }

    /// Σ weight · cross-entropy over explicit slots, with gradient. Slots of
    /// zero weight contribute nothing to either.
    pub fn weighted_loss_and_gradient(
        &self,
        tokens: &[u32],
        slots: &[WeightedSlot],
        grad: &mut [f64],
    ) -> Result<f64> {
        if grad.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient buffer has {} entries, model has {}",
                grad.len(),
                self.params.len()
            )));
        }
        grad.fill(0.0);
        if slots.is_empty() {
            return Ok(0.0);
        }
        self.check_tokens(tokens, 0)?;
        for s in slots {
            if s.slot >= tokens.len() || s.target as usize >= self.config.vocab_size {
                return Err(Error::InvalidArgument(format!(
                    "slot {} with target {} is out of range",
                    s.slot, s.target
                )));
            }
        }
        let cache = self.forward(tokens, 0);
        Ok(self.backward(&cache, slots, grad))
    }

    fn backward(&self, c: &Cache, slots: &[WeightedSlot], grad: &mut [f64]) -> f64 {
        let l = self.layout();
        let (d, h, n) = (l.d, l.h, c.n);
        let p = &self.params;
        let mut loss = 0.0;

        let mut dh2 = vec![0.0; n * d];
        for s in slots {
            let z = self.slot_logits(c, s.slot);
            let (logp, mut dz) = log_softmax_at(&z, s.target as usize);
            loss -= s.weight * logp;
            dz[s.target as usize] -= 1.0;
            for x in dz.iter_mut() {
                *x *= s.weight;
            }
            let h2i = &c.h2[s.slot * d..(s.slot + 1) * d];
            outer_add(&mut grad[l.wout..l.bout], d, &dz, h2i);
            for (gb, x) in grad[l.bout..].iter_mut().zip(&dz) {
                *gb += x;
            }
            matvec_t_add(&p[l.wout..l.bout], d, &dz, &mut dh2[s.slot * d..(s.slot + 1) * d]);
        }

        // feed-forward block
        let mut dh1 = dh2.clone();
        let mut du = vec![0.0; h];
        for i in 0..n {
            let df = &dh2[i * d..(i + 1) * d];
            outer_add(&mut grad[l.w2..l.b2], h, df, &c.g[i * h..(i + 1) * h]);
            for (gb, x) in grad[l.b2..l.wout].iter_mut().zip(df) {
                *gb += x;
            }
            du.fill(0.0);
            matvec_t_add(&p[l.w2..l.b2], h, df, &mut du);
            for (x, u) in du.iter_mut().zip(&c.u[i * h..(i + 1) * h]) {
                *x *= gelu_grad(*u);
            }
            outer_add(&mut grad[l.w1..l.b1], d, &du, &c.h1[i * d..(i + 1) * d]);
            for (gb, x) in grad[l.b1..l.w2].iter_mut().zip(&du) {
                *gb += x;
            }
            matvec_t_add(&p[l.w1..l.b1], d, &du, &mut dh1[i * d..(i + 1) * d]);
        }

        // attention block
        let mut dh0 = dh1.clone();
        let mut dctx = vec![0.0; n * d];
        for i in 0..n {
            let dout = &dh1[i * d..(i + 1) * d];
            outer_add(&mut grad[l.wo..l.w1], d, dout, &c.ctx[i * d..(i + 1) * d]);
            matvec_t_add(&p[l.wo..l.w1], d, dout, &mut dctx[i * d..(i + 1) * d]);
        }
        let scale = 1.0 / (d as f64).sqrt();
        let causal = self.config.attention == Attention::Causal;
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut da = vec![0.0; n];
        for i in 0..n {
            let visible = if causal { i + 1 } else { n };
            let a = &c.attn[i * n..i * n + visible];
            let dci = &dctx[i * d..(i + 1) * d];
            for j in 0..visible {
                da[j] = dci
                    .iter()
                    .zip(&c.v[j * d..(j + 1) * d])
                    .map(|(x, y)| x * y)
                    .sum();
                for (dvj, x) in dv[j * d..(j + 1) * d].iter_mut().zip(dci) {
                    *dvj += a[j] * x;
                }
            }
            let dot: f64 = a.iter().zip(&da[..visible]).map(|(x, y)| x * y).sum();
            for j in 0..visible {
                let ds = a[j] * (da[j] - dot) * scale;
                for t in 0..d {
                    dq[i * d + t] += ds * c.k[j * d + t];
                    dk[j * d + t] += ds * c.q[i * d + t];
                }
            }
        }
        for i in 0..n {
            let x = &c.h0[i * d..(i + 1) * d];
            let row = i * d..(i + 1) * d;
            outer_add(&mut grad[l.wq..l.wk], d, &dq[row.clone()], x);
            outer_add(&mut grad[l.wk..l.wv], d, &dk[row.clone()], x);
            outer_add(&mut grad[l.wv..l.wo], d, &dv[row.clone()], x);
            let dst = &mut dh0[row.clone()];
            matvec_t_add(&p[l.wq..l.wk], d, &dq[row.clone()], dst);
            matvec_t_add(&p[l.wk..l.wv], d, &dk[row.clone()], dst);
            matvec_t_add(&p[l.wv..l.wo], d, &dv[row.clone()], dst);
        }

        for (i, &tok) in c.tokens.iter().enumerate() {
            let src = &dh0[i * d..(i + 1) * d];
            let te = l.tok + tok as usize * d;
            let pe = l.pos + (c.offset + i) * d;
            for j in 0..d {
                grad[te + j] += src[j];
                grad[pe + j] += src[j];
            }
        }
        loss
    }

    /// Top-k predictions at every MASK position of a bidirectional input.
    pub fn predict_masked(&self, tokens: &[u32], top_k: usize) -> Result<Vec<(usize, Vec<u32>)>> {
        if self.config.attention != Attention::Bidirectional {
            return Err(Error::ObjectiveMismatch(
                "masked prediction needs a bidirectional model".into(),
            ));
        }
        if top_k == 0 || top_k > self.config.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "top_k must be in 1..={}, got {top_k}",
                self.config.vocab_size
            )));
        }
        let slots: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i] == MASK).collect();
        let logits = self.logits(tokens, &slots)?;
        Ok(slots
            .into_iter()
            .zip(logits)
            .map(|(s, z)| (s, rank(&z).into_iter().take(top_k).collect()))
            .collect())
    }

    /// Greedy continuation of exactly `length` tokens.
    pub fn generate(&self, prefix: &[u32], length: usize) -> Result<Vec<u32>> {
        self.generate_at(prefix, 0, length)
    }

    /// Greedy continuation of a prefix whose first token sits at position
    /// `offset`. Once the context is full the window slides and restarts at
    /// position 0.
    pub fn generate_at(&self, prefix: &[u32], offset: usize, length: usize) -> Result<Vec<u32>> {
        if self.config.attention != Attention::Causal {
            return Err(Error::ObjectiveMismatch(
                "generation needs a causal model".into(),
            ));
        }
        self.check_tokens(prefix, offset)?;
        let t = self.config.context_length;
        let mut window = prefix.to_vec();
        let mut offset = offset;
        let mut out = Vec::with_capacity(length);
        for _ in 0..length {
            let z = &self.logits_at_offset(&window, offset, &[window.len() - 1])?[0];
            let next = rank(z)[0];
            out.push(next);
            window.push(next);
            if offset + window.len() > t {
                offset = 0;
                let drop = window.len() - t;
                window.drain(..drop);
            }
        }
        Ok(out)
    }

    /// Maximum relative error between the analytic gradient and central
    /// finite differences over sampled coordinates the example touches.
    /// Relative error is |a − n| / max(|a|, |n|, 1e-6).
    pub fn grad_check(&self, ex: &TrainingExample, epsilon: f64, samples: usize) -> Result<f64> {
        if !(1e-6..=1e-3).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be in [1e-6, 1e-3], got {epsilon}"
            )));
        }
        let mut analytic = vec![0.0; self.params.len()];
        self.loss_and_gradient(ex, &mut analytic)?;
        let active = self.active_coordinates(ex);
        let mut rng = seed::rng(seed::derive(self.config.seed, "grad_check"));
        let picks = sample(&mut rng, active.len(), samples.max(100).min(active.len()));
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for idx in picks.iter() {
            let i = active[idx];
            let orig = probe.params[i];
            probe.params[i] = orig + epsilon;
            let plus = probe.evaluate(ex)?.loss;
            probe.params[i] = orig - epsilon;
            let minus = probe.evaluate(ex)?.loss;
            probe.params[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
        Ok(worst)
    }

    /// Coordinates whose value can affect the loss of this example.
    fn active_coordinates(&self, ex: &TrainingExample) -> Vec<usize> {
        let l = self.layout();
        let mut out = Vec::new();
        let mut toks: Vec<u32> = ex.input[..ex.len].to_vec();
        toks.sort_unstable();
        toks.dedup();
        for t in toks {
            out.extend(l.tok + t as usize * l.d..l.tok + (t as usize + 1) * l.d);
        }
        out.extend(l.pos..l.pos + ex.len * l.d);
        out.extend(l.wq..l.total);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BOS, PAD};
    use approx::assert_relative_eq;

    fn config(v: usize, d: usize, attention: Attention, seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size: v,
            embed_dim: d,
            context_length: 8,
            hidden_dim: 2 * d,
            attention,
            seed,
        }
    }

    pub(crate) fn masked_example(input: &[u32], targets: &[(usize, u32)]) -> TrainingExample {
        let n = input.len();
        let mut target = vec![PAD; n];
        let mut loss_mask = vec![false; n];
        for &(s, t) in targets {
            target[s] = t;
            loss_mask[s] = true;
        }
        TrainingExample {
            objective: Objective::Masked,
            input: input.to_vec(),
            target,
            loss_mask,
            len: n,
        }
    }

    pub(crate) fn causal_example(tokens: &[u32]) -> TrainingExample {
        let n = tokens.len() - 1;
        let mut target = tokens[1..].to_vec();
        target.push(PAD);
        let mut loss_mask = vec![true; n];
        loss_mask.push(false);
        TrainingExample {
            objective: Objective::Causal,
            input: tokens.to_vec(),
            target,
            loss_mask,
            len: n,
        }
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = Model::init(config(10, 4, Attention::Causal, 1)).unwrap();
        let b = Model::init(config(10, 4, Attention::Causal, 1)).unwrap();
        let c = Model::init(config(10, 4, Attention::Causal, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        assert_eq!(a.tensor("token_embedding").unwrap().1, vec![10, 4]);
        assert!(a.tensor("output_bias").unwrap().0.iter().all(|&x| x == 0.0));
        let bad = ModelConfig {
            context_length: 1,
            ..config(10, 4, Attention::Causal, 1)
        };
        assert!(Model::init(bad).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let mut m = Model::init(config(7, 4, Attention::Bidirectional, 3)).unwrap();
        let l = m.layout();
        m.params[l.wout..].fill(0.0);
        let ex = masked_example(&[BOS, MASK, 5], &[(1, 4)]);
        assert_relative_eq!(m.evaluate(&ex).unwrap().loss, 7f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn hand_softmax_cross_entropy() {
        // 2-way softmax over logits (0, ln 3) with target 1: -ln(3/4)
        let (logp, probs) = log_softmax_at(&[0.0, 3f64.ln()], 1);
        assert_relative_eq!(-logp, (4.0f64 / 3.0).ln(), epsilon = 1e-12);
        assert_relative_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn no_loss_slots_is_zero() {
        let m = Model::init(config(9, 4, Attention::Bidirectional, 3)).unwrap();
        let ex = masked_example(&[BOS, 5, 6], &[]);
        assert_eq!(m.evaluate(&ex).unwrap().loss, 0.0);
        let mut g = vec![1.0; m.param_count()];
        assert_eq!(m.loss_and_gradient(&ex, &mut g).unwrap(), 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_tokens_and_objectives() {
        let m = Model::init(config(9, 4, Attention::Bidirectional, 3)).unwrap();
        let ex = masked_example(&[BOS, 50, 6], &[(1, 4)]);
        assert!(matches!(m.evaluate(&ex), Err(Error::TokenOutOfRange { id: 50, .. })));
        let c = causal_example(&[BOS, 5, 6]);
        assert!(matches!(m.evaluate(&c), Err(Error::ObjectiveMismatch(_))));
        assert!(m.generate(&[BOS], 2).is_err());
        assert!(m.predict_masked(&[BOS, MASK], 10).is_err());
        assert!(m.predict_masked(&[BOS, MASK], 0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (seed, attention) in [(1, Attention::Causal), (2, Attention::Bidirectional)] {
            let m = Model::init(config(11, 8, attention, seed)).unwrap();
            let ex = match attention {
                Attention::Causal => causal_example(&[BOS, 4, 7, 9, 4, 10]),
                Attention::Bidirectional => {
                    masked_example(&[BOS, MASK, 7, MASK, 4, 10], &[(1, 5), (3, 8)])
                }
            };
            let err = m.grad_check(&ex, 1e-4, 200).unwrap();
            assert!(err <= 1e-3, "{attention:?}: {err}");
            let err2 = m.grad_check(&ex, 2e-4, 200).unwrap();
            assert!(err2 <= 1e-3, "{attention:?} doubled: {err2}");
        }
    }

    #[test]
    fn zero_weight_slots_contribute_nothing() {
        let m = Model::init(config(11, 8, Attention::Causal, 5)).unwrap();
        let mut ex = causal_example(&[BOS, 4, 7, 9, 4, 10]);
        ex.loss_mask[2] = false;
        let mut masked = vec![0.0; m.param_count()];
        let loss = m.loss_and_gradient(&ex, &mut masked).unwrap();
        let slots: Vec<WeightedSlot> = (0..ex.len)
            .map(|i| WeightedSlot {
                slot: i,
                target: ex.target[i],
                weight: if ex.loss_mask[i] { 1.0 / 4.0 } else { 0.0 },
            })
            .collect();
        let mut weighted = vec![0.0; m.param_count()];
        let wl = m
            .weighted_loss_and_gradient(&ex.input[..ex.len], &slots, &mut weighted)
            .unwrap();
        assert_eq!(loss, wl);
        assert_eq!(masked, weighted);
    }

    #[test]
    fn rank_breaks_ties_by_id() {
        assert_eq!(rank(&[1.0, 3.0, 3.0, 0.5]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn generate_contract() {
        let m = Model::init(config(9, 4, Attention::Causal, 3)).unwrap();
        assert!(m.generate(&[BOS, 4], 0).unwrap().is_empty());
        let a = m.generate(&[BOS, 4], 12).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a, m.generate(&[BOS, 4], 12).unwrap());
        assert!(m.generate(&[BOS; 9], 1).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let m = Model::init(config(13, 4, Attention::Bidirectional, 8)).unwrap();
        for z in m.logits(&[BOS, MASK, 5, 6], &[0, 1, 2, 3]).unwrap() {
            assert!((softmax(&z).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
