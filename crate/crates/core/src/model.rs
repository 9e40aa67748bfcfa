//! The hybrid experts/critics network with task-driven gates.
//!
//! Per example, every user field embedding is concatenated (schema order)
//! and fed to `n` expert MLPs. A softmax gate over the campaign embeddings
//! plus the mean-pooled user embedding mixes the expert outputs into one
//! user representation `r`. `m` critic heads score `r` through a sigmoid
//! each, and a second, independent gate mixes the critic scores into the
//! final probability-like output.
//!
//! With `literal_scaling` the expert mix keeps a `1/n` factor and the
//! critic mix a `1/m` factor, so scores live in `(0, 1/m)`; since gate
//! weights sum to one these factors are monotone scalings, and turning
//! them off restores plain convex mixtures in `(0, 1)`.
//!
//! # Parameter layout
//!
//! All weights are `[fan_in, fan_out]` matrices applied as `x @ W + b`
//! with biases stored `[1, fan_out]`. Names:
//!
//! - `emb.c.<field>` / `emb.u.<field>` — `[vocab, k]` embedding tables
//! - `expert.<i>.w<l>` / `expert.<i>.b<l>` — expert `i`, layer `l` (ReLU)
//! - `gate.expert.w<l>` / `gate.expert.b<l>` — hidden layers ReLU, output linear
//! - `critic.<i>.w` / `critic.<i>.b` — one linear unit per critic
//! - `gate.critic.w<l>` / `gate.critic.b<l>` — as the expert gate

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{encode_batch, EncodedBatch, FeatureSchema, RawExample, TaskBatch};
use crate::params::{BoundParams, ParamSet};
use crate::rng::rng_for;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Which structural pieces are active. The reduced modes replace a hybrid
/// block with a single unit and drop the corresponding gate entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// One expert, no expert gate.
    SingleExpert,
    /// One critic, no critic gate.
    SingleCritic,
    /// One expert and one critic, no gates: a plain MLP over embeddings.
    Mlp,
}

impl Ablation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::SingleExpert => "single-expert",
            Ablation::SingleCritic => "single-critic",
            Ablation::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "single-expert" | "no-he" => Ok(Ablation::SingleExpert),
            "single-critic" | "no-hc" => Ok(Ablation::SingleCritic),
            "mlp" => Ok(Ablation::Mlp),
            other => Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
    }

    fn code(&self) -> u8 {
        match self {
            Ablation::Full => 0,
            Ablation::SingleExpert => 1,
            Ablation::SingleCritic => 2,
            Ablation::Mlp => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Ablation::Full),
            1 => Some(Ablation::SingleExpert),
            2 => Some(Ablation::SingleCritic),
            3 => Some(Ablation::Mlp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Embedding dimension k.
    pub embedding_dim: usize,
    pub n_experts: usize,
    pub m_critics: usize,
    /// Hidden sizes of each expert MLP; the last entry is the dimension
    /// of the user representation.
    pub expert_hidden: Vec<usize>,
    /// Hidden sizes of both gate MLPs (their output sizes are n and m).
    pub gate_hidden: Vec<usize>,
    /// Keep the 1/n and 1/m mixing factors.
    pub literal_scaling: bool,
    pub ablation: Ablation,
    /// Sum-reduce the batch loss instead of averaging it.
    pub sum_loss: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 16,
            n_experts: 8,
            m_critics: 5,
            expert_hidden: vec![64, 64],
            gate_hidden: vec![64],
            literal_scaling: true,
            ablation: Ablation::Full,
            sum_loss: false,
        }
    }
}

impl ModelConfig {
    /// Grid-searched preset for the public advertising dataset: 8 experts,
    /// 5 critics, layers 64/64 with one-unit heads, 16-dim embeddings.
    pub fn ads_preset() -> Self {
        ModelConfig::default()
    }

    /// Preset for the content-promotion dataset: 8 experts, 3 critics.
    pub fn content_preset() -> Self {
        ModelConfig {
            m_critics: 3,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.expert_hidden.is_empty() {
            return Err(Error::Config(
                "embedding_dim and expert_hidden must be non-empty".into(),
            ));
        }
        if self.n_experts == 0 || self.m_critics == 0 {
            return Err(Error::Config("need at least one expert and critic".into()));
        }
        match self.ablation {
            Ablation::SingleExpert | Ablation::Mlp if self.n_experts != 1 => {
                return Err(Error::Config(format!(
                    "{} requires n_experts = 1, got {}",
                    self.ablation.as_str(),
                    self.n_experts
                )))
            }
            _ => {}
        }
        match self.ablation {
            Ablation::SingleCritic | Ablation::Mlp if self.m_critics != 1 => {
                return Err(Error::Config(format!(
                    "{} requires m_critics = 1, got {}",
                    self.ablation.as_str(),
                    self.m_critics
                )))
            }
            _ => {}
        }
        Ok(())
    }

    /// Forces the expert/critic counts an ablation implies.
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        if matches!(ablation, Ablation::SingleExpert | Ablation::Mlp) {
            self.n_experts = 1;
        }
        if matches!(ablation, Ablation::SingleCritic | Ablation::Mlp) {
            self.m_critics = 1;
        }
        self
    }

    pub fn has_expert_gate(&self) -> bool {
        matches!(self.ablation, Ablation::Full | Ablation::SingleCritic)
    }

    pub fn has_critic_gate(&self) -> bool {
        matches!(self.ablation, Ablation::Full | Ablation::SingleExpert)
    }

    fn repr_dim(&self) -> usize {
        *self.expert_hidden.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone)]
pub struct MetaHeacModel {
    pub schema: FeatureSchema,
    pub config: ModelConfig,
    pub params: ParamSet,
}

fn kaiming_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("init shape")
}

/// (name, rows, cols, zero-initialized) for every non-embedding parameter.
fn dense_layout(schema: &FeatureSchema, config: &ModelConfig) -> Vec<(String, usize, usize, bool)> {
    let k = config.embedding_dim;
    let expert_in = schema.n_user_fields() * k;
    let gate_in = (schema.n_campaign_fields() + 1) * k;
    let mut layout = Vec::new();

    for i in 0..config.n_experts {
        let mut prev = expert_in;
        for (l, &h) in config.expert_hidden.iter().enumerate() {
            layout.push((format!("expert.{i}.w{l}"), prev, h, false));
            layout.push((format!("expert.{i}.b{l}"), 1, h, true));
            prev = h;
        }
    }
    if config.has_expert_gate() {
        let mut prev = gate_in;
        for (l, &h) in config.gate_hidden.iter().enumerate() {
            layout.push((format!("gate.expert.w{l}"), prev, h, false));
            layout.push((format!("gate.expert.b{l}"), 1, h, true));
            prev = h;
        }
        let l = config.gate_hidden.len();
        layout.push((format!("gate.expert.w{l}"), prev, config.n_experts, false));
        layout.push((format!("gate.expert.b{l}"), 1, config.n_experts, true));
    }
    for i in 0..config.m_critics {
        layout.push((format!("critic.{i}.w"), config.repr_dim(), 1, false));
        layout.push((format!("critic.{i}.b"), 1, 1, true));
    }
    if config.has_critic_gate() {
        let mut prev = gate_in;
        for (l, &h) in config.gate_hidden.iter().enumerate() {
            layout.push((format!("gate.critic.w{l}"), prev, h, false));
            layout.push((format!("gate.critic.b{l}"), 1, h, true));
            prev = h;
        }
        let l = config.gate_hidden.len();
        layout.push((format!("gate.critic.w{l}"), prev, config.m_critics, false));
        layout.push((format!("gate.critic.b{l}"), 1, config.m_critics, true));
    }
    layout
}

impl MetaHeacModel {
    /// Fresh model with seeded initialization: embeddings uniform in
    /// `[-0.01, 0.01]`, weights Kaiming-style uniform, biases zero.
    pub fn init(schema: FeatureSchema, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = rng_for(seed, "model-init");
        crate::features::init_embeddings(&schema, config.embedding_dim, &mut params, &mut rng)?;
        for (name, rows, cols, zero) in dense_layout(&schema, &config) {
            let t = if zero {
                Tensor::zeros(rows, cols)
            } else {
                kaiming_uniform(rows, cols, &mut rng)
            };
            params.insert(name, t)?;
        }
        Ok(MetaHeacModel {
            schema,
            config,
            params,
        })
    }

    /// Same structure, different parameter values (congruence required).
    pub fn with_params(&self, params: ParamSet) -> Result<Self> {
        if !self.params.congruent(&params) {
            return Err(Error::InvalidInput(
                "replacement parameters are not congruent with the model".into(),
            ));
        }
        Ok(MetaHeacModel {
            schema: self.schema.clone(),
            config: self.config.clone(),
            params,
        })
    }

    fn mlp(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        prefix: &str,
        n_layers: usize,
        input: NodeId,
        relu_last: bool,
    ) -> Result<NodeId> {
        let mut x = input;
        for l in 0..n_layers {
            let w = params.node(&format!("{prefix}.w{l}"))?;
            let b = params.node(&format!("{prefix}.b{l}"))?;
            let z = tape.matmul(x, w)?;
            let z = tape.add_bias(z, b)?;
            x = if relu_last || l + 1 < n_layers {
                tape.relu(z)
            } else {
                z
            };
        }
        Ok(x)
    }

    /// Softmax gate weights `[B, outputs]` from the campaign vector and
    /// the mean-pooled user embedding.
    fn gate(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        prefix: &str,
        enc: &EncodedBatch,
    ) -> Result<NodeId> {
        let campaign = tape.broadcast_rows(enc.campaign_vec, enc.size)?;
        let gate_in = tape.concat_cols(&[campaign, enc.user_mean])?;
        let logits = self.mlp(
            tape,
            params,
            prefix,
            self.config.gate_hidden.len() + 1,
            gate_in,
            false,
        )?;
        Ok(tape.softmax_rows(logits))
    }

    /// Mixed user representation `[B, repr_dim]`.
    fn user_representation(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        enc: &EncodedBatch,
    ) -> Result<NodeId> {
        let n_layers = self.config.expert_hidden.len();
        let expert_outs: Vec<NodeId> = (0..self.config.n_experts)
            .map(|i| {
                self.mlp(
                    tape,
                    params,
                    &format!("expert.{i}"),
                    n_layers,
                    enc.user_concat,
                    true,
                )
            })
            .collect::<Result<_>>()?;

        let mixed = if self.config.has_expert_gate() {
            let weights = self.gate(tape, params, "gate.expert", enc)?;
            let repr = self.config.repr_dim();
            let mut acc: Option<NodeId> = None;
            for (i, &out) in expert_outs.iter().enumerate() {
                let w_i = tape.slice_cols(weights, i, 1)?;
                let w_i = tape.broadcast_cols(w_i, repr)?;
                let term = tape.mul(w_i, out)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => tape.add(a, term)?,
                });
            }
            acc.expect("at least one expert")
        } else {
            expert_outs[0]
        };
        Ok(if self.config.literal_scaling {
            tape.scale(mixed, 1.0 / self.config.n_experts as f64)
        } else {
            mixed
        })
    }

    /// Records the whole network for one batch; returns the `[B, 1]`
    /// scores.
    pub fn forward_scores(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        batch: &TaskBatch,
    ) -> Result<NodeId> {
        let enc = encode_batch(&self.schema, tape, params, batch)?;
        let repr = self.user_representation(tape, params, &enc)?;

        let critic_scores: Vec<NodeId> = (0..self.config.m_critics)
            .map(|i| {
                let w = params.node(&format!("critic.{i}.w"))?;
                let b = params.node(&format!("critic.{i}.b"))?;
                let z = tape.matmul(repr, w)?;
                let z = tape.add_bias(z, b)?;
                Ok(tape.sigmoid(z))
            })
            .collect::<Result<_>>()?;

        let mixed = if self.config.has_critic_gate() {
            let weights = self.gate(tape, params, "gate.critic", &enc)?;
            let mut acc: Option<NodeId> = None;
            for (i, &score) in critic_scores.iter().enumerate() {
                let w_i = tape.slice_cols(weights, i, 1)?;
                let term = tape.mul(w_i, score)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => tape.add(a, term)?,
                });
            }
            acc.expect("at least one critic")
        } else {
            critic_scores[0]
        };
        Ok(if self.config.literal_scaling {
            tape.scale(mixed, 1.0 / self.config.m_critics as f64)
        } else {
            mixed
        })
    }

    /// Cross-entropy of the batch under parameters `params`.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        batch: &TaskBatch,
    ) -> Result<NodeId> {
        let scores = self.forward_scores(tape, params, batch)?;
        bce_loss(tape, scores, &batch.labels, self.config.sum_loss)
    }

    /// Forward-only scores for a batch.
    pub fn predict_batch(&self, batch: &TaskBatch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let scores = self.forward_scores(&mut tape, &bound, batch)?;
        let out = tape.value(scores);
        out.check_finite("scores")?;
        Ok(out.data().to_vec())
    }

    pub fn predict_one(&self, campaign_ids: &[usize], example: &RawExample) -> Result<f64> {
        let batch = TaskBatch::build(&self.schema, campaign_ids, &[example])?;
        Ok(self.predict_batch(&batch)?[0])
    }

    fn gate_weights(&self, prefix: &str, batch: &TaskBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let enc = encode_batch(&self.schema, &mut tape, &bound, batch)?;
        let w = self.gate(&mut tape, &bound, prefix, &enc)?;
        Ok(tape.value(w).clone())
    }

    /// Expert-gate weights `[B, n]` (softmax-normalized rows).
    pub fn expert_gate_weights(&self, batch: &TaskBatch) -> Result<Tensor> {
        if !self.config.has_expert_gate() {
            return Err(Error::InvalidInput(
                "model has no expert gate in this ablation".into(),
            ));
        }
        self.gate_weights("gate.expert", batch)
    }

    /// Critic-gate weights `[B, m]`.
    pub fn critic_gate_weights(&self, batch: &TaskBatch) -> Result<Tensor> {
        if !self.config.has_critic_gate() {
            return Err(Error::InvalidInput(
                "model has no critic gate in this ablation".into(),
            ));
        }
        self.gate_weights("gate.critic", batch)
    }
}

/// Clamp bound keeping `log` finite in the loss.
pub const BCE_EPS: f64 = 1e-12;

/// Binary cross-entropy of `scores` (`[B, 1]`, values in (0, 1)) against
/// labels; scores are clamped to `[1e-12, 1 - 1e-12]` first. Mean over
/// the batch unless `sum` is set.
pub fn bce_loss(tape: &mut Tape, scores: NodeId, labels: &[f64], sum: bool) -> Result<NodeId> {
    let b = tape.value(scores).rows();
    if tape.value(scores).cols() != 1 || b != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            detail: format!(
                "scores {:?} vs {} labels",
                tape.value(scores).shape(),
                labels.len()
            ),
        });
    }
    let y = tape.constant(Tensor::column(labels.to_vec()));
    let one_minus_y = tape.constant(Tensor::column(labels.iter().map(|l| 1.0 - l).collect()));
    let p = tape.clamp(scores, BCE_EPS, 1.0 - BCE_EPS);
    let log_p = tape.log(p);
    let neg_p = tape.neg(p);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);
    let log_1p = tape.log(one_minus_p);
    let pos = tape.mul(y, log_p)?;
    let neg = tape.mul(one_minus_y, log_1p)?;
    let ll = tape.add(pos, neg)?;
    let nll = tape.neg(ll);
    Ok(if sum {
        tape.sum_all(nll)
    } else {
        tape.mean_all(nll)
    })
}

// ---------------------------------------------------------------------------
// Serialization: versioned little-endian binary, bit-exact round trip.
//
//   magic "MHEACMDL", u32 version = 1
//   schema: u32 campaign field count, per field u32 name len + bytes, u64 vocab;
//           u32 user field count, per field name, u64 vocab, u8 multi
//   config: u32 k, u32 n_experts, u32 m_critics,
//           u32 len + u32s expert_hidden, u32 len + u32s gate_hidden,
//           u8 literal_scaling, u8 ablation, u8 sum_loss
//   params: u32 count, per entry u32 name len + bytes, u32 rows, u32 cols,
//           rows*cols f64 little-endian
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 8] = b"MHEACMDL";
const VERSION: u32 = 1;

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.inner.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn str(&mut self, s: &str) -> std::io::Result<()> {
        self.u32(s.len() as u32)?;
        self.inner.write_all(s.as_bytes())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> std::io::Result<u8> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn str(&mut self) -> std::io::Result<String> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf)?;
        Ok(String::from_utf8_lossy(&buf).into_owned())
    }
}

impl MetaHeacModel {
    /// Writes the model plus a human-readable schema sidecar at
    /// `<path>.schema`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let file = std::fs::File::create(path).map_err(|e| Error::io(display.clone(), e))?;
        let mut w = Writer {
            inner: std::io::BufWriter::new(file),
        };
        self.write_to(&mut w)
            .map_err(|e| Error::io(display.clone(), e))?;
        let sidecar = path.with_extension(match path.extension() {
            Some(ext) => format!("{}.schema", ext.to_string_lossy()),
            None => "schema".to_string(),
        });
        self.schema.save(&sidecar)
    }

    fn write_to<W: Write>(&self, w: &mut Writer<W>) -> std::io::Result<()> {
        w.inner.write_all(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(self.schema.campaign_fields.len() as u32)?;
        for f in &self.schema.campaign_fields {
            w.str(&f.name)?;
            w.u64(f.vocab as u64)?;
        }
        w.u32(self.schema.user_fields.len() as u32)?;
        for f in &self.schema.user_fields {
            w.str(&f.name)?;
            w.u64(f.vocab as u64)?;
            w.u8(f.multi_valued as u8)?;
        }
        let c = &self.config;
        w.u32(c.embedding_dim as u32)?;
        w.u32(c.n_experts as u32)?;
        w.u32(c.m_critics as u32)?;
        w.u32(c.expert_hidden.len() as u32)?;
        for &h in &c.expert_hidden {
            w.u32(h as u32)?;
        }
        w.u32(c.gate_hidden.len() as u32)?;
        for &h in &c.gate_hidden {
            w.u32(h as u32)?;
        }
        w.u8(c.literal_scaling as u8)?;
        w.u8(c.ablation.code())?;
        w.u8(c.sum_loss as u8)?;
        w.u32(self.params.len() as u32)?;
        for (name, t) in self.params.iter() {
            w.str(name)?;
            w.u32(t.rows() as u32)?;
            w.u32(t.cols() as u32)?;
            for &v in t.data() {
                w.f64(v)?;
            }
        }
        w.inner.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
        let mut r = Reader {
            inner: std::io::BufReader::new(file),
        };
        Self::read_from(&mut r, &display).map_err(|e| match e {
            ReadError::Io(source) => Error::io(display.clone(), source),
            ReadError::Format(msg) => Error::ModelFormat { path: display, msg },
        })
    }

    fn read_from<R: Read>(
        r: &mut Reader<R>,
        origin: &str,
    ) -> std::result::Result<Self, ReadError> {
        let mut magic = [0u8; 8];
        r.inner.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ReadError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ReadError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let n_campaign = r.u32()? as usize;
        let mut campaign_fields = Vec::with_capacity(n_campaign);
        for _ in 0..n_campaign {
            let name = r.str()?;
            let vocab = r.u64()? as usize;
            campaign_fields.push(crate::features::CampaignField { name, vocab });
        }
        let n_user = r.u32()? as usize;
        let mut user_fields = Vec::with_capacity(n_user);
        for _ in 0..n_user {
            let name = r.str()?;
            let vocab = r.u64()? as usize;
            let multi_valued = r.u8()? != 0;
            user_fields.push(crate::features::UserField {
                name,
                vocab,
                multi_valued,
            });
        }
        let schema = FeatureSchema::new(campaign_fields, user_fields)
            .map_err(|e| ReadError::Format(e.to_string()))?;

        let embedding_dim = r.u32()? as usize;
        let n_experts = r.u32()? as usize;
        let m_critics = r.u32()? as usize;
        let nh = r.u32()? as usize;
        let expert_hidden: Vec<usize> = (0..nh)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<std::io::Result<_>>()?;
        let ng = r.u32()? as usize;
        let gate_hidden: Vec<usize> = (0..ng)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<std::io::Result<_>>()?;
        let literal_scaling = r.u8()? != 0;
        let ablation = Ablation::from_code(r.u8()?)
            .ok_or_else(|| ReadError::Format("bad ablation code".into()))?;
        let sum_loss = r.u8()? != 0;
        let config = ModelConfig {
            embedding_dim,
            n_experts,
            m_critics,
            expert_hidden,
            gate_hidden,
            literal_scaling,
            ablation,
            sum_loss,
        };
        config
            .validate()
            .map_err(|e| ReadError::Format(e.to_string()))?;

        let n_params = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..n_params {
            let name = r.str()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(r.f64()?);
            }
            let t = Tensor::matrix(rows, cols, data)
                .map_err(|e| ReadError::Format(e.to_string()))?;
            params
                .insert(name, t)
                .map_err(|e| ReadError::Format(e.to_string()))?;
        }

        let model = MetaHeacModel {
            schema,
            config,
            params,
        };
        model.check_layout(origin)?;
        Ok(model)
    }

    fn check_layout(&self, _origin: &str) -> std::result::Result<(), ReadError> {
        let k = self.config.embedding_dim;
        let mut expected: Vec<(String, usize, usize)> = Vec::new();
        for f in &self.schema.campaign_fields {
            expected.push((crate::features::campaign_param_name(&f.name), f.vocab, k));
        }
        for f in &self.schema.user_fields {
            expected.push((crate::features::user_param_name(&f.name), f.vocab, k));
        }
        for (name, rows, cols, _) in dense_layout(&self.schema, &self.config) {
            expected.push((name, rows, cols));
        }
        if expected.len() != self.params.len() {
            return Err(ReadError::Format(format!(
                "expected {} parameters, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, rows, cols) in expected {
            match self.params.get(&name) {
                Some(t) if t.rows() == rows && t.cols() == cols => {}
                Some(t) => {
                    return Err(ReadError::Format(format!(
                        "parameter `{name}` has shape {:?}, expected [{rows}, {cols}]",
                        t.shape()
                    )))
                }
                None => {
                    return Err(ReadError::Format(format!(
                        "missing parameter `{name}`"
                    )))
                }
            }
        }
        Ok(())
    }
}

enum ReadError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}
