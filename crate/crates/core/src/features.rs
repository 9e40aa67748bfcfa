//! Sparse categorical features and their dense embeddings.
//!
//! A campaign is a fixed tuple of single-valued categorical fields; a user
//! is a tuple of categorical fields, some of which hold a variable-length
//! set of ids. Every field gets its own embedding table. Multi-valued
//! fields are mean-pooled within the field, so each example contributes
//! exactly one k-vector per field.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const EMBED_INIT_RANGE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignField {
    pub name: String,
    pub vocab: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserField {
    pub name: String,
    pub vocab: usize,
    pub multi_valued: bool,
}

/// Field layout shared by a dataset and the models trained on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    pub campaign_fields: Vec<CampaignField>,
    pub user_fields: Vec<UserField>,
}

impl FeatureSchema {
    pub fn new(campaign_fields: Vec<CampaignField>, user_fields: Vec<UserField>) -> Result<Self> {
        let schema = FeatureSchema {
            campaign_fields,
            user_fields,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for name in self
            .campaign_fields
            .iter()
            .map(|f| &f.name)
            .chain(self.user_fields.iter().map(|f| &f.name))
        {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate field name `{name}` in schema"
                )));
            }
        }
        if self.campaign_fields.is_empty() || self.user_fields.is_empty() {
            return Err(Error::InvalidInput(
                "schema needs at least one campaign and one user field".into(),
            ));
        }
        for v in self
            .campaign_fields
            .iter()
            .map(|f| f.vocab)
            .chain(self.user_fields.iter().map(|f| f.vocab))
        {
            if v == 0 {
                return Err(Error::InvalidInput("vocab sizes must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn n_campaign_fields(&self) -> usize {
        self.campaign_fields.len()
    }

    pub fn n_user_fields(&self) -> usize {
        self.user_fields.len()
    }

    /// Human-readable key-value serialization, one field per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.campaign_fields {
            writeln!(out, "campaign_field\t{}\t{}", f.name, f.vocab).unwrap();
        }
        for f in &self.user_fields {
            let kind = if f.multi_valued { "multi" } else { "single" };
            writeln!(out, "user_field\t{}\t{}\t{}", f.name, f.vocab, kind).unwrap();
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut campaign_fields = Vec::new();
        let mut user_fields = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let parse = |s: &str, what: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::Parse {
                    file: origin.into(),
                    line: lineno + 1,
                    msg: format!("bad {what} `{s}`"),
                })
            };
            match parts.as_slice() {
                ["campaign_field", name, vocab] => campaign_fields.push(CampaignField {
                    name: (*name).into(),
                    vocab: parse(vocab, "vocab size")?,
                }),
                ["user_field", name, vocab, kind] => {
                    let multi_valued = match *kind {
                        "multi" => true,
                        "single" => false,
                        other => {
                            return Err(Error::Parse {
                                file: origin.into(),
                                line: lineno + 1,
                                msg: format!("expected single|multi, got `{other}`"),
                            })
                        }
                    };
                    user_fields.push(UserField {
                        name: (*name).into(),
                        vocab: parse(vocab, "vocab size")?,
                        multi_valued,
                    });
                }
                _ => {
                    return Err(Error::Parse {
                        file: origin.into(),
                        line: lineno + 1,
                        msg: format!("unrecognized schema line `{line}`"),
                    })
                }
            }
        }
        FeatureSchema::new(campaign_fields, user_fields)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        FeatureSchema::from_text(&text, &path.display().to_string())
    }
}

pub fn campaign_param_name(field: &str) -> String {
    format!("emb.c.{field}")
}

pub fn user_param_name(field: &str) -> String {
    format!("emb.u.{field}")
}

/// Inserts one `[vocab, k]` table per field, initialized uniformly in
/// `[-0.01, 0.01]` so initial logits sit near zero.
pub fn init_embeddings(
    schema: &FeatureSchema,
    k: usize,
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut table = |name: String, vocab: usize, rng: &mut ChaCha8Rng| -> Result<()> {
        let data = (0..vocab * k)
            .map(|_| rng.gen_range(-EMBED_INIT_RANGE..EMBED_INIT_RANGE))
            .collect();
        params.insert(name, Tensor::matrix(vocab, k, data)?)
    };
    for f in &schema.campaign_fields {
        table(campaign_param_name(&f.name), f.vocab, rng)?;
    }
    for f in &schema.user_fields {
        table(user_param_name(&f.name), f.vocab, rng)?;
    }
    Ok(())
}

/// Per-field embedding matrices, all sharing one embedding dimension.
/// A read-only view used for inspection and single-example encoding; the
/// training path reads the tables straight from the parameter set.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub k: usize,
    fields: IndexMap<String, Tensor>,
}

impl EmbeddingTable {
    pub fn from_params(schema: &FeatureSchema, params: &ParamSet, k: usize) -> Result<Self> {
        let mut fields = IndexMap::new();
        let mut pick = |pname: String, display: &str| -> Result<()> {
            let t = params
                .get(&pname)
                .ok_or_else(|| Error::InvalidInput(format!("missing table `{pname}`")))?;
            if t.cols() != k {
                return Err(Error::InvalidInput(format!(
                    "table `{display}` has dim {}, expected {k}",
                    t.cols()
                )));
            }
            fields.insert(display.to_string(), t.clone());
            Ok(())
        };
        for f in &schema.campaign_fields {
            pick(campaign_param_name(&f.name), &f.name)?;
        }
        for f in &schema.user_fields {
            pick(user_param_name(&f.name), &f.name)?;
        }
        Ok(EmbeddingTable { k, fields })
    }

    pub fn row(&self, field: &str, id: usize) -> Result<&[f64]> {
        let t = self
            .fields
            .get(field)
            .ok_or_else(|| Error::InvalidInput(format!("unknown field `{field}`")))?;
        if id >= t.rows() {
            return Err(Error::OutOfVocab {
                field: field.into(),
                id,
                vocab: t.rows(),
            });
        }
        Ok(t.row_slice(id))
    }
}

/// A raw labeled example: one id list per user field, in schema order.
/// Single-valued fields carry exactly one id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawExample {
    pub user_id: String,
    pub label: u8,
    pub field_ids: Vec<Vec<usize>>,
}

/// Dense per-example encoding: stacked campaign and user field vectors.
#[derive(Debug, Clone)]
pub struct EncodedExample {
    /// `[N, k]`, one row per campaign field.
    pub campaign_emb: Tensor,
    /// `[M, k]`, one row per user field (multi-valued fields pre-pooled).
    pub user_emb: Tensor,
    pub label: u8,
}

fn check_ids(schema: &FeatureSchema, raw: &RawExample) -> Result<()> {
    if raw.field_ids.len() != schema.user_fields.len() {
        return Err(Error::InvalidInput(format!(
            "example `{}` has {} user fields, schema has {}",
            raw.user_id,
            raw.field_ids.len(),
            schema.user_fields.len()
        )));
    }
    for (field, ids) in schema.user_fields.iter().zip(&raw.field_ids) {
        if ids.is_empty() {
            return Err(Error::InvalidInput(format!(
                "example `{}`: field `{}` has no ids",
                raw.user_id, field.name
            )));
        }
        if !field.multi_valued && ids.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "example `{}`: single-valued field `{}` has {} ids",
                raw.user_id,
                field.name,
                ids.len()
            )));
        }
        for &id in ids {
            if id >= field.vocab {
                return Err(Error::OutOfVocab {
                    field: field.name.clone(),
                    id,
                    vocab: field.vocab,
                });
            }
        }
    }
    Ok(())
}

/// Deterministic lookup of one example. Multi-valued fields are pooled by
/// the within-field mean.
pub fn embed_example(
    schema: &FeatureSchema,
    table: &EmbeddingTable,
    campaign_ids: &[usize],
    raw: &RawExample,
) -> Result<EncodedExample> {
    check_ids(schema, raw)?;
    if campaign_ids.len() != schema.campaign_fields.len() {
        return Err(Error::InvalidInput(format!(
            "campaign has {} ids, schema has {} fields",
            campaign_ids.len(),
            schema.campaign_fields.len()
        )));
    }
    let k = table.k;
    let mut cdata = Vec::with_capacity(schema.campaign_fields.len() * k);
    for (field, &id) in schema.campaign_fields.iter().zip(campaign_ids) {
        if id >= field.vocab {
            return Err(Error::OutOfVocab {
                field: field.name.clone(),
                id,
                vocab: field.vocab,
            });
        }
        cdata.extend_from_slice(table.row(&field.name, id)?);
    }
    let mut udata = Vec::with_capacity(schema.user_fields.len() * k);
    for (field, ids) in schema.user_fields.iter().zip(&raw.field_ids) {
        // Canonical id order makes the pooled mean independent of how the
        // values were listed, down to the last bit.
        let mut ids = ids.clone();
        ids.sort_unstable();
        let mut pooled = vec![0.0; k];
        for &id in &ids {
            for (p, v) in pooled.iter_mut().zip(table.row(&field.name, id)?) {
                *p += v;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        udata.extend(pooled.into_iter().map(|v| v * inv));
    }
    Ok(EncodedExample {
        campaign_emb: Tensor::matrix(schema.campaign_fields.len(), k, cdata)?,
        user_emb: Tensor::matrix(schema.user_fields.len(), k, udata)?,
        label: raw.label,
    })
}

/// Arithmetic mean over the M user field vectors.
pub fn user_mean(user_emb: &Tensor) -> Result<Tensor> {
    let m = user_emb.rows();
    if m == 0 {
        return Err(Error::InvalidInput("user_mean over zero fields".into()));
    }
    let k = user_emb.cols();
    let mut out = vec![0.0; k];
    for i in 0..m {
        for (o, &v) in out.iter_mut().zip(user_emb.row_slice(i)) {
            *o += v;
        }
    }
    let inv = 1.0 / m as f64;
    Ok(Tensor::row(out.into_iter().map(|v| v * inv).collect()))
}

/// One user field of a batch, flattened for tape consumption.
#[derive(Debug, Clone)]
pub enum FieldBatch {
    /// One id per example.
    Single(Arc<Vec<usize>>),
    /// All ids concatenated plus per-example segment offsets.
    Multi {
        ids: Arc<Vec<usize>>,
        offsets: Arc<Vec<usize>>,
    },
}

/// A batch of examples that share one campaign, validated against the
/// schema and ready to be recorded on a tape.
#[derive(Debug, Clone)]
pub struct TaskBatch {
    pub campaign_ids: Vec<usize>,
    pub fields: Vec<FieldBatch>,
    pub labels: Vec<f64>,
    pub size: usize,
}

impl TaskBatch {
    pub fn build(
        schema: &FeatureSchema,
        campaign_ids: &[usize],
        examples: &[&RawExample],
    ) -> Result<TaskBatch> {
        if examples.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if campaign_ids.len() != schema.campaign_fields.len() {
            return Err(Error::InvalidInput(format!(
                "campaign has {} ids, schema has {} fields",
                campaign_ids.len(),
                schema.campaign_fields.len()
            )));
        }
        for (field, &id) in schema.campaign_fields.iter().zip(campaign_ids) {
            if id >= field.vocab {
                return Err(Error::OutOfVocab {
                    field: field.name.clone(),
                    id,
                    vocab: field.vocab,
                });
            }
        }
        for ex in examples {
            check_ids(schema, ex)?;
        }
        let mut fields = Vec::with_capacity(schema.user_fields.len());
        for (f_idx, field) in schema.user_fields.iter().enumerate() {
            if field.multi_valued {
                let mut ids = Vec::new();
                let mut offsets = Vec::with_capacity(examples.len() + 1);
                offsets.push(0);
                for ex in examples {
                    // Canonical order per example, as in embed_example.
                    let start = ids.len();
                    ids.extend_from_slice(&ex.field_ids[f_idx]);
                    ids[start..].sort_unstable();
                    offsets.push(ids.len());
                }
                fields.push(FieldBatch::Multi {
                    ids: Arc::new(ids),
                    offsets: Arc::new(offsets),
                });
            } else {
                let ids = examples.iter().map(|ex| ex.field_ids[f_idx][0]).collect();
                fields.push(FieldBatch::Single(Arc::new(ids)));
            }
        }
        Ok(TaskBatch {
            campaign_ids: campaign_ids.to_vec(),
            fields,
            labels: examples.iter().map(|ex| ex.label as f64).collect(),
            size: examples.len(),
        })
    }
}

/// Tape nodes for an encoded batch: per-field user matrices, their mean,
/// and the flattened campaign vector.
pub struct EncodedBatch {
    /// `[B, k]` per user field, schema order.
    pub user_fields: Vec<NodeId>,
    /// `[B, M * k]`, fields concatenated in schema order.
    pub user_concat: NodeId,
    /// `[B, k]` mean over the M field vectors.
    pub user_mean: NodeId,
    /// `[1, N * k]` campaign field vectors concatenated in schema order.
    pub campaign_vec: NodeId,
    pub size: usize,
}

/// Records embedding lookups for a whole batch. Gradients flow only to
/// the table rows the batch references.
pub fn encode_batch(
    schema: &FeatureSchema,
    tape: &mut Tape,
    params: &BoundParams,
    batch: &TaskBatch,
) -> Result<EncodedBatch> {
    let mut user_fields = Vec::with_capacity(schema.user_fields.len());
    for (field, fb) in schema.user_fields.iter().zip(&batch.fields) {
        let table = params.node(&user_param_name(&field.name))?;
        let node = match fb {
            FieldBatch::Single(ids) => tape.gather_rows(table, ids.clone())?,
            FieldBatch::Multi { ids, offsets } => {
                let gathered = tape.gather_rows(table, ids.clone())?;
                tape.segment_mean(gathered, offsets.clone())?
            }
        };
        user_fields.push(node);
    }
    let user_concat = tape.concat_cols(&user_fields)?;
    let mut acc = user_fields[0];
    for &f in &user_fields[1..] {
        acc = tape.add(acc, f)?;
    }
    let user_mean = tape.scale(acc, 1.0 / user_fields.len() as f64);

    let mut campaign_parts = Vec::with_capacity(schema.campaign_fields.len());
    for (field, &id) in schema.campaign_fields.iter().zip(&batch.campaign_ids) {
        let table = params.node(&campaign_param_name(&field.name))?;
        campaign_parts.push(tape.gather_rows(table, Arc::new(vec![id]))?);
    }
    let campaign_vec = tape.concat_cols(&campaign_parts)?;

    Ok(EncodedBatch {
        user_fields,
        user_concat,
        user_mean,
        campaign_vec,
        size: batch.size,
    })
}
