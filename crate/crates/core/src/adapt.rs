//! Online stage: per-campaign fine-tuning, candidate scoring, and top-K
//! audience expansion.

use rand::seq::SliceRandom;

use crate::data::CampaignTask;
use crate::error::{Error, Result};
use crate::features::{RawExample, TaskBatch};
use crate::metrics::{self, EvalReport, SeedGroup, TaskMetrics};
use crate::model::MetaHeacModel;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone)]
pub struct FineTuneConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Relative epoch-loss improvement below which an epoch counts as
    /// converged. A non-finite value stops after the first epoch.
    pub rel_tol: f64,
    /// Consecutive converged epochs required to stop.
    pub patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            lr: 0.01,
            max_epochs: 50,
            rel_tol: 1e-3,
            patience: 3,
            batch_size: 512,
            adam: AdamConfig::default(),
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(Error::Config("finetune lr must be >= 0".into()));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "max_epochs, patience and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneReport {
    /// Mean training loss of the unmodified general model on the task.
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Mean cross-entropy of the model over a task's labeled set, without
/// touching any parameters. This is the "initial loss" a fine-tuning run
/// starts from.
pub fn task_loss(model: &MetaHeacModel, task: &CampaignTask, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let n = task.train.len();
    for chunk in (0..n).collect::<Vec<_>>().chunks(batch_size) {
        let examples: Vec<&RawExample> = chunk.iter().map(|&i| &task.train[i]).collect();
        let batch = TaskBatch::build(&model.schema, &task.campaign_ids, &examples)?;
        let mut tape = crate::tape::Tape::new();
        let bound = model.params.bind(&mut tape);
        let loss = model.batch_loss(&mut tape, &bound, &batch)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                name: "finetune loss".into(),
            });
        }
        // Undo the batch-mean so the epoch mean weights examples equally.
        total += if model.config.sum_loss {
            v
        } else {
            v * chunk.len() as f64
        };
    }
    Ok(total / n as f64)
}

/// Fine-tunes a copy of the general model on one campaign's labeled set.
/// All parameter groups update. Training stops when the relative
/// epoch-loss improvement stays below `rel_tol` for `patience` epochs, or
/// at `max_epochs`. The general model itself is never modified.
pub fn finetune(
    general: &MetaHeacModel,
    task: &CampaignTask,
    cfg: &FineTuneConfig,
    seed: u64,
) -> Result<(MetaHeacModel, FinetuneReport)> {
    cfg.validate()?;
    if task.seed_count() == 0 {
        return Err(Error::InvalidInput(format!(
            "task {} has an empty seed set",
            task.task_id
        )));
    }
    let mut model = general.clone();
    let mut adam = Adam::new(&model.params, cfg.adam);
    let mut rng = rng_for(seed, &format!("finetune-{}", task.task_id));

    let initial_loss = task_loss(&model, task, cfg.batch_size)?;
    let mut epoch_losses = Vec::new();
    let mut prev = initial_loss;
    let mut streak = 0;
    for _epoch in 0..cfg.max_epochs {
        let mut idx: Vec<usize> = (0..task.train.len()).collect();
        idx.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in idx.chunks(cfg.batch_size) {
            let examples: Vec<&RawExample> = chunk.iter().map(|&i| &task.train[i]).collect();
            let batch = TaskBatch::build(&model.schema, &task.campaign_ids, &examples)?;
            let (loss, grads) = crate::params::grad(&model.params, |tape, bound| {
                model.batch_loss(tape, bound, &batch)
            })?;
            adam.step(&mut model.params, &grads, cfg.lr);
            weighted += if model.config.sum_loss {
                loss
            } else {
                loss * chunk.len() as f64
            };
        }
        let epoch_loss = weighted / task.train.len() as f64;
        epoch_losses.push(epoch_loss);
        if !cfg.rel_tol.is_finite() {
            // Immediate-convergence rule: any improvement bound that cannot
            // be violated stops after one epoch.
            break;
        }
        let rel = (prev - epoch_loss) / prev.abs().max(1e-12);
        if rel < cfg.rel_tol {
            streak += 1;
            if streak >= cfg.patience {
                break;
            }
        } else {
            streak = 0;
        }
        prev = epoch_loss;
    }
    Ok((
        model,
        FinetuneReport {
            initial_loss,
            epoch_losses,
        },
    ))
}

/// Chunk size used when scoring a pool; fixed so that results do not
/// depend on the thread count.
const SCORE_CHUNK: usize = 512;

fn score_chunks(model: &MetaHeacModel, campaign_ids: &[usize], pool: &[RawExample]) -> Vec<Result<Vec<f64>>> {
    let chunks: Vec<&[RawExample]> = pool.chunks(SCORE_CHUNK).collect();
    crate::par::map(&chunks, |chunk| {
        let examples: Vec<&RawExample> = chunk.iter().collect();
        let batch = TaskBatch::build(&model.schema, campaign_ids, &examples)?;
        model.predict_batch(&batch)
    })
}

/// Scores every candidate; pure and order-preserving, parallel over
/// fixed-size chunks when the `parallel` feature is on.
pub fn score_pool(
    model: &MetaHeacModel,
    campaign_ids: &[usize],
    pool: &[RawExample],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pool.len());
    for chunk in score_chunks(model, campaign_ids, pool) {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Sequential twin of [`score_pool`].
pub fn score_pool_seq(
    model: &MetaHeacModel,
    campaign_ids: &[usize],
    pool: &[RawExample],
) -> Result<Vec<f64>> {
    let chunks: Vec<&[RawExample]> = pool.chunks(SCORE_CHUNK).collect();
    let mut out = Vec::with_capacity(pool.len());
    for chunk in crate::par::map_seq(&chunks, |chunk| {
        let examples: Vec<&RawExample> = chunk.iter().collect();
        let batch = TaskBatch::build(&model.schema, campaign_ids, &examples)?;
        model.predict_batch(&batch)
    }) {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Ranked candidates and the selected top-K audience.
#[derive(Debug, Clone)]
pub struct ExpansionResult {
    /// (user id, score), score descending, ties by user id ascending.
    pub ranked: Vec<(String, f64)>,
    /// The first K user ids of `ranked`.
    pub selected: Vec<String>,
    pub k: usize,
}

/// Scores the pool and selects the top `k` candidates. Deterministic:
/// ties break by user id ascending.
pub fn expand(
    model: &MetaHeacModel,
    campaign_ids: &[usize],
    pool: &[RawExample],
    k: usize,
) -> Result<ExpansionResult> {
    if k > pool.len() {
        return Err(Error::InvalidInput(format!(
            "requested K = {k} exceeds candidate pool of {}",
            pool.len()
        )));
    }
    let scores = score_pool(model, campaign_ids, pool)?;
    let ids: Vec<&str> = pool.iter().map(|e| e.user_id.as_str()).collect();
    let order = metrics::rank_order(&ids, &scores);
    let ranked: Vec<(String, f64)> = order
        .iter()
        .map(|&i| (pool[i].user_id.clone(), scores[i]))
        .collect();
    let selected = ranked.iter().take(k).map(|(id, _)| id.clone()).collect();
    Ok(ExpansionResult {
        ranked,
        selected,
        k,
    })
}

/// Per-task evaluation: fine-tune the general model on the task's labeled
/// set, score its held-out pool, and compute AUC and P/R at `k_percent`.
/// Tasks run in parallel; each derives its own RNG from `run_seed` and
/// the task id, so results are independent of scheduling.
pub fn evaluate_model(
    general: &MetaHeacModel,
    tasks: &[CampaignTask],
    cfg: &FineTuneConfig,
    k_percent: f64,
    threshold: Option<usize>,
    run_seed: u64,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::InvalidInput("no tasks to evaluate".into()));
    }
    let seed_counts: Vec<usize> = tasks.iter().map(|t| t.seed_count()).collect();
    let (threshold, groups) = match threshold {
        Some(t) => (t, metrics::label_groups(&seed_counts, t)),
        None => metrics::group_tasks(&seed_counts)?,
    };
    let results: Vec<Result<TaskMetrics>> = crate::par::map(tasks, |task| {
        evaluate_one(general, task, cfg, k_percent, run_seed)
    });
    let mut task_metrics = Vec::with_capacity(tasks.len());
    for (metric, group) in results.into_iter().zip(groups) {
        let mut m = metric?;
        m.group = group;
        task_metrics.push(m);
    }
    Ok(EvalReport {
        run_seed,
        threshold,
        k_percent,
        tasks: task_metrics,
    })
}

fn evaluate_one(
    general: &MetaHeacModel,
    task: &CampaignTask,
    cfg: &FineTuneConfig,
    k_percent: f64,
    run_seed: u64,
) -> Result<TaskMetrics> {
    if task.eval.is_empty() {
        return Err(Error::InvalidInput(format!(
            "task {} has no evaluation pool",
            task.task_id
        )));
    }
    let task_seed = derive_seed(run_seed, &format!("eval-{}", task.task_id));
    let (custom, _) = finetune(general, task, cfg, task_seed)?;
    let scores = score_pool(&custom, &task.campaign_ids, &task.eval)?;
    let labels: Vec<u8> = task.eval.iter().map(|e| e.label).collect();
    let ids: Vec<&str> = task.eval.iter().map(|e| e.user_id.as_str()).collect();
    let actual: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    let auc = metrics::auc(&scores, &labels)?;
    let (precision, recall) = metrics::precision_recall_at(&ids, &scores, &actual, k_percent)?;
    Ok(TaskMetrics {
        task_id: task.task_id.clone(),
        seed_count: task.seed_count(),
        group: SeedGroup::Small, // relabeled by the caller
        auc,
        precision,
        recall,
    })
}
