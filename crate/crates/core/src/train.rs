//! Offline training of the general model.
//!
//! Each iteration samples a batch of campaign tasks. Per task, two
//! disjoint mini-batches simulate the two phases of audience expansion:
//! the support batch drives one plain gradient step to task-adapted
//! parameters, and the query batch is evaluated at those adapted
//! parameters. The gradient of the query loss with respect to the
//! original parameters (through the inner step) is summed over the task
//! batch and applied as a single Adam update.
//!
//! `train_plain` is the "standard BP" ablation: the same data stream,
//! but every visit is a direct cross-entropy Adam step with no
//! support/query split.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::CampaignTask;
use crate::error::{Error, Result};
use crate::features::TaskBatch;
use crate::model::MetaHeacModel;
use crate::optim::{Adam, AdamConfig};
use crate::params::{meta_grad, MetaGrad};
use crate::rng::rng_for;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Inner (adaptation) learning rate.
    pub alpha: f64,
    /// Outer learning rate, fed to Adam.
    pub beta: f64,
    /// Size of each of the support and query batches.
    pub batch_size: usize,
    pub tasks_per_iter: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Differentiate through the inner step (exact meta-gradient) rather
    /// than treating the adaptation Jacobian as identity.
    pub second_order: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.001,
            beta: 0.01,
            batch_size: 512,
            tasks_per_iter: 5,
            epochs: 1,
            adam: AdamConfig::default(),
            second_order: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta <= 0.0 {
            return Err(Error::Config("alpha must be >= 0 and beta > 0".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be >= 2 so support and query are non-empty".into(),
            ));
        }
        if self.tasks_per_iter == 0 || self.epochs == 0 {
            return Err(Error::Config("tasks_per_iter and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Support/query draw from one task: two disjoint, stratified batches.
#[derive(Debug, Clone)]
pub struct TaskBatchSample {
    pub task_id: String,
    pub support: TaskBatch,
    pub query: TaskBatch,
}

/// Splits the shuffled indices of one class into two disjoint halves.
fn class_halves(
    indices: &mut Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    indices.shuffle(rng);
    let a = indices.iter().copied().step_by(2).collect();
    let b = indices.iter().copied().skip(1).step_by(2).collect();
    (a, b)
}

/// Takes up to `want` indices from a half-partition, keeping the class
/// mix proportional and both classes represented when available.
fn stratified_take(
    pos: &[usize],
    neg: &[usize],
    want: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let total = pos.len() + neg.len();
    let want = want.min(total);
    let mut n_pos = ((want as f64 * pos.len() as f64 / total as f64).round() as usize)
        .min(pos.len());
    if n_pos == 0 && !pos.is_empty() && want >= 2 {
        n_pos = 1;
    }
    let mut n_neg = (want - n_pos).min(neg.len());
    if n_neg == 0 && !neg.is_empty() && want >= 2 {
        n_neg = 1;
        n_pos = (want - n_neg).min(pos.len());
    }
    // Backfill if one class ran short.
    n_pos = n_pos.max(want.saturating_sub(neg.len())).min(pos.len());
    n_neg = (want - n_pos).min(neg.len());
    let mut out: Vec<usize> = pos[..n_pos].iter().chain(neg[..n_neg].iter()).copied().collect();
    out.shuffle(rng);
    out
}

/// Draws disjoint support and query batches from one task by partitioning
/// each class and sampling from opposite halves. Each batch has
/// `min(batch_size, |task| / 2)` examples. A single-class task is usable
/// (the loss stays defined) but reported via the returned flag.
pub fn sample_task_batch(
    task: &CampaignTask,
    schema: &crate::features::FeatureSchema,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(TaskBatchSample, bool)> {
    let n = task.train.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "task {} has {} examples; need at least 2 for disjoint batches",
            task.task_id, n
        )));
    }
    let mut pos: Vec<usize> = (0..n).filter(|&i| task.train[i].label == 1).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| task.train[i].label == 0).collect();
    let single_class = pos.is_empty() || neg.is_empty();

    let (pos_a, pos_b) = class_halves(&mut pos, rng);
    let (neg_a, neg_b) = class_halves(&mut neg, rng);
    let per_side = batch_size.min(n / 2);
    let support_idx = stratified_take(&pos_a, &neg_a, per_side, rng);
    let query_idx = stratified_take(&pos_b, &neg_b, per_side, rng);

    let build = |idx: &[usize]| -> Result<TaskBatch> {
        let examples: Vec<&crate::features::RawExample> =
            idx.iter().map(|&i| &task.train[i]).collect();
        TaskBatch::build(schema, &task.campaign_ids, &examples)
    };
    Ok((
        TaskBatchSample {
            task_id: task.task_id.clone(),
            support: build(&support_idx)?,
            query: build(&query_idx)?,
        },
        single_class,
    ))
}

/// Per-task losses observed during one outer step.
#[derive(Debug, Clone)]
pub struct TaskReport {
    pub task_id: String,
    pub inner_loss: f64,
    pub outer_loss: f64,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub tasks: Vec<TaskReport>,
}

impl StepReport {
    pub fn mean_outer_loss(&self) -> f64 {
        self.tasks.iter().map(|t| t.outer_loss).sum::<f64>() / self.tasks.len() as f64
    }
}

fn task_meta_grad(
    model: &MetaHeacModel,
    sample: &TaskBatchSample,
    cfg: &TrainConfig,
) -> Result<MetaGrad> {
    meta_grad(
        &model.params,
        |tape, bound| model.batch_loss(tape, bound, &sample.support),
        |tape, bound| model.batch_loss(tape, bound, &sample.query),
        cfg.alpha,
        cfg.second_order,
    )
}

/// Meta-gradients for a batch of tasks; independent tasks run in
/// parallel, results in task order.
pub fn batch_meta_grads(
    model: &MetaHeacModel,
    samples: &[TaskBatchSample],
    cfg: &TrainConfig,
) -> Result<Vec<MetaGrad>> {
    crate::par::map(samples, |s| task_meta_grad(model, s, cfg))
        .into_iter()
        .collect()
}

/// Sequential twin of [`batch_meta_grads`].
pub fn batch_meta_grads_seq(
    model: &MetaHeacModel,
    samples: &[TaskBatchSample],
    cfg: &TrainConfig,
) -> Result<Vec<MetaGrad>> {
    crate::par::map_seq(samples, |s| task_meta_grad(model, s, cfg))
        .into_iter()
        .collect()
}

/// One outer update: per-task meta-gradients, summed in task order, one
/// Adam step. On any error (non-finite loss or gradient) the model is
/// left untouched.
pub fn meta_step(
    model: &mut MetaHeacModel,
    samples: &[TaskBatchSample],
    cfg: &TrainConfig,
    adam: &mut Adam,
) -> Result<StepReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("meta_step with no tasks".into()));
    }
    let grads = batch_meta_grads(model, samples, cfg)?;
    let mut total = model.params.zeros_like();
    for g in &grads {
        total.add_scaled(&g.grads, 1.0);
    }
    adam.step(&mut model.params, &total, cfg.beta);
    Ok(StepReport {
        tasks: samples
            .iter()
            .zip(&grads)
            .map(|(s, g)| TaskReport {
                task_id: s.task_id.clone(),
                inner_loss: g.inner_loss,
                outer_loss: g.outer_loss,
            })
            .collect(),
    })
}

/// One record per outer iteration.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub epoch: usize,
    pub iter: usize,
    pub report: StepReport,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub records: Vec<IterRecord>,
}

impl TrainHistory {
    pub fn mean_outer_loss(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.report.mean_outer_loss()).collect()
    }
}

/// An epoch visits every task `ceil(|task| / (2 * batch_size))` times, in
/// shuffled order; query/support batches are resampled per visit.
fn epoch_schedule(
    tasks: &[CampaignTask],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut visits = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let v = task.train.len().div_ceil(2 * batch_size).max(1);
        visits.extend(std::iter::repeat(i).take(v));
    }
    visits.shuffle(rng);
    visits
}

/// Meta-trains the general model in place over the task pool.
/// Deterministic for a given seed; thread count does not affect results.
pub fn train_offline(
    model: &mut MetaHeacModel,
    tasks: &[CampaignTask],
    cfg: &TrainConfig,
    mut on_iter: impl FnMut(&IterRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidInput("no training tasks".into()));
    }
    let mut rng = rng_for(cfg.seed, "train-offline");
    let mut adam = Adam::new(&model.params, cfg.adam);
    let mut history = TrainHistory::default();
    let mut iter = 0;
    for epoch in 0..cfg.epochs {
        let schedule = epoch_schedule(tasks, cfg.batch_size, &mut rng);
        for chunk in schedule.chunks(cfg.tasks_per_iter) {
            let samples = chunk
                .iter()
                .map(|&i| {
                    sample_task_batch(&tasks[i], &model.schema, cfg.batch_size, &mut rng)
                        .map(|(s, _)| s)
                })
                .collect::<Result<Vec<_>>>()?;
            let report = meta_step(model, &samples, cfg, &mut adam)?;
            let record = IterRecord {
                epoch,
                iter,
                report,
            };
            on_iter(&record);
            history.records.push(record);
            iter += 1;
        }
    }
    Ok(history)
}

/// The "standard BP" ablation: same visit schedule, but each visit draws
/// one batch of up to `2 * batch_size` examples and applies a direct
/// cross-entropy Adam step.
pub fn train_plain(
    model: &mut MetaHeacModel,
    tasks: &[CampaignTask],
    cfg: &TrainConfig,
    mut on_iter: impl FnMut(&IterRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidInput("no training tasks".into()));
    }
    let mut rng = rng_for(cfg.seed, "train-plain");
    let mut adam = Adam::new(&model.params, cfg.adam);
    let mut history = TrainHistory::default();
    let mut iter = 0;
    for epoch in 0..cfg.epochs {
        let schedule = epoch_schedule(tasks, cfg.batch_size, &mut rng);
        for &task_idx in &schedule {
            let task = &tasks[task_idx];
            let mut idx: Vec<usize> = (0..task.train.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(2 * cfg.batch_size);
            let examples: Vec<&crate::features::RawExample> =
                idx.iter().map(|&i| &task.train[i]).collect();
            let batch = TaskBatch::build(&model.schema, &task.campaign_ids, &examples)?;
            let (loss, grads) = crate::params::grad(&model.params, |tape, bound| {
                model.batch_loss(tape, bound, &batch)
            })?;
            adam.step(&mut model.params, &grads, cfg.beta);
            let record = IterRecord {
                epoch,
                iter,
                report: StepReport {
                    tasks: vec![TaskReport {
                        task_id: task.task_id.clone(),
                        inner_loss: loss,
                        outer_loss: loss,
                    }],
                },
            };
            on_iter(&record);
            history.records.push(record);
            iter += 1;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_world, SynthConfig};
    use crate::model::{Ablation, ModelConfig};

    fn small_world() -> crate::data::SynthWorld {
        generate_world(&SynthConfig {
            n_train_tasks: 4,
            n_test_tasks: 1,
            users_per_pool: 200,
            latent_dim: 4,
            seeds_per_task: (10, 30),
            noise: 0.5,
            negative_ratio: 3,
            n_clusters: 2,
            seed: 5,
        })
        .unwrap()
    }

    fn small_model(world: &crate::data::SynthWorld, seed: u64) -> MetaHeacModel {
        let config = ModelConfig {
            embedding_dim: 4,
            n_experts: 2,
            m_critics: 2,
            expert_hidden: vec![8, 6],
            gate_hidden: vec![6],
            literal_scaling: true,
            ablation: Ablation::Full,
            sum_loss: false,
        };
        MetaHeacModel::init(world.schema.clone(), config, seed).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            tasks_per_iter: 2,
            epochs: 1,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn support_and_query_are_disjoint() {
        let world = small_world();
        let task = &world.train_tasks[0];
        let mut rng = rng_for(1, "split");
        // Track ids by re-deriving from the stored order; batch sizes are
        // equal and bounded by half the task.
        for _ in 0..5 {
            let (sample, single) =
                sample_task_batch(task, &world.schema, 8, &mut rng).unwrap();
            assert!(!single);
            assert_eq!(sample.support.size, 8);
            assert_eq!(sample.query.size, 8);
        }
    }

    #[test]
    fn proportional_shrink_for_small_tasks() {
        let world = small_world();
        let mut task = world.train_tasks[0].clone();
        task.train.truncate(9);
        let mut rng = rng_for(2, "shrink");
        let (sample, _) = sample_task_batch(&task, &world.schema, 512, &mut rng).unwrap();
        assert_eq!(sample.support.size, 4);
        assert_eq!(sample.query.size, 4);
    }

    #[test]
    fn batches_keep_both_classes() {
        let world = small_world();
        let task = &world.train_tasks[1];
        let mut rng = rng_for(3, "strat");
        let (sample, _) = sample_task_batch(task, &world.schema, 16, &mut rng).unwrap();
        for batch in [&sample.support, &sample.query] {
            assert!(batch.labels.iter().any(|&l| l == 1.0));
            assert!(batch.labels.iter().any(|&l| l == 0.0));
        }
    }

    #[test]
    fn summed_outer_gradient_matches_accumulated_single_tasks() {
        let world = small_world();
        let model = small_model(&world, 7);
        let c = cfg();
        let mut rng = rng_for(4, "sum-check");
        let (s0, _) = sample_task_batch(&world.train_tasks[0], &world.schema, 8, &mut rng).unwrap();
        let (s1, _) = sample_task_batch(&world.train_tasks[1], &world.schema, 8, &mut rng).unwrap();
        let both = batch_meta_grads(&model, &[s0.clone(), s1.clone()], &c).unwrap();
        let mut summed = model.params.zeros_like();
        summed.add_scaled(&both[0].grads, 1.0);
        summed.add_scaled(&both[1].grads, 1.0);

        let solo0 = batch_meta_grads(&model, &[s0], &c).unwrap();
        let solo1 = batch_meta_grads(&model, &[s1], &c).unwrap();
        let mut acc = model.params.zeros_like();
        acc.add_scaled(&solo0[0].grads, 1.0);
        acc.add_scaled(&solo1[0].grads, 1.0);
        for ((_, a), (_, b)) in summed.iter().zip(acc.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn parallel_and_sequential_grads_identical() {
        let world = small_world();
        let model = small_model(&world, 9);
        let c = cfg();
        let mut rng = rng_for(5, "par-check");
        let samples: Vec<TaskBatchSample> = world
            .train_tasks
            .iter()
            .map(|t| sample_task_batch(t, &world.schema, 8, &mut rng).unwrap().0)
            .collect();
        let par = batch_meta_grads(&model, &samples, &c).unwrap();
        let seq = batch_meta_grads_seq(&model, &samples, &c).unwrap();
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(a.inner_loss, b.inner_loss);
            for ((_, x), (_, y)) in a.grads.iter().zip(b.grads.iter()) {
                assert_eq!(x.data(), y.data());
            }
        }
    }

    #[test]
    fn alpha_zero_meta_equals_query_gradient() {
        let world = small_world();
        let model = small_model(&world, 11);
        let c = TrainConfig {
            alpha: 0.0,
            ..cfg()
        };
        let mut rng = rng_for(6, "alpha0");
        let (sample, _) =
            sample_task_batch(&world.train_tasks[0], &world.schema, 8, &mut rng).unwrap();
        let mg = batch_meta_grads(&model, &[sample.clone()], &c).unwrap();
        let (_, plain) = crate::params::grad(&model.params, |tape, bound| {
            model.batch_loss(tape, bound, &sample.query)
        })
        .unwrap();
        for ((_, a), (_, b)) in mg[0].grads.iter().zip(plain.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn first_and_second_order_differ_under_curvature() {
        let world = small_world();
        let model = small_model(&world, 13);
        let mut rng = rng_for(7, "orders");
        let (sample, _) =
            sample_task_batch(&world.train_tasks[0], &world.schema, 8, &mut rng).unwrap();
        let second = batch_meta_grads(&model, &[sample.clone()], &cfg()).unwrap();
        let first = batch_meta_grads(
            &model,
            &[sample],
            &TrainConfig {
                second_order: false,
                ..cfg()
            },
        )
        .unwrap();
        let mut diff: f64 = 0.0;
        for ((_, a), (_, b)) in second[0].grads.iter().zip(first[0].grads.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                diff = diff.max((x - y).abs());
            }
        }
        assert!(diff > 0.0, "curved inner loss must separate the modes");
    }

    #[test]
    fn seeded_training_is_bitwise_reproducible() {
        let world = small_world();
        let c = cfg();
        let run = || {
            let mut model = small_model(&world, 21);
            train_offline(&mut model, &world.train_tasks, &c, |_| {}).unwrap();
            model.params
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn single_task_single_iter_equals_one_meta_step() {
        let world = small_world();
        let task = world.train_tasks[0].clone();
        let c = TrainConfig {
            tasks_per_iter: 1,
            batch_size: 200, // one visit per epoch
            ..cfg()
        };
        let mut via_train = small_model(&world, 30);
        let history =
            train_offline(&mut via_train, std::slice::from_ref(&task), &c, |_| {}).unwrap();
        assert_eq!(history.records.len(), 1);

        let mut via_step = small_model(&world, 30);
        let mut rng = rng_for(c.seed, "train-offline");
        let _schedule = epoch_schedule(std::slice::from_ref(&task), c.batch_size, &mut rng);
        let (sample, _) = sample_task_batch(&task, &world.schema, c.batch_size, &mut rng).unwrap();
        let mut adam = Adam::new(&via_step.params, c.adam);
        meta_step(&mut via_step, &[sample], &c, &mut adam).unwrap();
        assert_eq!(via_train.params, via_step.params);
    }

    #[test]
    fn empty_task_pool_is_an_error() {
        let world = small_world();
        let mut model = small_model(&world, 1);
        assert!(train_offline(&mut model, &[], &cfg(), |_| {}).is_err());
    }
}
