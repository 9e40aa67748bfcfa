//! Ranking metrics and multi-run aggregation.
//!
//! AUC is computed with the rank-sum formulation (ties get half credit),
//! which matches O(P*N) pairwise counting exactly. Precision/recall at
//! top K percent use `max(1, floor(K% * pool))` candidates with the same
//! ordering and tie-break as audience expansion: score descending, user
//! id ascending.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Probability that a random positive outranks a random negative.
/// Both classes must be present; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidInput(
            "AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average ranks across tie groups, then the Mann-Whitney identity.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the average.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Ranking order used everywhere a pool is sorted: score descending,
/// then user id ascending.
pub fn rank_order(ids: &[&str], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].cmp(ids[b]))
    });
    order
}

/// Precision and recall over the top `k_percent` of the pool. `actual`
/// flags the true audience members.
pub fn precision_recall_at(
    ids: &[&str],
    scores: &[f64],
    actual: &[bool],
    k_percent: f64,
) -> Result<(f64, f64)> {
    let n = ids.len();
    if n == 0 || scores.len() != n || actual.len() != n {
        return Err(Error::InvalidInput(
            "precision_recall_at: empty pool or mismatched lengths".into(),
        ));
    }
    let total_actual = actual.iter().filter(|&&a| a).count();
    if total_actual == 0 {
        return Err(Error::InvalidInput(
            "precision_recall_at: no actual audiences, recall undefined".into(),
        ));
    }
    let top_k = ((k_percent / 100.0 * n as f64).floor() as usize).max(1);
    let order = rank_order(ids, scores);
    let hits = order[..top_k].iter().filter(|&&i| actual[i]).count();
    Ok((
        hits as f64 / top_k as f64,
        hits as f64 / total_actual as f64,
    ))
}

/// Seed-size group of a task relative to the 8:2 threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedGroup {
    /// Seed count <= T.
    Small,
    /// Seed count > T.
    Large,
}

impl SeedGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeedGroup::Small => "<=T",
            SeedGroup::Large => ">T",
        }
    }
}

/// Smallest threshold T such that at least 80% of the tasks have seed
/// count <= T, plus each task's group.
pub fn group_tasks(seed_counts: &[usize]) -> Result<(usize, Vec<SeedGroup>)> {
    if seed_counts.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "grouping needs at least 5 tasks, got {}",
            seed_counts.len()
        )));
    }
    let mut sorted = seed_counts.to_vec();
    sorted.sort_unstable();
    let idx = (seed_counts.len() as f64 * 0.8).ceil() as usize;
    let threshold = sorted[idx - 1];
    Ok((threshold, label_groups(seed_counts, threshold)))
}

/// Group labels for an explicitly chosen threshold (dataset presets).
pub fn label_groups(seed_counts: &[usize], threshold: usize) -> Vec<SeedGroup> {
    seed_counts
        .iter()
        .map(|&s| {
            if s <= threshold {
                SeedGroup::Small
            } else {
                SeedGroup::Large
            }
        })
        .collect()
}

/// Metrics of one task under one trained model.
#[derive(Debug, Clone)]
pub struct TaskMetrics {
    pub task_id: String,
    pub seed_count: usize,
    pub group: SeedGroup,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One evaluation run: per-task metrics plus group means.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub run_seed: u64,
    pub threshold: usize,
    pub k_percent: f64,
    pub tasks: Vec<TaskMetrics>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MetricMeans {
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub tasks: usize,
}

impl EvalReport {
    pub fn group_means(&self, group: SeedGroup) -> MetricMeans {
        let picked: Vec<&TaskMetrics> =
            self.tasks.iter().filter(|t| t.group == group).collect();
        if picked.is_empty() {
            return MetricMeans::default();
        }
        let n = picked.len() as f64;
        MetricMeans {
            auc: picked.iter().map(|t| t.auc).sum::<f64>() / n,
            precision: picked.iter().map(|t| t.precision).sum::<f64>() / n,
            recall: picked.iter().map(|t| t.recall).sum::<f64>() / n,
            tasks: picked.len(),
        }
    }

    pub fn overall_means(&self) -> MetricMeans {
        let n = self.tasks.len() as f64;
        MetricMeans {
            auc: self.tasks.iter().map(|t| t.auc).sum::<f64>() / n,
            precision: self.tasks.iter().map(|t| t.precision).sum::<f64>() / n,
            recall: self.tasks.iter().map(|t| t.recall).sum::<f64>() / n,
            tasks: self.tasks.len(),
        }
    }

    /// Stable tab-separated table: one row per task plus group-mean rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("task\tgroup\tseeds\tauc\tp_at_k\tr_at_k\n");
        for t in &self.tasks {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                t.task_id,
                t.group.as_str(),
                t.seed_count,
                t.auc,
                t.precision,
                t.recall
            ));
        }
        for group in [SeedGroup::Small, SeedGroup::Large] {
            let m = self.group_means(group);
            if m.tasks > 0 {
                out.push_str(&format!(
                    "mean[{}]\t{}\t{}\t{}\t{}\t{}\n",
                    group.as_str(),
                    group.as_str(),
                    m.tasks,
                    m.auc,
                    m.precision,
                    m.recall
                ));
            }
        }
        out
    }
}

/// Paired comparison of one metric between two report sets.
#[derive(Debug, Clone, Copy)]
pub struct PairedComparison {
    pub mean_ours: f64,
    pub mean_baseline: f64,
    /// mean_ours - mean_baseline over paired (run, task) observations.
    pub mean_diff: f64,
    pub t_stat: f64,
    /// Two-sided p-value; 1 when all pairs are identical, 0 in the
    /// degenerate zero-variance nonzero-difference case.
    pub p_value: f64,
    pub pairs: usize,
}

/// Result of [`aggregate_runs`]: means over runs and paired t-tests
/// against the baseline for each metric.
#[derive(Debug, Clone)]
pub struct RunAggregate {
    pub auc: PairedComparison,
    pub precision: PairedComparison,
    pub recall: PairedComparison,
}

/// Two-sided paired t-test over per-(run, task) differences.
pub fn paired_t_test(diffs: &[f64]) -> Result<(f64, f64)> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "paired t-test needs at least 2 pairs".into(),
        ));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        // Degenerate: no variance. Identical sets give (0, 1); a constant
        // nonzero shift is reported as an exact separation.
        return Ok(if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::InvalidInput(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, p))
}

fn check_matched(ours: &[EvalReport], baseline: &[EvalReport]) -> Result<()> {
    if ours.len() != baseline.len() || ours.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "aggregate_runs needs matching run counts >= 2, got {} vs {}",
            ours.len(),
            baseline.len()
        )));
    }
    for (a, b) in ours.iter().zip(baseline) {
        if a.tasks.len() != b.tasks.len()
            || a.tasks
                .iter()
                .zip(&b.tasks)
                .any(|(x, y)| x.task_id != y.task_id)
        {
            return Err(Error::InvalidInput(
                "aggregate_runs: task sets differ between runs".into(),
            ));
        }
    }
    Ok(())
}

/// Aggregates matched runs of two methods. Pairs are formed per
/// (run, task); `group` restricts the comparison to one seed-size group.
pub fn aggregate_runs(
    ours: &[EvalReport],
    baseline: &[EvalReport],
    group: Option<SeedGroup>,
) -> Result<RunAggregate> {
    check_matched(ours, baseline)?;
    let pick = |report: &EvalReport, f: fn(&TaskMetrics) -> f64| -> Vec<f64> {
        report
            .tasks
            .iter()
            .filter(|t| group.is_none_or(|g| t.group == g))
            .map(f)
            .collect()
    };
    let compare = |f: fn(&TaskMetrics) -> f64| -> Result<PairedComparison> {
        let mut ours_all = Vec::new();
        let mut base_all = Vec::new();
        for (a, b) in ours.iter().zip(baseline) {
            ours_all.extend(pick(a, f));
            base_all.extend(pick(b, f));
        }
        if ours_all.is_empty() {
            return Err(Error::InvalidInput(
                "aggregate_runs: no tasks in the selected group".into(),
            ));
        }
        let diffs: Vec<f64> = ours_all
            .iter()
            .zip(&base_all)
            .map(|(o, b)| o - b)
            .collect();
        let (t_stat, p_value) = paired_t_test(&diffs)?;
        let n = ours_all.len() as f64;
        Ok(PairedComparison {
            mean_ours: ours_all.iter().sum::<f64>() / n,
            mean_baseline: base_all.iter().sum::<f64>() / n,
            mean_diff: diffs.iter().sum::<f64>() / n,
            t_stat,
            p_value,
            pairs: diffs.len(),
        })
    };
    Ok(RunAggregate {
        auc: compare(|t| t.auc)?,
        precision: compare(|t| t.precision)?,
        recall: compare(|t| t.recall)?,
    })
}
