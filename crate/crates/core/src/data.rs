//! Task datasets: file format, negative sampling, and a synthetic
//! multi-campaign generator for desk-scale verification.
//!
//! # Task file format
//!
//! Line-delimited text, one task per file, tab-separated:
//!
//! ```text
//! campaign<TAB>field:id<TAB>...              # one line, schema order
//! train<TAB>user_id<TAB>label<TAB>field:id[,id...]<TAB>...
//! eval<TAB>user_id<TAB>actual_flag<TAB>field:id[,id...]<TAB>...
//! ```
//!
//! `train` lines are the labeled set (seeds positive, sampled negatives);
//! `eval` lines are the held-out candidate pool with ground-truth
//! audience flags. A task directory holds `schema.txt` plus `*.task`
//! files; loading order is by file name, so re-serialization is
//! content-identical.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{CampaignField, FeatureSchema, RawExample, UserField};
use crate::rng::rng_for;

/// One campaign: its categorical features, the labeled training set, and
/// the held-out evaluation pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignTask {
    pub task_id: String,
    pub campaign_ids: Vec<usize>,
    pub train: Vec<RawExample>,
    pub eval: Vec<RawExample>,
}

impl CampaignTask {
    pub fn seed_count(&self) -> usize {
        self.train.iter().filter(|e| e.label == 1).count()
    }
}

fn parse_field_ids(
    token: &str,
    field_name: &str,
    origin: &str,
    lineno: usize,
) -> Result<(String, Vec<usize>)> {
    let (name, ids) = token.split_once(':').ok_or_else(|| Error::Parse {
        file: origin.into(),
        line: lineno,
        msg: format!("expected `field:ids`, got `{token}`"),
    })?;
    if name != field_name {
        return Err(Error::Parse {
            file: origin.into(),
            line: lineno,
            msg: format!("expected field `{field_name}`, got `{name}`"),
        });
    }
    let ids = ids
        .split(',')
        .map(|s| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                file: origin.into(),
                line: lineno,
                msg: format!("bad id `{s}` in field `{name}`"),
            })
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok((name.to_string(), ids))
}

/// Parses one task file against the schema. Ids are validated here so a
/// bad file fails at load time with its file and line.
pub fn parse_task(text: &str, schema: &FeatureSchema, origin: &str, task_id: &str) -> Result<CampaignTask> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        file: origin.into(),
        line: 1,
        msg: "empty task file".into(),
    })?;
    let parts: Vec<&str> = header.split('\t').collect();
    if parts.first() != Some(&"campaign") || parts.len() != schema.campaign_fields.len() + 1 {
        return Err(Error::Parse {
            file: origin.into(),
            line: 1,
            msg: format!(
                "header must be `campaign` plus {} fields",
                schema.campaign_fields.len()
            ),
        });
    }
    let mut campaign_ids = Vec::with_capacity(schema.campaign_fields.len());
    for (field, token) in schema.campaign_fields.iter().zip(&parts[1..]) {
        let (_, ids) = parse_field_ids(token, &field.name, origin, 1)?;
        if ids.len() != 1 {
            return Err(Error::Parse {
                file: origin.into(),
                line: 1,
                msg: format!("campaign field `{}` must have one id", field.name),
            });
        }
        if ids[0] >= field.vocab {
            return Err(Error::Parse {
                file: origin.into(),
                line: 1,
                msg: format!(
                    "campaign field `{}`: id {} out of vocab {}",
                    field.name, ids[0], field.vocab
                ),
            });
        }
        campaign_ids.push(ids[0]);
    }

    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 + schema.user_fields.len() {
            return Err(Error::Parse {
                file: origin.into(),
                line: lineno,
                msg: format!(
                    "expected kind, user id, label and {} fields",
                    schema.user_fields.len()
                ),
            });
        }
        let label: u8 = match parts[2] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    file: origin.into(),
                    line: lineno,
                    msg: format!("label must be 0 or 1, got `{other}`"),
                })
            }
        };
        let mut field_ids = Vec::with_capacity(schema.user_fields.len());
        for (field, token) in schema.user_fields.iter().zip(&parts[3..]) {
            let (_, ids) = parse_field_ids(token, &field.name, origin, lineno)?;
            if !field.multi_valued && ids.len() != 1 {
                return Err(Error::Parse {
                    file: origin.into(),
                    line: lineno,
                    msg: format!("single-valued field `{}` has {} ids", field.name, ids.len()),
                });
            }
            if let Some(&bad) = ids.iter().find(|&&i| i >= field.vocab) {
                return Err(Error::Parse {
                    file: origin.into(),
                    line: lineno,
                    msg: format!(
                        "field `{}`: id {bad} out of vocab {}",
                        field.name, field.vocab
                    ),
                });
            }
            field_ids.push(ids);
        }
        let example = RawExample {
            user_id: parts[1].to_string(),
            label,
            field_ids,
        };
        match parts[0] {
            "train" => train.push(example),
            "eval" => eval.push(example),
            other => {
                return Err(Error::Parse {
                    file: origin.into(),
                    line: lineno,
                    msg: format!("line kind must be train or eval, got `{other}`"),
                })
            }
        }
    }
    if train.is_empty() {
        return Err(Error::Parse {
            file: origin.into(),
            line: 1,
            msg: "task has no train lines".into(),
        });
    }
    Ok(CampaignTask {
        task_id: task_id.to_string(),
        campaign_ids,
        train,
        eval,
    })
}

pub fn format_task(task: &CampaignTask, schema: &FeatureSchema) -> String {
    let mut out = String::from("campaign");
    for (field, id) in schema.campaign_fields.iter().zip(&task.campaign_ids) {
        write!(out, "\t{}:{}", field.name, id).unwrap();
    }
    out.push('\n');
    let mut write_example = |kind: &str, ex: &RawExample| {
        write!(out, "{kind}\t{}\t{}", ex.user_id, ex.label).unwrap();
        for (field, ids) in schema.user_fields.iter().zip(&ex.field_ids) {
            let joined = ids
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(",");
            write!(out, "\t{}:{}", field.name, joined).unwrap();
        }
        out.push('\n');
    };
    for ex in &task.train {
        write_example("train", ex);
    }
    for ex in &task.eval {
        write_example("eval", ex);
    }
    out
}

pub fn save_task(task: &CampaignTask, schema: &FeatureSchema, path: &Path) -> Result<()> {
    std::fs::write(path, format_task(task, schema))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads `schema.txt` plus every `*.task` file in `dir` (file-name order).
/// Prints a one-line summary so dataset statistics can be cross-checked.
pub fn load_tasks(dir: &Path) -> Result<(FeatureSchema, Vec<CampaignTask>)> {
    let schema = FeatureSchema::load(&dir.join("schema.txt"))?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "task").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .task files in {}",
            dir.display()
        )));
    }
    let tasks = paths
        .iter()
        .map(|path| {
            let origin = path.display().to_string();
            let text =
                std::fs::read_to_string(path).map_err(|e| Error::io(origin.clone(), e))?;
            let task_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| origin.clone());
            parse_task(&text, &schema, &origin, &task_id)
        })
        .collect::<Result<Vec<CampaignTask>>>()?;
    let total_seeds: usize = tasks.iter().map(|t| t.seed_count()).sum();
    eprintln!(
        "loaded {} tasks, {} seeds total from {}",
        tasks.len(),
        total_seeds,
        dir.display()
    );
    Ok((schema, tasks))
}

/// Uniform sample without replacement from `pool` minus `seeds`, of size
/// `ratio * |seeds|` (capped at what remains).
pub fn sample_negatives<'a>(
    pool: &[&'a str],
    seeds: &HashSet<&str>,
    ratio: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'a str>> {
    if pool.len() < seeds.len() {
        return Err(Error::InvalidInput(format!(
            "pool ({}) smaller than seed set ({})",
            pool.len(),
            seeds.len()
        )));
    }
    let mut remainder: Vec<&str> = pool
        .iter()
        .copied()
        .filter(|id| !seeds.contains(id))
        .collect();
    let want = (ratio * seeds.len()).min(remainder.len());
    remainder.shuffle(rng);
    remainder.truncate(want);
    Ok(remainder)
}

/// Controls for the synthetic multi-campaign world.
///
/// Users carry latent vectors; campaigns carry latent directions drawn
/// around cluster centers that come in opposing pairs, so tasks within a
/// cluster are related and tasks across a pair conflict. Labels are
/// Bernoulli in the sigmoid of the latent dot product over `noise`; the
/// categorical features are quantizations of the latent coordinates.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_train_tasks: usize,
    pub n_test_tasks: usize,
    pub users_per_pool: usize,
    pub latent_dim: usize,
    /// Inclusive range of seed-set sizes per task.
    pub seeds_per_task: (usize, usize),
    /// Label temperature; higher means noisier labels. Zero makes labels
    /// a deterministic function of the latent sign.
    pub noise: f64,
    /// Negatives sampled per seed.
    pub negative_ratio: usize,
    /// Number of campaign clusters (rounded up to an even count so every
    /// direction has an opposite).
    pub n_clusters: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train_tasks: 40,
            n_test_tasks: 10,
            users_per_pool: 2000,
            latent_dim: 8,
            seeds_per_task: (25, 250),
            noise: 0.5,
            negative_ratio: 5,
            n_clusters: 4,
            seed: 17,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train_tasks == 0
            || self.users_per_pool == 0
            || self.latent_dim == 0
            || self.n_clusters == 0
        {
            return Err(Error::Config("synth sizes must be positive".into()));
        }
        if self.negative_ratio < 1 {
            return Err(Error::Config("negative_ratio must be >= 1".into()));
        }
        if self.seeds_per_task.0 == 0 || self.seeds_per_task.0 > self.seeds_per_task.1 {
            return Err(Error::Config("bad seeds_per_task range".into()));
        }
        if self.noise < 0.0 {
            return Err(Error::Config("noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// Quartile-style buckets for a roughly standard-normal coordinate.
fn quantize(v: f64) -> usize {
    if v < -0.6745 {
        0
    } else if v < 0.0 {
        1
    } else if v < 0.6745 {
        2
    } else {
        3
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// The in-memory output of the generator.
pub struct SynthWorld {
    pub schema: FeatureSchema,
    pub train_tasks: Vec<CampaignTask>,
    pub test_tasks: Vec<CampaignTask>,
}

pub fn synth_schema(cfg: &SynthConfig) -> Result<FeatureSchema> {
    let d = cfg.latent_dim;
    let n_clusters = cfg.n_clusters + cfg.n_clusters % 2;
    let mut campaign_fields = vec![CampaignField {
        name: "category".into(),
        vocab: n_clusters,
    }];
    for j in 0..d {
        campaign_fields.push(CampaignField {
            name: format!("cdim{j}"),
            vocab: 4,
        });
    }
    let mut user_fields: Vec<UserField> = (0..d)
        .map(|j| UserField {
            name: format!("udim{j}"),
            vocab: 4,
            multi_valued: false,
        })
        .collect();
    user_fields.push(UserField {
        name: "topdims".into(),
        vocab: d,
        multi_valued: true,
    });
    FeatureSchema::new(campaign_fields, user_fields)
}

struct SynthUser {
    id: String,
    latent: Vec<f64>,
    field_ids: Vec<Vec<usize>>,
}

fn user_features(latent: &[f64], scale: f64) -> Vec<Vec<usize>> {
    let d = latent.len();
    let mut fields: Vec<Vec<usize>> = latent.iter().map(|&v| vec![quantize(v * scale)]).collect();
    // Multi-valued field: the quarter of coordinates with the largest values.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| latent[b].total_cmp(&latent[a]).then(a.cmp(&b)));
    let take = (d / 4).max(1);
    let mut top: Vec<usize> = order[..take].to_vec();
    top.sort_unstable();
    fields.push(top);
    fields
}

/// Generates the synthetic world in memory; see [`SynthConfig`].
pub fn generate_world(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let schema = synth_schema(cfg)?;
    let d = cfg.latent_dim;
    let n_clusters = cfg.n_clusters + cfg.n_clusters % 2;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut rng = rng_for(cfg.seed, "synth-users");
    let width = (cfg.users_per_pool as f64).log10().ceil().max(1.0) as usize;
    let users: Vec<SynthUser> = (0..cfg.users_per_pool)
        .map(|i| {
            let latent: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
            SynthUser {
                id: format!("u{i:0width$}"),
                field_ids: user_features(&latent, 1.0),
                latent,
            }
        })
        .collect();

    // Opposing cluster pairs: each axis contributes a direction and its
    // negation, which makes tasks across the pair conflict by design.
    let mut rng = rng_for(cfg.seed, "synth-clusters");
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_clusters);
    for _ in 0..n_clusters / 2 {
        let mut axis: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        normalize(&mut axis);
        centers.push(axis.clone());
        centers.push(axis.iter().map(|v| -v).collect());
    }

    let make_task = |task_id: String, cluster: usize, rng: &mut ChaCha8Rng| -> Result<CampaignTask> {
        let mut direction: Vec<f64> = centers[cluster]
            .iter()
            .map(|&c| c + 0.25 * normal.sample(rng))
            .collect();
        normalize(&mut direction);

        let labels: Vec<u8> = users
            .iter()
            .map(|u| {
                let affinity = dot(&u.latent, &direction);
                let p = if cfg.noise == 0.0 {
                    if affinity > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    1.0 / (1.0 + (-affinity / cfg.noise).exp())
                };
                (rng.gen::<f64>() < p) as u8
            })
            .collect();

        let mut campaign_ids = vec![cluster];
        campaign_ids.extend(
            direction
                .iter()
                .map(|&v| quantize(v * (d as f64).sqrt())),
        );

        let positives: Vec<usize> = (0..users.len()).filter(|&i| labels[i] == 1).collect();
        if positives.is_empty() {
            return Err(Error::InvalidInput(format!(
                "task {task_id} generated no positives; lower noise or enlarge the pool"
            )));
        }
        let want_seeds = rng.gen_range(cfg.seeds_per_task.0..=cfg.seeds_per_task.1);
        let mut shuffled = positives.clone();
        shuffled.shuffle(rng);
        let seeds: Vec<usize> = shuffled.into_iter().take(want_seeds).collect();
        let seed_set: HashSet<usize> = seeds.iter().copied().collect();

        let mut non_seeds: Vec<usize> =
            (0..users.len()).filter(|i| !seed_set.contains(i)).collect();
        non_seeds.shuffle(rng);
        let n_neg = (cfg.negative_ratio * seeds.len()).min(non_seeds.len());
        let negatives: Vec<usize> = non_seeds[..n_neg].to_vec();

        let train_set: HashSet<usize> = seed_set
            .iter()
            .chain(negatives.iter())
            .copied()
            .collect();

        let example = |i: usize, label: u8| RawExample {
            user_id: users[i].id.clone(),
            label,
            field_ids: users[i].field_ids.clone(),
        };
        let mut train: Vec<RawExample> = seeds.iter().map(|&i| example(i, 1)).collect();
        train.extend(negatives.iter().map(|&i| example(i, 0)));
        let eval: Vec<RawExample> = (0..users.len())
            .filter(|i| !train_set.contains(i))
            .map(|i| example(i, labels[i]))
            .collect();

        Ok(CampaignTask {
            task_id,
            campaign_ids,
            train,
            eval,
        })
    };

    let mut train_tasks = Vec::with_capacity(cfg.n_train_tasks);
    for t in 0..cfg.n_train_tasks {
        let mut rng = rng_for(cfg.seed, &format!("synth-train-task-{t}"));
        train_tasks.push(make_task(
            format!("train{t:03}"),
            t % n_clusters,
            &mut rng,
        )?);
    }
    let mut test_tasks = Vec::with_capacity(cfg.n_test_tasks);
    for t in 0..cfg.n_test_tasks {
        let mut rng = rng_for(cfg.seed, &format!("synth-test-task-{t}"));
        test_tasks.push(make_task(format!("test{t:03}"), t % n_clusters, &mut rng)?);
    }
    Ok(SynthWorld {
        schema,
        train_tasks,
        test_tasks,
    })
}

/// Generates and writes the world under `out`: `train/` and `test/`
/// directories, each with `schema.txt` and one `.task` file per task.
pub fn generate_synth(cfg: &SynthConfig, out: &Path) -> Result<SynthWorld> {
    let world = generate_world(cfg)?;
    for (sub, tasks) in [("train", &world.train_tasks), ("test", &world.test_tasks)] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        world.schema.save(&dir.join("schema.txt"))?;
        for task in tasks.iter() {
            save_task(task, &world.schema, &dir.join(format!("{}.task", task.task_id)))?;
        }
    }
    Ok(world)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            n_train_tasks: 3,
            n_test_tasks: 2,
            users_per_pool: 120,
            latent_dim: 4,
            seeds_per_task: (5, 15),
            noise: 0.5,
            negative_ratio: 2,
            n_clusters: 2,
            seed: 9,
        }
    }

    #[test]
    fn generate_load_reserialize_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let world = generate_synth(&tiny_cfg(), dir.path()).unwrap();
        let (schema, tasks) = load_tasks(&dir.path().join("train")).unwrap();
        assert_eq!(schema, world.schema);
        assert_eq!(tasks.len(), world.train_tasks.len());
        for (loaded, original) in tasks.iter().zip(&world.train_tasks) {
            assert_eq!(loaded, original);
            let round = format_task(loaded, &schema);
            let disk = std::fs::read_to_string(
                dir.path().join("train").join(format!("{}.task", loaded.task_id)),
            )
            .unwrap();
            assert_eq!(round, disk);
        }
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let world = generate_synth(&tiny_cfg(), dir.path()).unwrap();
        let empty = dir.path().join("empty");
        std::fs::create_dir_all(&empty).unwrap();
        world.schema.save(&empty.join("schema.txt")).unwrap();
        assert!(load_tasks(&empty).is_err());
    }

    #[test]
    fn parse_error_carries_file_and_line() {
        let schema = synth_schema(&tiny_cfg()).unwrap();
        let world = generate_world(&tiny_cfg()).unwrap();
        let mut text = format_task(&world.train_tasks[0], &schema);
        text.push_str("train\tux\t7\tbroken\n");
        let lines = text.lines().count();
        match parse_task(&text, &schema, "bad.task", "bad") {
            Err(Error::Parse { file, line, .. }) => {
                assert_eq!(file, "bad.task");
                assert_eq!(line, lines);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn negatives_disjoint_from_seeds_and_reproducible() {
        let pool: Vec<String> = (0..50).map(|i| format!("u{i}")).collect();
        let pool_refs: Vec<&str> = pool.iter().map(|s| s.as_str()).collect();
        let seeds: HashSet<&str> = pool_refs[..10].iter().copied().collect();
        let mut rng_a = rng_for(3, "neg");
        let a = sample_negatives(&pool_refs, &seeds, 3, &mut rng_a).unwrap();
        let mut rng_b = rng_for(3, "neg");
        let b = sample_negatives(&pool_refs, &seeds, 3, &mut rng_b).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|id| !seeds.contains(id)));
    }

    #[test]
    fn ratio_capped_at_pool_remainder() {
        let pool: Vec<String> = (0..12).map(|i| format!("u{i}")).collect();
        let pool_refs: Vec<&str> = pool.iter().map(|s| s.as_str()).collect();
        let seeds: HashSet<&str> = pool_refs[..6].iter().copied().collect();
        let mut rng = rng_for(3, "neg-cap");
        // ratio 1 with remainder exactly |seeds|: gets the whole remainder.
        let got = sample_negatives(&pool_refs, &seeds, 1, &mut rng).unwrap();
        assert_eq!(got.len(), 6);
        let more = sample_negatives(&pool_refs, &seeds, 10, &mut rng).unwrap();
        assert_eq!(more.len(), 6);
    }

    #[test]
    fn generator_train_and_eval_are_disjoint() {
        let world = generate_world(&tiny_cfg()).unwrap();
        for task in world.train_tasks.iter().chain(&world.test_tasks) {
            let train_ids: HashSet<&str> =
                task.train.iter().map(|e| e.user_id.as_str()).collect();
            assert!(task
                .eval
                .iter()
                .all(|e| !train_ids.contains(e.user_id.as_str())));
        }
    }

    #[test]
    fn default_config_positive_rate_in_band() {
        let world = generate_world(&SynthConfig {
            users_per_pool: 800,
            ..tiny_cfg()
        })
        .unwrap();
        for task in &world.test_tasks {
            let n = task.eval.len() as f64;
            let pos = task.eval.iter().filter(|e| e.label == 1).count() as f64;
            let rate = pos / n;
            assert!((0.3..=0.7).contains(&rate), "positive rate {rate}");
        }
    }

    #[test]
    fn zero_noise_single_axis_labels_follow_sign() {
        // With noise 0 and one cluster pair in 1-d, the label is exactly the
        // sign agreement between user and campaign direction.
        let cfg = SynthConfig {
            latent_dim: 1,
            n_clusters: 2,
            noise: 0.0,
            users_per_pool: 60,
            n_train_tasks: 1,
            n_test_tasks: 1,
            seeds_per_task: (3, 6),
            negative_ratio: 1,
            seed: 4,
        };
        let world = generate_world(&cfg).unwrap();
        let task = &world.test_tasks[0];
        // Direction sign is observable through the quantized campaign dim:
        // buckets 2/3 are positive, 0/1 negative.
        let dir_positive = task.campaign_ids[1] >= 2;
        for ex in &task.eval {
            let user_positive = ex.field_ids[0][0] >= 2;
            let expect = (user_positive == dir_positive) as u8;
            assert_eq!(ex.label, expect, "user {}", ex.user_id);
        }
    }
}
