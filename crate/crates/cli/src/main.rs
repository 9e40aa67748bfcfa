//! Audience-expansion pipeline CLI.
//!
//! Subcommands cover the whole flow: `gen-synth` writes a synthetic
//! multi-campaign dataset, `train-meta` trains the general model,
//! `finetune` customizes it for one campaign, `expand` ranks a candidate
//! pool and selects the top-K audience, and `evaluate` runs the offline
//! metric suite over a task directory.
//!
//! Every run derives all randomness from a single seed (flag wins over
//! the config file); re-running any pipeline with the same seed
//! reproduces output files byte for byte regardless of thread count.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use metaheac::adapt::{evaluate_model, expand, finetune, FineTuneConfig};
use metaheac::config::KvConfig;
use metaheac::data::{generate_synth, load_tasks, parse_task, SynthConfig};
use metaheac::model::{Ablation, MetaHeacModel, ModelConfig};
use metaheac::train::{train_offline, train_plain, IterRecord, TrainConfig};

#[derive(Parser)]
#[command(name = "metaheac", version, about = "Meta-trained audience expansion")]
struct Cli {
    /// Seed for all randomness (overrides the config file's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections; defaults to the available
    /// parallelism. Results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-campaign dataset.
    GenSynth {
        /// Key-value config file (see README for keys).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; receives train/ and test/ task directories.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the general model over a task directory.
    TrainMeta {
        /// Directory with schema.txt and *.task files.
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output model file (a .schema sidecar is written next to it).
        #[arg(long)]
        out: PathBuf,
        /// Progress log file (tab-separated: iter, task, loss_a, loss_b);
        /// defaults to stdout only.
        #[arg(long)]
        log: Option<PathBuf>,
        /// `meta` (two-phase updates) or `plain` (standard BP ablation).
        #[arg(long)]
        trainer: Option<String>,
        /// Structural ablation: full, single-expert, single-critic or mlp.
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        tasks_per_iter: Option<usize>,
        /// Use the first-order meta-gradient approximation.
        #[arg(long)]
        first_order: bool,
        #[arg(long)]
        experts: Option<usize>,
        #[arg(long)]
        critics: Option<usize>,
        #[arg(long)]
        embedding_dim: Option<usize>,
    },
    /// Fine-tune a general model on one campaign's task file.
    Finetune {
        /// General model file.
        #[arg(long)]
        model: PathBuf,
        /// Task file with the campaign's labeled examples.
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output customized model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a candidate pool and select the top-K audience.
    Expand {
        /// Customized model file.
        #[arg(long)]
        model: PathBuf,
        /// Task file whose eval lines form the candidate pool.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        k: usize,
        /// Ranked output file; selected ids go to `<out>.selected`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune + score every task in a directory and write the metric
    /// table (AUC, P@K%, R@K% per task plus group means).
    Evaluate {
        /// General model file.
        #[arg(long)]
        model: PathBuf,
        /// Directory with schema.txt and *.task files.
        #[arg(long)]
        tasks: PathBuf,
        /// Top-K percentage for precision/recall.
        #[arg(long, default_value_t = 5.0)]
        k: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Explicit seed-size threshold T; derived 8:2 when absent.
        #[arg(long)]
        threshold: Option<usize>,
        /// Report file (tab-separated).
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<KvConfig> {
    Ok(match path {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::empty(),
    })
}

fn resolve_seed(flag: Option<u64>, cfg: &KvConfig) -> Result<u64> {
    Ok(match flag {
        Some(s) => {
            // Consume the config key so finish() does not flag it.
            let _ = cfg.get_u64("seed", 0)?;
            s
        }
        None => cfg.get_u64("seed", 0)?,
    })
}

fn synth_config(cfg: &KvConfig, seed: u64) -> Result<SynthConfig> {
    let d = SynthConfig::default();
    Ok(SynthConfig {
        n_train_tasks: cfg.get_usize("n_train_tasks", d.n_train_tasks)?,
        n_test_tasks: cfg.get_usize("n_test_tasks", d.n_test_tasks)?,
        users_per_pool: cfg.get_usize("users_per_pool", d.users_per_pool)?,
        latent_dim: cfg.get_usize("latent_dim", d.latent_dim)?,
        seeds_per_task: (
            cfg.get_usize("seeds_min", d.seeds_per_task.0)?,
            cfg.get_usize("seeds_max", d.seeds_per_task.1)?,
        ),
        noise: cfg.get_f64("noise", d.noise)?,
        negative_ratio: cfg.get_usize("negative_ratio", d.negative_ratio)?,
        n_clusters: cfg.get_usize("n_clusters", d.n_clusters)?,
        seed,
    })
}

fn model_config(cfg: &KvConfig) -> Result<ModelConfig> {
    let d = ModelConfig::default();
    let ablation = Ablation::parse(&cfg.get_str("ablation", d.ablation.as_str()))?;
    let config = ModelConfig {
        embedding_dim: cfg.get_usize("embedding_dim", d.embedding_dim)?,
        n_experts: cfg.get_usize("n_experts", d.n_experts)?,
        m_critics: cfg.get_usize("m_critics", d.m_critics)?,
        expert_hidden: cfg.get_usize_list("expert_hidden", &d.expert_hidden)?,
        gate_hidden: cfg.get_usize_list("gate_hidden", &d.gate_hidden)?,
        literal_scaling: cfg.get_bool("literal_scaling", d.literal_scaling)?,
        ablation: Ablation::Full,
        sum_loss: cfg.get_bool("sum_loss", d.sum_loss)?,
    }
    .with_ablation(ablation);
    Ok(config)
}

fn train_config(cfg: &KvConfig, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        alpha: cfg.get_f64("alpha", d.alpha)?,
        beta: cfg.get_f64("beta", d.beta)?,
        batch_size: cfg.get_usize("batch_size", d.batch_size)?,
        tasks_per_iter: cfg.get_usize("tasks_per_iter", d.tasks_per_iter)?,
        epochs: cfg.get_usize("epochs", d.epochs)?,
        adam: d.adam,
        second_order: cfg.get_bool("second_order", d.second_order)?,
        seed,
    })
}

fn finetune_config(cfg: &KvConfig) -> Result<FineTuneConfig> {
    let d = FineTuneConfig::default();
    Ok(FineTuneConfig {
        lr: cfg.get_f64("finetune_lr", d.lr)?,
        max_epochs: cfg.get_usize("finetune_max_epochs", d.max_epochs)?,
        rel_tol: cfg.get_f64("finetune_rel_tol", d.rel_tol)?,
        patience: cfg.get_usize("finetune_patience", d.patience)?,
        batch_size: cfg.get_usize("finetune_batch_size", d.batch_size)?,
        adam: d.adam,
    })
}

/// The model/train/finetune key family forms one experiment config shared
/// by `train-meta`, `finetune` and `evaluate`; each subcommand uses the
/// parts it needs, and any key outside the family is rejected.
fn pipeline_config(
    cfg: &KvConfig,
    seed: u64,
) -> Result<(ModelConfig, TrainConfig, FineTuneConfig, String)> {
    let mcfg = model_config(cfg)?;
    let tcfg = train_config(cfg, seed)?;
    let ft = finetune_config(cfg)?;
    let trainer = cfg.get_str("trainer", "meta");
    cfg.finish()?;
    Ok((mcfg, tcfg, ft, trainer))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run() -> Result<()> {
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing the thread pool")?;
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads.is_some() {
        eprintln!("note: built without the `parallel` feature; --threads ignored");
    }

    match cli.command {
        Command::GenSynth { config, out } => {
            let cfg = load_config(&config)?;
            let seed = resolve_seed(cli.seed, &cfg)?;
            let synth = synth_config(&cfg, seed)?;
            cfg.finish()?;
            let world = generate_synth(&synth, &out)?;
            println!(
                "wrote {} train and {} test tasks under {}",
                world.train_tasks.len(),
                world.test_tasks.len(),
                out.display()
            );
        }
        Command::TrainMeta {
            tasks,
            config,
            out,
            log,
            trainer,
            ablation,
            alpha,
            beta,
            epochs,
            batch_size,
            tasks_per_iter,
            first_order,
            experts,
            critics,
            embedding_dim,
        } => {
            let cfg = load_config(&config)?;
            let seed = resolve_seed(cli.seed, &cfg)?;
            let (mut mcfg, mut tcfg, _, file_trainer) = pipeline_config(&cfg, seed)?;
            let trainer = trainer.unwrap_or(file_trainer);

            // Flags override file values.
            if let Some(a) = ablation {
                mcfg = mcfg.with_ablation(Ablation::parse(&a)?);
            }
            if let Some(n) = experts {
                mcfg.n_experts = n;
            }
            if let Some(m) = critics {
                mcfg.m_critics = m;
            }
            if let Some(k) = embedding_dim {
                mcfg.embedding_dim = k;
            }
            if let Some(a) = alpha {
                tcfg.alpha = a;
            }
            if let Some(b) = beta {
                tcfg.beta = b;
            }
            if let Some(e) = epochs {
                tcfg.epochs = e;
            }
            if let Some(b) = batch_size {
                tcfg.batch_size = b;
            }
            if let Some(t) = tasks_per_iter {
                tcfg.tasks_per_iter = t;
            }
            if first_order {
                tcfg.second_order = false;
            }

            let (schema, task_list) = load_tasks(&tasks)?;
            let mut model = MetaHeacModel::init(schema, mcfg, seed)?;
            let mut log_file = match &log {
                Some(p) => Some(
                    std::fs::File::create(p)
                        .with_context(|| format!("creating {}", p.display()))?,
                ),
                None => None,
            };
            let mut on_iter = |record: &IterRecord| {
                for task in &record.report.tasks {
                    let line = format!(
                        "{}\t{}\t{}\t{}",
                        record.iter, task.task_id, task.inner_loss, task.outer_loss
                    );
                    println!("{line}");
                    if let Some(f) = log_file.as_mut() {
                        let _ = writeln!(f, "{line}");
                    }
                }
            };
            match trainer.as_str() {
                "meta" => {
                    train_offline(&mut model, &task_list, &tcfg, &mut on_iter)?;
                }
                "plain" => {
                    train_plain(&mut model, &task_list, &tcfg, &mut on_iter)?;
                }
                other => bail!("trainer must be `meta` or `plain`, got `{other}`"),
            }
            model.save(&out)?;
            println!("saved general model to {}", out.display());
        }
        Command::Finetune {
            model,
            task,
            config,
            out,
        } => {
            let cfg = load_config(&config)?;
            let seed = resolve_seed(cli.seed, &cfg)?;
            let (_, _, ft, _) = pipeline_config(&cfg, seed)?;
            let general = MetaHeacModel::load(&model)?;
            let text = std::fs::read_to_string(&task)
                .with_context(|| format!("reading {}", task.display()))?;
            let task_id = task
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let campaign =
                parse_task(&text, &general.schema, &task.display().to_string(), &task_id)?;
            let (custom, report) = finetune(&general, &campaign, &ft, seed)?;
            custom.save(&out)?;
            println!(
                "fine-tuned on {} for {} epochs (loss {} -> {}); saved to {}",
                campaign.task_id,
                report.epoch_losses.len(),
                report.initial_loss,
                report.epoch_losses.last().unwrap_or(&report.initial_loss),
                out.display()
            );
        }
        Command::Expand {
            model,
            candidates,
            k,
            out,
        } => {
            let custom = MetaHeacModel::load(&model)?;
            let text = std::fs::read_to_string(&candidates)
                .with_context(|| format!("reading {}", candidates.display()))?;
            let task_id = candidates
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let campaign = parse_task(
                &text,
                &custom.schema,
                &candidates.display().to_string(),
                &task_id,
            )?;
            if campaign.eval.is_empty() {
                bail!("candidate file has no eval lines to score");
            }
            let result = expand(&custom, &campaign.campaign_ids, &campaign.eval, k)?;
            let mut ranked = String::new();
            for (id, score) in &result.ranked {
                writeln!(ranked, "{id}\t{score}").unwrap();
            }
            write_file(&out, &ranked)?;
            let selected_path = out.with_extension(match out.extension() {
                Some(ext) => format!("{}.selected", ext.to_string_lossy()),
                None => "selected".into(),
            });
            let mut selected = String::new();
            for id in &result.selected {
                writeln!(selected, "{id}").unwrap();
            }
            write_file(&selected_path, &selected)?;
            println!(
                "scored {} candidates; wrote ranking to {} and {} selected ids to {}",
                result.ranked.len(),
                out.display(),
                result.selected.len(),
                selected_path.display()
            );
        }
        Command::Evaluate {
            model,
            tasks,
            k,
            config,
            threshold,
            out,
        } => {
            let cfg = load_config(&config)?;
            let seed = resolve_seed(cli.seed, &cfg)?;
            let (_, _, ft, _) = pipeline_config(&cfg, seed)?;
            let general = MetaHeacModel::load(&model)?;
            let (schema, task_list) = load_tasks(&tasks)?;
            if schema != general.schema {
                bail!("task directory schema does not match the model's schema");
            }
            let report = evaluate_model(&general, &task_list, &ft, k, threshold, seed)?;
            write_file(&out, &report.to_tsv())?;
            let small = report.group_means(metaheac::metrics::SeedGroup::Small);
            let large = report.group_means(metaheac::metrics::SeedGroup::Large);
            println!(
                "T = {}; <=T: {} tasks, AUC {:.4}, P@{}% {:.4}, R@{}% {:.4}",
                report.threshold, small.tasks, small.auc, k, small.precision, k, small.recall
            );
            if large.tasks > 0 {
                println!(
                    ">T: {} tasks, AUC {:.4}, P@{}% {:.4}, R@{}% {:.4}",
                    large.tasks, large.auc, k, large.precision, k, large.recall
                );
            }
            println!("wrote report to {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
