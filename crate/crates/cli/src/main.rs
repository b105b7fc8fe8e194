use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use prep_core::cascade_data::{ingest_cascades, write_cascades, TaskId};
use prep_core::evaluation::{evaluate, predictions_csv, results_csv, results_table};
use prep_core::experiment::{
    ablation_csv, ablation_table, finetune_task, pretrain_model, run_ablation, task_data, Corpus, ExperimentConfig,
};
use prep_core::synthetic::{generate, summarize};
use prep_core::tcn_model::{load_checkpoint, save_checkpoint};
use prep_core::tei_sampler::{build_with, elapse_law, law_variance, uniform_pair_elapse_law, PairSampling};
use prep_core::training::Init;

/// Pre-train a cascade encoder on elapse inference and transfer it to
/// popularity prediction tasks.
#[derive(Parser)]
#[command(name = "prep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic cascade corpus.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        branching_alpha: Option<f64>,
        /// Output JSONL path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write summary statistics here.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Summary statistics of a cascade file.
    Summarize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train the encoder on the elapse-inference pretext.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path; the loss curve and report are written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        l_max: Option<usize>,
        #[arg(long, value_enum, default_value_t = PretextArg::Tei)]
        pretext: PretextArg,
        /// Dump the first epoch's training pairs as TSV.
        #[arg(long)]
        pairs_out: Option<PathBuf>,
    },
    /// Fine-tune on a downstream task and evaluate on its test split.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, required_unless_present_any = ["random_init", "print_config"], conflicts_with = "random_init")]
        checkpoint: Option<PathBuf>,
        /// Start from a randomly initialised encoder.
        #[arg(long)]
        random_init: bool,
        #[arg(long)]
        task: Option<TaskId>,
        #[arg(long)]
        label_fraction: Option<f64>,
        /// Keep the encoder fixed and train only the head.
        #[arg(long)]
        freeze: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Results CSV; rows are appended.
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Save the fine-tuned model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the elapse, random-pair and supervised T1 pretexts.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory for the per-seed CSV and the summary table.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate a fine-tuned checkpoint on a task's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: TaskId,
        #[arg(long, default_value = "model")]
        regime: String,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PretextArg {
    Tei,
    UniformPairs,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(path) => Ok(ExperimentConfig::load(path)?),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Prints the configuration when asked; returns whether the command should
/// stop there.
fn echo(common: &Common, cfg: &ExperimentConfig) -> Result<bool> {
    cfg.validate()?;
    if common.print_config {
        print!("{}", cfg.to_toml());
    }
    Ok(common.print_config)
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    match value {
        Some(v) => Ok(v),
        None => Err(prep_core::Error::Config(format!("missing --{flag}")).into()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| prep_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn load_corpus(cfg: &ExperimentConfig, data: &Path) -> Result<Corpus> {
    let cascades = ingest_cascades(data)?;
    eprintln!("loaded {} cascades from {}", cascades.len(), data.display());
    Ok(Corpus::new(cascades, cfg.data.fractions())?)
}

fn append_results(path: &Path, csv: &str) -> Result<()> {
    let exists = path.exists() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let body = if exists {
        csv.split_once('\n').map_or("", |(_, rest)| rest)
    } else {
        csv
    };
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            common,
            n,
            seed,
            branching_alpha,
            out,
            stats,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = n {
                cfg.synthetic.n_cascades = n;
            }
            if let Some(s) = seed {
                cfg.synthetic.seed = s;
            }
            if let Some(a) = branching_alpha {
                cfg.synthetic.branching_alpha = a;
            }
            if echo(&common, &cfg)? {
                return Ok(());
            }
            let out = required(&out, "out")?;
            let generated = generate(&cfg.synthetic)?;
            write_cascades(out, &generated.cascades)?;
            let summary = summarize(&generated.cascades);
            println!(
                "seed {}: wrote {} cascades, {} events, {} truncated at the event cap",
                cfg.synthetic.seed,
                summary.count,
                summary.total_events,
                generated.truncated.iter().filter(|&&t| t).count()
            );
            if let Some(path) = stats {
                write(&path, &summary.to_csv())?;
            }
        }
        Command::Summarize { data, out } => {
            let cascades = ingest_cascades(&data)?;
            let csv = summarize(&cascades).to_csv();
            match out {
                Some(path) => write(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Pretrain {
            common,
            data,
            out,
            l_max,
            pretext,
            pairs_out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(l) = l_max {
                cfg.tei.l_max = l;
            }
            if echo(&common, &cfg)? {
                return Ok(());
            }
            let data = required(&data, "data")?;
            let out = required(&out, "out")?;
            let corpus = load_corpus(&cfg, data)?;
            let sampling = match pretext {
                PretextArg::Tei => PairSampling::Tei,
                PretextArg::UniformPairs => PairSampling::UniformPairs,
            };
            if let Some(path) = pairs_out {
                let set = build_with(sampling, &corpus.train(), &cfg.data.dynamics(), &cfg.tei, 1)?;
                write(&path, &set.to_tsv())?;
            }
            let (mut report, params) = pretrain_model(&cfg, &corpus, sampling)?;
            save_checkpoint(&params, out)?;
            report.checkpoint_path = Some(out.display().to_string());
            write(&sibling(out, ".loss.csv"), &report.curve_csv())?;
            write(&sibling(out, ".report.json"), &report.to_json())?;
            let s = cfg.tei.slice_count(&cfg.data.dynamics());
            let law = match sampling {
                PairSampling::Tei => elapse_law(s, cfg.tei.l_max),
                PairSampling::UniformPairs => uniform_pair_elapse_law(s),
            };
            println!(
                "best validation MSE {:.4} at step {} (lr {}), elapse variance {:.4}",
                report.best_val_loss,
                report.best_step,
                report.lr,
                law_variance(&law)
            );
        }
        Command::Finetune {
            common,
            data,
            checkpoint,
            random_init,
            task,
            label_fraction,
            freeze,
            seed,
            results,
            predictions,
            curve,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(f) = label_fraction {
                cfg.tasks.label_fraction = f;
            }
            if let Some(s) = seed {
                cfg.train.finetune.seed = s;
            }
            if echo(&common, &cfg)? {
                return Ok(());
            }
            if checkpoint.is_none() && !random_init {
                bail!(prep_core::Error::Config("--checkpoint or --random-init is required".into()));
            }
            let data = required(&data, "data")?;
            let task = *required(&task, "task")?;
            let pretrained = checkpoint.as_ref().map(load_checkpoint).transpose()?;
            let corpus = load_corpus(&cfg, data)?;
            let td = task_data(&cfg, &corpus, task, cfg.tasks.label_fraction)?;
            eprintln!(
                "task {task}: {} of {} training examples, {} valid, {} test",
                td.train.len(),
                td.train_available,
                td.valid.len(),
                td.test.len()
            );
            let init = match &pretrained {
                Some(p) => Init::Pretrained(p),
                None => Init::Random,
            };
            let outcome = finetune_task(&cfg, &td, init, freeze)?;
            let row = std::slice::from_ref(&outcome.test);
            print!("{}", results_table(row));
            println!("train size {}", outcome.report.train_examples);
            if let Some(path) = results {
                append_results(&path, &results_csv(row))?;
            }
            if let Some(path) = predictions {
                write(&path, &predictions_csv(&outcome.test_predictions))?;
            }
            if let Some(path) = curve {
                write(&path, &outcome.report.curve_csv())?;
            }
            if let Some(path) = out {
                save_checkpoint(&outcome.params, &path)?;
            }
        }
        Command::Ablate { common, data, out_dir } => {
            let cfg = load_config(&common)?;
            if echo(&common, &cfg)? {
                return Ok(());
            }
            let data = required(&data, "data")?;
            let corpus = load_corpus(&cfg, data)?;
            let rows = run_ablation(&cfg, &corpus)?;
            let table = ablation_table(&rows);
            print!("{table}");
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                write(&dir.join("ablation.csv"), &ablation_csv(&rows))?;
                write(&dir.join("ablation.txt"), &table)?;
            }
        }
        Command::Evaluate {
            common,
            data,
            checkpoint,
            task,
            regime,
            predictions,
        } => {
            let cfg = load_config(&common)?;
            if echo(&common, &cfg)? {
                return Ok(());
            }
            let params = load_checkpoint(&checkpoint)?;
            params.ensure_architecture(&cfg.model)?;
            let corpus = load_corpus(&cfg, &data)?;
            let td = task_data(&cfg, &corpus, task, 1.0)?;
            let (result, preds) = evaluate(
                &params,
                &td.spec,
                cfg.data.unit_seconds,
                &td.test,
                &regime,
                cfg.train.finetune.seed,
            )?;
            print!("{}", results_csv(&[result]));
            if let Some(path) = predictions {
                write(&path, &predictions_csv(&preds))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<prep_core::Error>()
                .map_or(2, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
