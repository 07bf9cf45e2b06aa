//! `loev`: corpus generation, pretraining, probing, retrieval, sweeps and
//! report assembly.
//!
//! Every command resolves a [`RunConfig`] (TOML file plus flags), writes it
//! to `<out>/<run_name>/config.toml` and puts its outputs beside it. On
//! failure the process exits nonzero and prints one JSON line to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use loev_core::checkpoint::Checkpoint;
use loev_core::config::CONFIG_FILE;
use loev_core::corpus::{generate_corpus, read_corpus, write_corpus};
use loev_core::eval::report::{collate, probe_rows, retrieval_rows, space_slug, sweep_rows, write_csv};
use loev_core::eval::{cosine_sweep, embed_corpus_spaces, parse_grid, retrieval_scores, split_tracks, train_probe, SweepKind, Targets, Task};
use loev_core::trainer::{self, loss_trend, FINAL_CHECKPOINT};
use loev_core::{AudioClip, MelExtractor, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "loev", version, about = "Train and evaluate augmentation-aware contrastive audio encoders")]
struct Cli {
    /// Run configuration (TOML). Missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the training and probe seeds.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides `output_dir`; outputs go to `<out>/<run_name>`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Caps the number of worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Read the corpus from a directory written by `loev corpus` instead of
    /// regenerating it from the config.
    #[arg(long, global = true, value_name = "DIR")]
    corpus: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the resolved configuration as TOML.
    Config,
    /// Write the synthetic corpus (WAVs plus manifest.jsonl) to `<run>/corpus`.
    Corpus,
    /// Pretrain an encoder; writes checkpoint.bin and train_log.jsonl.
    Pretrain {
        /// Overrides `train.steps`.
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from this checkpoint up to the configured step count.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Train a shallow probe on frozen embeddings.
    Probe {
        /// pitch_class, key, tempo or tags.
        #[arg(long)]
        task: String,
        /// Comma-separated spaces, e.g. `V,Z^i,Z^p`.
        #[arg(long)]
        space: String,
        /// Defaults to `<run>/checkpoint.bin`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Cosine k-NN retrieval on the test split.
    Retrieve {
        #[arg(long)]
        space: String,
        /// Comma-separated neighbour counts; defaults to `eval.retrieval_k`.
        #[arg(long)]
        k: Option<String>,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Cosine distance between clean and transformed embeddings over a grid.
    Sweep {
        /// pitch_shift or time_stretch.
        #[arg(long)]
        kind: String,
        /// Inclusive `lo:hi:step`; must contain the identity (0 or 1).
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        /// Comma-separated spaces; defaults to every space of the model.
        #[arg(long)]
        space: Option<String>,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Collate every CSV under a run directory into report.json.
    Report {
        /// Defaults to `<out>/<run_name>`.
        #[arg(long, value_name = "DIR")]
        run_dir: Option<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
        cfg.eval.probe.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Command::Pretrain { steps: Some(s), .. } = cli.command {
        cfg.train.steps = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    Ok(dir)
}

fn load_corpus(cli: &Cli, cfg: &RunConfig) -> Result<Vec<AudioClip>> {
    Ok(match &cli.corpus {
        Some(dir) => read_corpus(dir)?,
        None => generate_corpus(&cfg.corpus)?,
    })
}

fn load_checkpoint(path: &Option<PathBuf>, run_dir: &Path) -> Result<Checkpoint> {
    let p = path.clone().unwrap_or_else(|| run_dir.join(FINAL_CHECKPOINT));
    Ok(Checkpoint::load(&p)?)
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(loev_core::Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if let Command::Report { run_dir } = &cli.command {
        let dir = match run_dir {
            Some(d) => d.clone(),
            None => resolve_config(cli)?.run_dir(),
        };
        let report = collate(&dir)?;
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(dir.join("report.json"), &text)?;
        println!("{text}");
        return Ok(());
    }
    let cfg = resolve_config(cli)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let dir = prepare_run_dir(&cfg)?;
    let mel = MelExtractor::new(&cfg.features)?;

    match &cli.command {
        Command::Config | Command::Report { .. } => unreachable!(),
        Command::Corpus => {
            let clips = generate_corpus(&cfg.corpus)?;
            let out = dir.join("corpus");
            write_corpus(&out, &clips)?;
            println!("{}", json!({"corpus": out, "clips": clips.len()}));
        }
        Command::Pretrain { resume, .. } => {
            let tracks = load_corpus(cli, &cfg)?;
            let pcfg = cfg.pretrain();
            let outcome = match resume {
                Some(p) => trainer::resume(&tracks, &pcfg, &Checkpoint::load(p)?, Some(&dir))?,
                None => trainer::pretrain(&tracks, &pcfg, Some(&dir))?,
            };
            let (first, last) = loss_trend(&outcome.log, 0.1);
            println!(
                "{}",
                json!({
                    "checkpoint": outcome.checkpoint_path,
                    "steps": outcome.state.step,
                    "loss_first_10pct": first,
                    "loss_last_10pct": last,
                })
            );
        }
        Command::Probe { task, space, checkpoint } => {
            let task = Task::parse(task)?;
            let ckpt = load_checkpoint(checkpoint, &dir)?;
            let model = ckpt.to_model()?;
            let spaces = split_list(space);
            for s in &spaces {
                model.config.resolve_space(s)?;
            }
            let tracks = load_corpus(cli, &cfg)?;
            let probe = &cfg.eval.probe;
            let copies = if probe.time_stretch { probe.stretch_copies } else { 0 };
            let stores = embed_corpus_spaces(&model, &mel, &tracks, &spaces, copies, cfg.eval.stretch_seed)?;
            for store in &stores {
                let result = train_probe(store, &Targets::from_labels(task, &store.labels), probe)?;
                let path = dir.join(format!("probe_{}_{}.csv", task.name(), space_slug(&store.space)));
                write_csv(&path, &probe_rows(task, &result))?;
                println!("{}", json!({"task": task.name(), "space": store.space, "metrics": result.metrics, "csv": path}));
            }
        }
        Command::Retrieve { space, k, checkpoint } => {
            let ks: Vec<usize> = match k {
                Some(list) => split_list(list)
                    .iter()
                    .map(|v| v.parse::<usize>().with_context(|| format!("invalid k `{v}`")))
                    .collect::<Result<_>>()?,
                None => cfg.eval.retrieval_k.clone(),
            };
            let ckpt = load_checkpoint(checkpoint, &dir)?;
            let model = ckpt.to_model()?;
            let spaces = split_list(space);
            for s in &spaces {
                model.config.resolve_space(s)?;
            }
            let tracks = load_corpus(cli, &cfg)?;
            let test = split_tracks(tracks.len(), cfg.eval.split_seed)?.test;
            let test_tracks: Vec<AudioClip> = test.iter().map(|&i| tracks[i].clone()).collect();
            for store in embed_corpus_spaces(&model, &mel, &test_tracks, &spaces, 0, 0)? {
                let scores = retrieval_scores(&store, &ks)?;
                let path = dir.join(format!("retrieval_{}.csv", space_slug(&store.space)));
                write_csv(&path, &retrieval_rows(&scores))?;
                println!("{}", json!({"space": store.space, "scores": scores, "csv": path}));
            }
        }
        Command::Sweep { kind, grid, space, checkpoint } => {
            let kind: SweepKind = kind.parse()?;
            let grid = parse_grid(grid)?;
            let ckpt = load_checkpoint(checkpoint, &dir)?;
            let model = ckpt.to_model()?;
            let all: Vec<String> = model.config.spaces().into_iter().map(|s| model.config.space_name(s)).collect();
            let names: Vec<&str> = match space {
                Some(s) => split_list(s),
                None => all.iter().map(String::as_str).collect(),
            };
            let tracks = load_corpus(cli, &cfg)?;
            let mut test = split_tracks(tracks.len(), cfg.eval.split_seed)?.test;
            if cfg.eval.sweep_tracks > 0 {
                test.truncate(cfg.eval.sweep_tracks);
            }
            let subset: Vec<AudioClip> = test.iter().map(|&i| tracks[i].clone()).collect();
            let result = cosine_sweep(&model, &mel, &subset, kind, &grid, &names)?;
            let path = dir.join(format!("sweep_{}.csv", kind.name()));
            write_csv(&path, &sweep_rows(&result))?;
            println!("{}", json!({"kind": kind.name(), "spaces": result.spaces, "csv": path}));
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: String) -> String {
    json!({"error": kind, "message": message}).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<loev_core::Error>().map(|c| c.kind()).unwrap_or("runtime");
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("{}", error_line(kind, message));
            ExitCode::FAILURE
        }
    }
}
