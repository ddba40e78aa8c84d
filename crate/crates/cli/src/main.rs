use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vidtext::eval::{evaluate, evaluate_directional};
use vidtext::formats::{save_embeddings, write_file};
use vidtext::pipeline::{self, encode_split, rerank_both, Checkpoint, DatasetBundle, RunConfig};
use vidtext::retrieval::{top_k, EmbeddingMatrix, ScoreMatrix};
use vidtext::Error;

#[derive(Parser)]
#[command(name = "vidtext", version, about = "Temporal video-text retrieval on frame features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write a synthetic dataset to --dataset-dir.
    Generate,
    /// Train the dual encoder and reranker, writing --checkpoint.
    Train,
    /// Write eval-split clip and caption embeddings to the --out directory.
    Encode,
    /// Write first-stage scores and Top-K lists to the --out directory.
    Retrieve,
    /// Write reranked scores and Top-K lists to the --out directory.
    Rerank,
    /// Evaluate on the eval split and print or write the report.
    Eval,
    /// Run the four-way ablation and print or write the table.
    Ablate,
}

#[derive(clap::Args)]
struct Opts {
    /// Config file of dotted `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    dataset_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Candidates per query for reranking.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Weight of the first-stage score in the fused score.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    no_rerank: bool,
    #[arg(long, global = true)]
    no_temporal: bool,
    #[arg(long, global = true, value_enum, default_value_t = ReportFormat::Text)]
    report_format: ReportFormat,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum ReportFormat {
    Text,
    Records,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => 2,
        Error::Io { .. } => 3,
        Error::BadMagic { .. } | Error::UnsupportedVersion { .. } | Error::Truncated { .. } | Error::Malformed { .. } => 4,
        Error::Dimension { .. } | Error::Capacity { .. } | Error::DegenerateMask(_) => 5,
        Error::TrainingData(_) | Error::NonFiniteLoss { .. } => 6,
        _ => 7,
    }
}

fn load_config(opts: &Opts) -> vidtext::Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(d) = &opts.dataset_dir {
        cfg.paths.dataset_dir = Some(d.clone());
    }
    if let Some(c) = &opts.checkpoint {
        cfg.paths.checkpoint = Some(c.clone());
    }
    if let Some(o) = &opts.out {
        cfg.paths.out = Some(o.clone());
    }
    if let Some(k) = opts.k {
        cfg.rerank.k = k;
    }
    if let Some(a) = opts.alpha {
        cfg.rerank.alpha = a;
    }
    if opts.no_rerank {
        cfg.rerank.enabled = false;
    }
    if opts.no_temporal {
        cfg.model.temporal = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> vidtext::Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("--{flag} (or paths.{}) is required", flag.replace('-', "_"))))
}

fn emit(out: Option<&Path>, text: &str) -> vidtext::Result<()> {
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn topk_tsv(s: &ScoreMatrix<f32>, queries: &[String], items: &[String], k: usize) -> String {
    let mut out = String::from("query\trank\titem\tscore\n");
    for (i, list) in top_k(s, k).lists.iter().enumerate() {
        for (r, &j) in list.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{:?}", queries[i], r + 1, items[j], s.get(i, j)).unwrap();
        }
    }
    out
}

fn write_scores(dir: &Path, name: &str, s: &ScoreMatrix<f32>, queries: &[String], items: &[String], k: usize) -> vidtext::Result<()> {
    save_embeddings(&dir.join(format!("{name}.bin")), &EmbeddingMatrix::new(queries.to_vec(), s.clone())?)?;
    write_file(&dir.join(format!("{name}_topk.tsv")), topk_tsv(s, queries, items, k).as_bytes())
}

fn run(cmd: Command, opts: &Opts) -> vidtext::Result<()> {
    let cfg = load_config(opts)?;
    let paths = &cfg.paths;
    match cmd {
        Command::Generate => {
            let dir = required(&paths.dataset_dir, "dataset-dir")?;
            let (data, _) = pipeline::generate_synthetic::<f32>(&cfg.data, cfg.seed)?;
            data.save(dir)?;
            eprintln!(
                "wrote {} clips / {} captions ({} train, {} eval) to {}",
                data.clips.len(),
                data.captions.rows(),
                data.n_train(),
                data.clips.len() - data.n_train(),
                dir.display()
            );
        }
        Command::Train => {
            let data = DatasetBundle::<f32>::load(required(&paths.dataset_dir, "dataset-dir")?)?;
            let ckpt_path = required(&paths.checkpoint, "checkpoint")?;
            let out = pipeline::run_train(&cfg, &data)?;
            out.checkpoint.save(ckpt_path)?;
            if let Some(log) = &paths.out {
                let mut text = String::from("phase\tstep\tloss\n");
                for (i, l) in out.losses.iter().enumerate() {
                    writeln!(text, "encoder\t{i}\t{l:?}").unwrap();
                }
                for (i, l) in out.itm_losses.iter().enumerate() {
                    writeln!(text, "reranker\t{i}\t{l:?}").unwrap();
                }
                write_file(log, text.as_bytes())?;
            }
            eprintln!("wrote checkpoint {}", ckpt_path.display());
        }
        Command::Encode | Command::Retrieve | Command::Rerank | Command::Eval => {
            let data = DatasetBundle::<f32>::load(required(&paths.dataset_dir, "dataset-dir")?)?;
            let ckpt = Checkpoint::<f32>::load(required(&paths.checkpoint, "checkpoint")?)?;
            pipeline::run::check_compatible(&ckpt, &data)?;
            let split = data.eval_split();
            let enc = encode_split(&ckpt.encoder, &split)?;
            match cmd {
                Command::Encode => {
                    let dir = required(&paths.out, "out")?;
                    save_embeddings(&dir.join("videos.bin"), &enc.videos)?;
                    save_embeddings(&dir.join("texts.bin"), &enc.texts)?;
                }
                Command::Retrieve => {
                    let dir = required(&paths.out, "out")?;
                    let s = enc.scores()?;
                    let k = cfg.rerank.k;
                    write_scores(dir, "scores_t2v", &s, split.caption_ids, split.clip_ids, k)?;
                    write_scores(dir, "scores_v2t", &s.transpose(), split.clip_ids, split.caption_ids, k)?;
                }
                Command::Rerank => {
                    let dir = required(&paths.out, "out")?;
                    let cross = ckpt
                        .cross
                        .as_ref()
                        .ok_or_else(|| Error::Config("checkpoint has no reranker".into()))?;
                    let (t2v, v2t) = rerank_both(&enc.scores()?, &enc, cross, cfg.rerank.k, cfg.rerank.alpha)?;
                    let k = cfg.rerank.k;
                    write_scores(dir, "reranked_t2v", &t2v, split.caption_ids, split.clip_ids, k)?;
                    write_scores(dir, "reranked_v2t", &v2t, split.clip_ids, split.caption_ids, k)?;
                }
                _ => {
                    let s = enc.scores()?;
                    let report = match (&ckpt.cross, cfg.rerank.enabled) {
                        (_, false) => evaluate(&s, &split.relevance)?,
                        (Some(cross), true) => {
                            let (t2v, v2t) = rerank_both(&s, &enc, cross, cfg.rerank.k, cfg.rerank.alpha)?;
                            evaluate_directional(&t2v, &v2t, &split.relevance)?
                        }
                        (None, true) => {
                            return Err(Error::Config("checkpoint has no reranker; pass --no-rerank".into()))
                        }
                    };
                    let text = match opts.report_format {
                        ReportFormat::Text => report.to_text(),
                        ReportFormat::Records => report.to_records(""),
                    };
                    emit(paths.out.as_deref(), &text)?;
                }
            }
        }
        Command::Ablate => {
            let data = DatasetBundle::<f32>::load(required(&paths.dataset_dir, "dataset-dir")?)?;
            let table = pipeline::ablation_run(&cfg, &data)?;
            let text = match opts.report_format {
                ReportFormat::Text => table.to_text(),
                ReportFormat::Records => table.to_records(),
            };
            emit(paths.out.as_deref(), &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command, &cli.opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
