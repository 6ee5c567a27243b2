//! `memaudit`: generate phantom corpora, train the similarity encoder, audit
//! synthetic images for memorized training data and evaluate the results.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use memaudit_core::audit::{
    grid_search_thresholds, memorization_score, sensitivity_sweep, build_index, default_sigmas, ExactSearch,
    GridRange, PairLabel, Thresholds,
};
use memaudit_core::encoder::{
    load_checkpoint, save_checkpoint, train, Dataset, PairCache,
};
use memaudit_core::eval::{
    evaluate, export_histograms, runtime_benchmark, score_records, ImageStore, ScoreMethod,
};
use memaudit_core::image::load_image;
use memaudit_core::manifest::{read_jsonl, write_jsonl, Manifest, PairCacheRecord};
use memaudit_core::metrics::{fsim, registered_ssim, ssim, FsimConfig};
use memaudit_core::synth::{curate_test_set, generate_corpus, PairRecord};
use memaudit_core::Error;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "memaudit", version, about = "Memorization audits for image generators")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (JSON); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every component seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "MEMAUDIT_WORKERS")]
    workers: Option<usize>,
    /// Output directory; results go to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom corpus with ground-truth labels.
    GenData {
        #[arg(long)]
        n_real: Option<usize>,
        #[arg(long)]
        duplicate: Option<usize>,
        #[arg(long)]
        similar: Option<usize>,
        #[arg(long)]
        different: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        /// Also write an FSIM-curated test pair set.
        #[arg(long)]
        curate: bool,
    },
    /// SSIM of two images.
    Ssim {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Drop the luminance term.
        #[arg(long)]
        no_luminance: bool,
        /// Rigidly register `b` onto `a` first.
        #[arg(long)]
        registered: bool,
    },
    /// FSIM of two images.
    Fsim {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Train the encoder.
    Train {
        /// Training manifest(s).
        #[arg(long, required = true, num_args = 1..)]
        train: Vec<PathBuf>,
        /// Validation manifest(s).
        #[arg(long, required = true, num_args = 1..)]
        val: Vec<PathBuf>,
        /// Ground-truth cache (JSON lines); read when present, then updated.
        #[arg(long)]
        pair_cache: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        pairs_per_epoch: Option<usize>,
    },
    /// Embed every image of a manifest.
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        skip_bad: bool,
    },
    /// Best synthetic match and label for every real image.
    Audit {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        skip_bad: bool,
        #[arg(long, default_value_t = 256)]
        block_size: usize,
    },
    /// Score labeled pairs and report precision, recall, F1 and silhouette.
    Eval {
        /// Labeled pairs (JSON lines with real_id, synth_id, label).
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// embedding, ssim or registered-ssim.
        #[arg(long, default_value = "embedding")]
        method: String,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        /// Apply a random rigid transform to each synthetic image first.
        #[arg(long)]
        misalign: bool,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Macro F1 under Gaussian noise on the thresholds.
    SweepThresholds {
        /// Scored pairs written by `eval`.
        #[arg(long)]
        scored: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Thresholds maximizing macro F1 on scored pairs.
    GridSearch {
        #[arg(long)]
        scored: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
    },
    /// Time pairwise registered SSIM against embedding search.
    Bench {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        /// Registered-SSIM pairs actually timed; 0 times every pair.
        #[arg(long)]
        ssim_sample: Option<usize>,
    },
}

/// A failure reported as one JSON line on stderr.
struct Failure {
    kind: String,
    message: String,
    code: u8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Validation(_)
            | Error::Format { .. }
            | Error::ConfigMismatch(_)
            | Error::Io { .. }
            | Error::Json(_) => 2,
            _ => 1,
        };
        Failure {
            kind: e.kind().to_string(),
            message: e.to_string(),
            code,
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        kind: "usage".into(),
        message: msg.into(),
        code: 2,
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

struct Ctx {
    cfg: RunConfig,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out_dir(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| usage("this command needs --out <DIR>"))
    }

    fn prepare_out(&self) -> CliResult<()> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            write_text(&dir.join("config.json"), &self.cfg.to_json())?;
        }
        Ok(())
    }

    /// Writes `value` as `name` under `--out`, or prints it.
    fn emit<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
        match &self.out {
            Some(dir) => write_text(&dir.join(name), &text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn thresholds(cfg: &RunConfig, alpha: Option<f64>, beta: Option<f64>) -> CliResult<Thresholds> {
    let t = Thresholds {
        alpha: alpha.unwrap_or(cfg.thresholds.alpha),
        beta: beta.unwrap_or(cfg.thresholds.beta),
    };
    t.validate()?;
    Ok(t)
}

fn load_manifests(paths: &[PathBuf]) -> CliResult<Manifest> {
    let mut it = paths.iter();
    let first = it.next().ok_or_else(|| usage("at least one manifest is required"))?;
    let mut m = Manifest::load(first)?;
    for p in it {
        m = m.merged(&Manifest::load(p)?)?;
    }
    Ok(m)
}

fn scored_pairs(path: &Path) -> CliResult<(Vec<PairLabel>, Vec<f64>)> {
    let recs: Vec<PairRecord> = read_jsonl(path)?;
    let mut labels = Vec::with_capacity(recs.len());
    let mut scores = Vec::with_capacity(recs.len());
    for r in recs {
        let s = r.score.ok_or_else(|| {
            Failure::from(Error::Validation(format!(
                "pair ({}, {}) in {} has no score; run `eval` first",
                r.real_id,
                r.synth_id,
                path.display()
            )))
        })?;
        labels.push(r.label);
        scores.push(s);
    }
    Ok((labels, scores))
}

fn run(cli: Cli) -> CliResult<()> {
    let c = &cli.common;
    if let Some(n) = c.workers {
        if n == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot configure workers: {e}")))?;
    }
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.apply_seed(s);
    }

    match cli.command {
        Command::GenData {
            n_real,
            duplicate,
            similar,
            different,
            size,
            curate,
        } => {
            let cc = &mut cfg.corpus;
            cc.n_real = n_real.unwrap_or(cc.n_real);
            cc.counts.duplicate = duplicate.unwrap_or(cc.counts.duplicate);
            cc.counts.similar = similar.unwrap_or(cc.counts.similar);
            cc.counts.different = different.unwrap_or(cc.counts.different);
            cc.size = size.unwrap_or(cc.size);
            cfg.validate()?;
            let ctx = Ctx { cfg, out: c.out.clone() };
            let dir = ctx.out_dir()?.to_path_buf();
            ctx.prepare_out()?;
            let corpus = generate_corpus(&ctx.cfg.corpus)?;
            let files = corpus.write(&dir)?;
            let all = Manifest::load(&files.real_manifest)?.merged(&Manifest::load(&files.synth_manifest)?)?;
            let (tr, va) = all.split_by_family(ctx.cfg.val_fraction, ctx.cfg.corpus.seed)?;
            tr.save(dir.join("train.json"))?;
            va.save(dir.join("val.json"))?;
            let mut summary = serde_json::json!({
                "n_real": corpus.real.len(),
                "n_synthetic": corpus.synthetic.len(),
                "n_train_images": tr.len(),
                "n_val_images": va.len(),
            });
            if curate {
                let pairs = |v: &[memaudit_core::synth::GeneratedImage]| {
                    v.iter().map(|g| (g.entry.clone(), g.image.clone())).collect::<Vec<_>>()
                };
                let test = curate_test_set(&pairs(&corpus.real), &pairs(&corpus.synthetic), &corpus.labels, &ctx.cfg.curation)?;
                write_jsonl(dir.join("test_pairs.jsonl"), &test)?;
                summary["n_test_pairs"] = test.len().into();
            }
            write_text(&dir.join("summary.json"), &(serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n"))
        }

        Command::Ssim {
            a,
            b,
            no_luminance,
            registered,
        } => {
            if no_luminance {
                cfg.ssim.luminance_term_enabled = false;
            }
            cfg.ssim.validate()?;
            let (ia, ib) = (load_image(&a)?, load_image(&b)?);
            let score = if registered {
                registered_ssim(&ia, &ib, &cfg.ssim)?.0
            } else {
                ssim(&ia, &ib, &cfg.ssim)?
            };
            println!("{score:.6}");
            Ok(())
        }

        Command::Fsim { a, b } => {
            let score = fsim(&load_image(&a)?, &load_image(&b)?, &FsimConfig::default())?;
            println!("{score:.6}");
            Ok(())
        }

        Command::Train {
            train: train_paths,
            val,
            pair_cache,
            epochs,
            pairs_per_epoch,
        } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.pairs_per_epoch = pairs_per_epoch.unwrap_or(cfg.train.pairs_per_epoch);
            cfg.validate()?;
            let ctx = Ctx { cfg, out: c.out.clone() };
            let dir = ctx.out_dir()?.to_path_buf();
            ctx.prepare_out()?;
            let train_set = Dataset::load(&load_manifests(&train_paths)?)?;
            let val_set = Dataset::load(&load_manifests(&val)?)?;
            let mut cache = match &pair_cache {
                Some(p) if p.exists() => PairCache::from_records(read_jsonl::<PairCacheRecord>(p)?),
                _ => PairCache::default(),
            };
            let outcome = train(&train_set, &val_set, &ctx.cfg.train, &ctx.cfg.encoder, &mut cache);
            // keep expensive ground truth even when training fails
            if let Some(p) = &pair_cache {
                write_jsonl(p, &cache.records())?;
            }
            let outcome = outcome?;
            save_checkpoint(&outcome.checkpoint, dir.join("model.dsck"))?;
            let pairs: Vec<PairCacheRecord> = outcome.train_pairs.iter().map(|p| p.to_cache_record()).collect();
            write_jsonl(dir.join("train_pairs.jsonl"), &pairs)?;
            let val_pairs: Vec<PairCacheRecord> = outcome.val_pairs.iter().map(|p| p.to_cache_record()).collect();
            write_jsonl(dir.join("val_pairs.jsonl"), &val_pairs)?;
            let mean_losses: Vec<f64> = outcome
                .batch_losses
                .iter()
                .map(|l| l.iter().sum::<f64>() / l.len().max(1) as f64)
                .collect();
            let history = serde_json::json!({
                "initial_val_mae": outcome.initial_val_mae,
                "val_mae_history": outcome.checkpoint.val_mae_history,
                "best_epoch": outcome.checkpoint.epoch,
                "mean_train_loss": mean_losses,
            });
            ctx.emit("history.json", &history)
        }

        Command::Embed { manifest, ckpt, skip_bad } => {
            let ctx = Ctx { cfg, out: c.out.clone() };
            ctx.prepare_out()?;
            let enc = load_checkpoint(&ckpt)?.encoder;
            let (index, skipped) = build_index(&Manifest::load(&manifest)?, &enc, skip_bad)?;
            #[derive(Serialize)]
            struct Row<'a> {
                id: &'a str,
                embedding: &'a [f32],
            }
            let rows: Vec<Row> = (0..index.len())
                .map(|i| Row {
                    id: &index.ids()[i],
                    embedding: index.row(i),
                })
                .collect();
            match &ctx.out {
                Some(dir) => {
                    write_jsonl(dir.join("embeddings.jsonl"), &rows)?;
                    if !skipped.is_empty() {
                        ctx.emit("skipped.json", &skipped)?;
                    }
                }
                None => {
                    for r in &rows {
                        println!("{}", serde_json::to_string(r).map_err(Error::from)?);
                    }
                }
            }
            Ok(())
        }

        Command::Audit {
            real,
            synth,
            ckpt,
            alpha,
            beta,
            skip_bad,
            block_size,
        } => {
            cfg.thresholds = thresholds(&cfg, alpha, beta)?;
            let ctx = Ctx { cfg, out: c.out.clone() };
            ctx.prepare_out()?;
            let report = memorization_score(
                &Manifest::load(&real)?,
                &Manifest::load(&synth)?,
                &ctx.cfg.thresholds,
                &ckpt,
                &ExactSearch { block_size },
                skip_bad,
            )?;
            ctx.emit("report.json", &report)
        }

        Command::Eval {
            pairs,
            real,
            synth,
            ckpt,
            method,
            alpha,
            beta,
            misalign,
            bins,
        } => {
            let method: ScoreMethod = method.parse()?;
            cfg.thresholds = thresholds(&cfg, alpha, beta)?;
            let ctx = Ctx { cfg, out: c.out.clone() };
            ctx.prepare_out()?;
            let mut records: Vec<PairRecord> = read_jsonl(&pairs)?;
            let store = ImageStore::load(&[&Manifest::load(&real)?, &Manifest::load(&synth)?])?;
            let encoder = match &ckpt {
                Some(p) => Some(load_checkpoint(p)?.encoder),
                None => None,
            };
            let mis = misalign.then_some(&ctx.cfg.misalignment);
            let scores = score_records(&records, &store, method, encoder.as_ref(), &ctx.cfg.ssim, mis)?;
            let t = ctx.cfg.thresholds;
            for (r, &s) in records.iter_mut().zip(&scores) {
                r.score = Some(s);
                r.predicted = Some(t.label(s));
            }
            let labels: Vec<PairLabel> = records.iter().map(|r| r.label).collect();
            let metrics = evaluate(&labels, &scores, &t)?;
            let hist = export_histograms(&scores, &labels, bins, Some(t))?;
            if let Some(dir) = &ctx.out {
                write_jsonl(dir.join("scored_pairs.jsonl"), &records)?;
                write_text(&dir.join("histogram.csv"), &hist.to_csv())?;
                ctx.emit("histogram.json", &hist)?;
            }
            ctx.emit("metrics.json", &metrics)
        }

        Command::SweepThresholds {
            scored,
            alpha,
            beta,
            trials,
        } => {
            cfg.thresholds = thresholds(&cfg, alpha, beta)?;
            let ctx = Ctx { cfg, out: c.out.clone() };
            ctx.prepare_out()?;
            let (labels, scores) = scored_pairs(&scored)?;
            let grid = sensitivity_sweep(&labels, &scores, &ctx.cfg.thresholds, &default_sigmas(), trials, ctx.cfg.seed)?;
            if let Some(dir) = &ctx.out {
                write_text(&dir.join("f1_grid.csv"), &grid.to_csv())?;
            }
            ctx.emit("f1_grid.json", &grid)
        }

        Command::GridSearch { scored, step } => {
            let ctx = Ctx { cfg, out: c.out.clone() };
            ctx.prepare_out()?;
            let (labels, scores) = scored_pairs(&scored)?;
            let best = grid_search_thresholds(&labels, &scores, GridRange::default(), GridRange::default(), step)?;
            ctx.emit("thresholds.json", &best)
        }

        Command::Bench {
            real,
            synth,
            ckpt,
            runs,
            ssim_sample,
        } => {
            cfg.bench.runs = runs.unwrap_or(cfg.bench.runs);
            if let Some(k) = ssim_sample {
                cfg.bench.ssim_sample_pairs = (k > 0).then_some(k);
            }
            let ctx = Ctx { cfg, out: c.out.clone() };
            ctx.prepare_out()?;
            let enc = load_checkpoint(&ckpt)?.encoder;
            let load = |p: &Path| -> CliResult<Vec<_>> {
                let m = Manifest::load(p)?;
                Ok(Dataset::load(&m)?.images)
            };
            let res = runtime_benchmark(&load(&real)?, &load(&synth)?, &enc, &ctx.cfg.bench)?;
            ctx.emit("benchmark.json", &res)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            report(&usage(first));
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.common.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(f.code)
        }
    }
}

fn report(f: &Failure) {
    let line = serde_json::json!({ "error": { "kind": f.kind, "message": f.message.replace('\n', " ") } });
    eprintln!("{line}");
}
