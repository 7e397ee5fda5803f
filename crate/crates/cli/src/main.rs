use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vivqa_core::data::{corpus_stats, make_synthetic, save_jsonl};
use vivqa_core::harness::{
    ablate_extractors, ablate_freeze, ablate_fusion, cross_validate, evaluate, folds_table, metrics_table, run,
    significance, sweep, write_eval, write_json, write_run, Checkpoint, Corpus, Preset, RunConfig, SeedComparison,
    SweepAxis, Table,
};
use vivqa_core::metrics::{evaluate as score, read_predictions, TokenOverlap};
use vivqa_core::{Error, Result};

#[derive(Parser)]
#[command(name = "vivqa", version, about = "Train, evaluate and ablate the dual-extractor VQA model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a corpus and write report, predictions and checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fusion operator, visual extractor or freezing ablation.
    Ablate {
        kind: AblationKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Seeds per arm (extractor ablation only).
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// One run per value of encoder heads or layers.
    Sweep {
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Welch t-test between two configs over a seed list.
    Significance {
        #[arg(long = "config-a")]
        config_a: PathBuf,
        #[arg(long = "config-b")]
        config_b: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus statistics: sample count, longest and average lengths.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Write a synthetic corpus whose answers need both visual cues.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long = "global")]
        n_global: usize,
        #[arg(long = "local")]
        n_local: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy, precision, recall and F1 of a predictions file.
    Metrics {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum, default_value_t = Overlap::Set)]
        overlap: Overlap,
    },
    /// k-fold cross-validation over the training split.
    Cv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationKind {
    Fusion,
    Extractors,
    Freeze,
}

#[derive(Clone, Copy, ValueEnum)]
enum Overlap {
    Set,
    Multiset,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// An unreadable input file is a data problem, not a runtime one.
fn io_as_data(e: Error) -> Error {
    match e {
        Error::Io(m) => Error::data(m),
        other => other,
    }
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    Corpus::from_config(cfg).map_err(io_as_data)
}

fn with_data(mut cfg: RunConfig, data: Option<PathBuf>) -> RunConfig {
    if data.is_some() {
        cfg.data = data;
    }
    cfg
}

fn print(t: &Table) {
    print!("{}", t.to_markdown());
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            seed,
            preset,
            data,
            out,
        } => {
            let mut cfg = with_data(load_config(config.as_deref())?, data);
            if let Some(p) = preset {
                cfg.preset = Preset::parse(&p)?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.out = out;
            }
            let out = cfg
                .out
                .clone()
                .ok_or_else(|| Error::config("no output directory (--out)"))?;
            cfg.validate()?;
            let corpus = load_corpus(&cfg)?;
            let outcome = run(&cfg, &corpus)?;
            write_run(&out, &outcome)?;
            let r = &outcome.report;
            let mut rows = vec![("train", &r.train)];
            if let Some(t) = &r.test {
                rows.push(("test", t));
            }
            print(&metrics_table(&rows));
            println!("training time: {:.2} s", r.training_seconds);
            Ok(())
        }
        Command::Eval { ckpt, data, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let model = ck.restore()?;
            let corpus = Corpus::load(&data).map_err(io_as_data)?;
            let (metrics, records) = evaluate(&model, &corpus, &ck.config)?;
            write_eval(&out, &metrics, &records)?;
            print(&metrics_table(&[("eval", &metrics)]));
            Ok(())
        }
        Command::Ablate {
            kind,
            config,
            data,
            out,
            seeds,
        } => {
            let cfg = with_data(RunConfig::load(&config)?, data);
            cfg.validate()?;
            let corpus = load_corpus(&cfg)?;
            match kind {
                AblationKind::Fusion => {
                    let a = ablate_fusion(&cfg, &corpus)?;
                    a.write(&out)?;
                    write_json(&out.join("fusion.json"), &a)?;
                    print(&a.table());
                }
                AblationKind::Extractors => {
                    let a = ablate_extractors(&cfg, &corpus, seeds)?;
                    a.write(&out)?;
                    write_json(&out.join("extractors.json"), &a)?;
                    print(&a.table());
                    print(&a.significance_table());
                }
                AblationKind::Freeze => {
                    let a = ablate_freeze(&cfg, &corpus)?;
                    a.write(&out)?;
                    write_json(&out.join("freeze.json"), &a)?;
                    print(&a.timing_table());
                }
            }
            Ok(())
        }
        Command::Sweep {
            axis,
            values,
            config,
            data,
            out,
        } => {
            let axis = SweepAxis::parse(&axis)?;
            let cfg = with_data(load_config(config.as_deref())?, data);
            for &v in &values {
                axis.apply(&cfg, v).validate()?;
            }
            let corpus = load_corpus(&cfg)?;
            let s = sweep(&cfg, &corpus, axis, &values)?;
            if let Some(out) = out {
                s.write(&out)?;
            }
            print(&s.table());
            Ok(())
        }
        Command::Significance {
            config_a,
            config_b,
            seeds,
            out,
        } => {
            let a = RunConfig::load(&config_a)?;
            let b = RunConfig::load(&config_b)?;
            a.validate()?;
            b.validate()?;
            if seeds < 2 {
                return Err(Error::config(format!("{seeds} seeds; a t-test needs at least 2")));
            }
            let cmp = significance(&a, &load_corpus(&a)?, &b, &load_corpus(&b)?, seeds)?;
            let per_seed = cmp.per_seed_table();
            if let Some(out) = &out {
                per_seed.write(out, "significance_per_seed", "Accuracy per seed")?;
            }
            print(&per_seed);
            let test = cmp.test()?;
            let t = SeedComparison::test_table(&test);
            if let Some(out) = &out {
                t.write(out, "significance", "Welch t-test")?;
            }
            print(&t);
            Ok(())
        }
        Command::Stats { data } => {
            let corpus = Corpus::load(&data).map_err(io_as_data)?;
            let s = corpus_stats(&corpus.examples)?;
            let mut t = Table::new(&["Statistic", "Value"]);
            t.push(vec!["No. Samples".into(), s.count.to_string()]);
            t.push(vec!["Longest question".into(), s.longest_question.to_string()]);
            t.push(vec!["Longest answer".into(), s.longest_answer.to_string()]);
            t.push(vec!["Average question length".into(), s.average_question()]);
            t.push(vec!["Average answer length".into(), s.average_answer()]);
            print(&t);
            Ok(())
        }
        Command::Synth {
            n,
            n_global,
            n_local,
            seed,
            out,
        } => {
            let examples = make_synthetic(n, n_global, n_local, seed).map_err(|e| match e {
                Error::Argument(m) => Error::config(m),
                other => other,
            })?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("corpus.jsonl");
            save_jsonl(&path, &examples)?;
            println!("wrote {} examples to {}", examples.len(), path.display());
            Ok(())
        }
        Command::Metrics { predictions, overlap } => {
            let mode = match overlap {
                Overlap::Set => TokenOverlap::Set,
                Overlap::Multiset => TokenOverlap::Multiset,
            };
            let records = read_predictions(&predictions).map_err(io_as_data)?;
            let m = score(&records, mode)?;
            println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
            Ok(())
        }
        Command::Cv {
            config,
            data,
            folds,
            out,
        } => {
            let cfg = with_data(RunConfig::load(&config)?, data);
            cfg.validate()?;
            let corpus = load_corpus(&cfg)?;
            let results = cross_validate(&cfg, &corpus, folds)?;
            let t = folds_table(&results);
            if let Some(out) = out {
                t.write(&out, "cv", "Cross-validation")?;
            }
            print(&t);
            Ok(())
        }
    }
}
