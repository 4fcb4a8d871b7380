use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nuisance_core::metrics::{gtb_metric, gu_metric, identifiability_gtb, identifiability_gu};
use nuisance_core::splits::{gtb_split_with, gu_split_with, SplitPlan};
use nuisance_core::textmodel::FeaturizerConfig;
use nuisance_core::{
    balance_labels, filter_sequence, select_top_nuisances, synth_generate, train, write_jsonl,
    FilterSchedule, ProbeConfig, SynthSpec, TrainParams, TrainedClassifier,
};
use nuisance_cli::artifacts::{load_input, load_split, save_split};
use nuisance_cli::report::{self, MetricRow, SubsetRow};
use nuisance_cli::{run_experiment, ExperimentConfig, InputFormat};

#[derive(Parser)]
#[command(name = "nuisance", version, about = "Controlled-bias robustness experiments for text classifiers")]
struct Cli {
    /// Log verbosity (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a review dump, keep the most frequent nuisance values and balance labels per value.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "yelp")]
        format: FileFormat,
        #[arg(long, default_value_t = 50)]
        k_top: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip label balancing.
        #[arg(long)]
        no_balance: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic corpus with planted label and nuisance tokens.
    Synth {
        #[arg(long, default_value_t = 10)]
        sources: usize,
        #[arg(long, default_value_t = 2)]
        labels: usize,
        #[arg(long, default_value_t = 200)]
        per_cell: usize,
        #[arg(long, default_value_t = 0.5)]
        nuisance_signal: f64,
        #[arg(long, default_value_t = 0.5)]
        label_signal: f64,
        #[arg(long, default_value_t = 200)]
        vocab: usize,
        #[arg(long, default_value_t = 6)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build the nested subsets D_0 ⊇ D_1 ⊇ … by rejection filtering.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 1.0 / 3.0])]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        classifier: ClassifierArgs,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Split a dataset into train / test_same / test_shifted.
    Split {
        #[command(subcommand)]
        kind: SplitKind,
    },
    /// Train the label classifier.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        classifier: ClassifierArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a trained model on a split directory.
    Eval {
        #[arg(value_enum)]
        kind: MetricArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        split_dir: PathBuf,
        /// Write the CSV row here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Probe a trained model's representations for nuisance information.
    Probe {
        #[arg(value_enum)]
        kind: MetricArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        split_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        probe: ProbeArgs,
    },
    /// Recompute gtb_curves.csv and gu_summary.csv from the raw CSVs of a run.
    Report {
        #[arg(long, env = "NUISANCE_OUTPUT_DIR")]
        output_dir: PathBuf,
    },
    /// Run the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config field, e.g. `--set betas=[0.6,1.0]` or `--set datasets.0.path=x.json`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        master_seed: Option<u64>,
        #[arg(long, env = "NUISANCE_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SplitKind {
    /// Biased training set drawn from P_β(Y|S).
    Gtb {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Hold out `k` nuisance values entirely.
    Gu {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long)]
        output_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Jsonl,
    Yelp,
    Amazon,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Gtb,
    Gu,
}

#[derive(Args)]
struct ClassifierArgs {
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 0.25)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 2_000_000)]
    buckets: usize,
    #[arg(long)]
    no_bigrams: bool,
}

impl ClassifierArgs {
    fn params(&self) -> TrainParams {
        TrainParams {
            dim: self.dim,
            lr: self.lr,
            epochs: self.epochs,
            featurizer: FeaturizerConfig {
                bucket_count: self.buckets,
                use_bigrams: !self.no_bigrams,
                ..Default::default()
            },
        }
    }
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long, default_value_t = 100)]
    hidden1: usize,
    #[arg(long, default_value_t = 200)]
    hidden2: usize,
    #[arg(long, default_value_t = 10)]
    probe_epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    probe_lr: f64,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn file_format(f: FileFormat) -> InputFormat {
    match f {
        FileFormat::Jsonl => InputFormat::Jsonl,
        FileFormat::Yelp => InputFormat::Yelp,
        FileFormat::Amazon => InputFormat::Amazon,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { input, format, k_top, seed, no_balance, output } => {
            let d = load_input(file_format(format), &input)?;
            let loaded = d.len();
            let mut d = select_top_nuisances(&d, k_top)?;
            if !no_balance {
                d = balance_labels(&d, seed)?;
            }
            write_jsonl(&d, &output)?;
            println!("{loaded} reviews read, {} kept over {} nuisance values", d.len(), d.n_nuisances());
        }
        Command::Synth {
            sources,
            labels,
            per_cell,
            nuisance_signal,
            label_signal,
            vocab,
            length,
            seed,
            output,
        } => {
            let spec = SynthSpec {
                n_sources: sources,
                n_labels: labels,
                per_cell,
                nuisance_signal,
                label_signal,
                background_vocab: vocab,
                background_len: length,
                seed,
            };
            let d = synth_generate(&spec)?;
            write_jsonl(&d, &output)?;
            println!("{} samples written", d.len());
        }
        Command::Filter { input, alphas, folds, seed, classifier, output_dir } => {
            let d = load_input(InputFormat::Jsonl, &input)?;
            let sched = FilterSchedule { alphas, n_folds: folds, seed };
            let seq = filter_sequence(&d, &sched, &classifier.params())?;
            fs::create_dir_all(&output_dir)?;
            let mut rows = Vec::new();
            for (i, (subset, mi)) in seq.subsets.iter().zip(&seq.mi_estimates).enumerate() {
                write_jsonl(subset, output_dir.join(format!("D{i}.jsonl")))?;
                seq.contributions[i].save_csv(output_dir.join(format!("contributions_D{i}.csv")))?;
                let log = i.checked_sub(1).map(|j| &seq.removal_logs[j]);
                rows.push(SubsetRow {
                    dataset: input.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
                    iteration: i,
                    n_samples: subset.len(),
                    n_sources: subset.present_nuisances().len(),
                    alpha: log.map(|l| l.alpha),
                    threshold: log.map(|l| l.threshold),
                    removed: log.map(|l| l.total_removed()),
                    mi: mi.value,
                    entropy_term: mi.entropy_term,
                    cross_entropy_term: mi.cross_entropy_term,
                });
                println!("D{i}: {} samples, MI {:.4} nats", subset.len(), mi.value);
            }
            report::write_rows(&output_dir.join(report::SUBSETS_CSV), &rows)?;
        }
        Command::Split { kind } => match kind {
            SplitKind::Gtb { input, beta, seed, test_fraction, output_dir } => {
                let d = load_input(InputFormat::Jsonl, &input)?;
                let sr = gtb_split_with(&d, beta, test_fraction, seed)?;
                save_split(&output_dir, &sr, &d)?;
                print_split_sizes(&sr);
            }
            SplitKind::Gu { input, k, seed, test_fraction, output_dir } => {
                let d = load_input(InputFormat::Jsonl, &input)?;
                let sr = gu_split_with(&d, k, test_fraction, seed)?;
                save_split(&output_dir, &sr, &d)?;
                print_split_sizes(&sr);
            }
        },
        Command::Train { input, seed, classifier, output } => {
            let d = load_input(InputFormat::Jsonl, &input)?;
            let model = train(&d, &classifier.params(), seed)?;
            model.save(&output)?;
            println!("training accuracy {:.4}", model.accuracy(&d)?);
        }
        Command::Eval { kind, model, split_dir, output } => {
            let model = TrainedClassifier::load(&model)?;
            let sr = load_split(&split_dir)?;
            let (report, key) = match (kind, &sr.plan) {
                (MetricArg::Gtb, SplitPlan::Gtb(p)) => (gtb_metric(&model, &sr)?, format!("{}", p.beta)),
                (MetricArg::Gu, SplitPlan::Gu(p)) => (gu_metric(&model, &sr)?, p.seed.to_string()),
                _ => bail!("split in {} is not a {} split", split_dir.display(), kind_name(kind)),
            };
            let name = split_dir.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let row = MetricRow::new(&name, 0, key, &report);
            match output {
                Some(path) => report::write_rows(&path, &[row])?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    w.serialize(row)?;
                    w.flush()?;
                }
            }
        }
        Command::Probe { kind, model, split_dir, seed, probe } => {
            let model = TrainedClassifier::load(&model)?;
            let sr = load_split(&split_dir)?;
            let mut cfg = ProbeConfig {
                hidden1: probe.hidden1,
                hidden2: probe.hidden2,
                epochs: probe.probe_epochs,
                batch_size: probe.batch_size,
                seed,
                ..Default::default()
            };
            cfg.adam.step_size = probe.probe_lr;
            let r = match kind {
                MetricArg::Gtb => identifiability_gtb(&model, &sr, &cfg),
                MetricArg::Gu => identifiability_gu(&model, &sr, &cfg),
            }
            .with_context(|| format!("{} identifiability", kind_name(kind)))?;
            println!(
                "identifiability {:.4} (majority baseline {:.4}, {} train / {} test)",
                r.accuracy, r.majority_baseline, r.n_train, r.n_test
            );
        }
        Command::Report { output_dir } => {
            report::write_summaries(&output_dir)?;
            println!("wrote {} and {}", report::GTB_CURVES_CSV, report::GU_SUMMARY_CSV);
        }
        Command::Run { config, overrides, master_seed, output_dir } => {
            let mut cfg = match &config {
                Some(path) => ExperimentConfig::load(path)?,
                None => ExperimentConfig::default(),
            };
            if let Some(base) = config.as_deref().and_then(|p| p.parent()) {
                for d in &mut cfg.datasets {
                    if let Some(p) = d.path.as_mut().filter(|p| p.is_relative()) {
                        *p = base.join(&*p);
                    }
                }
            }
            for o in &overrides {
                cfg.apply_override(o)?;
            }
            if let Some(seed) = master_seed {
                cfg.master_seed = seed;
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let outcome = run_experiment(&cfg)?;
            println!("results in {}", outcome.output_dir.display());
        }
    }
    Ok(())
}

fn kind_name(kind: MetricArg) -> &'static str {
    match kind {
        MetricArg::Gtb => "gtb",
        MetricArg::Gu => "gu",
    }
}

fn print_split_sizes(sr: &nuisance_core::SplitResult) {
    println!(
        "train {}, test_same {}, test_shifted {}",
        sr.train.len(),
        sr.test_same.len(),
        sr.test_shifted.len()
    );
}
