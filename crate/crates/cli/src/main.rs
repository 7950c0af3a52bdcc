//! `pfos` command-line harness.
//!
//! Config precedence for `train` and `ablate`: built-in desk preset, then the
//! `--config` file, then each `--set key=value` flag in order.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pfos_core::ablation::{parse_grid, run_grid, table_csv, table_text};
use pfos_core::data::{
    generate_split, grammar_vocabulary, read_split, read_vocabulary, write_split, write_vocabulary, CategoryMix,
    GenerationSpec, Split,
};
use pfos_core::heatmap::export_heatmaps;
use pfos_core::train::{evaluate, predictions_csv, train, BEST_CHECKPOINT, METRICS_FILE};
use pfos_core::{ModelConfig, Pfos};

#[derive(Parser)]
#[command(name = "pfos", about = "Synthetic visual grounding: data, training, evaluation, attention maps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate train/val/test splits of synthetic scenes with queries.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Training samples.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Category weights, e.g. `absolute:1,attribute:1,relation:1,compare:1`.
        #[arg(long, default_value = "absolute:1,attribute:1,relation:1,compare:1")]
        categories: String,
        /// Validation samples; defaults to n/8.
        #[arg(long)]
        n_val: Option<usize>,
        /// Test samples; defaults to n/8.
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train on DATA/train, select the best epoch on DATA/val.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config override `key=value`, repeatable.
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint at IoU > 0.5.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Plain-text report; `<report>.csv` and `<report>.predictions.csv` are written next to it.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Reject the checkpoint unless it matches this config's architecture.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export attention maps for one sample.
    Heatmap {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Train and score every entry of an ablation grid on the same data.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Run directories and `ablation.txt` / `ablation.csv`.
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
}

fn load_config(file: Option<&Path>, overrides: &[String]) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::desk();
    if let Some(f) = file {
        let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", f.display()))?;
    }
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else { bail!("--set expects key=value, got `{o}`") };
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { out, n, seed, categories, n_val, n_test } => {
            let spec = GenerationSpec { mix: CategoryMix::parse(&categories)?, ..GenerationSpec::desk(seed) };
            let vocab = grammar_vocabulary();
            write_vocabulary(&out, &vocab)?;
            for (split, count) in [(Split::Train, n), (Split::Val, n_val.unwrap_or(n / 8)), (Split::Test, n_test.unwrap_or(n / 8))] {
                let samples = generate_split(split, count, &spec, &vocab)?;
                write_split(&out, split, &samples)?;
                println!("{}: {} samples", split.as_str(), samples.len());
            }
        }
        Cmd::Train { config, data, out, overrides } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let vocab = read_vocabulary(&data)?;
            let tr = read_split(&data, Split::Train, &vocab)?;
            let va = read_split(&data, Split::Val, &vocab)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("config.txt"), cfg.to_text())?;
            let outcome = train(&cfg, vocab.len(), &tr, &va, Some(&out))?;
            let best = &outcome.metrics[outcome.best_epoch];
            println!(
                "best epoch {} val_acc {:.4}; wrote {} and {}",
                best.epoch,
                best.val_acc,
                out.join(BEST_CHECKPOINT).display(),
                out.join(METRICS_FILE).display()
            );
        }
        Cmd::Eval { ckpt, data, report, split, config } => {
            let model = match config {
                Some(c) => Pfos::load_for(&ckpt, &load_config(Some(&c), &[])?)?,
                None => Pfos::load(&ckpt)?,
            };
            let vocab = read_vocabulary(&data)?;
            let samples = read_split(&data, split, &vocab)?;
            let r = evaluate(&model, &samples)?;
            fs::write(&report, r.to_text()).with_context(|| format!("writing {}", report.display()))?;
            fs::write(with_suffix(&report, ".csv"), r.to_csv())?;
            fs::write(with_suffix(&report, ".predictions.csv"), predictions_csv(&r.predictions))?;
            print!("{}", r.to_text());
        }
        Cmd::Heatmap { ckpt, sample, out, data, split } => {
            let model = Pfos::load(&ckpt)?;
            let vocab = read_vocabulary(&data)?;
            let samples = read_split(&data, split, &vocab)?;
            let s = samples
                .iter()
                .find(|s| s.id == sample)
                .with_context(|| format!("no sample {sample} in the {} split", split.as_str()))?;
            let files = export_heatmaps(&model, s, &vocab)?.write(&out)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Cmd::Ablate { grid, data, config, overrides, out } => {
            let base = load_config(config.as_deref(), &overrides)?;
            let text = fs::read_to_string(&grid).with_context(|| format!("reading {}", grid.display()))?;
            let entries = parse_grid(&text)?;
            if entries.len() < 2 {
                bail!("an ablation grid needs at least two entries");
            }
            let vocab = read_vocabulary(&data)?;
            let (tr, va, te) =
                (read_split(&data, Split::Train, &vocab)?, read_split(&data, Split::Val, &vocab)?, read_split(&data, Split::Test, &vocab)?);
            let rows = run_grid(&base, &entries, vocab.len(), &tr, &va, &te, Some(&out))?;
            fs::write(out.join("ablation.txt"), table_text(&rows))?;
            fs::write(out.join("ablation.csv"), table_csv(&rows))?;
            print!("{}", table_text(&rows));
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse().cmd)
}
