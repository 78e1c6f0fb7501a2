//! `writerid`: synthetic data, preprocessing, augmentation, feature maps,
//! training and evaluation from the command line.
//!
//! Every command writes its main result to a file and a short JSON summary
//! to stdout. Failures exit with status 1 and print
//! `{"error": {"kind": ..., "message": ...}}` to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::{json, Value};

use writerid_core::augment::{
    apply_affine, apply_drop, count_variants, count_variants_constrained, sample_drop_plan,
    AffineRanges, SegmentProfile,
};
use writerid_core::ink::{read_chars, read_ink, write_chars, write_ink};
use writerid_core::pipeline::{evaluate, train, TrainConfig, TrainedModel};
use writerid_core::preprocess::{preprocess_page, PreprocessConfig};
use writerid_core::rng::{pair, stream, Purpose};
use writerid_core::signature::{rasterize, visualize, write_feature_maps};
use writerid_core::synthgen::{default_styles, generate_dataset, DatasetConfig};

#[derive(Parser)]
#[command(
    name = "writerid",
    version,
    about = "Online text-independent writer identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-writer dataset.
    Synth {
        #[arg(long, default_value_t = 10)]
        writers: usize,
        /// Training pages per writer.
        #[arg(long, default_value_t = 2)]
        pages: usize,
        #[arg(long, default_value_t = 20)]
        chars: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training pages.
        #[arg(long)]
        out: PathBuf,
        /// Test pages (one per writer unless --test-pages says otherwise).
        #[arg(long)]
        test_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        test_pages: usize,
        #[arg(long)]
        test_chars: Option<usize>,
    },
    /// Split ink pages into normalized pseudo-characters.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        corner_threshold: Option<f64>,
    },
    /// Write DropSegment (and optionally affine) variants of characters.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        per_char: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "off")]
        affine: Switch,
    },
    /// Count DropSegment variants for per-stroke segment counts.
    Count {
        /// Comma-separated segment counts, e.g. 2,3,4.
        #[arg(long, value_delimiter = ',', required = true)]
        profile: Vec<usize>,
    },
    /// Rasterize characters into signature feature maps.
    Sigmaps {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        level: usize,
        #[arg(long, default_value_t = 2)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write one grayscale PNG per channel.
        #[arg(long)]
        png: bool,
    },
    /// Train a writer classifier.
    Train {
        /// JSON training configuration; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Page-level identification on labelled test pages.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        drop_tests: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<Value> {
    match cli.command {
        Command::Synth {
            writers,
            pages,
            chars,
            seed,
            out,
            test_out,
            test_pages,
            test_chars,
        } => {
            if !(2..=12).contains(&writers) {
                bail!("--writers must be between 2 and 12");
            }
            let config = DatasetConfig {
                pages_per_writer: pages,
                chars_per_page: chars,
                test_pages_per_writer: test_pages,
                test_chars_per_page: test_chars,
            };
            let data = generate_dataset(&default_styles(writers), &config, seed)?;
            write_ink(&data.train, &out)?;
            if let Some(path) = &test_out {
                write_ink(&data.test, path)?;
            }
            Ok(json!({
                "train_pages": data.train.len(),
                "test_pages": if test_out.is_some() { data.test.len() } else { 0 },
            }))
        }
        Command::Preprocess {
            input,
            out,
            ratio,
            corner_threshold,
        } => {
            let mut config = PreprocessConfig::default();
            if let Some(r) = ratio {
                config.ratio = r;
            }
            if let Some(t) = corner_threshold {
                config.corner_threshold = t;
            }
            config.validate()?;
            let pages = read_ink(&input)?;
            let mut chars = Vec::new();
            for page in &pages {
                chars.extend(preprocess_page(page, &config)?);
            }
            write_chars(&chars, &out)?;
            Ok(json!({ "pages": pages.len(), "characters": chars.len() }))
        }
        Command::Augment {
            input,
            out,
            per_char,
            seed,
            affine,
        } => {
            let chars = read_chars(&input)?;
            let ranges = AffineRanges::default();
            let mut variants = Vec::with_capacity(chars.len() * per_char);
            for (i, c) in chars.iter().enumerate() {
                let profile = SegmentProfile::of(c);
                for j in 0..per_char {
                    let mut rng = stream(seed, Purpose::Augment, pair(i as u64, j as u64));
                    let mut v = apply_drop(c, &sample_drop_plan(&profile, &mut rng))?;
                    if matches!(affine, Switch::On) {
                        v = apply_affine(&v, &ranges.sample(&mut rng));
                    }
                    variants.push(v);
                }
            }
            write_chars(&variants, &out)?;
            Ok(json!({ "characters": chars.len(), "variants": variants.len() }))
        }
        Command::Count { profile } => {
            let p = SegmentProfile::new(profile)?;
            Ok(json!({
                "profile": p.counts(),
                "segments": p.total(),
                "variants": count_variants(&p).to_string(),
                "constrained": count_variants_constrained(&p).to_string(),
            }))
        }
        Command::Sigmaps {
            input,
            level,
            window,
            out,
            png,
        } => {
            if level > 5 {
                bail!("--level must be at most 5");
            }
            let chars = read_chars(&input)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (i, c) in chars.iter().enumerate() {
                let stack = rasterize(c, level, window);
                write_feature_maps(&stack, out.join(format!("char_{i:05}.sig")))?;
                if png {
                    for (ch, img) in visualize(&stack).iter().enumerate() {
                        img.write_png(out.join(format!("char_{i:05}_ch{ch:02}.png")))?;
                    }
                }
            }
            Ok(json!({ "characters": chars.len(), "channels": (1usize << (level + 1)) - 1 }))
        }
        Command::Train { config, data, out } => {
            let config: TrainConfig = match &config {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).map_err(|e| {
                        writerid_core::Error::Config(format!("{}: {e}", path.display()))
                    })?
                }
                None => TrainConfig::default(),
            };
            let pages = read_ink(&data)?;
            let model = train(&config, &pages)?;
            model.save(&out)?;
            info!("model written to {}", out.display());
            Ok(json!({
                "network": model.network.spec().describe(),
                "writers": model.labels.len(),
                "epoch_loss": model.history.epoch_loss,
                "validation_loss": model.history.validation_loss,
            }))
        }
        Command::Eval {
            model,
            data,
            drop_tests,
            seed,
            report,
        } => {
            let model = TrainedModel::load(&model)?;
            let pages = read_ink(&data)?;
            let r = evaluate(&model, &pages, drop_tests, seed)?;
            if let Some(path) = &report {
                write_json(path, &r)?;
            }
            Ok(json!({ "pages": r.pages.len(), "top1": r.top1, "top10": r.top10 }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let kind = err
                .downcast_ref::<writerid_core::Error>()
                .map_or("cli", |e| e.kind());
            let message = format!("{err:#}");
            eprintln!(
                "{}",
                json!({ "error": { "kind": kind, "message": message } })
            );
            ExitCode::FAILURE
        }
    }
}
