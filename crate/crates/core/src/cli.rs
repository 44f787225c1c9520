//! The `guided-search` command line.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage error. With
//! `--json` every subcommand prints exactly one JSON document on stdout.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attrseq::{
    evaluate_pr, load_checkpoint, load_split, mean_nll, read_dataset, save_checkpoint, train,
    EpochStats, GenerateOptions, ModelDims, SeqModel, Split, TrainConfig,
};
use crate::index::InvertedIndex;
use crate::pipeline::{read_manifest, Engine, KeywordTable, QueryOption, QueryRequest};
use crate::roi::{evaluate_map, guided_filter, read_detections, read_ground_truth, BBox, Detector, NullDetector, StubDetector};
use crate::service::{serve, ServiceConfig};
use crate::taxonomy::Taxonomy;
use crate::visfeat::{load_image, BinaryCode, DenseFeature, DistanceWeights, PopcountPath};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "guided-search", version, about = "Attribute-guided visual search")]
struct Cli {
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random choice a subcommand makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a taxonomy file.
    TaxonomyValidate {
        #[arg(long)]
        taxonomy: PathBuf,
    },
    /// Build an index snapshot from a corpus manifest.
    Ingest {
        #[command(flatten)]
        assets: Assets,
        #[arg(long)]
        manifest: PathBuf,
        /// Snapshot to write.
        #[arg(long)]
        index: PathBuf,
    },
    /// Query an index snapshot.
    Search {
        #[command(flatten)]
        assets: Assets,
        #[arg(long)]
        index: PathBuf,
        /// 1: automatic category, 2: guided category, 3: user ROI.
        #[arg(long, value_parser = parse_option)]
        option: QueryOption,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        feature: Option<PathBuf>,
        #[arg(long)]
        guided: Option<String>,
        /// `x,y,w,h`
        #[arg(long, value_parser = parse_roi)]
        roi: Option<BBox>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0.7)]
        appearance_weight: f64,
    },
    /// Run the HTTP daemon.
    Serve {
        #[command(flatten)]
        assets: Assets,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0.7)]
        appearance_weight: f64,
    },
    /// Train the attribute-sequence model on a dataset manifest.
    TrainSeq {
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Dataset manifest (JSON Lines with splits).
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 20)]
        patience: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 32)]
        embed: usize,
    },
    /// Precision, recall and NLL per dataset split.
    EvalSeq {
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Detection mAP over IoU thresholds, optionally with guides.
    EvalDetector {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9")]
        iou: Vec<f64>,
        /// JSON object mapping image id to its guided category.
        #[arg(long)]
        guides: Option<PathBuf>,
    },
    /// Hamming scan throughput and correctness.
    BenchHamming {
        #[arg(long, default_value_t = 1024)]
        bits: usize,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// Distances spot-checked against a bit-by-bit loop.
        #[arg(long, default_value_t = 1000)]
        verify: usize,
    },
}

#[derive(Debug, Args)]
struct Assets {
    /// Defaults to the bundled example taxonomy.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to matching category names.
    #[arg(long)]
    keywords: Option<PathBuf>,
    /// Detection fixture; without one every image uses its full frame.
    #[arg(long)]
    detector_fixture: Option<PathBuf>,
}

fn parse_option(s: &str) -> std::result::Result<QueryOption, String> {
    let n: u8 = s.parse().map_err(|_| format!("`{s}` is not 1, 2 or 3"))?;
    QueryOption::try_from(n)
}

fn parse_roi(s: &str) -> std::result::Result<BBox, String> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("`{s}` is not x,y,w,h"))?;
    match parts[..] {
        [x, y, w, h] => BBox::checked(x, y, w, h).map_err(|e| e.to_string()),
        _ => Err(format!("`{s}` is not x,y,w,h")),
    }
}

fn load_taxonomy(path: Option<&Path>) -> Result<Arc<Taxonomy>> {
    Ok(Arc::new(match path {
        Some(p) => Taxonomy::from_path(p)?,
        None => Taxonomy::example(),
    }))
}

fn load_engine(assets: &Assets) -> Result<Engine> {
    let taxonomy = load_taxonomy(assets.taxonomy.as_deref())?;
    let model = load_checkpoint(&taxonomy, &assets.checkpoint)?;
    let detector: Arc<dyn Detector> = match &assets.detector_fixture {
        Some(p) => Arc::new(StubDetector::from_path(p)?),
        None => Arc::new(NullDetector),
    };
    let keywords = match &assets.keywords {
        Some(p) => KeywordTable::from_path(p, &taxonomy)?,
        None => KeywordTable::from_category_names(&taxonomy),
    };
    Engine::new(taxonomy, model, detector, keywords)
}

/// Entry point of the binary: real stdout/stderr and logging.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// Runs one invocation against the given output streams.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    2
                }
            };
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let json = cli.json;
    match cli.command {
        Command::TaxonomyValidate { taxonomy } => {
            let def = crate::taxonomy::TaxonomyDef::from_path(&taxonomy)?;
            let violations = def.validate();
            if json {
                emit(out, &serde_json::json!({
                    "valid": violations.is_empty(),
                    "violations": violations.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                }))?;
            } else if violations.is_empty() {
                writeln!(out, "OK")?;
            } else {
                for v in &violations {
                    writeln!(out, "invalid: {v}")?;
                }
            }
            Ok(if violations.is_empty() { 0 } else { 1 })
        }

        Command::Ingest { assets, manifest, index } => {
            let engine = load_engine(&assets)?;
            let entries = read_manifest(&manifest)?;
            let (built, report) = engine.build_index(&entries)?;
            built.save(&index)?;
            if json {
                emit(out, &report)?;
            } else {
                writeln!(out, "indexed {} items into {}", report.ingested.len(), index.display())?;
                for r in &report.rejected {
                    writeln!(out, "rejected {}: {}", r.item_id, r.reason)?;
                }
            }
            Ok(0)
        }

        Command::Search {
            assets,
            index,
            option,
            image,
            feature,
            guided,
            roi,
            k,
            appearance_weight,
        } => {
            let engine = load_engine(&assets)?;
            let index = InvertedIndex::load(&index, engine.taxonomy().clone())?;
            let request = QueryRequest {
                option,
                image: image.map(load_image).transpose()?,
                feature: feature.map(DenseFeature::load).transpose()?,
                guided_category: guided,
                roi,
                k,
                weights: DistanceWeights::new(appearance_weight)?,
            };
            let response = engine.query(&index, &request)?;
            if json {
                emit(out, &response)?;
            } else {
                writeln!(out, "category: {}", response.category)?;
                writeln!(out, "sequence: {}", response.sequence.join(" "))?;
                if let Some(r) = response.roi {
                    writeln!(out, "roi: {},{},{},{}", r.x, r.y, r.w, r.h)?;
                }
                for (rank, hit) in response.results.iter().enumerate() {
                    writeln!(
                        out,
                        "{:>3}  {:<16} {:.4}  {}  {}",
                        rank + 1,
                        hit.item_id,
                        hit.distance,
                        hit.match_count,
                        hit.attributes.join(",")
                    )?;
                }
            }
            Ok(0)
        }

        Command::Serve {
            assets,
            index,
            addr,
            k,
            appearance_weight,
        } => {
            let config = ServiceConfig {
                addr,
                taxonomy: assets.taxonomy,
                index,
                checkpoint: assets.checkpoint,
                detector_fixture: assets.detector_fixture,
                keywords: assets.keywords,
                default_k: k,
                default_weights: DistanceWeights::new(appearance_weight)?,
            };
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(serve(config))?;
            Ok(0)
        }

        Command::TrainSeq {
            taxonomy,
            manifest,
            checkpoint,
            epochs,
            lr,
            patience,
            batch,
            hidden,
            embed,
        } => {
            let taxonomy = load_taxonomy(taxonomy.as_deref())?;
            let entries = read_dataset(&manifest)?;
            let train_set = load_split(&entries, Split::Train, &taxonomy)?;
            let validation = load_split(&entries, Split::Validation, &taxonomy)?;
            let feature_dim = train_set
                .first()
                .map(|e| e.feature.len())
                .ok_or_else(|| Error::InvalidInput("no training examples".into()))?;
            let dims = ModelDims {
                feature_dim,
                embed_dim: embed,
                hidden_dim: hidden,
                vocab_size: taxonomy.vocab_size(),
            };
            let config = TrainConfig {
                learning_rate: lr,
                batch_size: batch,
                max_epochs: epochs,
                patience,
                seed: cli.seed,
                ..TrainConfig::default()
            };
            let outcome = train(SeqModel::random(dims, cli.seed)?, &train_set, &validation, &config)?;
            save_checkpoint(&outcome.model, &taxonomy, &checkpoint)?;
            let best: EpochStats = outcome.history[outcome.best_epoch - 1];
            if json {
                emit(out, &serde_json::json!({
                    "epochs_run": outcome.history.len(),
                    "best_epoch": outcome.best_epoch,
                    "train_nll": best.train_nll,
                    "validation_nll": best.validation_nll,
                    "history": outcome.history,
                }))?;
            } else {
                writeln!(
                    out,
                    "ran {} epochs; best epoch {}: train NLL {:.4}, validation NLL {:.4}",
                    outcome.history.len(),
                    outcome.best_epoch,
                    best.train_nll,
                    best.validation_nll
                )?;
                writeln!(out, "wrote {}", checkpoint.display())?;
            }
            Ok(0)
        }

        Command::EvalSeq {
            taxonomy,
            manifest,
            checkpoint,
        } => {
            let taxonomy = load_taxonomy(taxonomy.as_deref())?;
            let model = load_checkpoint(&taxonomy, &checkpoint)?;
            let entries = read_dataset(&manifest)?;
            #[derive(Serialize)]
            struct Row {
                split: &'static str,
                items: usize,
                precision: f64,
                recall: f64,
                nll: f64,
            }
            let mut rows = Vec::new();
            for split in Split::ALL {
                let data = load_split(&entries, split, &taxonomy)?;
                if data.is_empty() {
                    continue;
                }
                let report = evaluate_pr(&model, &taxonomy, &data, &GenerateOptions::default())?;
                rows.push(Row {
                    split: split.name(),
                    items: data.len(),
                    precision: report.precision,
                    recall: report.recall,
                    nll: mean_nll(&model, &data)?,
                });
            }
            if json {
                emit(out, &rows)?;
            } else {
                writeln!(out, "{:<12}{:>7}{:>11}{:>9}{:>9}", "split", "items", "precision", "recall", "NLL")?;
                for r in &rows {
                    writeln!(
                        out,
                        "{:<12}{:>7}{:>11.3}{:>9.3}{:>9.3}",
                        r.split, r.items, r.precision, r.recall, r.nll
                    )?;
                }
            }
            Ok(0)
        }

        Command::EvalDetector { pred, gt, iou, guides } => {
            let predictions = read_detections(&pred)?;
            let truth = read_ground_truth(&gt)?;
            let mut rows = vec![("non-guided", evaluate_map(&predictions, &truth, &iou)?)];
            if let Some(path) = guides {
                let guides: BTreeMap<String, String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                let filtered = predictions
                    .into_iter()
                    .map(|(img, dets)| {
                        let kept = guided_filter(dets, guides.get(&img).map(String::as_str));
                        (img, kept)
                    })
                    .collect();
                rows.push(("guided", evaluate_map(&filtered, &truth, &iou)?));
            }
            if json {
                let methods: Vec<_> = rows
                    .iter()
                    .map(|(name, r)| serde_json::json!({ "method": name, "rows": r }))
                    .collect();
                emit(out, &serde_json::json!({ "iou": iou, "methods": methods }))?;
            } else {
                write!(out, "{:<12}", "IoU")?;
                for t in &iou {
                    write!(out, "{t:>7}")?;
                }
                writeln!(out)?;
                for (name, r) in &rows {
                    write!(out, "{name:<12}")?;
                    for row in r {
                        write!(out, "{:>7.3}", row.map)?;
                    }
                    writeln!(out)?;
                }
            }
            Ok(0)
        }

        Command::BenchHamming { bits, n, verify } => {
            let report = bench_hamming(bits, n, verify, cli.seed)?;
            if json {
                emit(out, &report)?;
            } else {
                writeln!(out, "{} codes of {} bits", report.codes, report.bits)?;
                for p in &report.paths {
                    writeln!(out, "{:<9} {:>14.0} comparisons/s", p.path, p.comparisons_per_sec)?;
                }
                writeln!(out, "paths agree: {}", report.paths_agree)?;
                writeln!(
                    out,
                    "bit-loop oracle: {} checked, {} mismatches",
                    report.oracle_checked, report.oracle_mismatches
                )?;
            }
            Ok(if report.paths_agree && report.oracle_mismatches == 0 { 0 } else { 1 })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathThroughput {
    pub path: &'static str,
    pub comparisons_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub bits: usize,
    pub codes: usize,
    pub paths: Vec<PathThroughput>,
    /// Hardware and portable scans returned identical distances.
    pub paths_agree: bool,
    pub oracle_checked: usize,
    pub oracle_mismatches: usize,
}

/// Distance by testing one bit at a time.
pub fn bit_loop_distance(a: &BinaryCode, b: &BinaryCode) -> u32 {
    (0..a.len()).filter(|&i| a.bit(i) != b.bit(i)).count() as u32
}

/// Times linear scans of `n` random `bits`-bit codes on every available
/// popcount path and checks them against each other and, for `verify`
/// codes, against [`bit_loop_distance`].
pub fn bench_hamming(bits: usize, n: usize, verify: usize, seed: u64) -> Result<BenchReport> {
    if bits == 0 || n == 0 {
        return Err(Error::InvalidInput("bits and n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_code = |rng: &mut ChaCha8Rng| BinaryCode::from_bits((0..bits).map(|_| rng.random_bool(0.5)));
    let query = random_code(&mut rng);
    let codes: Vec<BinaryCode> = (0..n).map(|_| random_code(&mut rng)).collect();
    let matrix: Vec<u64> = codes.iter().flat_map(|c| c.words().iter().copied()).collect();

    let mut paths = Vec::new();
    let mut results = Vec::new();
    for (name, path) in [("hardware", PopcountPath::Hardware), ("portable", PopcountPath::Portable)] {
        if !path.is_available() {
            continue;
        }
        let mut out = Vec::with_capacity(n);
        let mut rounds = 0usize;
        let start = Instant::now();
        // At least a few rounds and a quarter second, so timer noise is small.
        while rounds < 3 || start.elapsed().as_secs_f64() < 0.25 {
            crate::visfeat::scan(path, query.words(), &matrix, &mut out);
            std::hint::black_box(&out);
            rounds += 1;
        }
        let secs = start.elapsed().as_secs_f64();
        paths.push(PathThroughput {
            path: name,
            comparisons_per_sec: (rounds * n) as f64 / secs,
        });
        results.push(out);
    }
    let paths_agree = results.windows(2).all(|w| w[0] == w[1]);
    let checked = verify.min(n);
    let oracle_mismatches = (0..checked)
        .filter(|&i| results[0][i] != bit_loop_distance(&query, &codes[i]))
        .count();
    Ok(BenchReport {
        bits,
        codes: n,
        paths,
        paths_agree,
        oracle_checked: checked,
        oracle_mismatches,
    })
}
