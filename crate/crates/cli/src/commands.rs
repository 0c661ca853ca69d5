use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use paste_core::checkpoint::Checkpoint;
use paste_core::corpus::{
    annotate_all, compute_statistics, import_file, load_split, split_file, AnnotatedSentence, CanonicalRecord,
    CommandAnnotator, DataFormat, DatasetName, EmbeddingTable, Split,
};
use paste_core::inference::{evaluate, EvalReport, Prf};
use paste_core::model::{ModelConfig, PasteModel};
use paste_core::runs::{median, RunManifest, RunRecord};
use paste_core::training::{self, default_max_steps, EpochControl};
use paste_core::triplet::{GenerationDirection, OpinionTriplet};
use paste_core::corpus::FixtureAnnotator;
use serde::Serialize;

use crate::settings::{ensure_dir, DataArgs, ModelArgs, ResolvedConfig, TrainArgs};
use crate::Ablation;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn data_dir(data: &DataArgs) -> Result<&Path> {
    data.data_dir
        .as_deref()
        .ok_or_else(|| anyhow!("no data directory given (--data-dir or PASTE_DATA_DIR)"))
}

pub fn stats(data: &DataArgs, out_dir: Option<&Path>) -> Result<()> {
    let dir = data_dir(data)?;
    let datasets = match data.dataset {
        Some(d) => vec![d],
        None => DatasetName::ALL
            .into_iter()
            .filter(|d| {
                d.components()
                    .iter()
                    .all(|c| Split::ALL.iter().all(|&s| split_file(dir, c, s).is_some()))
            })
            .collect(),
    };
    if datasets.is_empty() {
        bail!("no dataset found under {}", dir.display());
    }
    if let Some(out) = out_dir {
        ensure_dir(out)?;
    }
    for dataset in datasets {
        let mut parts = Vec::new();
        for split in Split::ALL {
            let sentences =
                load_split(dir, dataset, split).with_context(|| format!("loading {dataset} {split} from {}", dir.display()))?;
            parts.push((split, sentences));
        }
        let view: Vec<_> = parts.iter().map(|(s, v)| (*s, v.as_slice())).collect();
        let report = compute_statistics(dataset.name(), &view);
        let text = report.render_text();
        println!("{text}");
        if let Some(out) = out_dir {
            write_json(&out.join(format!("stats_{dataset}.json")), &report)?;
            std::fs::write(out.join(format!("stats_{dataset}.txt")), &text)?;
        }
    }
    Ok(())
}

/// Fills in POS/DEP tags where missing, from frozen annotations or a tagger.
fn ensure_annotated(
    sentences: Vec<AnnotatedSentence>,
    annotations: Option<&Path>,
    tagger: Option<&str>,
    origin: &str,
) -> Result<Vec<AnnotatedSentence>> {
    if sentences.iter().all(AnnotatedSentence::is_annotated) {
        return Ok(sentences);
    }
    let out = if let Some(path) = annotations {
        annotate_all(sentences, &FixtureAnnotator::from_file(path)?)?
    } else if let Some(cmd) = tagger {
        annotate_all(sentences, &CommandAnnotator::from_command_line(cmd)?)?
    } else {
        bail!("{origin} has sentences without POS/DEP tags; pass --tagger or --annotations, or supply annotated <split>.jsonl files");
    };
    Ok(out)
}

struct Splits {
    train: Vec<AnnotatedSentence>,
    dev: Vec<AnnotatedSentence>,
    test: Option<Vec<AnnotatedSentence>>,
}

fn load_splits(cfg: &ResolvedConfig) -> Result<Splits> {
    let load = |split: Split| -> Result<Vec<AnnotatedSentence>> {
        let s = load_split(&cfg.data_dir, cfg.dataset, split)
            .with_context(|| format!("loading {} {split} from {}", cfg.dataset, cfg.data_dir.display()))?;
        ensure_annotated(
            s,
            cfg.annotations.as_deref(),
            cfg.tagger.as_deref(),
            &format!("{} {split}", cfg.dataset),
        )
    };
    let has_test = cfg
        .dataset
        .components()
        .iter()
        .all(|c| split_file(&cfg.data_dir, c, Split::Test).is_some());
    Ok(Splits {
        train: load(Split::Train)?,
        dev: load(Split::Dev)?,
        test: if has_test { Some(load(Split::Test)?) } else { None },
    })
}

#[derive(Serialize)]
struct Snapshot<'a> {
    #[serde(flatten)]
    resolved: &'a ResolvedConfig,
    random_order: bool,
}

fn train_runs(cfg: &ResolvedConfig, splits: &Splits, out_dir: &Path, command: &str) -> Result<RunManifest> {
    ensure_dir(out_dir)?;
    let embeddings = match &cfg.embeddings {
        Some(path) => {
            let keep = splits.train.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
            Some(EmbeddingTable::load(path, Some(&keep)).with_context(|| format!("loading {}", path.display()))?)
        }
        None => None,
    };
    let started = Instant::now();
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        let run_dir = out_dir.join(format!("seed-{seed}"));
        ensure_dir(&run_dir)?;
        let log_path = run_dir.join("train_log.jsonl");
        let ckpt_path = run_dir.join("checkpoint.json");
        let mut log = BufWriter::new(File::create(&log_path)?);
        let train_cfg = paste_core::training::TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let outcome = training::train(
            &splits.train,
            &splits.dev,
            &cfg.model,
            &train_cfg,
            embeddings.as_ref(),
            |entry, improved| {
                serde_json::to_writer(&mut log, entry)?;
                log.write_all(b"\n")?;
                log.flush()?;
                if let Some((model, vocab)) = improved {
                    Checkpoint::from_model(model, vocab).save(&ckpt_path)?;
                }
                Ok(EpochControl::Continue)
            },
        )?;
        let test = match &splits.test {
            Some(test) => {
                let (report, _) = evaluate(&outcome.model, &outcome.vocab, test, cfg.model.max_steps)?;
                write_json(&run_dir.join("test_report.json"), &report)?;
                Some(report)
            }
            None => None,
        };
        println!(
            "seed {seed}: checkpoint {} (best dev F1 {:.4} at epoch {}){}",
            ckpt_path.display(),
            outcome.best_dev.f1,
            outcome.best_epoch,
            test.as_ref()
                .map(|t| format!(", test F1 {:.4}", t.overall.f1))
                .unwrap_or_default()
        );
        records.push(RunRecord {
            seed,
            best_epoch: outcome.best_epoch,
            dev: outcome.best_dev,
            test,
            checkpoint: ckpt_path,
            log: log_path,
        });
    }
    let snapshot = serde_json::to_value(Snapshot {
        resolved: cfg,
        random_order: cfg.train.random_order,
    })?;
    let manifest = RunManifest::new(command, snapshot, cfg.seeds.clone(), records, started.elapsed().as_secs_f64());
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    println!("selection rule: per seed, the epoch with the highest dev F1 (earliest on ties)");
    if let Some(m) = manifest.median_dev {
        println!("median dev  P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
    }
    if let Some(m) = manifest.median_test {
        println!("median test P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
    }
    println!("manifest: {}", out_dir.join("manifest.json").display());
    Ok(manifest)
}

fn with_data_max_steps(mut cfg: ResolvedConfig, splits: &Splits) -> ResolvedConfig {
    if cfg.max_steps_from_data {
        cfg.model.max_steps = default_max_steps(&splits.train);
    }
    cfg
}

fn variant_name(direction: GenerationDirection) -> &'static str {
    match direction {
        GenerationDirection::AspectFirst => "PASTE-AF",
        GenerationDirection::OpinionFirst => "PASTE-OF",
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let splits = load_splits(&cfg)?;
    let cfg = with_data_max_steps(cfg, &splits);
    log::info!("training {} on {}", variant_name(cfg.model.direction), cfg.dataset);
    train_runs(&cfg, &splits, &args.out_dir, "train")?;
    Ok(())
}

fn load_checkpoint(path: &Path, model_args: &ModelArgs) -> Result<(PasteModel<f32>, paste_core::corpus::Vocabulary)> {
    let ckpt = Checkpoint::load(path)?;
    let conflicts = model_args.conflicts(&ckpt.config);
    if !conflicts.is_empty() {
        bail!("checkpoint {} disagrees with flags: {}", path.display(), conflicts.join("; "));
    }
    Ok(ckpt.into_model()?)
}

fn read_input(path: &Path, data: &DataArgs) -> Result<Vec<AnnotatedSentence>> {
    let format = if path.extension().is_some_and(|e| e == "jsonl") {
        DataFormat::Canonical
    } else {
        DataFormat::Published
    };
    let sentences = import_file(path, format).with_context(|| format!("reading {}", path.display()))?;
    ensure_annotated(
        sentences,
        data.annotations.as_deref(),
        data.tagger.as_deref(),
        &path.display().to_string(),
    )
}

pub fn eval(
    checkpoint: &Path,
    data: &DataArgs,
    model_args: &ModelArgs,
    split: Split,
    input: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<()> {
    let (model, vocab) = load_checkpoint(checkpoint, model_args)?;
    let (sentences, label) = match input {
        Some(path) => (read_input(path, data)?, "input".to_string()),
        None => {
            let dataset = data
                .dataset
                .ok_or_else(|| anyhow!("--dataset or --input is required"))?;
            let s = load_split(data_dir(data)?, dataset, split)?;
            let s = ensure_annotated(s, data.annotations.as_deref(), data.tagger.as_deref(), &format!("{dataset} {split}"))?;
            (s, split.name().to_string())
        }
    };
    let max_steps = model_args.max_steps.unwrap_or(model.config.max_steps);
    let (report, _) = evaluate(&model, &vocab, &sentences, max_steps)?;
    println!("{}", report.render_text());
    if let Some(out) = out_dir {
        ensure_dir(out)?;
        let path = out.join(format!("eval_{label}.json"));
        write_json(&path, &report)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn tuples(v: &[OpinionTriplet]) -> Vec<paste_core::corpus::TripletTuple> {
    v.iter().map(OpinionTriplet::as_tuple).collect()
}

pub fn predict(
    checkpoint: &Path,
    input: &Path,
    output: Option<&Path>,
    data: &DataArgs,
    model_args: &ModelArgs,
) -> Result<()> {
    let (model, vocab) = load_checkpoint(checkpoint, model_args)?;
    let sentences = read_input(input, data)?;
    let max_steps = model_args.max_steps.unwrap_or(model.config.max_steps);
    let predictions = paste_core::inference::predict_all(&model, &vocab, &sentences, max_steps)?;
    let mut out: Box<dyn Write> = match output {
        Some(path) => Box::new(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    };
    for (s, p) in sentences.iter().zip(&predictions) {
        let record = CanonicalRecord {
            predicted: Some(tuples(p)),
            ..CanonicalRecord::from_sentence(s)
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRun {
    seed: u64,
    baseline_f1: f64,
    ablated_f1: f64,
    delta: f64,
    pct_f1_drop: f64,
}

#[derive(Debug, Serialize)]
struct AblationReport {
    ablation: String,
    metric: &'static str,
    baseline_manifest: PathBuf,
    ablated_manifest: PathBuf,
    runs: Vec<AblationRun>,
    median_baseline_f1: f64,
    median_ablated_f1: f64,
    median_delta: f64,
    median_pct_f1_drop: f64,
}

fn pct_drop(base: f64, ablated: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        100.0 * (base - ablated) / base
    }
}

fn score_of(record: &RunRecord) -> Prf {
    record.test.as_ref().map_or(record.dev, |t: &EvalReport| t.overall)
}

pub fn ablate(ablation: Ablation, args: &TrainArgs) -> Result<()> {
    let base = args.resolve()?;
    let splits = load_splits(&base)?;
    let base = with_data_max_steps(base, &splits);
    let mut ablated = base.clone();
    let label = match ablation {
        Ablation::RandomOrder => {
            ablated.train.random_order = true;
            "random-order"
        }
        Ablation::NoPosdep => {
            ablated.model = ModelConfig {
                d_pos: 0,
                d_dep: 0,
                ..ablated.model
            };
            "no-posdep"
        }
        Ablation::None => "none",
    };
    let base_dir = args.out_dir.join("baseline");
    let abl_dir = args.out_dir.join(label);
    let m_base = train_runs(&base, &splits, &base_dir, "ablate:baseline")?;
    let m_abl = train_runs(&ablated, &splits, &abl_dir, &format!("ablate:{label}"))?;
    let metric = if splits.test.is_some() { "test_f1" } else { "dev_f1" };
    let runs: Vec<AblationRun> = m_base
        .runs
        .iter()
        .zip(&m_abl.runs)
        .map(|(b, a)| {
            let (bf, af) = (score_of(b).f1, score_of(a).f1);
            AblationRun {
                seed: b.seed,
                baseline_f1: bf,
                ablated_f1: af,
                delta: af - bf,
                pct_f1_drop: pct_drop(bf, af),
            }
        })
        .collect();
    let col = |f: fn(&AblationRun) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>()).unwrap_or(0.0);
    let report = AblationReport {
        ablation: label.to_string(),
        metric,
        baseline_manifest: base_dir.join("manifest.json"),
        ablated_manifest: abl_dir.join("manifest.json"),
        median_baseline_f1: col(|r| r.baseline_f1),
        median_ablated_f1: col(|r| r.ablated_f1),
        median_delta: col(|r| r.delta),
        median_pct_f1_drop: col(|r| r.pct_f1_drop),
        runs,
    };
    write_json(&args.out_dir.join("ablation.json"), &report)?;
    let name = variant_name(base.model.direction);
    println!("{:<24} | {:>7} | {:>9}", "Model", "F1", "%F1 drop");
    println!("{}", "-".repeat(46));
    println!("{:<24} | {:>7.4} | {:>9}", name, report.median_baseline_f1, "-");
    println!(
        "{:<24} | {:>7.4} | {:>9.2}",
        format!("  - {label}"),
        report.median_ablated_f1,
        pct_drop(report.median_baseline_f1, report.median_ablated_f1)
    );
    println!("median per-run delta {:+.4} ({metric})", report.median_delta);
    Ok(())
}
