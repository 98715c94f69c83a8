//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use muse_core::analysis::{pos_overlap_table, AgreementReport};
use muse_core::backends::{HashedEmbedder, LexiconTagger, SynonymLexicon, SynonymSource};
use muse_core::checkpoint::Checkpoint;
use muse_core::data::{decode, Sample, Split, Vocabulary};
use muse_core::ingest::{compute_stats, load_dataset, scan_dataset, split_dataset, validate_exclusions, Dataset};
use muse_core::metrics::{evaluate_corpus, EvalContext, Generation};
use muse_core::model::Model;
use muse_core::par;
use muse_core::training::{self, EpochRecord, Phase, TrainSetup};
use muse_core::MuseError;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn select(self, ds: &Dataset) -> Vec<Sample> {
        match self {
            SplitArg::Train => ds.split(Split::Train),
            SplitArg::Val => ds.split(Split::Val),
            SplitArg::Test => ds.split(Split::Test),
            SplitArg::All => ds.samples.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Json,
}

/// Pretty JSON with keys in sorted order.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// `report.json` is archived with `report.json.config.toml` next to it.
fn archive_next_to(cfg: &RunConfig, output: &Path) -> Result<()> {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".config.toml");
    cfg.archive(&output.with_file_name(name))
}

fn emit(format: Format, table: String, json: impl FnOnce() -> Result<String>) -> Result<()> {
    let text = match format {
        Format::Table => table,
        Format::Json => json()?,
    };
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

/// Loads a dataset and assigns splits with the run seed.
fn load_split(cfg: &RunConfig, path: &Path) -> Result<Dataset> {
    let ds = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    if ds.samples.iter().all(|s| s.split != Split::Unassigned) && !cfg.data.resplit {
        return Ok(ds);
    }
    Ok(split_dataset(&ds, &cfg.data.ratios, cfg.seed, cfg.data.resplit)?)
}

#[derive(Serialize)]
struct IngestReport<'a> {
    stats: &'a muse_core::ingest::StatsTable,
    exclusions: &'a muse_core::ingest::ExclusionReport,
    provenance: &'a muse_core::ingest::Provenance,
}

pub fn ingest(
    cfg: &RunConfig,
    data: &Path,
    out: Option<&Path>,
    stats_out: Option<&Path>,
    format: Format,
) -> Result<()> {
    let scanned = scan_dataset(data).with_context(|| format!("loading {}", data.display()))?;
    let exclusions = validate_exclusions(&scanned);
    let ds = load_split(cfg, data)?;
    let stats = compute_stats(&ds);
    let report = IngestReport {
        stats: &stats,
        exclusions: &exclusions,
        provenance: &ds.provenance,
    };
    if let Some(path) = out {
        ds.save(path)?;
        archive_next_to(cfg, path)?;
    }
    if let Some(path) = stats_out {
        write_file(path, &to_json(&report)?)?;
        archive_next_to(cfg, path)?;
    }
    for (rule, ids) in exclusions.flagged.iter().filter(|(_, ids)| !ids.is_empty()) {
        eprintln!("warning: {} sample(s) flagged by {rule}: {}", ids.len(), ids.join(", "));
    }
    emit(format, stats.to_text(), || to_json(&report))
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub out_dir: &'a Path,
    pub init: Option<&'a Path>,
    pub vocab: Option<&'a Path>,
}

pub fn train(cfg: &RunConfig, phase: Phase, args: &TrainArgs) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.train.phase = phase;
    cfg.train.validate()?;
    let ds = load_split(&cfg, args.data)?;
    let init = args
        .init
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let vocab = match (&init, args.vocab) {
        (Some(_), Some(_)) => bail!(MuseError::Config(
            "--vocab and --init are exclusive; the checkpoint carries its vocabulary".into()
        )),
        (Some(c), None) => c.vocabulary()?,
        (None, Some(p)) => Vocabulary::load(p)?,
        (None, None) => Vocabulary::build(&ds.split(Split::Train), cfg.data.min_freq)?,
    };
    let model_cfg = match &init {
        Some(c) if c.meta.model != cfg.model => {
            eprintln!("note: model settings taken from the initial checkpoint");
            c.meta.model.clone()
        }
        _ => cfg.model.clone(),
    };
    cfg.model = model_cfg.clone();
    let model = Model::new(model_cfg, vocab.len())?;
    let images = cfg.image_extractor(&model.config, args.data);
    let setup = TrainSetup {
        model: &model,
        vocab: &vocab,
        images: images.as_ref(),
    };
    fs::create_dir_all(args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    cfg.archive(&args.out_dir.join("config.toml"))?;
    vocab.save(&args.out_dir.join("vocab.txt"))?;
    let mut log = |r: &EpochRecord| {
        let monitor = if r.monitored_on_val { "val" } else { "train*" };
        let acc = r.train_accuracy.map_or_else(String::new, |a| format!(" acc {a:.3}"));
        eprintln!(
            "epoch {:>4}  train {:.4}  {monitor} {:.4}{acc}",
            r.epoch, r.train_loss, r.val_loss
        );
    };
    if phase == Phase::Pretrain {
        if let Some(s) = ds.samples.iter().find(|s| s.label.is_none()) {
            bail!(MuseError::Data(format!("sample {} has no sarcasm label", s.id)));
        }
    }
    let outcome = training::train(&ds, setup, &cfg.train, init.as_ref(), &mut log)?;
    outcome.last.save(&args.out_dir.join("last.ckpt"))?;
    outcome.best.save(&args.out_dir.join("best.ckpt"))?;
    write_file(&args.out_dir.join("history.json"), &to_json(&outcome.history())?)?;
    Ok(())
}

pub fn generate(cfg: &RunConfig, checkpoint: &Path, data: &Path, split: SplitArg, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let vocab = ckpt.vocabulary()?;
    let model = ckpt.model()?;
    cfg.generation.validate(model.config.max_token_length)?;
    let ds = load_split(cfg, data)?;
    let samples = split.select(&ds);
    if samples.is_empty() {
        bail!(MuseError::Data(format!("no samples in split {split:?}")));
    }
    let images = cfg.image_extractor(&model.config, data);
    let params = &ckpt.params;
    let lines = par::map(cfg.exec, &samples, |s| -> Result<String> {
        let x = model.prepare(s, &vocab, images.as_ref())?;
        let ids = model.generate(&x, params, &cfg.generation)?;
        let g = Generation {
            id: s.id.clone(),
            generation: decode(&ids, &vocab)?,
        };
        Ok(serde_json::to_string(&g)?)
    });
    let mut text = String::new();
    for l in lines {
        text.push_str(&l?);
        text.push('\n');
    }
    write_file(out, &text)?;
    archive_next_to(cfg, out)
}

pub fn load_generations(path: &Path) -> Result<Vec<Generation>> {
    let file = std::io::BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g: Generation = serde_json::from_str(&line).map_err(|e| MuseError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(g);
    }
    Ok(out)
}

fn synonyms(cfg: &RunConfig) -> Result<SynonymLexicon> {
    Ok(match &cfg.eval.synonyms {
        Some(p) => SynonymLexicon::load(p)?,
        None => SynonymLexicon::bundled(),
    })
}

pub struct ReportArgs<'a> {
    pub gens: &'a Path,
    pub data: &'a Path,
    pub split: SplitArg,
    pub report: Option<&'a PathBuf>,
    pub format: Format,
}

pub fn evaluate(cfg: &RunConfig, args: &ReportArgs) -> Result<()> {
    let gens = load_generations(args.gens)?;
    let ds = load_split(cfg, args.data)?;
    let samples = args.split.select(&ds);
    let emb = HashedEmbedder {
        dim: cfg.eval.embedding_dim,
    };
    let syn = synonyms(cfg)?;
    let ctx = EvalContext {
        exec: cfg.exec,
        token_embedder: &emb,
        sentence_embedder: &emb,
        synonyms: cfg.eval.meteor_synonyms.then_some(&syn as &dyn SynonymSource),
    };
    let report = evaluate_corpus(&gens, &samples, &ctx)?;
    if let Some(path) = args.report {
        write_file(path, &to_json(&report)?)?;
        archive_next_to(cfg, path)?;
    }
    emit(args.format, report.to_text(), || to_json(&report))
}

pub fn analyze_pos(cfg: &RunConfig, args: &ReportArgs) -> Result<()> {
    let gens = load_generations(args.gens)?;
    let ds = load_split(cfg, args.data)?;
    let samples = args.split.select(&ds);
    let mut by_id: BTreeMap<&str, &str> = BTreeMap::new();
    for g in &gens {
        if by_id.insert(&g.id, &g.generation).is_some() {
            bail!(MuseError::Data(format!("two generations for sample {}", g.id)));
        }
    }
    let mut rows: Vec<(&Sample, &str)> = Vec::with_capacity(samples.len());
    for s in &samples {
        let g = by_id
            .remove(s.id.as_str())
            .ok_or_else(|| MuseError::Data(format!("no generation for sample {}", s.id)))?;
        rows.push((s, g));
    }
    if let Some(extra) = by_id.keys().next() {
        bail!(MuseError::Data(format!("generation for unknown sample {extra}")));
    }
    rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let tagger = match &cfg.eval.pos_lexicon {
        Some(p) => LexiconTagger::load(p)?,
        None => LexiconTagger::bundled(),
    };
    let g: Vec<&str> = rows.iter().map(|r| r.1).collect();
    let r: Vec<&str> = rows.iter().map(|r| r.0.explanation.as_str()).collect();
    let ocr: Vec<bool> = rows.iter().map(|r| r.0.is_ocr_sample).collect();
    let table = pos_overlap_table(&g, &r, &ocr, &tagger, &synonyms(cfg)?, cfg.exec)?;
    if let Some(path) = args.report {
        write_file(path, &to_json(&table)?)?;
        archive_next_to(cfg, path)?;
    }
    emit(args.format, table.to_text(), || to_json(&table))
}

pub fn rater_agreement(cfg: &RunConfig, ratings: &Path, report: Option<&Path>, format: Format) -> Result<()> {
    let rs = muse_core::analysis::load_ratings(ratings).with_context(|| format!("loading {}", ratings.display()))?;
    let r = AgreementReport::compute(&rs)?;
    if let Some(path) = report {
        write_file(path, &to_json(&r)?)?;
        archive_next_to(cfg, path)?;
    }
    emit(format, r.to_text(), || to_json(&r))
}
