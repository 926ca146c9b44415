use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use qrewrite::data::{gen_synthetic, load_checkpoint, load_squad_json, merge_records, read_augmented, save_checkpoint, write_augmented, write_squad_json};
use qrewrite::eval::{contrast_report, eval_mrc, eval_reconstruction, rewrite_report, EvalReport};
use qrewrite::text::{TokenSeq, Vocab};
use qrewrite::{train_ae, train_guide, Autoencoder, Dataset, GuideModel, Label, Rewriter, Scalar};
use serde_json::json;

use crate::config::RunConfig;
use crate::Usage;

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Usage(format!("missing {what}: {} does not exist", path.display())).into())
    }
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocab> {
    let path = cfg.vocab_path();
    require(&path, "vocabulary")?;
    Ok(Vocab::load(&path)?)
}

fn load_dataset(path: &Path, what: &str, vocab: &Vocab) -> Result<Dataset> {
    require(path, what)?;
    let load = load_squad_json(path, Some(vocab))?;
    if load.dropped > 0 {
        warn!("{}: dropped {} tuples whose answers do not align to tokens", path.display(), load.dropped);
    }
    Ok(load.dataset)
}

fn load_guide<T: Scalar>(cfg: &RunConfig, vocab: &Vocab) -> Result<GuideModel<T>> {
    let path = cfg.guide_path();
    require(&path, "guide checkpoint")?;
    let ckpt = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(GuideModel::from_checkpoint(ckpt, vocab)?)
}

fn load_models<T: Scalar>(cfg: &RunConfig, vocab: &Vocab) -> Result<(GuideModel<T>, Autoencoder<T>)> {
    let guide = load_guide::<T>(cfg, vocab)?;
    let path = cfg.ae_path();
    require(&path, "autoencoder checkpoint")?;
    let ckpt = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
    let ae = Autoencoder::from_checkpoint(ckpt, Arc::clone(guide.embeddings()), vocab)?;
    Ok((guide, ae))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Distinct training questions, sorted by id sequence.
fn distinct_questions(dataset: &Dataset) -> Vec<TokenSeq> {
    let mut qs: Vec<TokenSeq> = dataset.tuples.iter().map(|t| t.question.clone()).collect();
    qs.sort_by(|a, b| a.ids.cmp(&b.ids));
    qs.dedup_by(|a, b| a.ids == b.ids);
    qs
}

/// The answerable tuples the rewriter uses as sources.
fn rewrite_sources(dataset: &Dataset, limit: Option<usize>) -> Dataset {
    let mut keep = limit.unwrap_or(usize::MAX);
    let mut sources = dataset.clone();
    sources.tuples.retain(|t| {
        let take = t.label == Label::Answerable && keep > 0;
        keep -= usize::from(take);
        take
    });
    sources
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let dataset = gen_synthetic(&cfg.synthetic())?;
    let (train, dev) = dataset.partition(cfg.data.dev_fraction, cfg.stage_seeds().split);
    let dir = cfg.data_dir();
    cfg.echo_into(&dir)?;
    write_squad_json(&train, dir.join("train.json"))?;
    write_squad_json(&dev, dir.join("dev.json"))?;
    dataset.vocab.save(dir.join("vocab.txt"))?;
    info!(
        "generated {} tuples ({} answerable): {} train, {} dev",
        dataset.len(),
        dataset.count(Label::Answerable),
        train.len(),
        dev.len()
    );
    Ok(())
}

pub fn train_mrc<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let train = load_dataset(&cfg.dataset_path(), "training set", &vocab)?;
    let dev_path = cfg.dev_path();
    let dev = if dev_path.is_file() {
        Some(load_dataset(&dev_path, "dev set", &vocab)?)
    } else {
        warn!("no dev set at {}; training without per-epoch evaluation", dev_path.display());
        None
    };
    let resolved = cfg.resolved();
    let (guide, log) = train_guide::<T>(&train, &cfg.preset.guide(), &resolved.guide_train, dev.as_ref())?;
    let dir = cfg.models_dir();
    cfg.echo_into(&dir)?;
    save_checkpoint(&guide.to_checkpoint(), cfg.guide_path())?;
    write_json(&dir.join("guide_log.json"), &log)?;
    info!("saved guide to {}", cfg.guide_path().display());
    Ok(())
}

pub fn train_autoencoder<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let train = load_dataset(&cfg.dataset_path(), "training set", &vocab)?;
    let guide = load_guide::<T>(cfg, &vocab)?;
    let corpus: Vec<Vec<u32>> = distinct_questions(&train).into_iter().map(|q| q.ids).collect();
    info!("autoencoder corpus: {} distinct questions", corpus.len());
    let resolved = cfg.resolved();
    let (ae, log) = train_ae::<T>(&corpus, Arc::clone(guide.embeddings()), &vocab, &cfg.preset.autoencoder(), &resolved.ae_train)?;
    let dir = cfg.models_dir();
    cfg.echo_into(&dir)?;
    save_checkpoint(&ae.to_checkpoint(), cfg.ae_path())?;
    write_json(&dir.join("ae_log.json"), &log)?;
    info!("saved autoencoder to {}", cfg.ae_path().display());
    Ok(())
}

pub fn rewrite<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let train = load_dataset(&cfg.dataset_path(), "training set", &vocab)?;
    let (guide, ae) = load_models::<T>(cfg, &vocab)?;
    let rewriter = Rewriter::new(&guide, &ae, &vocab)?;
    let resolved = cfg.resolved();
    let (contrast, [gradient, _]) = contrast_report(&rewriter, &train, &resolved.rewrite, cfg.rewrite_limit)?;

    let dir = cfg.augment_dir();
    cfg.echo_into(&dir)?;
    write_augmented(&gradient.records, cfg.augmented_path())?;
    fs::write(dir.join("contrast.txt"), contrast.to_string())?;
    fs::write(dir.join("contrast.json"), contrast.to_json()? + "\n")?;
    let mut report = rewrite_report(&gradient.records, &rewrite_sources(&train, cfg.rewrite_limit));
    report.config = serde_json::to_value(&resolved.rewrite)?;
    report.write(&dir, "rewrite_report")?;
    info!(
        "{} records from {} sources ({:.1}% yield)\n{contrast}",
        gradient.records.len(),
        gradient.sources,
        100.0 * gradient.source_yield()
    );
    Ok(())
}

pub fn merge(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let train = load_dataset(&cfg.dataset_path(), "training set", &vocab)?;
    let path = cfg.augmented_path();
    require(&path, "augmented records")?;
    let records = read_augmented(&path)?;
    let merged = merge_records(&train, &records, cfg.merge_mode)?;
    let dir = cfg.augment_dir();
    cfg.echo_into(&dir)?;
    write_squad_json(&merged, cfg.merged_path())?;
    info!(
        "merged {} of {} records ({}): {} -> {} tuples",
        merged.len() - train.len(),
        records.len(),
        cfg.merge_mode,
        train.len(),
        merged.len()
    );
    Ok(())
}

pub fn evaluate<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let train = load_dataset(&cfg.dataset_path(), "training set", &vocab)?;
    let dev = load_dataset(&cfg.dev_path(), "dev set", &vocab)?;
    let (guide, ae) = load_models::<T>(cfg, &vocab)?;
    let resolved = cfg.resolved();
    let echo = serde_json::to_value(&resolved)?;

    let mut reports: Vec<(&str, EvalReport)> = Vec::new();
    let mut mrc = eval_mrc(&guide, &dev)?;
    mrc.config = echo.clone();
    reports.push(("mrc", mrc));
    let mut recon = eval_reconstruction(&ae, &distinct_questions(&train), &vocab)?;
    recon.config = echo.clone();
    reports.push(("reconstruction", recon));
    let aug = cfg.augmented_path();
    if aug.is_file() {
        let started = Instant::now();
        let records = read_augmented(&aug)?;
        let mut rw = rewrite_report(&records, &rewrite_sources(&train, cfg.rewrite_limit));
        rw.config = echo;
        rw.wall_clock_secs = started.elapsed().as_secs_f64();
        reports.push(("rewrite", rw));
    } else {
        warn!("no augmented records at {}; skipping the rewrite report", aug.display());
    }

    let dir = cfg.eval_dir();
    cfg.echo_into(&dir)?;
    let mut text = String::new();
    let mut combined = serde_json::Map::new();
    for (stem, r) in &reports {
        r.check_ranges()?;
        r.write(&dir, stem)?;
        text.push_str(&r.to_string());
        text.push('\n');
        combined.insert(stem.to_string(), serde_json::to_value(r)?);
    }
    fs::write(dir.join("report.txt"), &text)?;
    write_json(&dir.join("report.json"), &json!(combined))?;
    print!("{text}");
    Ok(())
}

pub fn pipeline<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    gen_data(cfg)?;
    train_mrc::<T>(cfg)?;
    train_autoencoder::<T>(cfg)?;
    rewrite::<T>(cfg)?;
    merge(cfg)?;
    evaluate::<T>(cfg)?;
    info!("pipeline finished in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
