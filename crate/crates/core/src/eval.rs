//! Evaluation runners and reports.
//!
//! Metric functions work on `[0, 1]`; reports show percentages.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::autoencoder::Autoencoder;
use crate::data::{AugmentedRecord, Dataset, Paragraph};
use crate::error::{contract, Error, Result};
use crate::guide::{GuideModel, Prediction};
use crate::label::Label;
use crate::rewriter::{RewriteConfig, RewriteOutcome, Rewriter, Strategy};
use crate::scalar::Scalar;
use crate::text::{bleu4, rouge_l, squad_em_f1, TokenSeq, Vocab};

/// Anything that answers a question about a paragraph.
pub trait Predictor: Sync {
    fn predict(&self, question: &TokenSeq, paragraph: &Paragraph) -> Result<Prediction>;
}

impl<T: Scalar> Predictor for GuideModel<T> {
    fn predict(&self, question: &TokenSeq, paragraph: &Paragraph) -> Result<Prediction> {
        GuideModel::predict(self, question, &paragraph.tokens)
    }
}

/// Anything that maps a question back to itself through a bottleneck.
pub trait Reconstructor: Sync {
    fn reconstruct_ids(&self, question: &[u32]) -> Result<Vec<u32>>;
}

impl<T: Scalar> Reconstructor for Autoencoder<T> {
    fn reconstruct_ids(&self, question: &[u32]) -> Result<Vec<u32>> {
        Ok(self.reconstruct(question)?.ids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// `[0, 100]`.
    Percent,
    /// `[0, 1]`.
    Unit,
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub value: f64,
    pub scale: Scale,
}

/// Ten equal-width bins over `[0, 1]`; 1.0 lands in the last bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Histogram {
    pub bins: Vec<usize>,
}

impl Histogram {
    pub const BINS: usize = 10;

    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut bins = vec![0; Self::BINS];
        for v in values {
            let i = ((v.clamp(0.0, 1.0) * Self::BINS as f64) as usize).min(Self::BINS - 1);
            bins[i] += 1;
        }
        Self { bins }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().sum()
    }

    /// Count in bins that lie entirely within `[lo, hi]`, plus partial bins.
    pub fn mass_between(&self, lo: f64, hi: f64) -> usize {
        let w = 1.0 / Self::BINS as f64;
        self.bins
            .iter()
            .enumerate()
            .filter(|&(i, _)| (i as f64 + 1.0) * w > lo && (i as f64) * w <= hi)
            .map(|(_, &c)| c)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub title: String,
    pub metrics: BTreeMap<String, Metric>,
    pub splits: BTreeMap<String, BTreeMap<String, Metric>>,
    pub histograms: BTreeMap<String, Histogram>,
    pub config: serde_json::Value,
    pub wall_clock_secs: f64,
}

impl EvalReport {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            metrics: BTreeMap::new(),
            splits: BTreeMap::new(),
            histograms: BTreeMap::new(),
            config: serde_json::Value::Null,
            wall_clock_secs: 0.0,
        }
    }

    pub fn set(&mut self, name: &str, value: f64, scale: Scale) {
        self.metrics.insert(name.to_string(), Metric { value, scale });
    }

    pub fn set_split(&mut self, split: &str, name: &str, value: f64, scale: Scale) {
        self.splits
            .entry(split.to_string())
            .or_default()
            .insert(name.to_string(), Metric { value, scale });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|m| m.value)
    }

    /// Checks every metric against its declared range.
    pub fn check_ranges(&self) -> Result<()> {
        let all = self
            .metrics
            .iter()
            .chain(self.splits.values().flat_map(|s| s.iter()));
        for (name, m) in all {
            let ok = match m.scale {
                Scale::Percent => (0.0..=100.0).contains(&m.value),
                Scale::Unit => (0.0..=1.0).contains(&m.value),
                Scale::Count => m.value >= 0.0 && m.value.fract() == 0.0,
            };
            if !ok {
                return Err(contract!("metric `{name}` = {} outside its {:?} range", m.value, m.scale));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes `<stem>.txt` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let txt = dir.join(format!("{stem}.txt"));
        fs::write(&txt, self.to_string()).map_err(|e| Error::io(&txt, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.to_json()? + "\n").map_err(|e| Error::io(&json, e))
    }
}

fn fmt_metric(m: &Metric) -> String {
    match m.scale {
        Scale::Percent => format!("{:.2}", m.value),
        Scale::Unit => format!("{:.4}", m.value),
        Scale::Count => format!("{}", m.value),
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "== {} ==", self.title)?;
        for (name, m) in &self.metrics {
            writeln!(f, "{name:<28} {:>10}", fmt_metric(m))?;
        }
        for (split, metrics) in &self.splits {
            writeln!(f, "-- {split} --")?;
            for (name, m) in metrics {
                writeln!(f, "{name:<28} {:>10}", fmt_metric(m))?;
            }
        }
        for (name, h) in &self.histograms {
            writeln!(f, "-- histogram: {name} --")?;
            for (i, c) in h.bins.iter().enumerate() {
                let lo = i as f64 / Histogram::BINS as f64;
                writeln!(f, "[{lo:.1}, {:.1}{} {c:>8}", lo + 0.1, if i + 1 == Histogram::BINS { "]" } else { ")" })?;
            }
        }
        writeln!(f, "wall clock: {:.1}s", self.wall_clock_secs)
    }
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// EM/F1 over all tuples, plus answerability accuracy and per-label splits.
/// `span_exact` scores the best span of answerable tuples regardless of
/// the predicted label.
pub fn eval_mrc(predictor: &dyn Predictor, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(contract!("cannot evaluate on an empty dataset"));
    }
    let start = std::time::Instant::now();
    let scored: Vec<Result<(Label, bool, f64, bool, bool)>> = dataset
        .tuples
        .par_iter()
        .map(|t| {
            let p = dataset.paragraph(&t.paragraph_id)?;
            let pred = predictor.predict(&t.question, p)?;
            let text = pred.span.map(|(s, e)| p.span_text(s, e)).unwrap_or_default();
            let score = squad_em_f1(&text, &t.answers);
            let span_ok = match (t.label, pred.best_span) {
                (Label::Answerable, Some((s, e))) => squad_em_f1(&p.span_text(s, e), &t.answers).exact,
                _ => false,
            };
            Ok((t.label, score.exact, score.f1, pred.label == t.label, span_ok))
        })
        .collect();

    let mut report = EvalReport::new(format!("mrc: {}", dataset.name));
    let n = dataset.len();
    let (mut em, mut f1, mut acc, mut span) = (0usize, 0.0, 0usize, 0usize);
    let mut split: BTreeMap<Label, (usize, usize, f64)> = BTreeMap::new();
    for r in scored {
        let (label, exact, f, correct, span_ok) = r?;
        em += usize::from(exact);
        f1 += f;
        acc += usize::from(correct);
        span += usize::from(span_ok);
        let s = split.entry(label).or_default();
        s.0 += 1;
        s.1 += usize::from(exact);
        s.2 += f;
    }
    report.set("exact", pct(em, n), Scale::Percent);
    report.set("f1", 100.0 * f1 / n as f64, Scale::Percent);
    report.set("answerability_accuracy", pct(acc, n), Scale::Percent);
    let n_ans = dataset.count(Label::Answerable);
    report.set("span_exact", pct(span, n_ans), Scale::Percent);
    report.set("total", n as f64, Scale::Count);
    for (label, (count, exact, f)) in split {
        let name = label.to_string();
        report.set_split(&name, "exact", pct(exact, count), Scale::Percent);
        report.set_split(&name, "f1", 100.0 * f / count as f64, Scale::Percent);
        report.set_split(&name, "total", count as f64, Scale::Count);
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Mean BLEU-4 and ROUGE-L and the exact-reconstruction rate.
pub fn eval_reconstruction(model: &dyn Reconstructor, questions: &[TokenSeq], vocab: &Vocab) -> Result<EvalReport> {
    if questions.is_empty() {
        return Err(contract!("no questions to reconstruct"));
    }
    let start = std::time::Instant::now();
    let scored: Vec<Result<(f64, f64, bool)>> = questions
        .par_iter()
        .map(|q| {
            let out = model.reconstruct_ids(&q.ids)?;
            let hyp: Vec<&str> = out.iter().map(|&i| vocab.token(i)).collect();
            let reference: Vec<&str> = q.tokens.iter().map(String::as_str).collect();
            Ok((bleu4(&reference, &hyp), rouge_l(&reference, &hyp), out == q.ids))
        })
        .collect();
    let (mut b, mut r, mut exact) = (0.0, 0.0, 0usize);
    for s in scored {
        let (bs, rs, e) = s?;
        b += bs;
        r += rs;
        exact += usize::from(e);
    }
    let n = questions.len();
    let mut report = EvalReport::new("reconstruction");
    report.set("bleu4", 100.0 * b / n as f64, Scale::Percent);
    report.set("rouge_l", 100.0 * r / n as f64, Scale::Percent);
    report.set("exact", pct(exact, n), Scale::Percent);
    report.set("total", n as f64, Scale::Count);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Yield per answerable source, overlap and probability histograms and
/// per-step-size counts of a set of records.
pub fn rewrite_report(records: &[AugmentedRecord], source: &Dataset) -> EvalReport {
    let mut report = EvalReport::new(format!("rewrite: {}", source.name));
    let n_sources = source.count(Label::Answerable);
    let mut with_record: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *with_record.entry(r.source_id.as_str()).or_default() += 1;
    }
    report.set("records", records.len() as f64, Scale::Count);
    report.set("sources", n_sources as f64, Scale::Count);
    report.set("source_yield", pct(with_record.len().min(n_sources), n_sources), Scale::Percent);
    let mean = |f: fn(&AugmentedRecord) -> f64| {
        if records.is_empty() {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / records.len() as f64
        }
    };
    report.set("mean_jaccard", mean(|r| r.jaccard), Scale::Unit);
    report.set("mean_p_target", mean(|r| r.p_target), Scale::Unit);
    for label in [Label::Unanswerable, Label::Answerable] {
        let c = records.iter().filter(|r| r.target_label == label).count();
        report.set(&format!("records_{label}"), c as f64, Scale::Count);
    }
    let mut per_eta: BTreeMap<usize, usize> = BTreeMap::new();
    for r in records {
        *per_eta.entry(r.eta_index).or_default() += 1;
    }
    for (i, c) in per_eta {
        report.set_split("per_eta_index", &format!("eta{i}"), c as f64, Scale::Count);
    }
    report
        .histograms
        .insert("jaccard".into(), Histogram::of(records.iter().map(|r| r.jaccard)));
    report
        .histograms
        .insert("p_target".into(), Histogram::of(records.iter().map(|r| r.p_target)));
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastRow {
    pub strategy: String,
    pub sources: usize,
    pub attempts: usize,
    pub accepted: usize,
    pub flips: usize,
    pub acceptance_rate: f64,
    pub flip_rate: f64,
    pub source_yield: f64,
}

impl ContrastRow {
    fn new(strategy: Strategy, o: &RewriteOutcome) -> Self {
        Self {
            strategy: strategy.to_string(),
            sources: o.sources,
            attempts: o.attempts,
            accepted: o.records.len(),
            flips: o.flips,
            acceptance_rate: 100.0 * o.acceptance_rate(),
            flip_rate: 100.0 * o.flip_rate(),
            source_yield: 100.0 * o.source_yield(),
        }
    }
}

/// Gradient guidance against Gaussian noise on the same sources.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastReport {
    pub mode: String,
    pub rows: Vec<ContrastRow>,
}

impl ContrastReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

impl fmt::Display for ContrastReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        writeln!(s, "== rewrite contrast ({}) ==", self.mode)?;
        writeln!(
            s,
            "{:<10} {:>8} {:>9} {:>9} {:>10} {:>10} {:>10}",
            "strategy", "sources", "attempts", "accepted", "accept %", "flip %", "yield %"
        )?;
        for r in &self.rows {
            writeln!(
                s,
                "{:<10} {:>8} {:>9} {:>9} {:>10.2} {:>10.2} {:>10.2}",
                r.strategy, r.sources, r.attempts, r.accepted, r.acceptance_rate, r.flip_rate, r.source_yield
            )?;
        }
        f.write_str(&s)
    }
}

/// Runs both strategies over the first `limit` answerable tuples.
pub fn contrast_report<T: Scalar>(
    rewriter: &Rewriter<'_, T>,
    dataset: &Dataset,
    cfg: &RewriteConfig,
    limit: Option<usize>,
) -> Result<(ContrastReport, [RewriteOutcome; 2])> {
    let grad = rewriter.rewrite_dataset(dataset, cfg, Strategy::Gradient, limit)?;
    let noise = rewriter.rewrite_dataset(dataset, cfg, Strategy::Noise, limit)?;
    let report = ContrastReport {
        mode: cfg.mode.to_string(),
        rows: vec![
            ContrastRow::new(Strategy::Gradient, &grad),
            ContrastRow::new(Strategy::Noise, &noise),
        ],
    };
    Ok((report, [grad, noise]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticConfig};

    struct Oracle<'a>(&'a Dataset);

    impl Predictor for Oracle<'_> {
        fn predict(&self, q: &TokenSeq, p: &Paragraph) -> Result<Prediction> {
            let t = self
                .0
                .tuples
                .iter()
                .find(|t| &t.question == q && t.paragraph_id == p.id)
                .unwrap();
            Ok(Prediction {
                label: t.label,
                span: t.span,
                best_span: t.span,
            })
        }
    }

    struct Empty;

    impl Predictor for Empty {
        fn predict(&self, _: &TokenSeq, _: &Paragraph) -> Result<Prediction> {
            Ok(Prediction {
                label: Label::Unanswerable,
                span: None,
                best_span: None,
            })
        }
    }

    struct Identity;

    impl Reconstructor for Identity {
        fn reconstruct_ids(&self, q: &[u32]) -> Result<Vec<u32>> {
            Ok(q.to_vec())
        }
    }

    fn small() -> Dataset {
        gen_synthetic(&SyntheticConfig {
            n_paragraphs: 4,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn oracle_scores_full_marks() {
        let d = small();
        let r = eval_mrc(&Oracle(&d), &d).unwrap();
        assert_eq!(r.get("exact"), Some(100.0));
        assert_eq!(r.get("f1"), Some(100.0));
        assert_eq!(r.get("answerability_accuracy"), Some(100.0));
        r.check_ranges().unwrap();
    }

    #[test]
    fn empty_predictor_on_unanswerable_split() {
        let mut d = small();
        d.tuples.retain(|t| t.label == Label::Unanswerable);
        let r = eval_mrc(&Empty, &d).unwrap();
        assert_eq!(r.get("exact"), Some(100.0));
        d.tuples.clear();
        assert!(eval_mrc(&Empty, &d).is_err());
    }

    #[test]
    fn identity_reconstruction() {
        let d = small();
        let qs: Vec<TokenSeq> = d.tuples.iter().map(|t| t.question.clone()).collect();
        let r = eval_reconstruction(&Identity, &qs, &d.vocab).unwrap();
        assert_eq!(r.get("bleu4"), Some(100.0));
        assert_eq!(r.get("rouge_l"), Some(100.0));
        assert_eq!(r.get("exact"), Some(100.0));
        assert!(eval_reconstruction(&Identity, &[], &d.vocab).is_err());
    }

    #[test]
    fn empty_rewrite_report_is_zero() {
        let d = small();
        let r = rewrite_report(&[], &d);
        for (k, m) in &r.metrics {
            if k != "sources" {
                assert_eq!(m.value, 0.0, "{k}");
            }
        }
        assert_eq!(r.histograms["jaccard"].total(), 0);
        r.check_ranges().unwrap();
        assert!(r.to_string().contains("source_yield"));
    }

    #[test]
    fn histogram_binning() {
        let h = Histogram::of([0.0, 0.05, 0.5, 0.99, 1.0]);
        assert_eq!(h.bins[0], 2);
        assert_eq!(h.bins[5], 1);
        assert_eq!(h.bins[9], 2);
        assert_eq!(h.mass_between(0.5, 0.99), 3);
    }

    #[test]
    fn ranges_are_enforced() {
        let mut r = EvalReport::new("x");
        r.set("bad", 101.0, Scale::Percent);
        assert!(r.check_ranges().is_err());
    }
}
