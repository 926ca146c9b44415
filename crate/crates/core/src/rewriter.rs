//! Gradient-guided question rewriting and the Gaussian-noise baseline.
//!
//! For each initial step size, the question embedding is revised for up to
//! `max_steps` iterations. Each revision is decoded by the autoencoder; the
//! decoded question is re-embedded and scored by the guide, and kept when
//! the target probability clears `beta_t` and its unigram overlap with the
//! source lies in `[beta_a, beta_b]`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::autoencoder::Autoencoder;
use crate::data::{AugmentedRecord, DataTuple, Dataset};
use crate::error::{contract, Error, Result};
use crate::guide::{GuideModel, LossSpec, PackedInput};
use crate::label::Label;
use crate::scalar::Scalar;
use crate::text::vocab::{BOS, CLS, EOS, MASK, PAD, SEP};
use crate::text::{jaccard_unigram, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewriteMode {
    ToUnanswerable,
    ToAnswerable,
    Both,
}

impl RewriteMode {
    pub fn targets(self) -> &'static [Label] {
        match self {
            RewriteMode::ToUnanswerable => &[Label::Unanswerable],
            RewriteMode::ToAnswerable => &[Label::Answerable],
            RewriteMode::Both => &[Label::Unanswerable, Label::Answerable],
        }
    }
}

impl fmt::Display for RewriteMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewriteMode::ToUnanswerable => "to-unanswerable",
            RewriteMode::ToAnswerable => "to-answerable",
            RewriteMode::Both => "both",
        })
    }
}

impl FromStr for RewriteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "to-unanswerable" => Ok(RewriteMode::ToUnanswerable),
            "to-answerable" => Ok(RewriteMode::ToAnswerable),
            "both" => Ok(RewriteMode::Both),
            _ => Err(contract!("unknown rewrite mode `{s}`")),
        }
    }
}

/// Where the target probability is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Acceptance {
    /// Re-embed the decoded question and score it against the paragraph.
    RoundTrip,
    /// Score the revised embedding itself.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewriteConfig {
    pub step_sizes: Vec<f64>,
    pub beta_s: f64,
    pub beta_t: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    pub max_steps: usize,
    /// Answerability weight in the answer-preserving loss.
    pub lambda: f64,
    pub mode: RewriteMode,
    pub dedup: bool,
    /// Keep the `[CLS]` and `[SEP]` rows fixed during revision.
    pub freeze_special_rows: bool,
    pub acceptance: Acceptance,
    /// Discard decodes containing control tokens such as `[PAD]` or `[SEP]`.
    pub reject_control_tokens: bool,
    /// Noise scale of the baseline, relative to the step size.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        Self {
            step_sizes: vec![1.0, 2.0, 4.0, 8.0],
            beta_s: 0.9,
            beta_t: 0.5,
            beta_a: 0.5,
            beta_b: 0.99,
            max_steps: 5,
            lambda: 1.0,
            mode: RewriteMode::ToUnanswerable,
            dedup: true,
            freeze_special_rows: false,
            acceptance: Acceptance::RoundTrip,
            reject_control_tokens: true,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl RewriteConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.step_sizes.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
            return Err(contract!("step size {bad} must be positive and finite"));
        }
        if !(self.beta_s > 0.0 && self.beta_s <= 1.0) {
            return Err(contract!("beta_s {} outside (0, 1]", self.beta_s));
        }
        if !(self.beta_t > 0.0 && self.beta_t <= 1.0) {
            return Err(contract!("beta_t {} outside (0, 1]", self.beta_t));
        }
        if !(0.0 <= self.beta_a && self.beta_a < self.beta_b && self.beta_b <= 1.0) {
            return Err(contract!("overlap window [{}, {}] must satisfy 0 <= a < b <= 1", self.beta_a, self.beta_b));
        }
        if !self.lambda.is_finite() || !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(contract!("lambda and noise_sigma must be finite, noise_sigma positive"));
        }
        Ok(())
    }
}

/// Step size at iteration `k` for initial size `eta0`.
pub fn step_size(eta0: f64, beta_s: f64, k: usize) -> f64 {
    eta0 * beta_s.powi(k as i32)
}

/// `e - eta * grad`.
pub fn revise_step<T: Scalar>(e: &Tensor<T>, grad: &Tensor<T>, eta: f64) -> Result<Tensor<T>> {
    if !(eta >= 0.0) {
        return Err(contract!("step size {eta} must be non-negative"));
    }
    if !e.same_shape(grad) {
        return Err(contract!("gradient {:?} does not match embedding {:?}", grad.shape(), e.shape()));
    }
    let eta = T::c(eta);
    e.zip_map(grad, |x, g| x - eta * g)
}

/// `p_target > beta_t` and `jaccard(q, q_hat)` within `[beta_a, beta_b]`.
pub fn accept<S: AsRef<str>>(q: &[S], q_hat: &[S], p_target: f64, cfg: &RewriteConfig) -> bool {
    accept_scores(jaccard_unigram(q, q_hat), p_target, cfg)
}

pub fn accept_scores(jaccard: f64, p_target: f64, cfg: &RewriteConfig) -> bool {
    p_target > cfg.beta_t && (cfg.beta_a..=cfg.beta_b).contains(&jaccard)
}

/// Guide, autoencoder and vocabulary used for rewriting. The two models
/// must share the same embedding tables.
pub struct Rewriter<'a, T: Scalar> {
    pub guide: &'a GuideModel<T>,
    pub ae: &'a Autoencoder<T>,
    pub vocab: &'a Vocab,
}

/// How each revision moves the embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Gradient,
    /// Gaussian noise with standard deviation `noise_sigma * eta`.
    Noise,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Gradient => "gradient",
            Strategy::Noise => "noise",
        })
    }
}

/// Records plus counts over every evaluated revision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewriteOutcome {
    pub records: Vec<AugmentedRecord>,
    /// Revisions decoded and scored.
    pub attempts: usize,
    /// Revisions whose decode the guide assigns to the target label.
    pub flips: usize,
    pub sources: usize,
    pub sources_with_record: usize,
}

impl RewriteOutcome {
    fn absorb(&mut self, other: RewriteOutcome) {
        self.sources_with_record += usize::from(!other.records.is_empty());
        self.records.extend(other.records);
        self.attempts += other.attempts;
        self.flips += other.flips;
        self.sources += 1;
    }

    pub fn acceptance_rate(&self) -> f64 {
        ratio(self.records.len(), self.attempts)
    }

    pub fn flip_rate(&self) -> f64 {
        ratio(self.flips, self.attempts)
    }

    pub fn source_yield(&self) -> f64 {
        ratio(self.sources_with_record, self.sources)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn is_control(id: u32) -> bool {
    matches!(id, PAD | CLS | SEP | MASK | BOS | EOS)
}

fn tag(label: Label) -> char {
    match label {
        Label::Answerable => 'a',
        Label::Unanswerable => 'u',
    }
}

impl<'a, T: Scalar> Rewriter<'a, T> {
    pub fn new(guide: &'a GuideModel<T>, ae: &'a Autoencoder<T>, vocab: &'a Vocab) -> Result<Self> {
        let shared = Arc::ptr_eq(guide.embeddings(), ae.embeddings())
            || guide.embeddings().content_hash() == ae.embeddings().content_hash();
        if !shared {
            return Err(Error::EmbeddingMismatch);
        }
        if guide.vocab_hash() != vocab.content_hash() {
            return Err(Error::VocabMismatch {
                expected: guide.vocab_hash().to_string(),
                found: vocab.content_hash(),
            });
        }
        Ok(Self { guide, ae, vocab })
    }

    fn loss_spec(&self, tuple: &DataTuple, target: Label, cfg: &RewriteConfig) -> LossSpec {
        match target {
            Label::Unanswerable => LossSpec::Answerability(Label::Unanswerable),
            Label::Answerable => LossSpec::Full {
                label: Label::Answerable,
                span: tuple.span,
                lambda: cfg.lambda,
            },
        }
    }

    fn check_source(&self, tuple: &DataTuple, dataset: &Dataset) -> Result<()> {
        if tuple.label != Label::Answerable || tuple.span.is_none() {
            return Err(contract!("rewrite sources must be answerable; `{}` is not", tuple.id));
        }
        let p = dataset.paragraph(&tuple.paragraph_id)?;
        let room = self.guide.config().max_len.saturating_sub(tuple.question.len() + 3);
        if tuple.span.is_some_and(|(_, e)| e >= room.min(p.tokens.len())) {
            return Err(contract!("answer of `{}` does not fit in the guide's input", tuple.id));
        }
        Ok(())
    }

    /// Gradient-guided rewrites of one answerable tuple.
    pub fn rewrite(&self, tuple: &DataTuple, dataset: &Dataset, cfg: &RewriteConfig) -> Result<RewriteOutcome> {
        self.run(tuple, dataset, cfg, Strategy::Gradient)
    }

    /// Same loop with Gaussian noise in place of the gradient step.
    pub fn noise_rewrite(&self, tuple: &DataTuple, dataset: &Dataset, cfg: &RewriteConfig) -> Result<RewriteOutcome> {
        self.run(tuple, dataset, cfg, Strategy::Noise)
    }

    pub fn run(&self, tuple: &DataTuple, dataset: &Dataset, cfg: &RewriteConfig, strategy: Strategy) -> Result<RewriteOutcome> {
        cfg.validate()?;
        self.check_source(tuple, dataset)?;
        let p = dataset.paragraph(&tuple.paragraph_id)?;
        let base = self.guide.embed(&tuple.question, &p.tokens)?;
        let rows = base.e_q.rows();
        let mut out = RewriteOutcome::default();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a(&tuple.id));
        let source_words: Vec<&str> = tuple.question.tokens.iter().map(String::as_str).collect();

        for &target in cfg.mode.targets() {
            let spec = self.loss_spec(tuple, target, cfg);
            let mut seen = BTreeSet::new();
            for (eta_index, &eta0) in cfg.step_sizes.iter().enumerate() {
                let mut e = base.e_q.clone();
                for step in 0..cfg.max_steps {
                    let eta = step_size(eta0, cfg.beta_s, step);
                    let mut delta = match strategy {
                        Strategy::Gradient => {
                            let input = base.with_question_embedding(e.clone())?;
                            self.guide.grad_wrt_question(&input, &spec)?.grad
                        }
                        Strategy::Noise => {
                            let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| contract!("noise: {e}"))?;
                            let data = (0..e.numel()).map(|_| T::c(-normal.sample(&mut rng))).collect();
                            Tensor::from_vec(e.shape().to_vec(), data)?
                        }
                    };
                    if cfg.freeze_special_rows {
                        delta.row_mut(0).fill(T::zero());
                        delta.row_mut(rows - 1).fill(T::zero());
                    }
                    e = revise_step(&e, &delta, eta)?;
                    if !e.is_finite() {
                        return Err(Error::Numeric(format!("revision of `{}`", tuple.id)));
                    }

                    let decoded = self.ae.decode_embeddings(&e)?;
                    let p_target = match cfg.acceptance {
                        Acceptance::RoundTrip => self.guide.probability(&decoded.ids, &p.tokens.ids, target)?,
                        Acceptance::Embedding => self.guide.forward(&base.with_question_embedding(e.clone())?)?.p(target),
                    }
                    .to_f64()
                    .unwrap_or(f64::NAN);
                    out.attempts += 1;
                    out.flips += usize::from(p_target > 0.5);

                    let words: Vec<&str> = decoded.ids.iter().map(|&i| self.vocab.token(i)).collect();
                    let jaccard = jaccard_unigram(&source_words, &words);
                    if !accept_scores(jaccard, p_target, cfg) {
                        continue;
                    }
                    if decoded.truncated || (cfg.reject_control_tokens && decoded.ids.iter().copied().any(is_control)) {
                        continue;
                    }
                    let question = words.join(" ");
                    if cfg.dedup && !seen.insert(question.clone()) {
                        continue;
                    }
                    let (span, plausible) = match target {
                        Label::Answerable => (tuple.span, None),
                        Label::Unanswerable => (None, tuple.span),
                    };
                    out.records.push(AugmentedRecord {
                        id: format!("{}-{}{eta_index}-{step}", tuple.id, tag(target)),
                        source_id: tuple.id.clone(),
                        question,
                        paragraph_id: tuple.paragraph_id.clone(),
                        target_label: target,
                        span_start: span.map(|s| s.0),
                        span_end: span.map(|s| s.1),
                        jaccard,
                        p_target,
                        eta_init: eta0,
                        eta_index,
                        step_index: step,
                        plausible_span: plausible,
                    });
                }
            }
        }
        out.sources = 1;
        out.sources_with_record = usize::from(!out.records.is_empty());
        Ok(out)
    }

    /// Rewrites the answerable tuples of `dataset` (the first `limit` of
    /// them, if given) in parallel; records keep dataset order.
    pub fn rewrite_dataset(
        &self,
        dataset: &Dataset,
        cfg: &RewriteConfig,
        strategy: Strategy,
        limit: Option<usize>,
    ) -> Result<RewriteOutcome> {
        let sources: Vec<&DataTuple> = dataset
            .tuples
            .iter()
            .filter(|t| t.label == Label::Answerable)
            .take(limit.unwrap_or(usize::MAX))
            .collect();
        let per_source: Vec<Result<RewriteOutcome>> = sources.par_iter().map(|t| self.run(t, dataset, cfg, strategy)).collect();
        let mut total = RewriteOutcome::default();
        for r in per_source {
            total.absorb(r?);
        }
        Ok(total)
    }

    /// Halves the step from `min(step_sizes)` until one revision strictly
    /// lowers the target loss. Returns the number of halvings, or `None`
    /// after `max_halvings`.
    pub fn descent_probe(
        &self,
        tuple: &DataTuple,
        dataset: &Dataset,
        target: Label,
        cfg: &RewriteConfig,
        max_halvings: usize,
    ) -> Result<Option<usize>> {
        self.check_source(tuple, dataset)?;
        let p = dataset.paragraph(&tuple.paragraph_id)?;
        let input: PackedInput<T> = self.guide.embed(&tuple.question, &p.tokens)?;
        let spec = self.loss_spec(tuple, target, cfg);
        let g = self.guide.grad_wrt_question(&input, &spec)?;
        let mut eta = cfg.step_sizes.iter().copied().fold(f64::INFINITY, f64::min);
        if !eta.is_finite() {
            return Err(contract!("no step sizes configured"));
        }
        for k in 0..=max_halvings {
            let revised = input.with_question_embedding(revise_step(&input.e_q, &g.grad, eta)?)?;
            if self.guide.loss_value(&revised, &spec)? < g.loss {
                return Ok(Some(k));
            }
            eta /= 2.0;
        }
        Ok(None)
    }
}
