//! Reading-comprehension guide model.
//!
//! `[CLS] q [SEP] d [SEP]` goes through the shared embedding layer and a
//! Transformer body. The `[CLS]` state feeds a two-way answerability head;
//! every position feeds independent start/end sigmoid heads. Span targets
//! of unanswerable questions point at `[CLS]`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{log_sigmoid, sigmoid, softmax_in_place, Graph, Tensor, Var};
use crate::data::{Checkpoint, DataTuple, Dataset};
use crate::embedding::{question_ids, EmbeddingTables, PARAGRAPH_SEGMENT, QUESTION_SEGMENT};
use crate::error::{contract, Error, Result};
use crate::label::Label;
use crate::nn::{init_linear, init_transformer, linear, transformer, TransformerDims};
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::text::vocab::SEP;
use crate::text::{TokenSeq, Vocab};
use crate::train::{fit, EpochStats, TrainConfig, Trainable};

const BODY: &str = "body";
const ANSWER_HEAD: &str = "answer_head";
const SPAN_HEAD: &str = "span_head";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuideConfig {
    pub dims: TransformerDims,
    pub max_len: usize,
    /// Weight of the answerability term in the training loss.
    pub lambda: f64,
    pub max_answer_len: usize,
}

impl GuideConfig {
    pub fn desk() -> Self {
        Self {
            dims: TransformerDims {
                hidden: 64,
                layers: 2,
                heads: 4,
                ffn: 256,
            },
            max_len: 128,
            lambda: 1.0,
            max_answer_len: 15,
        }
    }

    /// Large-model sizes: 1024 wide, 16 heads, 4096 feed-forward.
    pub fn paper_scale() -> Self {
        Self {
            dims: TransformerDims {
                hidden: 1024,
                layers: 24,
                heads: 16,
                ffn: 4096,
            },
            max_len: 384,
            lambda: 1.0,
            max_answer_len: 30,
        }
    }
}

impl Default for GuideConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Embedded guide input. `e_q` has `question_len + 2` rows
/// (`[CLS] q [SEP]`), `e_d` has `paragraph_len + 1` rows (`d [SEP]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PackedInput<T: Scalar> {
    pub e_q: Tensor<T>,
    pub e_d: Tensor<T>,
    pub question_len: usize,
    pub paragraph_len: usize,
    /// Paragraph words dropped to fit the maximum length.
    pub truncated: usize,
}

impl<T: Scalar> PackedInput<T> {
    pub fn with_question_embedding(&self, e_q: Tensor<T>) -> Result<Self> {
        if e_q.shape() != self.e_q.shape() {
            return Err(contract!(
                "question embedding {:?} does not match {:?}",
                e_q.shape(),
                self.e_q.shape()
            ));
        }
        Ok(Self { e_q, ..self.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub answerability: T,
    pub start: T,
    pub end: T,
    pub total: T,
}

/// Guide activations and probabilities for one question/paragraph pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideOutput<T: Scalar> {
    /// Final `[CLS]` state, `1 x h`.
    pub cls: Tensor<T>,
    /// Final states of `[CLS] q [SEP]`.
    pub t_q: Tensor<T>,
    /// Final states of the paragraph words.
    pub t_d: Tensor<T>,
    pub answer_logits: [T; 2],
    /// `[P(unanswerable), P(answerable)]`.
    pub p_answerable: [T; 2],
    pub p_start: Vec<T>,
    pub p_end: Vec<T>,
    /// Start/end logits over `[CLS]` followed by the paragraph words.
    pub start_logits: Vec<T>,
    pub end_logits: Vec<T>,
}

impl<T: Scalar> GuideOutput<T> {
    pub fn p(&self, label: Label) -> T {
        self.p_answerable[label.index()]
    }

    /// `lambda * L_a(t) + L_s(s) + L_e(e)` for this output.
    pub fn loss(&self, label: Label, span: Option<(usize, usize)>, lambda: f64) -> Result<LossBreakdown<T>> {
        let (gs, ge) = span_targets(label, span, self.p_start.len())?;
        let lse = {
            let m = self.answer_logits[0].max(self.answer_logits[1]);
            m + ((self.answer_logits[0] - m).exp() + (self.answer_logits[1] - m).exp()).ln()
        };
        let answerability = lse - self.answer_logits[label.index()];
        let start = span_loss(&self.start_logits, gs);
        let end = span_loss(&self.end_logits, ge);
        Ok(LossBreakdown {
            answerability,
            start,
            end,
            total: answerability * T::c(lambda) + start + end,
        })
    }
}

/// Gold candidate indices for the start/end heads: 0 is `[CLS]`, `i + 1`
/// is paragraph word `i`.
fn span_targets(label: Label, span: Option<(usize, usize)>, m: usize) -> Result<(usize, usize)> {
    match (label, span) {
        (Label::Unanswerable, None) => Ok((0, 0)),
        (Label::Answerable, Some((s, e))) if s <= e && e < m => Ok((s + 1, e + 1)),
        (Label::Answerable, Some((s, e))) => Err(contract!("span ({s}, {e}) invalid for a paragraph of {m} words")),
        (Label::Answerable, None) => Err(contract!("answerable target needs a span")),
        (Label::Unanswerable, Some(_)) => Err(contract!("unanswerable target cannot carry a span")),
    }
}

/// Balanced binary cross-entropy of independent per-position sigmoids:
/// half on the gold position, half on the mean over the others.
fn span_loss<T: Scalar>(logits: &[T], gold: usize) -> T {
    let pos = -log_sigmoid(logits[gold]);
    if logits.len() == 1 {
        return pos;
    }
    let neg: T = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != gold)
        .map(|(_, &z)| -log_sigmoid(-z))
        .sum();
    let half = T::c(0.5);
    half * pos + half * neg / T::from_usize(logits.len() - 1).unwrap()
}

fn span_loss_graph<T: Scalar>(g: &mut Graph<'_, T>, cand: Var, gold: usize) -> Result<Var> {
    let k = g.value(cand).numel();
    let pos = g.log_sigmoid(cand)?;
    let pick = g.pick(pos, gold)?;
    if k == 1 {
        return g.scale(pick, -T::one());
    }
    let flipped = g.scale(cand, -T::one())?;
    let neg = g.log_sigmoid(flipped)?;
    let total = g.sum_all(neg)?;
    let at_gold = g.pick(neg, gold)?;
    let rest = g.sub(total, at_gold)?;
    let a = g.scale(pick, T::c(-0.5))?;
    let b = g.scale(rest, T::c(-0.5 / (k - 1) as f64))?;
    g.add(a, b)
}

/// Which loss to differentiate with respect to the question embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// `L_a(t')` alone.
    Answerability(Label),
    /// `lambda * L_a(t) + L_s(s) + L_e(e)`.
    Full {
        label: Label,
        span: Option<(usize, usize)>,
        lambda: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Predicted answer; `None` when the label is unanswerable.
    pub span: Option<(usize, usize)>,
    /// Highest-scoring span regardless of the label.
    pub best_span: Option<(usize, usize)>,
}

/// Label by argmax of the answerability pair (ties go to unanswerable);
/// span is the pair `s <= e < s + max_len` maximizing `p_start(s) * p_end(e)`.
pub fn decode_prediction<T: Scalar>(p_answerable: [T; 2], p_start: &[T], p_end: &[T], max_len: usize) -> Prediction {
    let label = if p_answerable[1] > p_answerable[0] {
        Label::Answerable
    } else {
        Label::Unanswerable
    };
    let mut best: Option<(T, (usize, usize))> = None;
    for (s, &ps) in p_start.iter().enumerate() {
        for (e, &pe) in p_end.iter().enumerate().skip(s).take(max_len.max(1)) {
            let score = ps * pe;
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, (s, e)));
            }
        }
    }
    let best_span = best.map(|(_, span)| span);
    Prediction {
        label,
        span: best_span.filter(|_| label == Label::Answerable),
        best_span,
    }
}

struct GraphOut {
    answer_logits: Var,
    start: Var,
    end: Var,
    hidden: Var,
}

/// Question embedding gradient and the loss it came from.
#[derive(Debug, Clone)]
pub struct QuestionGrad<T: Scalar> {
    pub loss: T,
    pub grad: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct GuideModel<T: Scalar> {
    config: GuideConfig,
    embeddings: Arc<EmbeddingTables<T>>,
    params: ParamSet<T>,
    vocab_hash: String,
}

impl<T: Scalar> GuideModel<T> {
    pub fn new(config: GuideConfig, vocab: &Vocab, seed: u64) -> Result<Self> {
        config.dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.dims.hidden;
        let embeddings = EmbeddingTables::new(&mut rng, vocab.len(), h, config.max_len);
        let mut params = ParamSet::new();
        init_transformer(&mut params, &mut rng, BODY, &config.dims);
        init_linear(&mut params, &mut rng, ANSWER_HEAD, h, 2);
        init_linear(&mut params, &mut rng, SPAN_HEAD, h, 2);
        Ok(Self {
            config,
            embeddings: Arc::new(embeddings),
            params,
            vocab_hash: vocab.content_hash(),
        })
    }

    pub fn config(&self) -> &GuideConfig {
        &self.config
    }

    pub fn embeddings(&self) -> &Arc<EmbeddingTables<T>> {
        &self.embeddings
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    /// Hash over the embedding tables and every other parameter.
    pub fn param_hash(&self) -> String {
        format!("{}:{}", self.embeddings.content_hash(), self.params.content_hash())
    }

    pub fn cast<U: Scalar>(&self) -> GuideModel<U> {
        GuideModel {
            config: self.config.clone(),
            embeddings: Arc::new(self.embeddings.cast()),
            params: self.params.cast(),
            vocab_hash: self.vocab_hash.clone(),
        }
    }

    fn paragraph_room(&self, question_len: usize) -> Result<usize> {
        self.config
            .max_len
            .checked_sub(question_len + 3)
            .ok_or_else(|| contract!("question of {question_len} words does not fit in {} positions", self.config.max_len))
    }

    /// Sums token, segment and position embeddings for both sides. Overlong
    /// inputs lose paragraph words, never question words.
    pub fn embed(&self, q: &TokenSeq, d: &TokenSeq) -> Result<PackedInput<T>> {
        self.embed_ids(&q.ids, &d.ids)
    }

    pub fn embed_ids(&self, q: &[u32], d: &[u32]) -> Result<PackedInput<T>> {
        let room = self.paragraph_room(q.len())?;
        let kept = d.len().min(room);
        let e_q = self.embeddings.embed_question(q)?;
        let mut d_ids = d[..kept].to_vec();
        d_ids.push(SEP);
        let e_d = self.embeddings.embed(&d_ids, PARAGRAPH_SEGMENT, q.len() + 2)?;
        Ok(PackedInput {
            e_q,
            e_d,
            question_len: q.len(),
            paragraph_len: kept,
            truncated: d.len() - kept,
        })
    }

    fn build(&self, g: &mut Graph<'_, T>, b: &Bound, e_q: Var, e_d: Var) -> Result<GraphOut> {
        let q_rows = g.value(e_q).rows();
        let m = g.value(e_d).rows().saturating_sub(1);
        let x = g.concat_rows(&[e_q, e_d])?;
        let hidden = transformer(g, b, BODY, &self.config.dims, x, false)?;
        let cls = g.slice_rows(hidden, 0, 1)?;
        let answer_logits = linear(g, b, ANSWER_HEAD, cls)?;
        let span = linear(g, b, SPAN_HEAD, hidden)?;
        let candidates = |g: &mut Graph<'_, T>, col: usize| -> Result<Var> {
            let c = g.slice_cols(span, col, 1)?;
            let head = g.slice_rows(c, 0, 1)?;
            if m == 0 {
                return Ok(head);
            }
            let body = g.slice_rows(c, q_rows, m)?;
            g.concat_rows(&[head, body])
        };
        let start = candidates(g, 0)?;
        let end = candidates(g, 1)?;
        Ok(GraphOut {
            answer_logits,
            start,
            end,
            hidden,
        })
    }

    fn loss_graph(&self, g: &mut Graph<'_, T>, out: &GraphOut, spec: &LossSpec) -> Result<Var> {
        match *spec {
            LossSpec::Answerability(label) => g.cross_entropy(out.answer_logits, &[label.index()]),
            LossSpec::Full { label, span, lambda } => {
                let m = g.value(out.start).numel() - 1;
                let (gs, ge) = span_targets(label, span, m)?;
                let la = g.cross_entropy(out.answer_logits, &[label.index()])?;
                let la = g.scale(la, T::c(lambda))?;
                let ls = span_loss_graph(g, out.start, gs)?;
                let le = span_loss_graph(g, out.end, ge)?;
                let partial = g.add(la, ls)?;
                g.add(partial, le)
            }
        }
    }

    pub fn forward(&self, input: &PackedInput<T>) -> Result<GuideOutput<T>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let e_q = g.input(input.e_q.clone(), false);
        let e_d = g.input(input.e_d.clone(), false);
        let out = self.build(&mut g, &b, e_q, e_d)?;

        let logits = g.value(out.answer_logits).data();
        let answer_logits = [logits[0], logits[1]];
        let mut p_answerable = answer_logits;
        softmax_in_place(&mut p_answerable);
        let start_logits = g.value(out.start).data().to_vec();
        let end_logits = g.value(out.end).data().to_vec();
        let hidden = g.value(out.hidden);
        let q_rows = input.e_q.rows();
        Ok(GuideOutput {
            cls: hidden.slice_rows(0, 1)?,
            t_q: hidden.slice_rows(0, q_rows)?,
            t_d: hidden.slice_rows(q_rows, input.paragraph_len)?,
            answer_logits,
            p_answerable,
            p_start: start_logits[1..].iter().map(|&z| sigmoid(z)).collect(),
            p_end: end_logits[1..].iter().map(|&z| sigmoid(z)).collect(),
            start_logits,
            end_logits,
        })
    }

    /// `P(label)` for a tokenized question against a paragraph.
    pub fn probability(&self, q: &[u32], d: &[u32], label: Label) -> Result<T> {
        Ok(self.forward(&self.embed_ids(q, d)?)?.p(label))
    }

    pub fn predict(&self, q: &TokenSeq, d: &TokenSeq) -> Result<Prediction> {
        let out = self.forward(&self.embed(q, d)?)?;
        Ok(decode_prediction(out.p_answerable, &out.p_start, &out.p_end, self.config.max_answer_len))
    }

    /// Gradient of the chosen loss with respect to `input.e_q`. Parameters
    /// enter the graph as constants and are never touched.
    pub fn grad_wrt_question(&self, input: &PackedInput<T>, spec: &LossSpec) -> Result<QuestionGrad<T>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let e_q = g.input(input.e_q.clone(), true);
        let e_d = g.input(input.e_d.clone(), false);
        let out = self.build(&mut g, &b, e_q, e_d)?;
        let loss = self.loss_graph(&mut g, &out, spec)?;
        let mut grads = g.backward(loss)?;
        Ok(QuestionGrad {
            loss: g.value(loss).item()?,
            grad: grads.take(e_q).unwrap_or_else(|| Tensor::zeros_like(&input.e_q)),
        })
    }

    /// Loss value of `spec` without gradients.
    pub fn loss_value(&self, input: &PackedInput<T>, spec: &LossSpec) -> Result<T> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let e_q = g.input(input.e_q.clone(), false);
        let e_d = g.input(input.e_d.clone(), false);
        let out = self.build(&mut g, &b, e_q, e_d)?;
        let loss = self.loss_graph(&mut g, &out, spec)?;
        g.value(loss).item()
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut tensors = ParamSet::new();
        for (k, v) in self.embeddings.params().iter() {
            tensors.insert(format!("embedding.{k}"), v.clone());
        }
        for (k, v) in self.params.iter() {
            tensors.insert(format!("guide.{k}"), v.clone());
        }
        Checkpoint {
            metadata: json!({
                "kind": "guide",
                "config": self.config,
                "vocab_hash": self.vocab_hash,
                "embedding_hash": self.embeddings.content_hash(),
            }),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<T>, vocab: &Vocab) -> Result<Self> {
        ckpt.expect_kind("guide")?;
        ckpt.check_vocab(vocab)?;
        let config: GuideConfig = serde_json::from_value(ckpt.metadata["config"].clone())
            .map_err(|e| Error::Format(format!("guide config: {e}")))?;
        let mut emb = ParamSet::new();
        let mut params = ParamSet::new();
        for (k, v) in ckpt.tensors.into_iter() {
            if let Some(rest) = k.strip_prefix("embedding.") {
                emb.insert(rest, v);
            } else if let Some(rest) = k.strip_prefix("guide.") {
                params.insert(rest, v);
            } else {
                return Err(Error::Format(format!("unexpected tensor `{k}` in guide checkpoint")));
            }
        }
        let embeddings = EmbeddingTables::from_params(emb)?;
        if embeddings.vocab_size() != vocab.len() || embeddings.hidden() != config.dims.hidden {
            return Err(Error::Format("embedding table shape disagrees with config".into()));
        }
        Ok(Self {
            config,
            embeddings: Arc::new(embeddings),
            params,
            vocab_hash: vocab.content_hash(),
        })
    }
}

/// A dataset tuple prepared for training: ids and candidate targets.
#[derive(Debug, Clone)]
pub struct GuideExample {
    pub question: Vec<u32>,
    pub paragraph: Vec<u32>,
    pub label: Label,
    pub span: Option<(usize, usize)>,
}

impl<T: Scalar> Trainable<T> for GuideModel<T> {
    type Example = GuideExample;

    fn loss_and_grads(&self, ex: &GuideExample, _seed: u64) -> Result<(T, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let eb = self.embeddings.params().bind(&mut g, true);
        let pb = self.params.bind(&mut g, true);
        let q_ids = question_ids(&ex.question);
        let mut d_ids = ex.paragraph.clone();
        d_ids.push(SEP);
        let e_q = self.embeddings.embed_graph(&mut g, &eb, &q_ids, QUESTION_SEGMENT, 0)?;
        let e_d = self.embeddings.embed_graph(&mut g, &eb, &d_ids, PARAGRAPH_SEGMENT, q_ids.len())?;
        let out = self.build(&mut g, &pb, e_q, e_d)?;
        let spec = LossSpec::Full {
            label: ex.label,
            span: ex.span,
            lambda: self.config.lambda,
        };
        let loss = self.loss_graph(&mut g, &out, &spec)?;
        let mut grads = g.backward(loss)?;
        let mut all = eb.collect_grads(self.embeddings.params(), &mut grads);
        all.extend(pb.collect_grads(&self.params, &mut grads));
        Ok((g.value(loss).item()?, all))
    }

    fn trainable_mut(&mut self) -> Result<Vec<&mut Tensor<T>>> {
        let emb = Arc::get_mut(&mut self.embeddings)
            .ok_or_else(|| contract!("embedding tables are shared with another model and frozen"))?;
        Ok(emb.params_mut().values_mut().chain(self.params.values_mut()).collect())
    }
}

/// Turns dataset tuples into training examples, dropping those whose span
/// would fall in the truncated part of the paragraph.
pub fn guide_examples(dataset: &Dataset, max_len: usize) -> Result<(Vec<GuideExample>, usize)> {
    let mut out = Vec::with_capacity(dataset.len());
    let mut dropped = 0;
    for t in &dataset.tuples {
        let p = dataset.paragraph(&t.paragraph_id)?;
        let room = max_len.saturating_sub(t.question.len() + 3);
        if room == 0 || t.span.is_some_and(|(_, e)| e >= room) {
            dropped += 1;
            continue;
        }
        let kept = p.tokens.len().min(room);
        out.push(GuideExample {
            question: t.question.ids.clone(),
            paragraph: p.tokens.ids[..kept].to_vec(),
            label: t.label,
            span: t.span,
        });
    }
    Ok((out, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GuideEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_answerability_accuracy: Option<f64>,
}

/// Answerability accuracy of `model` over `tuples`.
pub fn answerability_accuracy<T: Scalar>(model: &GuideModel<T>, dataset: &Dataset, tuples: &[DataTuple]) -> Result<f64> {
    if tuples.is_empty() {
        return Err(contract!("no tuples to score"));
    }
    let mut correct = 0;
    for t in tuples {
        let p = dataset.paragraph(&t.paragraph_id)?;
        let out = model.forward(&model.embed(&t.question, &p.tokens)?)?;
        let predicted = if out.p_answerable[1] > out.p_answerable[0] {
            Label::Answerable
        } else {
            Label::Unanswerable
        };
        correct += (predicted == t.label) as usize;
    }
    Ok(correct as f64 / tuples.len() as f64)
}

/// Trains a fresh guide on `dataset` with Adam; logs per-epoch loss and,
/// when `dev` is given, dev answerability accuracy.
pub fn train_guide<T: Scalar>(
    dataset: &Dataset,
    config: &GuideConfig,
    train: &TrainConfig,
    dev: Option<&Dataset>,
) -> Result<(GuideModel<T>, Vec<GuideEpoch>)> {
    if dataset.is_empty() {
        return Err(contract!("cannot train the guide on an empty dataset"));
    }
    let mut model = GuideModel::new(config.clone(), &dataset.vocab, train.seed)?;
    let (examples, dropped) = guide_examples(dataset, config.max_len)?;
    if dropped > 0 {
        log::warn!("dropped {dropped} tuples whose answer falls past the maximum length");
    }
    let mut log = Vec::new();
    let mut dev_err = None;
    fit(&mut model, &examples, train, |m, EpochStats { epoch, mean_loss }| {
        let acc = dev.and_then(|d| match answerability_accuracy(m, d, &d.tuples) {
            Ok(a) => Some(a),
            Err(e) => {
                dev_err.get_or_insert(e);
                None
            }
        });
        match acc {
            Some(a) => log::info!("guide epoch {epoch}: loss {mean_loss:.4}, dev answerability {a:.4}"),
            None => log::info!("guide epoch {epoch}: loss {mean_loss:.4}"),
        }
        log.push(GuideEpoch {
            epoch,
            mean_loss,
            dev_answerability_accuracy: acc,
        });
    })?;
    if let Some(e) = dev_err {
        return Err(e);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;

    fn tiny_config() -> GuideConfig {
        GuideConfig {
            dims: TransformerDims {
                hidden: 8,
                layers: 1,
                heads: 2,
                ffn: 16,
            },
            max_len: 32,
            lambda: 1.0,
            max_answer_len: 4,
        }
    }

    fn vocab() -> Vocab {
        Vocab::from_words(["what", "is", "the", "color", "of", "alice", "red", "."])
    }

    fn zero_heads(m: &mut GuideModel<f64>) {
        for name in ["answer_head.w", "answer_head.b", "span_head.w", "span_head.b"] {
            m.params_mut().get_mut(name).unwrap().data_mut().fill(0.0);
        }
    }

    #[test]
    fn embed_shapes() {
        let v = vocab();
        let m = GuideModel::<f32>::new(tiny_config(), &v, 0).unwrap();
        let q = crate::text::tokenize("what is the color of", &v);
        let d = crate::text::tokenize("the color of alice is red . the color", &v);
        assert_eq!((q.len(), d.len()), (5, 9));
        let p = m.embed(&q, &d).unwrap();
        assert_eq!(p.e_q.shape(), &[7, 8]);
        assert_eq!(p.e_d.shape(), &[10, 8]);
        assert_eq!(p.truncated, 0);
    }

    #[test]
    fn overlong_paragraph_is_truncated() {
        let v = vocab();
        let m = GuideModel::<f32>::new(tiny_config(), &v, 0).unwrap();
        let q = vec![7u32; 5];
        let d = vec![8u32; 40];
        let p = m.embed_ids(&q, &d).unwrap();
        assert_eq!(p.e_q.rows(), 7);
        assert_eq!(p.paragraph_len, 32 - 5 - 3);
        assert_eq!(p.truncated, 40 - 24);
        assert!(m.embed_ids(&vec![7u32; 30], &d).is_err());
    }

    #[test]
    fn zero_heads_give_even_probabilities_and_three_ln2() {
        let v = vocab();
        let mut m = GuideModel::<f64>::new(tiny_config(), &v, 1).unwrap();
        zero_heads(&mut m);
        let p = m.embed_ids(&[7, 8, 9], &[10, 11, 12, 13]).unwrap();
        let out = m.forward(&p).unwrap();
        assert_eq!(out.p_answerable, [0.5, 0.5]);
        assert!(out.p_start.iter().chain(&out.p_end).all(|&x| x == 0.5));
        assert_eq!(out.p_start.len(), 4);
        let l = out.loss(Label::Answerable, Some((1, 2)), 1.0).unwrap();
        assert!((l.total - 3.0 * 2f64.ln()).abs() < 1e-12);
        let l0 = out.loss(Label::Answerable, Some((1, 2)), 0.0).unwrap();
        assert_eq!(l0.total, l0.start + l0.end);
    }

    #[test]
    fn loss_rejects_bad_spans() {
        let v = vocab();
        let m = GuideModel::<f64>::new(tiny_config(), &v, 1).unwrap();
        let out = m.forward(&m.embed_ids(&[7], &[8, 9]).unwrap()).unwrap();
        assert!(out.loss(Label::Answerable, Some((1, 2)), 1.0).is_err());
        assert!(out.loss(Label::Answerable, Some((1, 0)), 1.0).is_err());
        assert!(out.loss(Label::Unanswerable, Some((0, 0)), 1.0).is_err());
        assert!(out.loss(Label::Unanswerable, None, 1.0).is_ok());
    }

    #[test]
    fn graph_loss_matches_output_loss() {
        let v = vocab();
        let m = GuideModel::<f64>::new(tiny_config(), &v, 2).unwrap();
        let p = m.embed_ids(&[7, 8], &[9, 10, 11, 12, 13]).unwrap();
        let out = m.forward(&p).unwrap();
        for (label, span) in [(Label::Answerable, Some((2, 3))), (Label::Unanswerable, None)] {
            let spec = LossSpec::Full { label, span, lambda: 0.7 };
            let graph = m.loss_value(&p, &spec).unwrap();
            let direct = out.loss(label, span, 0.7).unwrap().total;
            assert!((graph - direct).abs() < 1e-12, "{graph} vs {direct}");
        }
    }

    #[test]
    fn prediction_rules() {
        let p = decode_prediction([0.9, 0.1], &[0.9, 0.9], &[0.9, 0.9], 4);
        assert_eq!((p.label, p.span), (Label::Unanswerable, None));
        let peaked = [0.1, 0.2, 0.1, 0.9, 0.3];
        let p = decode_prediction([0.2, 0.8], &peaked, &peaked, 4);
        assert_eq!((p.label, p.span, p.best_span), (Label::Answerable, Some((3, 3)), Some((3, 3))));
        assert_eq!(decode_prediction::<f64>([0.2, 0.8], &[], &[], 4).span, None);
    }

    #[test]
    fn question_gradient_matches_finite_differences() {
        let v = vocab();
        let m = GuideModel::<f64>::new(tiny_config(), &v, 3).unwrap();
        let p = m.embed_ids(&[7, 8, 9], &[10, 11, 12, 13]).unwrap();
        let spec = LossSpec::Full {
            label: Label::Answerable,
            span: Some((1, 2)),
            lambda: 1.0,
        };
        let err = gradient_check(
            |g, eq| {
                let b = m.params.bind(g, false);
                let ed = g.input(p.e_d.clone(), false);
                let out = m.build(g, &b, eq, ed)?;
                m.loss_graph(g, &out, &spec)
            },
            &p.e_q,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
        let qg = m.grad_wrt_question(&p, &spec).unwrap();
        assert_eq!(qg.grad.shape(), p.e_q.shape());
    }

    #[test]
    fn question_gradient_leaves_parameters_alone() {
        let v = vocab();
        let m = GuideModel::<f32>::new(tiny_config(), &v, 4).unwrap();
        let before = m.param_hash();
        let p = m.embed_ids(&[7, 8], &[9, 10]).unwrap();
        m.grad_wrt_question(&p, &LossSpec::Answerability(Label::Unanswerable)).unwrap();
        assert_eq!(before, m.param_hash());
    }
}
