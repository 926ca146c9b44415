//! Transformer autoencoder over the shared embedding space.
//!
//! The encoder reads an embedding sequence, a GRU sum-pools its states into
//! a single latent vector, and a causal decoder regenerates the question
//! from that vector alone. Embedding tables are shared with the guide and
//! never trained here.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Checkpoint;
use crate::embedding::{question_ids, EmbeddingTables, POSITION, TOKEN};
use crate::error::{contract, dim_err, Error, Result};
use crate::nn::{gru, init_gru, init_linear, init_transformer, linear, transformer, TransformerDims};
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::text::vocab::{BOS, EOS, MASK};
use crate::text::Vocab;
use crate::train::{fit, EpochStats, TrainConfig, Trainable};

const ENCODER: &str = "encoder";
const POOL: &str = "pool";
const LATENT: &str = "latent";
const DECODER: &str = "decoder";
const VOCAB_OUT: &str = "vocab_out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeConfig {
    pub encoder: TransformerDims,
    pub decoder: TransformerDims,
    /// Encoder-input tokens replaced by `[MASK]` with this probability
    /// during training.
    pub mask_rate: f64,
    pub max_decode_len: usize,
}

impl AeConfig {
    pub fn desk() -> Self {
        let dims = TransformerDims {
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
        };
        Self {
            encoder: dims.clone(),
            decoder: dims,
            mask_rate: 0.0,
            max_decode_len: 32,
        }
    }

    /// Desk sizes with 15% encoder-input masking.
    pub fn wiki_mask() -> Self {
        Self {
            mask_rate: 0.15,
            ..Self::desk()
        }
    }

    /// Six encoder and six decoder layers at width 1024.
    pub fn paper_scale() -> Self {
        let dims = TransformerDims {
            hidden: 1024,
            layers: 6,
            heads: 16,
            ffn: 4096,
        };
        Self {
            encoder: dims.clone(),
            decoder: dims,
            mask_rate: 0.0,
            max_decode_len: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.encoder.hidden != self.decoder.hidden {
            return Err(contract!("encoder and decoder widths differ"));
        }
        if !(0.0..1.0).contains(&self.mask_rate) {
            return Err(contract!("mask rate {} outside [0, 1)", self.mask_rate));
        }
        Ok(())
    }
}

impl Default for AeConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Greedy decoder output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub ids: Vec<u32>,
    /// Decoding stopped at the length limit rather than at `[EOS]`.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct Autoencoder<T: Scalar> {
    config: AeConfig,
    embeddings: Arc<EmbeddingTables<T>>,
    params: ParamSet<T>,
    vocab_hash: String,
}

impl<T: Scalar> Autoencoder<T> {
    pub fn new(config: AeConfig, embeddings: Arc<EmbeddingTables<T>>, vocab: &Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let h = config.encoder.hidden;
        if embeddings.hidden() != h {
            return Err(contract!("embedding width {} differs from autoencoder width {h}", embeddings.hidden()));
        }
        if embeddings.vocab_size() != vocab.len() {
            return Err(contract!("embedding rows {} differ from vocabulary size {}", embeddings.vocab_size(), vocab.len()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        init_transformer(&mut params, &mut rng, ENCODER, &config.encoder);
        init_gru(&mut params, &mut rng, POOL, h, h);
        init_linear(&mut params, &mut rng, LATENT, h, h);
        init_transformer(&mut params, &mut rng, DECODER, &config.decoder);
        init_linear(&mut params, &mut rng, VOCAB_OUT, h, vocab.len());
        Ok(Self {
            config,
            embeddings,
            params,
            vocab_hash: vocab.content_hash(),
        })
    }

    pub fn config(&self) -> &AeConfig {
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

    pub fn param_hash(&self) -> String {
        self.params.content_hash()
    }

    pub fn cast<U: Scalar>(&self, embeddings: Arc<EmbeddingTables<U>>) -> Result<Autoencoder<U>> {
        if embeddings.content_hash() != self.embeddings.cast::<U>().content_hash() {
            return Err(Error::EmbeddingMismatch);
        }
        Ok(Autoencoder {
            config: self.config.clone(),
            embeddings,
            params: self.params.cast(),
            vocab_hash: self.vocab_hash.clone(),
        })
    }

    fn encode_graph(&self, g: &mut Graph<'_, T>, b: &Bound, e: Var) -> Result<Var> {
        transformer(g, b, ENCODER, &self.config.encoder, e, false)
    }

    fn pool_graph(&self, g: &mut Graph<'_, T>, b: &Bound, h_enc: Var) -> Result<Var> {
        if g.value(h_enc).rows() == 0 {
            return Err(contract!("cannot pool an empty sequence"));
        }
        let states = gru(g, b, POOL, h_enc)?;
        let all = g.concat_rows(&states)?;
        g.sum_rows(all)
    }

    /// Decoder logits for `prefix` (starting with `[BOS]`) given `z`.
    fn decode_graph(&self, g: &mut Graph<'_, T>, eb: &Bound, b: &Bound, z: Var, prefix: &[u32]) -> Result<Var> {
        let idx: Vec<usize> = prefix.iter().map(|&i| i as usize).collect();
        let pos: Vec<usize> = (0..prefix.len()).collect();
        let tok = g.gather(eb.var(TOKEN)?, &idx)?;
        let p = g.gather(eb.var(POSITION)?, &pos)?;
        let x = g.add(tok, p)?;
        let zp = linear(g, b, LATENT, z)?;
        let x = g.add_row(x, zp)?;
        let h = transformer(g, b, DECODER, &self.config.decoder, x, true)?;
        linear(g, b, VOCAB_OUT, h)
    }

    fn check_input(&self, e: &Tensor<T>) -> Result<()> {
        if e.cols() != self.embeddings.hidden() {
            return Err(contract!("embedding width {} differs from {}", e.cols(), self.embeddings.hidden()));
        }
        if !e.is_finite() {
            return Err(Error::Numeric("autoencoder input".into()));
        }
        Ok(())
    }

    /// Encoder states for an embedding sequence (`[CLS] q [SEP]` rows).
    pub fn encode(&self, e_q: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(e_q)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let e = g.input(e_q.clone(), false);
        let h = self.encode_graph(&mut g, &b, e)?;
        Ok(g.value(h).clone())
    }

    /// Sum of GRU states run left to right over `h_enc`.
    pub fn pool(&self, h_enc: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let h = g.input(h_enc.clone(), false);
        let z = self.pool_graph(&mut g, &b, h)?;
        Ok(g.value(z).clone())
    }

    /// `pool(encode(e_q))`.
    pub fn latent(&self, e_q: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(e_q)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let e = g.input(e_q.clone(), false);
        let h = self.encode_graph(&mut g, &b, e)?;
        let z = self.pool_graph(&mut g, &b, h)?;
        Ok(g.value(z).clone())
    }

    /// Greedy decoding from `[BOS]` until `[EOS]` or `max_len` tokens.
    pub fn decode(&self, z: &Tensor<T>, max_len: usize) -> Result<Decoded> {
        if z.shape() != [1, self.embeddings.hidden()] {
            return Err(dim_err!("latent shape {:?}", z.shape()));
        }
        let max_len = max_len.min(self.embeddings.max_len().saturating_sub(1));
        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        let tables = self.embeddings.params();
        while out.len() < max_len {
            let mut g = Graph::new();
            let eb = tables.bind(&mut g, false);
            let b = self.params.bind(&mut g, false);
            let zv = g.input(z.clone(), false);
            let logits = self.decode_graph(&mut g, &eb, &b, zv, &prefix)?;
            let last = g.value(logits).row(prefix.len() - 1);
            let next = argmax(last) as u32;
            if next == EOS {
                return Ok(Decoded { ids: out, truncated: false });
            }
            out.push(next);
            prefix.push(next);
        }
        Ok(Decoded {
            ids: out,
            truncated: max_len > 0,
        })
    }

    /// `decode(pool(encode(e_q)))` with the configured length limit.
    pub fn decode_embeddings(&self, e_q: &Tensor<T>) -> Result<Decoded> {
        let z = self.latent(e_q)?;
        self.decode(&z, self.config.max_decode_len)
    }

    /// Round trip of a tokenized question through the shared embedding.
    pub fn reconstruct(&self, question: &[u32]) -> Result<Decoded> {
        self.decode_embeddings(&self.embeddings.embed_question(question)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            metadata: json!({
                "kind": "autoencoder",
                "config": self.config,
                "vocab_hash": self.vocab_hash,
                "embedding_hash": self.embeddings.content_hash(),
            }),
            tensors: self.params.clone(),
        }
    }

    /// Restores an autoencoder against the embedding tables it was trained
    /// with; any other tables are rejected.
    pub fn from_checkpoint(ckpt: Checkpoint<T>, embeddings: Arc<EmbeddingTables<T>>, vocab: &Vocab) -> Result<Self> {
        ckpt.expect_kind("autoencoder")?;
        ckpt.check_vocab(vocab)?;
        let config: AeConfig = serde_json::from_value(ckpt.metadata["config"].clone())
            .map_err(|e| Error::Format(format!("autoencoder config: {e}")))?;
        if ckpt.metadata["embedding_hash"].as_str() != Some(embeddings.content_hash().as_str()) {
            return Err(Error::EmbeddingMismatch);
        }
        Ok(Self {
            config,
            embeddings,
            params: ckpt.tensors,
            vocab_hash: vocab.content_hash(),
        })
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// A question to reconstruct, as token ids without `[CLS]`/`[SEP]`.
#[derive(Debug, Clone)]
pub struct AeExample {
    pub ids: Vec<u32>,
}

impl<T: Scalar> Trainable<T> for Autoencoder<T> {
    type Example = AeExample;

    fn loss_and_grads(&self, ex: &AeExample, seed: u64) -> Result<(T, Vec<Tensor<T>>)> {
        let mut input = ex.ids.clone();
        if self.config.mask_rate > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for id in &mut input {
                if rng.random_bool(self.config.mask_rate) {
                    *id = MASK;
                }
            }
        }
        let e_q = self.embeddings.embed(&question_ids(&input), crate::embedding::QUESTION_SEGMENT, 0)?;
        let mut prefix = Vec::with_capacity(ex.ids.len() + 1);
        prefix.push(BOS);
        prefix.extend_from_slice(&ex.ids);
        let mut targets: Vec<usize> = ex.ids.iter().map(|&i| i as usize).collect();
        targets.push(EOS as usize);

        let mut g = Graph::new();
        let eb = self.embeddings.params().bind(&mut g, false);
        let b = self.params.bind(&mut g, true);
        let e = g.input(e_q, false);
        let h = self.encode_graph(&mut g, &b, e)?;
        let z = self.pool_graph(&mut g, &b, h)?;
        let logits = self.decode_graph(&mut g, &eb, &b, z, &prefix)?;
        let loss = g.cross_entropy(logits, &targets)?;
        let mut grads = g.backward(loss)?;
        Ok((g.value(loss).item()?, b.collect_grads(&self.params, &mut grads)))
    }

    fn trainable_mut(&mut self) -> Result<Vec<&mut Tensor<T>>> {
        Ok(self.params.values_mut().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AeEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Trains a fresh autoencoder on `corpus` over frozen `embeddings`.
pub fn train_ae<T: Scalar>(
    corpus: &[Vec<u32>],
    embeddings: Arc<EmbeddingTables<T>>,
    vocab: &Vocab,
    config: &AeConfig,
    train: &TrainConfig,
) -> Result<(Autoencoder<T>, Vec<AeEpoch>)> {
    if corpus.is_empty() || corpus.iter().any(|q| q.is_empty()) {
        return Err(contract!("autoencoder corpus must be non-empty and hold non-empty questions"));
    }
    let before = embeddings.content_hash();
    let mut model = Autoencoder::new(config.clone(), embeddings, vocab, train.seed)?;
    let examples: Vec<AeExample> = corpus.iter().map(|ids| AeExample { ids: ids.clone() }).collect();
    let mut log = Vec::new();
    fit(&mut model, &examples, train, |_, EpochStats { epoch, mean_loss }| {
        log::info!("autoencoder epoch {epoch}: loss {mean_loss:.4}");
        log.push(AeEpoch { epoch, mean_loss });
    })?;
    if model.embeddings.content_hash() != before {
        return Err(contract!("embedding tables changed during autoencoder training"));
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Autoencoder<f64>, Vocab) {
        let vocab = Vocab::from_words(["what", "is", "the", "color", "of", "alice", "?"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = Arc::new(EmbeddingTables::new(&mut rng, vocab.len(), 8, 32));
        let dims = TransformerDims {
            hidden: 8,
            layers: 1,
            heads: 2,
            ffn: 16,
        };
        let cfg = AeConfig {
            encoder: dims.clone(),
            decoder: dims,
            mask_rate: 0.0,
            max_decode_len: 10,
        };
        (Autoencoder::new(cfg, emb, &vocab, 1).unwrap(), vocab)
    }

    #[test]
    fn encode_keeps_rows_and_is_deterministic() {
        let (ae, _) = tiny();
        let e = ae.embeddings().embed_question(&[7, 8, 9]).unwrap();
        let h = ae.encode(&e).unwrap();
        assert_eq!(h.shape(), &[5, 8]);
        assert_eq!(h, ae.encode(&e).unwrap());
        assert_eq!(ae.pool(&h).unwrap(), ae.latent(&e).unwrap());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let (ae, _) = tiny();
        let mut e = ae.embeddings().embed_question(&[7]).unwrap();
        e.data_mut()[0] = f64::NAN;
        assert!(matches!(ae.encode(&e), Err(Error::Numeric(_))));
    }

    #[test]
    fn pool_of_one_row_is_its_state_and_empty_fails() {
        let (mut ae, _) = tiny();
        let h = Tensor::matrix(1, 8, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
        let z = ae.pool(&h).unwrap();
        let mut g = Graph::new();
        let b = ae.params.bind(&mut g, false);
        let x = g.input(h.clone(), false);
        let states = gru(&mut g, &b, POOL, x).unwrap();
        assert_eq!(g.value(states[0]), &z);
        assert!(ae.pool(&Tensor::zeros(0, 8)).is_err());

        for name in ["pool.wx", "pool.wh", "pool.bx", "pool.bh"] {
            ae.params_mut().get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let h3 = Tensor::matrix(3, 8, (0..24).map(|i| i as f64).collect()).unwrap();
        // Zero weights halve the state each step, so from a zero start every state is zero.
        assert!(ae.pool(&h3).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_limits() {
        let (ae, _) = tiny();
        let z = Tensor::full(1, 8, 0.3);
        assert_eq!(ae.decode(&z, 0).unwrap(), Decoded { ids: vec![], truncated: false });
        let a = ae.decode(&z, 6).unwrap();
        assert!(a.ids.len() <= 6);
        assert_eq!(a, ae.decode(&z, 6).unwrap());
        let r = ae.reconstruct(&[7, 8]).unwrap();
        assert!(r.ids.len() <= 10);
    }

    #[test]
    fn training_does_not_touch_embeddings() {
        let (ae, vocab) = tiny();
        let emb = ae.embeddings().clone();
        let before = emb.content_hash();
        let corpus = vec![vec![10, 11, 12], vec![9, 8, 7]];
        let train = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..Default::default()
        };
        let (trained, log) = train_ae(&corpus, emb.clone(), &vocab, ae.config(), &train).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(emb.content_hash(), before);
        assert_eq!(trained.embeddings().content_hash(), before);
        assert_ne!(trained.param_hash(), ae.param_hash());
    }
}
