//! Token, segment and position tables shared by the guide and the
//! autoencoder encoder.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{contract, Result};
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::text::vocab::{CLS, SEP};

pub const TOKEN: &str = "token";
pub const SEGMENT: &str = "segment";
pub const POSITION: &str = "position";

pub const QUESTION_SEGMENT: usize = 0;
pub const PARAGRAPH_SEGMENT: usize = 1;

const INIT_STD: f64 = 0.5;

/// Rows are `token[id] + segment[s] + position[p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables<T: Scalar> {
    params: ParamSet<T>,
}

impl<T: Scalar> EmbeddingTables<T> {
    pub fn new(rng: &mut impl Rng, vocab_size: usize, hidden: usize, max_len: usize) -> Self {
        let mut params = ParamSet::new();
        params.init_normal(rng, TOKEN, vocab_size, hidden, INIT_STD);
        params.init_normal(rng, SEGMENT, 2, hidden, INIT_STD);
        params.init_normal(rng, POSITION, max_len, hidden, INIT_STD);
        Self { params }
    }

    pub fn from_params(params: ParamSet<T>) -> Result<Self> {
        let t = params.get(TOKEN)?;
        let s = params.get(SEGMENT)?;
        let p = params.get(POSITION)?;
        if s.rows() != 2 || t.cols() != s.cols() || t.cols() != p.cols() {
            return Err(contract!(
                "embedding tables disagree: token {:?}, segment {:?}, position {:?}",
                t.shape(),
                s.shape(),
                p.shape()
            ));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn hidden(&self) -> usize {
        self.table(TOKEN).cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.table(TOKEN).rows()
    }

    pub fn max_len(&self) -> usize {
        self.table(POSITION).rows()
    }

    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }

    fn table(&self, name: &str) -> &Tensor<T> {
        self.params.get(name).expect("tables validated at construction")
    }

    fn check(&self, ids: &[u32], start: usize) -> Result<()> {
        if start + ids.len() > self.max_len() {
            return Err(contract!(
                "positions up to {} exceed the maximum length {}",
                start + ids.len(),
                self.max_len()
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.vocab_size()) {
            return Err(contract!("token id {bad} outside a vocabulary of {}", self.vocab_size()));
        }
        Ok(())
    }

    /// Embeds `ids` at positions `start..` in the given segment.
    pub fn embed(&self, ids: &[u32], segment: usize, start: usize) -> Result<Tensor<T>> {
        self.check(ids, start)?;
        let h = self.hidden();
        let (tok, seg, pos) = (self.table(TOKEN), self.table(SEGMENT), self.table(POSITION));
        let mut out = Tensor::zeros(ids.len(), h);
        for (r, &id) in ids.iter().enumerate() {
            let (t, s, p) = (tok.row(id as usize), seg.row(segment), pos.row(start + r));
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = t[j] + s[j] + p[j];
            }
        }
        Ok(out)
    }

    /// Same sums as [`embed`](Self::embed), inside a graph so the tables
    /// can receive gradients.
    pub(crate) fn embed_graph(&self, g: &mut Graph<'_, T>, b: &Bound, ids: &[u32], segment: usize, start: usize) -> Result<Var> {
        self.check(ids, start)?;
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let seg = vec![segment; ids.len()];
        let pos: Vec<usize> = (start..start + ids.len()).collect();
        let t = g.gather(b.var(TOKEN)?, &idx)?;
        let s = g.gather(b.var(SEGMENT)?, &seg)?;
        let p = g.gather(b.var(POSITION)?, &pos)?;
        let ts = g.add(t, s)?;
        g.add(ts, p)
    }

    /// `[CLS] q [SEP]` in the question segment, positions from 0.
    pub fn embed_question(&self, question: &[u32]) -> Result<Tensor<T>> {
        self.embed(&question_ids(question), QUESTION_SEGMENT, 0)
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingTables<U> {
        EmbeddingTables {
            params: self.params.cast(),
        }
    }
}

pub(crate) fn question_ids(question: &[u32]) -> Vec<u32> {
    let mut ids = Vec::with_capacity(question.len() + 2);
    ids.push(CLS);
    ids.extend_from_slice(question);
    ids.push(SEP);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_tables_embed_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut e = EmbeddingTables::<f32>::new(&mut rng, 10, 4, 16);
        for t in e.params_mut().values_mut() {
            t.data_mut().fill(0.0);
        }
        let out = e.embed_question(&[7, 8, 9]).unwrap();
        assert_eq!(out.shape(), &[5, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_token_differs_by_position_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = EmbeddingTables::<f64>::new(&mut rng, 10, 4, 16);
        let out = e.embed(&[7, 7], 0, 3).unwrap();
        let pos = e.params().get(POSITION).unwrap();
        for j in 0..4 {
            let diff = out.get(1, j) - out.get(0, j);
            let expected = pos.get(4, j) - pos.get(3, j);
            assert!((diff - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_path_matches_tensor_path_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = EmbeddingTables::<f32>::new(&mut rng, 12, 6, 16);
        let ids = [2, 9, 10, 3];
        let direct = e.embed(&ids, 1, 5).unwrap();
        let mut g = Graph::new();
        let b = e.params().bind(&mut g, false);
        let v = e.embed_graph(&mut g, &b, &ids, 1, 5).unwrap();
        assert_eq!(g.value(v), &direct);
    }

    #[test]
    fn overlong_positions_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = EmbeddingTables::<f32>::new(&mut rng, 12, 6, 4);
        assert!(e.embed(&[7, 7, 7], 0, 2).is_err());
    }
}
