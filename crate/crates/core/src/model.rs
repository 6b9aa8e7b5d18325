//! The learnable model: relation embeddings, per-query-relation transforms,
//! and the scoring vector.
//!
//! Layout (`d` = embedding dimension, `R` = augmented relation count):
//!
//! - `rel_emb`:   `[R, d]` relation embeddings, one row per relation.
//! - `transform`: per-query-relation linear maps from the concatenated
//!   `2d` vector down to `d`; `[R, d, 2d]`, or a single shared `[d, 2d]`
//!   block in shared mode.
//! - `score_vec`: `[d]`, used both to score nodes for frontier pruning and
//!   as the final scoring head. With `separate_scorers` the pruning side
//!   instead uses `prune_vec`, which is frozen at initialization (gradients
//!   cannot reach it through the hard top-k selection).
//!
//! All tensors initialize from `U(-1/sqrt(d), 1/sqrt(d))` on a stream derived
//! from the seed, so a given `(d, R, flags, seed)` always yields the same
//! model.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::graph::RelationId;
use crate::math;
use crate::params::{ParamId, ParamRef, ParamStore};
use crate::rng::{SALT_PARAM_INIT, stream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("relation id {id} out of range (relation count {count})")]
    RelationOutOfRange { id: RelationId, count: usize },
    #[error("vector has length {got}, model dimension is {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("tensor {name:?} has shape {got:?}, expected {want:?}")]
    BadTensorShape { name: String, got: Vec<usize>, want: Vec<usize> },
}

pub const REL_EMB: &str = "rel_emb";
pub const TRANSFORM: &str = "transform";
pub const SCORE_VEC: &str = "score_vec";
pub const PRUNE_VEC: &str = "prune_vec";

#[derive(Clone, Debug)]
pub struct ModelParams {
    store: ParamStore,
    d: usize,
    n_relations: usize,
    shared_transform: bool,
    separate_scorers: bool,
    rel_emb: ParamId,
    transform: ParamId,
    score_vec: ParamId,
    prune_vec: Option<ParamId>,
}

impl ModelParams {
    pub fn init(
        d: usize,
        n_relations: usize,
        shared_transform: bool,
        separate_scorers: bool,
        seed: u64,
    ) -> Self {
        assert!(d >= 1, "embedding dimension must be at least 1");
        let mut rng = stream(&[seed, SALT_PARAM_INIT]);
        let bound = 1.0 / math::sqrt(d as f64);
        let mut draw =
            |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-bound..bound)).collect() };

        let mut store = ParamStore::new();
        let rel_emb = store.add(REL_EMB, vec![n_relations, d], draw(n_relations * d));
        let transform = if shared_transform {
            store.add(TRANSFORM, vec![d, 2 * d], draw(d * 2 * d))
        } else {
            store.add(TRANSFORM, vec![n_relations, d, 2 * d], draw(n_relations * d * 2 * d))
        };
        let score_vec = store.add(SCORE_VEC, vec![d], draw(d));
        let prune_vec = separate_scorers.then(|| store.add_frozen(PRUNE_VEC, vec![d], draw(d)));
        Self {
            store,
            d,
            n_relations,
            shared_transform,
            separate_scorers,
            rel_emb,
            transform,
            score_vec,
            prune_vec,
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn shared_transform(&self) -> bool {
        self.shared_transform
    }

    pub fn separate_scorers(&self) -> bool {
        self.separate_scorers
    }

    fn check_rel(&self, r: RelationId) -> Result<(), ModelError> {
        if (r as usize) < self.n_relations {
            Ok(())
        } else {
            Err(ModelError::RelationOutOfRange { id: r, count: self.n_relations })
        }
    }

    /// Embedding row of relation `r` as a tape-bindable slice.
    pub fn rel_emb_ref(&self, r: RelationId) -> Result<ParamRef, ModelError> {
        self.check_rel(r)?;
        Ok(self.store.slice_ref(self.rel_emb, r as usize * self.d, vec![self.d]))
    }

    /// The `[d, 2d]` transform block conditioning on query relation `r_q`.
    pub fn transform_ref(&self, r_q: RelationId) -> Result<ParamRef, ModelError> {
        self.check_rel(r_q)?;
        if self.shared_transform {
            Ok(self.store.full_ref(self.transform))
        } else {
            let block = self.d * 2 * self.d;
            Ok(self.store.slice_ref(self.transform, r_q as usize * block, vec![self.d, 2 * self.d]))
        }
    }

    pub fn score_ref(&self) -> ParamRef {
        self.store.full_ref(self.score_vec)
    }

    pub fn score_slice(&self) -> &[f64] {
        self.store.data(self.score_vec)
    }

    /// The vector used for cumulative path scores: `score_vec`, or the frozen
    /// `prune_vec` when the scorers are kept separate.
    pub fn prune_slice(&self) -> &[f64] {
        match self.prune_vec {
            Some(id) => self.store.data(id),
            None => self.store.data(self.score_vec),
        }
    }

    /// `h_parent + W_{r_q} [h_{r_q}; h_r]`: the message carried by an edge
    /// with relation `edge_rel` under query relation `r_q`. `None` stands for
    /// the zero parent used at the first hop.
    pub fn message(
        &self,
        h_parent: Option<&[f64]>,
        edge_rel: RelationId,
        r_q: RelationId,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_rel(edge_rel)?;
        self.check_rel(r_q)?;
        if let Some(p) = h_parent {
            if p.len() != self.d {
                return Err(ModelError::DimensionMismatch { got: p.len(), want: self.d });
            }
        }
        let d = self.d;
        let h_rq = self.store.slice(&self.rel_emb_ref(r_q)?).to_vec();
        let h_r = self.store.slice(&self.rel_emb_ref(edge_rel)?).to_vec();
        let w = self.store.slice(&self.transform_ref(r_q)?);
        let mut out = vec![0.0; d];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &w[i * 2 * d..(i + 1) * 2 * d];
            let mut acc = 0.0;
            for j in 0..d {
                acc += row[j] * h_rq[j] + row[d + j] * h_r[j];
            }
            *o = acc + h_parent.map_or(0.0, |p| p[i]);
        }
        Ok(out)
    }

    /// `score_vec . h`: the semantic score of a node embedding. A zero
    /// embedding (the virtual hop-0 node, or any unreached entity) scores 0.
    pub fn score_node(&self, h: &[f64]) -> Result<f64, ModelError> {
        if h.len() != self.d {
            return Err(ModelError::DimensionMismatch { got: h.len(), want: self.d });
        }
        Ok(self.score_slice().iter().zip(h).map(|(a, b)| a * b).sum())
    }

    /// Like [`ModelParams::score_node`] but with the pruning-side vector.
    pub fn prune_score(&self, h: &[f64]) -> f64 {
        self.prune_slice().iter().zip(h).map(|(a, b)| a * b).sum()
    }

    /// Overwrites one tensor's data, validating its shape; used when loading
    /// checkpoints.
    pub fn set_tensor(
        &mut self,
        name: &str,
        shape: &[usize],
        data: Vec<f64>,
    ) -> Result<(), ModelError> {
        let id = self.store.find(name).ok_or_else(|| ModelError::BadTensorShape {
            name: name.into(),
            got: shape.to_vec(),
            want: Vec::new(),
        })?;
        if self.store.shape(id) != shape || data.len() != self.store.data(id).len() {
            return Err(ModelError::BadTensorShape {
                name: name.into(),
                got: shape.to_vec(),
                want: self.store.shape(id).to_vec(),
            });
        }
        self.store.data_mut(id).copy_from_slice(&data);
        Ok(())
    }
}
