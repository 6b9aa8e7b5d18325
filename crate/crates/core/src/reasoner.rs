//! The L-step query-conditioned forward pass.
//!
//! Hop 1 expands every out-edge of the query head whose relation survives the
//! hop-1 mask; each later hop expands only the frontier: the top-k entities
//! of the previous hop ranked by cumulative path score (or, with scoring
//! disabled, every entity visited so far). A node reached over several edges
//! sums its incoming message vectors and max-merges the parents' cumulative
//! scores before adding its own semantic score.
//!
//! Embeddings are built on a gradient tape so the loss can differentiate
//! through the whole pass; mask sampling and top-k selection are hard
//! structural choices, so per-hop pruning scores are computed off-tape.
//! After `L` hops every entity reached at exactly hop `L` carries a final
//! score `score_vec . h`; unreached entities score 0.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::confidence::ConfidenceTable;
use crate::graph::{EntityId, GraphError, KnowledgeGraph, RelationId};
use crate::mask::{HopMask, MaskConfig, MaskError, build_hop_mask, candidate_relations};
use crate::model::{ModelError, ModelParams};
use crate::rng::stream;
use crate::tape::{Tape, TapeError, ValId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReasonerError {
    #[error("invalid reasoner config: {0}")]
    InvalidConfig(&'static str),
    #[error("model dimension {model} does not match configured dimension {cfg}")]
    DimensionMismatch { model: usize, cfg: usize },
    #[error("cumulative score needs at least one parent score")]
    NoParents,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Forward-pass shape: path length `L`, frontier width `K`, embedding
/// dimension, and the two ablation switches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReasonerConfig {
    pub path_len: usize,
    pub top_k: usize,
    pub dim: usize,
    pub masking_enabled: bool,
    /// With scoring disabled the frontier is every visited entity and no
    /// top-k pruning happens.
    pub scoring_enabled: bool,
    /// Optional per-hop ReLU after message aggregation (off by default; the
    /// recursion is purely additive).
    pub relu: bool,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            path_len: 3,
            top_k: 100,
            dim: 32,
            masking_enabled: true,
            scoring_enabled: true,
            relu: false,
        }
    }
}

impl ReasonerConfig {
    pub fn validate(&self) -> Result<(), ReasonerError> {
        if self.path_len < 1 {
            return Err(ReasonerError::InvalidConfig("path length must be at least 1"));
        }
        if self.top_k < 1 {
            return Err(ReasonerError::InvalidConfig("top-k width must be at least 1"));
        }
        if self.dim < 1 {
            return Err(ReasonerError::InvalidConfig("embedding dimension must be at least 1"));
        }
        Ok(())
    }
}

/// Key of the per-query mask stream. Training resamples masks every epoch
/// (`epoch` varies); evaluation fixes `epoch = 0` under the evaluation seed.
#[derive(Clone, Copy, Debug)]
pub struct MaskStream {
    pub seed: u64,
    pub salt: u64,
    pub epoch: u64,
    pub query_ordinal: u64,
}

impl MaskStream {
    fn hop_rng(&self, hop: usize) -> rand_chacha::ChaCha12Rng {
        stream(&[self.seed, self.salt, self.epoch, self.query_ordinal, hop as u64])
    }
}

/// Per-query audit state: final-hop embeddings and cumulative scores, the
/// last frontier, and the mask decisions of every hop.
#[derive(Clone, Debug)]
pub struct ReasonerState {
    pub hop: usize,
    pub emb: BTreeMap<EntityId, Vec<f64>>,
    pub cum_score: BTreeMap<EntityId, f64>,
    pub frontier: Vec<EntityId>,
    pub hop_masks: Vec<HopMask>,
}

/// Everything a forward pass produces: the tape (for backward), the taped
/// final scores of reached entities, and the dense score vector.
#[derive(Debug)]
pub struct ForwardRun {
    pub tape: Tape,
    /// Entities reached at hop `L` with their embedding tape values, sorted
    /// by entity id.
    pub reached: Vec<(EntityId, ValId)>,
    /// Taped `score_vec . h` per reached entity, parallel to `reached`.
    pub score_ids: Vec<ValId>,
    /// Dense final scores over all entities (0 for unreached).
    pub final_scores: Vec<f64>,
    /// Cumulative path scores of the hop-`L` entities, parallel to `reached`.
    pub cum_scores: Vec<f64>,
    pub hop_masks: Vec<HopMask>,
    /// The source entities each hop expanded from (hop 1 first).
    pub frontiers: Vec<Vec<EntityId>>,
    pub n_entities: usize,
}

impl ForwardRun {
    /// Materializes the audit view (clones embedding values off the tape).
    pub fn state(&self, path_len: usize) -> ReasonerState {
        let mut emb = BTreeMap::new();
        let mut cum_score = BTreeMap::new();
        for (&(v, id), &c) in self.reached.iter().zip(&self.cum_scores) {
            emb.insert(v, self.tape.value(id).data().to_vec());
            cum_score.insert(v, c);
        }
        ReasonerState {
            hop: path_len,
            emb,
            cum_score,
            frontier: self.frontiers.last().cloned().unwrap_or_default(),
            hop_masks: self.hop_masks.clone(),
        }
    }

    pub fn score_of(&self, v: EntityId) -> f64 {
        self.final_scores[v as usize]
    }

    /// Compact per-hop mask summary for diagnostics.
    pub fn describe_masks(&self) -> String {
        let mut out = String::new();
        for m in &self.hop_masks {
            out.push_str(&format!(
                "hop {}: {} candidates, {} retained; ",
                m.hop,
                m.candidates.len(),
                m.retained.len()
            ));
        }
        out
    }
}

/// Max-merges the parents' cumulative scores and adds the node's own
/// semantic score. Hop-1 nodes pass `[0.0]` (the virtual hop-0 score).
pub fn accumulate_score(parent_scores: &[f64], s_cur: f64) -> Result<f64, ReasonerError> {
    let best = parent_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if parent_scores.is_empty() {
        return Err(ReasonerError::NoParents);
    }
    Ok(best + s_cur)
}

/// The `K` entities with the highest cumulative scores; ties break toward
/// the lower entity id. Input pairs must be sorted by entity id; the output
/// is sorted by entity id too.
pub fn select_topk(cum_score: &[(EntityId, f64)], k: usize) -> Vec<EntityId> {
    if cum_score.len() <= k {
        return cum_score.iter().map(|&(v, _)| v).collect();
    }
    let mut order: Vec<usize> = (0..cum_score.len()).collect();
    order.sort_by(|&a, &b| {
        cum_score[b].1.total_cmp(&cum_score[a].1).then(cum_score[a].0.cmp(&cum_score[b].0))
    });
    let mut picked: Vec<EntityId> = order[..k].iter().map(|&i| cum_score[i].0).collect();
    picked.sort_unstable();
    picked
}

struct MsgCache {
    h_rq: Option<ValId>,
    transform: Option<ValId>,
    per_rel: BTreeMap<RelationId, ValId>,
}

impl MsgCache {
    fn new() -> Self {
        Self { h_rq: None, transform: None, per_rel: BTreeMap::new() }
    }

    /// `W_{r_q} [h_{r_q}; h_r]`, taped once per relation per query.
    fn get(
        &mut self,
        tape: &mut Tape,
        model: &ModelParams,
        r: RelationId,
        r_q: RelationId,
    ) -> Result<ValId, ReasonerError> {
        if let Some(&id) = self.per_rel.get(&r) {
            return Ok(id);
        }
        let h_rq = match self.h_rq {
            Some(id) => id,
            None => {
                let id = tape.param(model.store(), model.rel_emb_ref(r_q)?);
                self.h_rq = Some(id);
                id
            }
        };
        let w = match self.transform {
            Some(id) => id,
            None => {
                let id = tape.param(model.store(), model.transform_ref(r_q)?);
                self.transform = Some(id);
                id
            }
        };
        let h_r = tape.param(model.store(), model.rel_emb_ref(r)?);
        let cat = tape.concat(h_rq, h_r)?;
        let msg = tape.linear(w, cat)?;
        self.per_rel.insert(r, msg);
        Ok(msg)
    }
}

/// Runs the full masked, scored, pruned forward pass for one query
/// `(source, r_q)`.
pub fn forward(
    query: (EntityId, RelationId),
    g: &KnowledgeGraph,
    table: &ConfidenceTable,
    model: &ModelParams,
    cfg: &ReasonerConfig,
    mask_cfg: &MaskConfig,
    stream_key: MaskStream,
) -> Result<ForwardRun, ReasonerError> {
    cfg.validate()?;
    mask_cfg.validate()?;
    if model.d() != cfg.dim {
        return Err(ReasonerError::DimensionMismatch { model: model.d(), cfg: cfg.dim });
    }
    let (source, r_q) = query;
    let n_entities = g.n_entities();
    if source as usize >= n_entities {
        return Err(GraphError::EntityOutOfRange { id: source, count: n_entities }.into());
    }
    if r_q as usize >= g.n_relations() {
        return Err(
            GraphError::RelationOutOfRange { id: r_q, count: g.n_relations() }.into()
        );
    }

    let mut tape = Tape::new();
    let zero = tape.constant(Tensor::zeros(vec![cfg.dim]));
    let mut msgs = MsgCache::new();
    let prune_w = model.prune_slice().to_vec();

    // (entity, embedding, cumulative score) of the nodes reached at the
    // current hop, sorted by entity id. The virtual hop-0 state is the
    // source with a zero embedding and score 0.
    let mut current: Vec<(EntityId, ValId, f64)> = vec![(source, zero, 0.0)];
    // Last-known state of every visited entity, for the unpruned frontier.
    let mut visited: BTreeMap<EntityId, (ValId, f64)> = BTreeMap::new();
    visited.insert(source, (zero, 0.0));

    let mut hop_masks: Vec<HopMask> = Vec::with_capacity(cfg.path_len);
    let mut frontiers: Vec<Vec<EntityId>> = Vec::with_capacity(cfg.path_len);
    let mut retained_flag = vec![false; g.n_relations()];
    let mut slot = vec![usize::MAX; n_entities];

    for hop in 1..=cfg.path_len {
        let sources: Vec<(EntityId, ValId, f64)> = if hop == 1 {
            vec![(source, zero, 0.0)]
        } else if cfg.scoring_enabled {
            let pairs: Vec<(EntityId, f64)> = current.iter().map(|&(v, _, c)| (v, c)).collect();
            let picked = select_topk(&pairs, cfg.top_k);
            let mut out = Vec::with_capacity(picked.len());
            let mut it = current.iter();
            for v in picked {
                // both lists are sorted by entity id
                let found = it.by_ref().find(|&&(u, _, _)| u == v).expect("picked from current");
                out.push(*found);
            }
            out
        } else {
            visited.iter().map(|(&v, &(e, c))| (v, e, c)).collect()
        };
        let frontier_ids: Vec<EntityId> = sources.iter().map(|&(v, _, _)| v).collect();
        frontiers.push(frontier_ids.clone());
        let hop_mask = if cfg.masking_enabled {
            let mut rng = stream_key.hop_rng(hop);
            build_hop_mask(g, &frontier_ids, table, r_q, mask_cfg, hop, &mut rng)?
        } else {
            HopMask::retain_all(hop, candidate_relations(g, &frontier_ids)?)
        };
        for &r in &hop_mask.retained {
            retained_flag[r as usize] = true;
        }

        let mut touched: Vec<EntityId> = Vec::new();
        let mut terms: Vec<Vec<ValId>> = Vec::new();
        let mut parents: Vec<Vec<f64>> = Vec::new();
        for &(src, h_src, cum_src) in &sources {
            for &(r, o) in g.neighbors(src)? {
                if !retained_flag[r as usize] {
                    continue;
                }
                let msg = msgs.get(&mut tape, model, r, r_q)?;
                // a zero parent contributes nothing; skip the add node
                let term = if h_src == zero { msg } else { tape.add(h_src, msg)? };
                let idx = slot[o as usize];
                let idx = if idx == usize::MAX {
                    slot[o as usize] = touched.len();
                    touched.push(o);
                    terms.push(Vec::new());
                    parents.push(Vec::new());
                    touched.len() - 1
                } else {
                    idx
                };
                terms[idx].push(term);
                parents[idx].push(cum_src);
            }
        }
        for &r in &hop_mask.retained {
            retained_flag[r as usize] = false;
        }
        hop_masks.push(hop_mask);

        let mut order: Vec<usize> = (0..touched.len()).collect();
        order.sort_unstable_by_key(|&i| touched[i]);
        let mut next = Vec::with_capacity(order.len());
        for i in order {
            let v = touched[i];
            slot[v as usize] = usize::MAX;
            let emb = if terms[i].len() == 1 { terms[i][0] } else { tape.sum_list(&terms[i])? };
            let emb = if cfg.relu { tape.relu(emb) } else { emb };
            let s_cur: f64 =
                prune_w.iter().zip(tape.value(emb).data()).map(|(a, b)| a * b).sum();
            let cum = accumulate_score(&parents[i], s_cur)?;
            next.push((v, emb, cum));
        }
        current = next;
        for &(v, e, c) in &current {
            visited.insert(v, (e, c));
        }
    }

    let score_w = tape.param(model.store(), model.score_ref());
    let mut reached = Vec::with_capacity(current.len());
    let mut score_ids = Vec::with_capacity(current.len());
    let mut cum_scores = Vec::with_capacity(current.len());
    let mut final_scores = vec![0.0; n_entities];
    for &(v, emb, cum) in &current {
        let s = tape.dot(score_w, emb)?;
        final_scores[v as usize] = tape.value(s).as_scalar().expect("dot yields a scalar");
        reached.push((v, emb));
        score_ids.push(s);
        cum_scores.push(cum);
    }

    Ok(ForwardRun {
        tape,
        reached,
        score_ids,
        final_scores,
        cum_scores,
        hop_masks,
        frontiers,
        n_entities,
    })
}
