//! Query-dependent relation masking.
//!
//! Per hop, the candidate relations are those on the frontier's out-edges.
//! Each candidate's confidence toward the query relation is normalized into a
//! removal probability
//!
//! ```text
//! p(r) = min(((C_max - C(r)) / (C_max - C_avg)) * p_e, p_tau)
//! ```
//!
//! and the relation is retained with probability `1 - p(r)`, so relations at
//! the hop's confidence maximum (removal probability exactly 0) are always
//! kept. When every candidate is equally confident there is no signal and
//! nothing is removed.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::confidence::{ConfidenceTable, confidence_row};
use crate::graph::{EntityId, GraphError, KnowledgeGraph, RelationId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("removal probabilities need a non-empty confidence row")]
    EmptyRow,
    #[error("mask config invalid: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Masking hyper-parameters. `p_e` scales removal probabilities, `p_tau`
/// caps them, `eps` detects a degenerate (all-equal) confidence row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskConfig {
    pub p_e: f64,
    pub p_tau: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { p_e: 0.5, p_tau: 0.5, eps: 1e-9, seed: 0 }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<(), MaskError> {
        if !(0.0..=1.0).contains(&self.p_e) {
            return Err(MaskError::InvalidConfig("p_e must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_tau) {
            return Err(MaskError::InvalidConfig("p_tau must be in [0, 1]"));
        }
        if !(self.eps > 0.0) {
            return Err(MaskError::InvalidConfig("eps must be positive"));
        }
        Ok(())
    }
}

/// One hop's masking decision: candidates, their removal probabilities, and
/// the sampled retained subset. All lists are sorted by relation id.
#[derive(Clone, Debug, PartialEq)]
pub struct HopMask {
    pub hop: usize,
    pub candidates: Vec<RelationId>,
    pub removal_prob: Vec<(RelationId, f64)>,
    pub retained: Vec<RelationId>,
}

impl HopMask {
    /// Mask that keeps every candidate (masking disabled).
    pub fn retain_all(hop: usize, candidates: Vec<RelationId>) -> Self {
        let retained = candidates.clone();
        Self { hop, candidates, removal_prob: Vec::new(), retained }
    }

    pub fn is_retained(&self, r: RelationId) -> bool {
        self.retained.binary_search(&r).is_ok()
    }
}

/// Union of relation ids on the out-edges of the frontier entities, sorted
/// and duplicate-free.
pub fn candidate_relations(
    g: &KnowledgeGraph,
    frontier: &[EntityId],
) -> Result<Vec<RelationId>, GraphError> {
    let mut rels = Vec::new();
    for &v in frontier {
        for &(r, _) in g.neighbors(v)? {
            rels.push(r);
        }
    }
    rels.sort_unstable();
    rels.dedup();
    Ok(rels)
}

/// Normalizes a confidence row into removal probabilities in `[0, p_tau]`.
pub fn removal_probabilities(
    row: &[(RelationId, f64)],
    cfg: &MaskConfig,
) -> Result<Vec<(RelationId, f64)>, MaskError> {
    if row.is_empty() {
        return Err(MaskError::EmptyRow);
    }
    let c_max = row.iter().map(|&(_, c)| c).fold(f64::NEG_INFINITY, f64::max);
    let c_avg = row.iter().map(|&(_, c)| c).sum::<f64>() / row.len() as f64;
    let span = c_max - c_avg;
    let probs = row
        .iter()
        .map(|&(r, c)| {
            let p = if span < cfg.eps { 0.0 } else { ((c_max - c) / span * cfg.p_e).min(cfg.p_tau) };
            (r, p)
        })
        .collect();
    Ok(probs)
}

/// Samples the retained subset: each relation survives independently with
/// probability `1 - p(r)`. Probabilities are consumed in relation-id order,
/// so the same stream and input always produce the same subset.
pub fn sample_mask(probs: &[(RelationId, f64)], rng: &mut ChaCha12Rng) -> Vec<RelationId> {
    probs
        .iter()
        .filter_map(|&(r, p)| {
            let u: f64 = rng.random();
            (u >= p).then_some(r)
        })
        .collect()
}

/// Builds the full hop mask for a frontier. An empty candidate set yields an
/// empty (valid) mask.
pub fn build_hop_mask(
    g: &KnowledgeGraph,
    frontier: &[EntityId],
    table: &ConfidenceTable,
    r_q: RelationId,
    cfg: &MaskConfig,
    hop: usize,
    rng: &mut ChaCha12Rng,
) -> Result<HopMask, MaskError> {
    let candidates = candidate_relations(g, frontier)?;
    if candidates.is_empty() {
        return Ok(HopMask { hop, candidates, removal_prob: Vec::new(), retained: Vec::new() });
    }
    let row = confidence_row(table, &candidates, r_q);
    let removal_prob = removal_probabilities(&row, cfg)?;
    let retained = sample_mask(&removal_prob, rng);
    Ok(HopMask { hop, candidates, removal_prob, retained })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::mine_confidence;
    use crate::graph::build_graph;
    use crate::rng::stream;
    use alloc::string::{String, ToString};
    use alloc::vec;

    fn raw(lines: &[(&str, &str, &str)]) -> Vec<(String, String, String)> {
        lines
            .iter()
            .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
            .collect()
    }

    fn cfg(p_e: f64, p_tau: f64) -> MaskConfig {
        MaskConfig { p_e, p_tau, ..MaskConfig::default() }
    }

    #[test]
    fn candidates_union_by_hand() {
        let (g, v) = build_graph(&raw(&[("a", "r1", "b"), ("b", "r2", "c")]), None).unwrap();
        let (a, b) = (v.entity_id("a").unwrap(), v.entity_id("b").unwrap());
        let (r1, r2) = (v.relation_id("r1").unwrap(), v.relation_id("r2").unwrap());
        assert_eq!(candidate_relations(&g, &[]).unwrap(), Vec::<u32>::new());
        assert_eq!(candidate_relations(&g, &[a]).unwrap(), vec![r1]);
        // b has the inverse edge back to a as well as its r2 edge
        assert_eq!(candidate_relations(&g, &[a, b]).unwrap(), vec![r1, r2, v.inv(r1)]);
    }

    #[test]
    fn removal_probability_arithmetic() {
        // C_max = 1.0, C_avg = 0.5; the lowest-confidence value truncates
        let row = vec![(0u32, 1.0), (1u32, 0.5), (2u32, 0.0)];
        let probs = removal_probabilities(&row, &cfg(0.5, 0.5)).unwrap();
        assert_eq!(probs, vec![(0, 0.0), (1, 0.5), (2, 0.5)]);
    }

    #[test]
    fn argmax_candidate_never_removed() {
        let row = vec![(0u32, 0.9), (1u32, 0.3)];
        let probs = removal_probabilities(&row, &cfg(1.0, 1.0)).unwrap();
        assert_eq!(probs[0], (0, 0.0));
    }

    #[test]
    fn degenerate_row_keeps_everything() {
        let row = vec![(0u32, 0.7), (1u32, 0.7), (2u32, 0.7)];
        let probs = removal_probabilities(&row, &cfg(0.9, 0.9)).unwrap();
        assert!(probs.iter().all(|&(_, p)| p == 0.0));
    }

    #[test]
    fn empty_row_is_an_error() {
        assert_eq!(removal_probabilities(&[], &cfg(0.5, 0.5)).unwrap_err(), MaskError::EmptyRow);
    }

    #[test]
    fn sampling_extremes() {
        let mut rng = stream(&[1, 2, 3]);
        let all_zero = vec![(0u32, 0.0), (1u32, 0.0), (2u32, 0.0)];
        assert_eq!(sample_mask(&all_zero, &mut rng), vec![0, 1, 2]);
        let all_one = vec![(0u32, 1.0), (1u32, 1.0)];
        assert_eq!(sample_mask(&all_one, &mut rng), Vec::<u32>::new());
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let probs = vec![(0u32, 0.5), (1u32, 0.5), (2u32, 0.5), (3u32, 0.5)];
        let a = sample_mask(&probs, &mut stream(&[9, 9]));
        let b = sample_mask(&probs, &mut stream(&[9, 9]));
        assert_eq!(a, b);
    }

    #[test]
    fn hop_mask_on_toy_graph() {
        let (g, v) =
            build_graph(&raw(&[("a", "r1", "b"), ("a", "r2", "b"), ("c", "r1", "b")]), None)
                .unwrap();
        let table = mine_confidence(&g);
        let a = v.entity_id("a").unwrap();
        let (r1, r2) = (v.relation_id("r1").unwrap(), v.relation_id("r2").unwrap());
        let c = cfg(0.2, 0.5);
        let mask =
            build_hop_mask(&g, &[a], &table, r2, &c, 1, &mut stream(&[c.seed, 1])).unwrap();
        // candidates {r1, r2}; conf row (0.5, 1.0): C_max = 1.0, C_avg = 0.75,
        // p(r1) = min(0.5/0.25 * p_e, p_tau) = min(2 p_e, p_tau), p(r2) = 0
        assert_eq!(mask.candidates, vec![r1, r2]);
        assert_eq!(mask.removal_prob, vec![(r1, 0.4), (r2, 0.0)]);
        assert!(mask.is_retained(r2));
        assert!(mask.retained.iter().all(|r| mask.candidates.contains(r)));
    }

    #[test]
    fn zero_multiplier_disables_masking() {
        let (g, v) =
            build_graph(&raw(&[("a", "r1", "b"), ("a", "r2", "b"), ("c", "r1", "b")]), None)
                .unwrap();
        let table = mine_confidence(&g);
        let a = v.entity_id("a").unwrap();
        let c = cfg(0.0, 0.5);
        let mask =
            build_hop_mask(&g, &[a], &table, 1, &c, 1, &mut stream(&[c.seed, 7])).unwrap();
        assert_eq!(mask.retained, mask.candidates);
    }

    #[test]
    fn empty_frontier_yields_empty_mask() {
        let (g, _) = build_graph(&raw(&[("a", "r1", "b")]), None).unwrap();
        let table = mine_confidence(&g);
        let c = MaskConfig::default();
        let mask = build_hop_mask(&g, &[], &table, 0, &c, 2, &mut stream(&[0])).unwrap();
        assert!(mask.candidates.is_empty());
        assert!(mask.retained.is_empty());
        assert_eq!(mask.hop, 2);
    }
}
