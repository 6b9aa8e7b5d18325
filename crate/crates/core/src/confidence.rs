//! Single-rule confidence mining.
//!
//! The confidence of the rule `r => r_q` is the fraction of `r`-facts whose
//! endpoint pair also carries `r_q`:
//!
//! ```text
//! conf[r][r_q] = |{(s, r, o) in E : r_q in relations_between(s, o)}| / |{t in E with relation r}|
//! ```
//!
//! with `0/0` defined as 0 (a relation with no support promotes nothing).
//! Confidence is mined once from the training graph and reused unchanged on
//! the inductive graph, whose relation vocabulary is shared.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{KnowledgeGraph, RelationId};

/// Dense `[n_relations x n_relations]` confidence matrix plus per-relation
/// support counts (the denominators).
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceTable {
    n_relations: usize,
    conf: Vec<f64>,
    support: Vec<u64>,
}

impl ConfidenceTable {
    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    /// `C(body => head)`, in `[0, 1]`.
    pub fn confidence(&self, body: RelationId, head: RelationId) -> f64 {
        self.conf[body as usize * self.n_relations + head as usize]
    }

    /// Number of triples with relation `r`.
    pub fn support(&self, r: RelationId) -> u64 {
        self.support[r as usize]
    }
}

/// Counts rule co-occurrences over a fully indexed graph.
pub fn mine_confidence(g: &KnowledgeGraph) -> ConfidenceTable {
    let n = g.n_relations();
    let mut num = vec![0u64; n * n];
    let mut support = vec![0u64; n];
    for t in g.triples() {
        support[t.rel as usize] += 1;
        // The graph is deduplicated, so each relation appears at most once
        // per endpoint pair and triple counting equals pair counting.
        for &rq in g.relations_between(t.head, t.tail).expect("triple endpoints are in range") {
            num[t.rel as usize * n + rq as usize] += 1;
        }
    }
    let mut conf = vec![0.0f64; n * n];
    for r in 0..n {
        if support[r] == 0 {
            continue;
        }
        let denom = support[r] as f64;
        for rq in 0..n {
            conf[r * n + rq] = num[r * n + rq] as f64 / denom;
        }
    }
    ConfidenceTable { n_relations: n, conf, support }
}

/// Confidence of each candidate relation toward `r_q`, sorted by relation id.
///
/// `candidates` must be sorted and in range.
pub fn confidence_row(
    table: &ConfidenceTable,
    candidates: &[RelationId],
    r_q: RelationId,
) -> Vec<(RelationId, f64)> {
    candidates.iter().map(|&r| (r, table.confidence(r, r_q))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Vocab, build_graph};
    use alloc::string::{String, ToString};
    use alloc::vec::Vec;

    fn raw(lines: &[(&str, &str, &str)]) -> Vec<(String, String, String)> {
        lines
            .iter()
            .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
            .collect()
    }

    #[test]
    fn self_rule_is_always_confident() {
        let (g, v) = build_graph(&raw(&[("a", "r1", "b")]), None).unwrap();
        let t = mine_confidence(&g);
        let r1 = v.relation_id("r1").unwrap();
        assert_eq!(t.confidence(r1, r1), 1.0);
        assert_eq!(t.confidence(v.inv(r1), v.inv(r1)), 1.0);
        assert_eq!(t.confidence(r1, v.inv(r1)), 0.0);
        assert_eq!(t.support(r1), 1);
    }

    #[test]
    fn toy_table_by_hand() {
        // two r1 triples, one endpoint pair also carries r2
        let (g, v) =
            build_graph(&raw(&[("a", "r1", "b"), ("a", "r2", "b"), ("c", "r1", "b")]), None)
                .unwrap();
        let t = mine_confidence(&g);
        let (r1, r2) = (v.relation_id("r1").unwrap(), v.relation_id("r2").unwrap());
        assert_eq!(t.confidence(r1, r2), 0.5);
        assert_eq!(t.confidence(r2, r1), 1.0);
        assert_eq!(t.support(r1), 2);
        assert_eq!(t.support(r2), 1);
        // inverse side mirrors
        assert_eq!(t.confidence(v.inv(r1), v.inv(r2)), 0.5);
        assert_eq!(t.confidence(v.inv(r2), v.inv(r1)), 1.0);
    }

    #[test]
    fn zero_support_relation_has_zero_confidence() {
        let (_, base) = build_graph(&raw(&[("a", "r1", "b"), ("a", "r3", "b")]), None).unwrap();
        // rebuild a graph that uses only r1; r3 keeps its slot with no triples
        let (g, v) = build_graph(&raw(&[("x", "r1", "y")]), Some(&base)).unwrap();
        let t = mine_confidence(&g);
        let r3 = v.relation_id("r3").unwrap();
        assert_eq!(t.support(r3), 0);
        for rq in 0..t.n_relations() as u32 {
            assert_eq!(t.confidence(r3, rq), 0.0);
        }
    }

    #[test]
    fn confidence_row_sorted_copies() {
        let (g, v) =
            build_graph(&raw(&[("a", "r1", "b"), ("a", "r2", "b"), ("c", "r1", "b")]), None)
                .unwrap();
        let t = mine_confidence(&g);
        let (r1, r2) = (v.relation_id("r1").unwrap(), v.relation_id("r2").unwrap());
        assert_eq!(confidence_row(&t, &[], r2), Vec::new());
        assert_eq!(confidence_row(&t, &[r1], r2), alloc::vec![(r1, 0.5)]);
        assert_eq!(confidence_row(&t, &[r1, r2], r2), alloc::vec![(r1, 0.5), (r2, 1.0)]);
    }

    #[test]
    fn empty_graph_is_fine() {
        let g = crate::graph::KnowledgeGraph::from_id_triples(&[], 0, 0).unwrap();
        let t = mine_confidence(&g);
        assert_eq!(t.n_relations(), 0);
        let _ = Vocab::new();
    }
}
