//! Inductive benchmark splits: a training graph plus a disjoint fact graph
//! over unseen entities that shares only the relation vocabulary.

use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::{KnowledgeGraph, Triple, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("entity {0:?} appears in both the training and inductive graphs")]
    EntityOverlap(String),
    #[error("relation vocabularies of the two graphs differ")]
    RelationVocabMismatch,
    #[error("query endpoint id {0} outside its graph's entity vocabulary")]
    QueryOutOfRange(u32),
    #[error("query relation id {0} outside the shared relation vocabulary")]
    QueryRelationOutOfRange(u32),
}

/// A full inductive split.
///
/// `train_queries` are the training-graph facts themselves (one loss term per
/// fact, both directions). `valid_queries` are held-out facts over training
/// entities, used for early stopping. `test_queries` are scored against
/// `ind_graph`, whose entities never appear during training.
#[derive(Clone, Debug)]
pub struct InductiveSplit {
    pub train_graph: KnowledgeGraph,
    pub train_vocab: Vocab,
    pub train_queries: Vec<Triple>,
    pub valid_queries: Vec<Triple>,
    pub ind_graph: KnowledgeGraph,
    pub ind_vocab: Vocab,
    pub test_queries: Vec<Triple>,
    /// Held-out facts of the inductive directory, when a valid file exists;
    /// used only to enlarge the evaluation filter.
    pub ind_valid_queries: Vec<Triple>,
}

impl InductiveSplit {
    /// Checks the structural invariants of the split.
    pub fn validate(&self) -> Result<(), SplitError> {
        if self.train_vocab.n_raw_relations() != self.ind_vocab.n_raw_relations() {
            return Err(SplitError::RelationVocabMismatch);
        }
        for name in self.ind_vocab.entity_names() {
            if self.train_vocab.entity_id(name).is_some() {
                return Err(SplitError::EntityOverlap(name.into()));
            }
        }
        let check = |queries: &[Triple], n_entities: usize, n_relations: usize| {
            for q in queries {
                if q.head as usize >= n_entities || q.tail as usize >= n_entities {
                    let bad = if q.head as usize >= n_entities { q.head } else { q.tail };
                    return Err(SplitError::QueryOutOfRange(bad));
                }
                if q.rel as usize >= n_relations {
                    return Err(SplitError::QueryRelationOutOfRange(q.rel));
                }
            }
            Ok(())
        };
        let (tn, tr) = (self.train_graph.n_entities(), self.train_graph.n_relations());
        check(&self.train_queries, tn, tr)?;
        check(&self.valid_queries, tn, tr)?;
        let (inn, inr) = (self.ind_graph.n_entities(), self.ind_graph.n_relations());
        check(&self.test_queries, inn, inr)?;
        check(&self.ind_valid_queries, inn, inr)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use alloc::string::ToString;
    use alloc::vec;

    fn raw(lines: &[(&str, &str, &str)]) -> Vec<(String, String, String)> {
        lines
            .iter()
            .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
            .collect()
    }

    fn toy_split() -> InductiveSplit {
        let (train_graph, train_vocab) =
            build_graph(&raw(&[("a", "r1", "b"), ("b", "r2", "c")]), None).unwrap();
        let (ind_graph, ind_vocab) =
            build_graph(&raw(&[("x", "r1", "y")]), Some(&train_vocab)).unwrap();
        let train_queries = vec![Triple::new(0, 0, 1), Triple::new(1, 1, 2)];
        InductiveSplit {
            train_graph,
            train_vocab,
            train_queries,
            valid_queries: vec![Triple::new(0, 1, 2)],
            ind_graph,
            ind_vocab,
            test_queries: vec![Triple::new(0, 0, 1)],
            ind_valid_queries: vec![],
        }
    }

    #[test]
    fn valid_split_passes() {
        toy_split().validate().unwrap();
    }

    #[test]
    fn entity_overlap_is_caught() {
        let mut s = toy_split();
        // rebuild the inductive graph reusing a training entity name
        let (g, v) = build_graph(&raw(&[("a", "r1", "y")]), Some(&s.train_vocab)).unwrap();
        s.ind_graph = g;
        s.ind_vocab = v;
        assert_eq!(s.validate().unwrap_err(), SplitError::EntityOverlap("a".into()));
    }

    #[test]
    fn out_of_range_test_query_is_caught() {
        let mut s = toy_split();
        s.test_queries.push(Triple::new(9, 0, 0));
        assert_eq!(s.validate().unwrap_err(), SplitError::QueryOutOfRange(9));
    }
}
