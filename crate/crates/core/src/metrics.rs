//! Filtered ranking metrics: MRR, Hits@1, Hits@10.
//!
//! Each test fact is scored in both directions against the inductive fact
//! graph. The candidate pool for a query `(s, r, ?)` is every entity except
//! the other known-true answers for that (entity, relation) direction; ties
//! rank at their expectation under random tie-breaking, so a degenerate
//! all-equal model lands mid-field instead of at rank 1.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::confidence::ConfidenceTable;
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple, inv_relation};
use crate::mask::MaskConfig;
use crate::model::ModelParams;
use crate::reasoner::{MaskStream, ReasonerConfig, ReasonerError, forward};
use crate::rng::SALT_EVAL_MASK;
use crate::split::InductiveSplit;
use crate::train::QueryRunner;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("target entity {0} is in the filter set")]
    TargetFiltered(EntityId),
    #[error("target entity {0} outside the score vector")]
    TargetOutOfRange(EntityId),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
}

/// Whether evaluation samples masks (once per query, from the evaluation
/// seed) or disables masking entirely.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    Sampled,
    Disabled,
}

/// Known-true answers per `(source, relation)` direction, used to filter
/// candidates during ranking.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    map: BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>>,
}

impl FilterIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a graph's triples as known answers. Graph triples are already
    /// inverse-closed, so both directions are covered.
    pub fn add_graph_triples(&mut self, g: &KnowledgeGraph) {
        for t in g.triples() {
            self.map.entry((t.head, t.rel)).or_default().insert(t.tail);
        }
    }

    /// Adds raw (not inverse-closed) facts in both directions.
    pub fn add_bidirectional(&mut self, triples: &[Triple], n_relations: usize) {
        for t in triples {
            self.map.entry((t.head, t.rel)).or_default().insert(t.tail);
            self.map.entry((t.tail, inv_relation(t.rel, n_relations))).or_default().insert(t.head);
        }
    }

    /// Entities to exclude when ranking `target` for `(source, rel, ?)`:
    /// all known answers minus the target itself.
    pub fn filter_for(
        &self,
        source: EntityId,
        rel: RelationId,
        target: EntityId,
    ) -> BTreeSet<EntityId> {
        let mut set = self.map.get(&(source, rel)).cloned().unwrap_or_default();
        set.remove(&target);
        set
    }
}

/// Expected filtered rank of `target` under random tie-breaking:
/// `1 + #{better} + #{equal, excluding target} / 2`. May be half-integral.
pub fn filtered_rank(
    scores: &[f64],
    target: EntityId,
    filter_out: &BTreeSet<EntityId>,
) -> Result<f64, EvalError> {
    if filter_out.contains(&target) {
        return Err(EvalError::TargetFiltered(target));
    }
    let target_score =
        *scores.get(target as usize).ok_or(EvalError::TargetOutOfRange(target))?;
    let mut greater = 0usize;
    let mut equal = 0usize;
    for (v, &s) in scores.iter().enumerate() {
        if v as EntityId == target || filter_out.contains(&(v as EntityId)) {
            continue;
        }
        if s > target_score {
            greater += 1;
        } else if s == target_score {
            equal += 1;
        }
    }
    Ok(1.0 + greater as f64 + equal as f64 / 2.0)
}

/// Filtered ranking results plus the per-query ranks they were reduced from.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mrr: f64,
    pub hits1: f64,
    pub hits10: f64,
    pub n_queries: usize,
    pub ranks: Vec<f64>,
    pub seed: u64,
}

/// Reduces per-query ranks into MRR / Hits@k.
pub fn report_from_ranks(ranks: Vec<f64>, seed: u64) -> MetricsReport {
    let n = ranks.len();
    let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n.max(1) as f64;
    let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n.max(1) as f64;
    MetricsReport { mrr, hits1: hits(1.0), hits10: hits(10.0), n_queries: n, ranks, seed }
}

/// Expands raw facts into directional `(source, rel, target)` queries:
/// `(h, r, ?) -> t` and `(t, inv(r), ?) -> h`.
pub fn expand_bidirectional(triples: &[Triple], n_relations: usize) -> Vec<(u32, u32, u32)> {
    triples
        .iter()
        .flat_map(|t| {
            [(t.head, t.rel, t.tail), (t.tail, inv_relation(t.rel, n_relations), t.head)]
        })
        .collect()
}

/// Scores and ranks a list of directional queries against `g`. Evaluation
/// masks draw from `stream(eval_seed, SALT_EVAL_MASK, 0, query_ordinal, hop)`,
/// one fixed sample per query.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_queries<R: QueryRunner>(
    g: &KnowledgeGraph,
    table: &ConfidenceTable,
    model: &ModelParams,
    rcfg: &ReasonerConfig,
    mcfg: &MaskConfig,
    queries: &[(u32, u32, u32)],
    filter: &FilterIndex,
    eval_seed: u64,
    mask_mode: MaskMode,
    runner: &R,
) -> Result<MetricsReport, EvalError> {
    let rcfg = ReasonerConfig {
        masking_enabled: rcfg.masking_enabled && mask_mode == MaskMode::Sampled,
        ..*rcfg
    };
    let results: Vec<Result<f64, EvalError>> = runner.run(queries.len(), &|i| {
        let (src, rel, target) = queries[i];
        let key = MaskStream {
            seed: eval_seed,
            salt: SALT_EVAL_MASK,
            epoch: 0,
            query_ordinal: i as u64,
        };
        let run = forward((src, rel), g, table, model, &rcfg, mcfg, key)?;
        filtered_rank(&run.final_scores, target, &filter.filter_for(src, rel, target))
    });
    let ranks = results.into_iter().collect::<Result<Vec<f64>, EvalError>>()?;
    Ok(report_from_ranks(ranks, eval_seed))
}

/// Full test-side evaluation of an inductive split: both directions of every
/// test fact, scored on the inductive graph, filtered against the fact
/// graph, the test facts, and any held-out inductive valid facts.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_split_test<R: QueryRunner>(
    split: &InductiveSplit,
    table: &ConfidenceTable,
    model: &ModelParams,
    rcfg: &ReasonerConfig,
    mcfg: &MaskConfig,
    eval_seed: u64,
    mask_mode: MaskMode,
    runner: &R,
) -> Result<MetricsReport, EvalError> {
    let n_rel = split.ind_graph.n_relations();
    let mut filter = FilterIndex::new();
    filter.add_graph_triples(&split.ind_graph);
    filter.add_bidirectional(&split.test_queries, n_rel);
    filter.add_bidirectional(&split.ind_valid_queries, n_rel);
    let queries = expand_bidirectional(&split.test_queries, n_rel);
    evaluate_queries(
        &split.ind_graph,
        table,
        model,
        rcfg,
        mcfg,
        &queries,
        &filter,
        eval_seed,
        mask_mode,
        runner,
    )
}

/// One ablation variant: the full model, masking removed, scoring removed,
/// or a specific probability multiplier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AblationVariant {
    Full,
    NoMask,
    NoScore,
    PeValue(f64),
}

impl AblationVariant {
    pub fn label(&self) -> String {
        use alloc::format;
        match self {
            AblationVariant::Full => String::from("full"),
            AblationVariant::NoMask => String::from("no-mask"),
            AblationVariant::NoScore => String::from("no-score"),
            AblationVariant::PeValue(p) => format!("pe-{p:.2}"),
        }
    }

    /// The reasoner/mask configuration this variant trains and evaluates
    /// with. Removing the masking module is realized as `p_e = 0`, which
    /// retains every candidate exactly like disabling the module.
    pub fn apply(&self, rcfg: &ReasonerConfig, mcfg: &MaskConfig) -> (ReasonerConfig, MaskConfig) {
        match *self {
            AblationVariant::Full => (*rcfg, *mcfg),
            AblationVariant::NoMask => (*rcfg, MaskConfig { p_e: 0.0, ..*mcfg }),
            AblationVariant::NoScore => {
                (ReasonerConfig { scoring_enabled: false, ..*rcfg }, *mcfg)
            }
            AblationVariant::PeValue(p) => (*rcfg, MaskConfig { p_e: p, ..*mcfg }),
        }
    }
}

/// Result of training and evaluating one ablation variant, with the
/// effective configuration it ran under.
pub struct AblationRun {
    pub label: String,
    pub report: MetricsReport,
    pub rcfg: ReasonerConfig,
    pub mcfg: MaskConfig,
    pub fit: crate::train::FitResult,
}

/// Trains and test-evaluates the ablation grid: the full model, masking
/// removed, scoring removed, and one run per `p_e` grid value. Every variant
/// starts from a clone of the same initialization. `only` restricts the grid
/// to a single label.
#[allow(clippy::too_many_arguments)]
pub fn ablate<R: QueryRunner>(
    split: &InductiveSplit,
    table: &ConfidenceTable,
    init: &ModelParams,
    rcfg: &ReasonerConfig,
    mcfg: &MaskConfig,
    tcfg: &crate::train::TrainConfig,
    eval_seed: u64,
    eval_mask: MaskMode,
    pe_grid: &[f64],
    only: Option<&str>,
    runner: &R,
) -> Result<Vec<AblationRun>, crate::train::TrainError> {
    let mut variants =
        alloc::vec![AblationVariant::Full, AblationVariant::NoMask, AblationVariant::NoScore];
    variants.extend(pe_grid.iter().map(|&p| AblationVariant::PeValue(p)));

    let mut out = Vec::new();
    for variant in variants {
        let label = variant.label();
        if let Some(want) = only {
            if label != want {
                continue;
            }
        }
        let (vr, vm) = variant.apply(rcfg, mcfg);
        log::info!("ablation variant {label}: training");
        let fit_result = crate::train::fit(
            split,
            table,
            init.clone(),
            &vr,
            &vm,
            tcfg,
            eval_seed,
            eval_mask,
            runner,
        )?;
        let report = evaluate_split_test(
            split,
            table,
            &fit_result.model,
            &vr,
            &vm,
            eval_seed,
            eval_mask,
            runner,
        )?;
        log::info!("ablation variant {label}: test mrr={:.4}", report.mrr);
        out.push(AblationRun { label, report, rcfg: vr, mcfg: vm, fit: fit_result });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rank_of_strict_winner_is_one() {
        let scores = vec![0.9, 0.1, 0.2];
        assert_eq!(filtered_rank(&scores, 0, &BTreeSet::new()).unwrap(), 1.0);
    }

    #[test]
    fn rank_with_filter_and_tie_by_hand() {
        // target o = 0 at 0.9; x1 = 1 at 0.95 filtered; x2 = 2 at 0.5;
        // x3 = 3 at 0.9 ties -> rank 1.5
        let scores = vec![0.9, 0.95, 0.5, 0.9];
        let filter: BTreeSet<u32> = [1].into();
        assert_eq!(filtered_rank(&scores, 0, &filter).unwrap(), 1.5);
    }

    #[test]
    fn all_equal_scores_rank_mid_field() {
        let scores = vec![0.0; 7];
        assert_eq!(filtered_rank(&scores, 3, &BTreeSet::new()).unwrap(), 4.0);
    }

    #[test]
    fn filtered_target_is_an_error() {
        let scores = vec![0.0; 3];
        let filter: BTreeSet<u32> = [1].into();
        assert_eq!(filtered_rank(&scores, 1, &filter).unwrap_err(), EvalError::TargetFiltered(1));
    }

    #[test]
    fn report_arithmetic() {
        let r = report_from_ranks(vec![1.0, 4.0], 0);
        assert_eq!(r.mrr, 0.625);
        assert_eq!(r.hits1, 0.5);
        assert_eq!(r.hits10, 1.0);
        assert_eq!(r.n_queries, 2);
    }

    #[test]
    fn enlarging_filter_never_increases_rank() {
        let scores = vec![0.1, 0.9, 0.5, 0.7, 0.2];
        let small: BTreeSet<u32> = [1].into();
        let big: BTreeSet<u32> = [1, 3].into();
        let r_small = filtered_rank(&scores, 2, &small).unwrap();
        let r_big = filtered_rank(&scores, 2, &big).unwrap();
        assert!(r_big <= r_small);
    }

    #[test]
    fn translation_invariance() {
        let scores = vec![0.1, 0.9, 0.5, 0.7];
        let shifted: Vec<f64> = scores.iter().map(|s| s + 123.0).collect();
        for t in 0..4u32 {
            assert_eq!(
                filtered_rank(&scores, t, &BTreeSet::new()).unwrap(),
                filtered_rank(&shifted, t, &BTreeSet::new()).unwrap()
            );
        }
    }

    #[test]
    fn filter_index_directions() {
        let mut f = FilterIndex::new();
        // facts (0, r0, 1) with 2 relations (r0 and its inverse r1)
        f.add_bidirectional(&[Triple::new(0, 0, 1)], 2);
        assert!(f.filter_for(0, 0, 9).contains(&1));
        assert!(f.filter_for(1, 1, 9).contains(&0));
        // target itself is not filtered
        assert!(!f.filter_for(0, 0, 1).contains(&1));
    }

    #[test]
    fn variant_labels_and_overrides() {
        let rcfg = ReasonerConfig::default();
        let mcfg = MaskConfig::default();
        assert_eq!(AblationVariant::NoMask.label(), "no-mask");
        assert_eq!(AblationVariant::PeValue(0.3).label(), "pe-0.30");
        let (_, m) = AblationVariant::NoMask.apply(&rcfg, &mcfg);
        assert_eq!(m.p_e, 0.0);
        let (r, _) = AblationVariant::NoScore.apply(&rcfg, &mcfg);
        assert!(!r.scoring_enabled);
    }
}
