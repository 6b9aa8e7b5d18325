//! Multi-class log-loss training over both query directions, with early
//! stopping on validation MRR.
//!
//! Each training fact `(s, r_q, o)` contributes two queries per epoch:
//! `(s, r_q, ?)` targeting `o` and `(o, inv(r_q), ?)` targeting `s`. Losses
//! are averaged per batch and followed by one Adam step. The loss for one
//! query is the multi-class log-loss over every entity of the graph,
//! including unreached entities at score 0.

use alloc::string::String;
use alloc::vec::Vec;

use crate::confidence::ConfidenceTable;
use crate::graph::{KnowledgeGraph, Triple};
use crate::mask::MaskConfig;
use crate::metrics::{EvalError, FilterIndex, MaskMode, evaluate_queries, expand_bidirectional};
use crate::model::ModelParams;
use crate::params::NumericsError;
use crate::reasoner::{ForwardRun, MaskStream, ReasonerConfig, ReasonerError, forward};
use crate::rng::{SALT_SHUFFLE, SALT_TRAIN_MASK, stream};
use crate::split::InductiveSplit;
use crate::tape::{LeafGrad, PickTarget, TapeError, ValId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite loss on query ({head}, {rel}, target {target}); masks: {masks}")]
    NonFiniteLoss { head: u32, rel: u32, target: u32, masks: String },
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 100, lr: 5e-3, max_epochs: 30, patience: 5, eval_every: 1, seed: 42 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::InvalidConfig("learning rate must be positive"));
        }
        if self.patience < 1 {
            return Err(TrainError::InvalidConfig("patience must be at least 1"));
        }
        if self.eval_every < 1 {
            return Err(TrainError::InvalidConfig("eval_every must be at least 1"));
        }
        Ok(())
    }
}

/// Executes independent per-query jobs. Results must come back in index
/// order; implementations may run jobs on any number of threads because
/// every random decision is keyed by the job's own indices.
pub trait QueryRunner: Sync {
    fn run<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T>;
}

/// Runs jobs one after another on the calling thread.
pub struct SerialRunner;

impl QueryRunner for SerialRunner {
    fn run<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

/// Multi-class log-loss of a forward run against `target`:
/// `-score[target] + logsumexp(scores over all entities)`, where every
/// unreached entity participates with score 0.
pub fn multiclass_logloss(run: &mut ForwardRun, target: u32) -> Result<ValId, TapeError> {
    let zeros = run.n_entities - run.reached.len();
    let slot = match run.reached.binary_search_by_key(&target, |&(v, _)| v) {
        Ok(i) => PickTarget::Input(i),
        Err(_) => PickTarget::ImplicitZero,
    };
    let ids = run.score_ids.clone();
    run.tape.neg_logsoftmax_pick(&ids, zeros, slot)
}

/// Plain (untaped) reference for the same loss, used by tests and reports.
pub fn logloss_value(scores: &[f64], target: usize) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|&s| crate::math::exp(s - m)).sum();
    m + crate::math::ln(sum) - scores[target]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub n_queries: usize,
}

/// The two directional queries spawned by fact `i` of the canonical triple
/// list. Mask streams key on these ordinals, so shuffling and batching do
/// not change which stream a query draws from.
fn directional_query(triples: &[Triple], g: &KnowledgeGraph, ordinal: usize) -> (u32, u32, u32) {
    let t = triples[ordinal / 2];
    if ordinal % 2 == 0 {
        (t.head, t.rel, t.tail)
    } else {
        (t.tail, g.inv(t.rel), t.head)
    }
}

/// One pass over the training facts in a seeded shuffle; one Adam step per
/// batch of facts (each fact contributes both query directions).
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<R: QueryRunner>(
    g: &KnowledgeGraph,
    triples: &[Triple],
    table: &ConfidenceTable,
    model: &mut ModelParams,
    rcfg: &ReasonerConfig,
    mcfg: &MaskConfig,
    tcfg: &TrainConfig,
    epoch: usize,
    runner: &R,
) -> Result<EpochStats, TrainError> {
    tcfg.validate()?;
    let mut order: Vec<usize> = (0..triples.len()).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = stream(&[tcfg.seed, SALT_SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
    }

    let mut total_loss = 0.0;
    let mut total_queries = 0usize;
    for chunk in order.chunks(tcfg.batch_size) {
        let ordinals: Vec<usize> =
            chunk.iter().flat_map(|&i| [2 * i, 2 * i + 1]).collect();
        let n = ordinals.len();
        let results: Vec<Result<(f64, Vec<LeafGrad>), TrainError>> = runner.run(n, &|j| {
            let ordinal = ordinals[j];
            let (src, rel, target) = directional_query(triples, g, ordinal);
            let key = MaskStream {
                seed: mcfg.seed,
                salt: SALT_TRAIN_MASK,
                epoch: epoch as u64,
                query_ordinal: ordinal as u64,
            };
            let mut run = forward((src, rel), g, table, model, rcfg, mcfg, key)?;
            let loss_id = multiclass_logloss(&mut run, target)?;
            let loss = run.tape.value(loss_id).as_scalar().expect("loss is scalar");
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    head: src,
                    rel,
                    target,
                    masks: run.describe_masks(),
                });
            }
            let grads = run.tape.backward(loss_id)?;
            Ok((loss, grads))
        });
        let scale = 1.0 / n as f64;
        for result in results {
            let (loss, grads) = result?;
            total_loss += loss;
            model.store_mut().accumulate_scaled(&grads, scale);
        }
        total_queries += n;
        model.store_mut().adam_step(tcfg.lr, 0.9, 0.999, 1e-8)?;
    }
    Ok(EpochStats {
        mean_loss: if total_queries == 0 { 0.0 } else { total_loss / total_queries as f64 },
        n_queries: total_queries,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub loss: Option<f64>,
    pub valid_mrr: Option<f64>,
}

pub struct FitResult {
    /// The checkpoint with the best validation MRR.
    pub model: ModelParams,
    pub best_epoch: usize,
    pub best_valid_mrr: f64,
    pub curve: Vec<CurvePoint>,
}

/// Trains up to `max_epochs`, evaluating validation MRR (against the
/// training graph) every `eval_every` epochs, and stops after `patience`
/// evaluations without improvement. The initialization counts as the first
/// evaluation.
#[allow(clippy::too_many_arguments)]
pub fn fit<R: QueryRunner>(
    split: &InductiveSplit,
    table: &ConfidenceTable,
    init: ModelParams,
    rcfg: &ReasonerConfig,
    mcfg: &MaskConfig,
    tcfg: &TrainConfig,
    eval_seed: u64,
    eval_mask: MaskMode,
    runner: &R,
) -> Result<FitResult, TrainError> {
    tcfg.validate()?;
    rcfg.validate().map_err(TrainError::Reasoner)?;

    let mut filter = FilterIndex::new();
    filter.add_graph_triples(&split.train_graph);
    filter.add_bidirectional(&split.valid_queries, split.train_graph.n_relations());
    let valid_queries = expand_bidirectional(&split.valid_queries, split.train_graph.n_relations());

    let mut model = init;
    let evaluate = |m: &ModelParams| -> Result<f64, TrainError> {
        let report = evaluate_queries(
            &split.train_graph,
            table,
            m,
            rcfg,
            mcfg,
            &valid_queries,
            &filter,
            eval_seed,
            eval_mask,
            runner,
        )?;
        Ok(report.mrr)
    };

    let mut curve = Vec::new();
    let mut best_valid_mrr = evaluate(&model)?;
    let mut best = model.clone();
    let mut best_epoch = 0usize;
    let mut stale_evals = 0usize;
    curve.push(CurvePoint { epoch: 0, loss: None, valid_mrr: Some(best_valid_mrr) });
    log::info!("epoch 0: valid_mrr={best_valid_mrr:.4} (initialization)");

    for epoch in 1..=tcfg.max_epochs {
        let stats = train_epoch(
            &split.train_graph,
            &split.train_queries,
            table,
            &mut model,
            rcfg,
            mcfg,
            tcfg,
            epoch,
            runner,
        )?;
        let mut point =
            CurvePoint { epoch, loss: Some(stats.mean_loss), valid_mrr: None };
        if epoch % tcfg.eval_every == 0 {
            let mrr = evaluate(&model)?;
            point.valid_mrr = Some(mrr);
            if mrr > best_valid_mrr {
                best_valid_mrr = mrr;
                best = model.clone();
                best_epoch = epoch;
                stale_evals = 0;
            } else {
                stale_evals += 1;
            }
            log::info!(
                "epoch {epoch}: loss={:.6} valid_mrr={mrr:.4} best={best_valid_mrr:.4}@{best_epoch}",
                stats.mean_loss
            );
            if stale_evals >= tcfg.patience {
                curve.push(point);
                log::info!("early stop after {stale_evals} evaluations without improvement");
                break;
            }
        } else {
            log::info!("epoch {epoch}: loss={:.6}", stats.mean_loss);
        }
        curve.push(point);
    }

    Ok(FitResult { model: best, best_epoch, best_valid_mrr, curve })
}
