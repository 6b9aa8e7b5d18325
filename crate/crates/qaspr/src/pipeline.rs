//! Command implementations behind the CLI; tests drive these directly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, bail};
use qaspr_core::metrics::{ablate as core_ablate, evaluate_queries, evaluate_split_test, FilterIndex};
use qaspr_core::model::ModelParams;
use qaspr_core::split::InductiveSplit;
use qaspr_core::train::fit;
use qaspr_core::{ConfidenceTable, build_graph, mine_confidence};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{load_inductive_split, load_tsv};
use crate::parallel::Runner;
use crate::report;
use crate::synth::SynthOptions;

fn out_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_split(cfg: &RunConfig) -> anyhow::Result<InductiveSplit> {
    let train_dir = cfg.train_dir.as_deref().context("train_dir is required")?;
    let ind_dir = cfg.ind_dir.as_deref().context("ind_dir is required")?;
    Ok(load_inductive_split(Path::new(train_dir), Path::new(ind_dir))?)
}

fn init_model(cfg: &RunConfig, n_relations: usize) -> ModelParams {
    ModelParams::init(cfg.dim, n_relations, cfg.shared_transform, cfg.separate_scorers, cfg.seed)
}

pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub valid_metrics: PathBuf,
    pub best_valid_mrr: f64,
}

/// Mines the confidence table, trains with early stopping, and writes the
/// best checkpoint, the training curve, and the validation metrics.
pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<TrainArtifacts> {
    let dir = out_dir(cfg)?;
    let split = load_split(cfg)?;
    let table = mine_confidence(&split.train_graph);
    let runner = Runner::new(cfg.threads)?;
    let init = init_model(cfg, split.train_graph.n_relations());
    let result = fit(
        &split,
        &table,
        init,
        &cfg.reasoner(),
        &cfg.mask(),
        &cfg.train(),
        cfg.eval_seed,
        cfg.mask_mode(),
        &runner,
    )?;

    let ckpt = dir.join("best.ckpt");
    checkpoint::save(&ckpt, &result.model, cfg)?;
    let curve = dir.join("curve.jsonl");
    report::write_curve(&curve, &result.curve)?;

    // full validation report for the best checkpoint
    let n_rel = split.train_graph.n_relations();
    let mut filter = FilterIndex::new();
    filter.add_graph_triples(&split.train_graph);
    filter.add_bidirectional(&split.valid_queries, n_rel);
    let valid_queries = qaspr_core::metrics::expand_bidirectional(&split.valid_queries, n_rel);
    let valid_report = evaluate_queries(
        &split.train_graph,
        &table,
        &result.model,
        &cfg.reasoner(),
        &cfg.mask(),
        &valid_queries,
        &filter,
        cfg.eval_seed,
        cfg.mask_mode(),
        &runner,
    )?;
    let valid_metrics = dir.join("valid_metrics.json");
    report::write_metrics(&valid_metrics, &valid_report, cfg)?;
    log::info!(
        "training done: best valid MRR {:.4} at epoch {}; checkpoint {}",
        result.best_valid_mrr,
        result.best_epoch,
        ckpt.display()
    );
    Ok(TrainArtifacts {
        checkpoint: ckpt,
        curve,
        valid_metrics,
        best_valid_mrr: result.best_valid_mrr,
    })
}

/// Evaluates a checkpoint on the inductive test queries and writes
/// `metrics.json` (and optionally the per-query rank dump).
pub fn cmd_eval(
    cfg: &RunConfig,
    ckpt_path: &Path,
    dump_ranks: Option<&Path>,
) -> anyhow::Result<PathBuf> {
    let dir = out_dir(cfg)?;
    let (model, _meta) = checkpoint::load(ckpt_path)?;
    let split = load_split(cfg)?;
    if model.n_relations() != split.ind_graph.n_relations() {
        bail!(
            "checkpoint was trained with {} relations but the split has {}",
            model.n_relations(),
            split.ind_graph.n_relations()
        );
    }
    let table = mine_confidence(&split.train_graph);
    let runner = Runner::new(cfg.threads)?;
    let report_data = evaluate_split_test(
        &split,
        &table,
        &model,
        &cfg.reasoner(),
        &cfg.mask(),
        cfg.eval_seed,
        cfg.mask_mode(),
        &runner,
    )?;
    let path = dir.join("metrics.json");
    report::write_metrics(&path, &report_data, cfg)?;
    if let Some(ranks_path) = dump_ranks {
        let queries = qaspr_core::metrics::expand_bidirectional(
            &split.test_queries,
            split.ind_graph.n_relations(),
        );
        report::write_ranks_csv(ranks_path, &queries, &report_data, &split.ind_vocab)?;
    }
    log::info!(
        "test MRR {:.4}, Hits@1 {:.4}, Hits@10 {:.4} over {} queries",
        report_data.mrr,
        report_data.hits1,
        report_data.hits10,
        report_data.n_queries
    );
    Ok(path)
}

/// Mines the rule-confidence table from the training graph and dumps it as
/// CSV.
pub fn cmd_mine_rules(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = out_dir(cfg)?;
    let train_dir = cfg.train_dir.as_deref().context("train_dir is required")?;
    let raw = load_tsv(&Path::new(train_dir).join("train.txt"))?;
    let (graph, vocab) = build_graph(&raw, None)?;
    let table = mine_confidence(&graph);
    let path = dir.join("rules.csv");
    report::write_rules_csv(&path, &table, &vocab)?;
    log::info!("wrote {} ({} relations)", path.display(), table.n_relations());
    Ok(path)
}

/// Trains and test-evaluates the ablation grid (or one variant), writing one
/// metrics file per variant under `out/ablate/<label>/`.
pub fn cmd_ablate(cfg: &RunConfig, only: Option<&str>) -> anyhow::Result<Vec<PathBuf>> {
    let dir = out_dir(cfg)?;
    let split = load_split(cfg)?;
    let table = mine_confidence(&split.train_graph);
    let runner = Runner::new(cfg.threads)?;
    let init = init_model(cfg, split.train_graph.n_relations());
    let runs = core_ablate(
        &split,
        &table,
        &init,
        &cfg.reasoner(),
        &cfg.mask(),
        &cfg.train(),
        cfg.eval_seed,
        cfg.mask_mode(),
        &cfg.pe_grid,
        only,
        &runner,
    )?;
    if runs.is_empty() {
        bail!("no ablation variant matches {only:?}");
    }
    let mut out = Vec::new();
    for run in &runs {
        let vdir = dir.join("ablate").join(&run.label);
        fs::create_dir_all(&vdir)?;
        // echo the configuration the variant actually ran with
        let effective = RunConfig {
            p_e: run.mcfg.p_e,
            scoring: run.rcfg.scoring_enabled,
            ..cfg.clone()
        };
        let path = vdir.join("metrics.json");
        report::write_metrics(&path, &run.report, &effective)?;
        report::write_curve(&vdir.join("curve.jsonl"), &run.fit.curve)?;
        out.push(path);
    }
    Ok(out)
}

/// Replays one query's per-hop masking decisions and returns them as JSON.
pub fn cmd_inspect_mask(
    cfg: &RunConfig,
    head: &str,
    rel: &str,
    ckpt_path: Option<&Path>,
) -> anyhow::Result<String> {
    let split = load_split(cfg)?;
    let table = mine_confidence(&split.train_graph);
    let model = match ckpt_path {
        Some(p) => checkpoint::load(p)?.0,
        None => init_model(cfg, split.train_graph.n_relations()),
    };

    // the query runs on whichever graph knows the head entity
    let (graph, vocab, graph_name) = if split.train_vocab.entity_id(head).is_some() {
        (&split.train_graph, &split.train_vocab, "train")
    } else {
        (&split.ind_graph, &split.ind_vocab, "inductive")
    };
    let source = vocab
        .entity_id(head)
        .with_context(|| format!("entity {head:?} not found in either graph"))?;
    let r_q = vocab.relation_id(rel).with_context(|| format!("unknown relation {rel:?}"))?;

    let key = qaspr_core::reasoner::MaskStream {
        seed: cfg.eval_seed,
        salt: qaspr_core::rng::SALT_EVAL_MASK,
        epoch: 0,
        query_ordinal: 0,
    };
    let run = qaspr_core::reasoner::forward(
        (source, r_q),
        graph,
        &table,
        &model,
        &cfg.reasoner(),
        &cfg.mask(),
        key,
    )?;
    let doc = report::mask_inspection(head, rel, graph_name, &run.hop_masks, &table, r_q, vocab);
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub struct GradCheckOutcome {
    pub report: qaspr_core::gradcheck::GradCheckReport,
    pub tolerance: f64,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

/// Runs the finite-difference gradient check on a small built-in problem:
/// a 5-entity graph, d = 4, two hops, top-2 pruning, fixed masks.
pub fn cmd_grad_check(tolerance: f64, fd_step: f64) -> anyhow::Result<GradCheckOutcome> {
    let (g, table, facts) = builtin_toy_problem()?;
    let g = &g;
    let rcfg = qaspr_core::ReasonerConfig {
        path_len: 2,
        top_k: 2,
        dim: 4,
        masking_enabled: true,
        scoring_enabled: true,
        relu: false,
    };
    let mcfg = qaspr_core::MaskConfig { p_e: 0.3, ..Default::default() };
    let queries: Vec<(u32, u32, u32)> = facts
        .iter()
        .flat_map(|t| [(t.head, t.rel, t.tail), (t.tail, g.inv(t.rel), t.head)])
        .collect();

    let loss_of = |model: &ModelParams, with_grads: bool| -> anyhow::Result<(f64, Vec<_>)> {
        let mut total = 0.0;
        let mut all_grads = Vec::new();
        for (i, &(s, r, target)) in queries.iter().enumerate() {
            let key = qaspr_core::reasoner::MaskStream {
                seed: 7,
                salt: qaspr_core::rng::SALT_EVAL_MASK,
                epoch: 0,
                query_ordinal: i as u64,
            };
            let mut run =
                qaspr_core::reasoner::forward((s, r), g, &table, model, &rcfg, &mcfg, key)?;
            let loss_id = qaspr_core::train::multiclass_logloss(&mut run, target)?;
            total += run.tape.value(loss_id).as_scalar().expect("scalar loss");
            if with_grads {
                all_grads.extend(run.tape.backward(loss_id)?);
            }
        }
        Ok((total, all_grads))
    };

    let model = ModelParams::init(4, g.n_relations(), false, false, 13);
    let mut with_grads = |store: &mut qaspr_core::ParamStore| -> anyhow::Result<f64> {
        let probe = model_with_store(&model, store);
        let (loss, grads) = loss_of(&probe, true)?;
        store.accumulate_scaled(&grads, 1.0);
        Ok(loss)
    };
    let mut only = |store: &qaspr_core::ParamStore| -> anyhow::Result<f64> {
        let probe = model_with_store(&model, store);
        Ok(loss_of(&probe, false)?.0)
    };

    let mut store = model.store().clone();
    let report = qaspr_core::gradcheck::grad_check(&mut store, &mut with_grads, &mut only, fd_step)?;
    Ok(GradCheckOutcome { report, tolerance })
}

/// Rebuilds a model view over a (possibly perturbed) parameter store.
fn model_with_store(template: &ModelParams, store: &qaspr_core::ParamStore) -> ModelParams {
    let mut m = template.clone();
    for id in store.ids() {
        let name = store.name(id).to_string();
        let shape = store.shape(id).to_vec();
        let data = store.data(id).to_vec();
        m.set_tensor(&name, &shape, data).expect("same layout");
    }
    m
}

/// Five entities, three raw relations, a couple of converging paths.
fn builtin_toy_problem()
-> anyhow::Result<(qaspr_core::KnowledgeGraph, ConfidenceTable, Vec<qaspr_core::Triple>)> {
    let raw: Vec<(String, String, String)> = [
        ("e0", "ra", "e1"),
        ("e1", "rb", "e2"),
        ("e0", "rb", "e3"),
        ("e3", "ra", "e4"),
        ("e2", "rc", "e4"),
        ("e0", "rc", "e2"),
    ]
    .iter()
    .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
    .collect();
    let (g, vocab) = build_graph(&raw, None)?;
    let facts = qaspr_core::graph::resolve_triples(&raw, &vocab)?;
    let table = mine_confidence(&g);
    Ok((g, table, facts))
}

pub struct GenSynthArtifacts {
    pub train_dir: PathBuf,
    pub ind_dir: PathBuf,
}

/// Writes a synthetic planted-rule split under `out/synth/`.
pub fn cmd_gen_synth(cfg: &RunConfig, opts: &SynthOptions) -> anyhow::Result<GenSynthArtifacts> {
    let dir = out_dir(cfg)?.join("synth");
    let data = crate::synth::generate(opts);
    let (train_dir, ind_dir) = data.write(&dir)?;
    log::info!("wrote synthetic split: {} and {}", train_dir.display(), ind_dir.display());
    Ok(GenSynthArtifacts { train_dir, ind_dir })
}
