//! Run artifacts: metrics JSON, training-curve JSON lines, rule-confidence
//! CSV, per-query rank CSV, and the per-hop mask inspection report.

use std::fs;
use std::io::Write;
use std::path::Path;

use qaspr_core::confidence::ConfidenceTable;
use qaspr_core::graph::Vocab;
use qaspr_core::mask::HopMask;
use qaspr_core::metrics::MetricsReport;
use qaspr_core::train::CurvePoint;
use serde::Serialize;

use crate::config::RunConfig;

/// The metrics artifact. Field order is the wire format; `timestamp` is the
/// only field that varies between identical runs.
#[derive(Debug, Serialize)]
pub struct MetricsJson<'a> {
    pub dataset: &'a str,
    pub version: &'a str,
    pub mrr: f64,
    pub hits1: f64,
    pub hits10: f64,
    pub n_queries: usize,
    pub seed: u64,
    pub config: &'a RunConfig,
    pub timestamp: String,
}

pub fn write_metrics(path: &Path, report: &MetricsReport, cfg: &RunConfig) -> anyhow::Result<()> {
    let doc = MetricsJson {
        dataset: &cfg.dataset,
        version: &cfg.version,
        mrr: report.mrr,
        hits1: report.hits1,
        hits10: report.hits10,
        n_queries: report.n_queries,
        seed: report.seed,
        config: cfg,
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    epoch: usize,
    loss: Option<f64>,
    valid_mrr: Option<f64>,
}

/// One JSON object per line: `{"epoch": n, "loss": x, "valid_mrr": y}`.
pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> anyhow::Result<()> {
    let mut out = fs::File::create(path)?;
    for p in curve {
        let row = CurveRow { epoch: p.epoch, loss: p.loss, valid_mrr: p.valid_mrr };
        writeln!(out, "{}", serde_json::to_string(&row)?)?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Dumps the confidence table: `body,head,confidence,support`, one row per
/// pair whose body relation has support.
pub fn write_rules_csv(path: &Path, table: &ConfidenceTable, vocab: &Vocab) -> anyhow::Result<()> {
    let mut out = String::from("body,head,confidence,support\n");
    let n = table.n_relations() as u32;
    for body in 0..n {
        if table.support(body) == 0 {
            continue;
        }
        for head in 0..n {
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&vocab.relation_name(body).expect("relation in range")),
                csv_field(&vocab.relation_name(head).expect("relation in range")),
                table.confidence(body, head),
                table.support(body),
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-query ranks: `query_head,query_rel,target,rank`.
pub fn write_ranks_csv(
    path: &Path,
    queries: &[(u32, u32, u32)],
    report: &MetricsReport,
    vocab: &Vocab,
) -> anyhow::Result<()> {
    let mut out = String::from("query_head,query_rel,target,rank\n");
    for (&(s, r, t), &rank) in queries.iter().zip(&report.ranks) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(vocab.entity_name(s).unwrap_or("?")),
            csv_field(&vocab.relation_name(r).unwrap_or_else(|| "?".into())),
            csv_field(vocab.entity_name(t).unwrap_or("?")),
            rank,
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize)]
pub struct HopMaskJson {
    pub hop: usize,
    pub candidates: Vec<String>,
    pub confidences: Vec<f64>,
    pub removal_prob: Vec<f64>,
    pub retained: Vec<String>,
}

#[derive(Serialize)]
pub struct MaskInspection {
    pub head: String,
    pub rel: String,
    pub graph: String,
    pub hops: Vec<HopMaskJson>,
}

/// Renders the per-hop masking decisions of one query.
pub fn mask_inspection(
    head: &str,
    rel: &str,
    graph: &str,
    masks: &[HopMask],
    table: &ConfidenceTable,
    r_q: u32,
    vocab: &Vocab,
) -> MaskInspection {
    let name = |r: u32| vocab.relation_name(r).unwrap_or_else(|| format!("rel{r}"));
    let hops = masks
        .iter()
        .map(|m| HopMaskJson {
            hop: m.hop,
            candidates: m.candidates.iter().map(|&r| name(r)).collect(),
            confidences: m.candidates.iter().map(|&r| table.confidence(r, r_q)).collect(),
            removal_prob: m
                .candidates
                .iter()
                .map(|&r| {
                    m.removal_prob
                        .iter()
                        .find(|&&(rr, _)| rr == r)
                        .map_or(0.0, |&(_, p)| p)
                })
                .collect(),
            retained: m.retained.iter().map(|&r| name(r)).collect(),
        })
        .collect();
    MaskInspection { head: head.into(), rel: rel.into(), graph: graph.into(), hops }
}
