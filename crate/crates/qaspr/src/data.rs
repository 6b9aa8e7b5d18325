//! TSV triple files and inductive split directories.
//!
//! A split lives in two directories, each holding `train.txt`, `valid.txt`,
//! and `test.txt` (UTF-8, one tab-separated triple per line, no header).
//! The training directory defines the relation vocabulary; the inductive
//! directory holds the fact graph over unseen entities plus the test facts.

use std::fs;
use std::path::Path;

use qaspr_core::graph::{GraphError, Vocab, build_graph, resolve_triples};
use qaspr_core::split::{InductiveSplit, SplitError};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: expected 3 fields, got {got}")]
    MalformedLine { path: String, line: usize, got: usize },
    #[error("{path}: {source}")]
    Graph {
        path: String,
        #[source]
        source: GraphError,
    },
    #[error("split validation failed: {0}")]
    Split(#[from] SplitError),
}

/// Reads a TSV triple file: one `(head, relation, tail)` per non-empty line,
/// order preserved.
pub fn load_tsv(path: &Path) -> Result<Vec<(String, String, String)>, DataError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: display.clone(), source })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (h, r, t) = (fields.next(), fields.next(), fields.next());
        let extra = fields.count();
        match (h, r, t, extra) {
            (Some(h), Some(r), Some(t), 0) => {
                out.push((h.to_string(), r.to_string(), t.to_string()));
            }
            _ => {
                let got = line.split('\t').count();
                return Err(DataError::MalformedLine { path: display, line: i + 1, got });
            }
        }
    }
    Ok(out)
}

fn graph_err(path: &Path) -> impl FnOnce(GraphError) -> DataError + '_ {
    move |source| DataError::Graph { path: path.display().to_string(), source }
}

fn resolve(path: &Path, vocab: &Vocab) -> Result<Vec<qaspr_core::Triple>, DataError> {
    let raw = load_tsv(path)?;
    resolve_triples(&raw, vocab).map_err(graph_err(path))
}

/// Loads and validates a full inductive split from two directories.
pub fn load_inductive_split(train_dir: &Path, ind_dir: &Path) -> Result<InductiveSplit, DataError> {
    let train_path = train_dir.join("train.txt");
    let raw_train = load_tsv(&train_path)?;
    let (train_graph, train_vocab) =
        build_graph(&raw_train, None).map_err(graph_err(&train_path))?;
    let mut train_queries =
        resolve_triples(&raw_train, &train_vocab).map_err(graph_err(&train_path))?;
    let before = train_queries.len();
    train_queries.sort_unstable();
    train_queries.dedup();
    if train_queries.len() < before {
        log::info!("dropped {} duplicate training facts", before - train_queries.len());
    }
    let valid_queries = resolve(&train_dir.join("valid.txt"), &train_vocab)?;

    let ind_path = ind_dir.join("train.txt");
    let raw_ind = load_tsv(&ind_path)?;
    let (ind_graph, ind_vocab) =
        build_graph(&raw_ind, Some(&train_vocab)).map_err(graph_err(&ind_path))?;
    let test_queries = resolve(&ind_dir.join("test.txt"), &ind_vocab)?;
    let ind_valid_path = ind_dir.join("valid.txt");
    let ind_valid_queries =
        if ind_valid_path.exists() { resolve(&ind_valid_path, &ind_vocab)? } else { Vec::new() };

    let split = InductiveSplit {
        train_graph,
        train_vocab,
        train_queries,
        valid_queries,
        ind_graph,
        ind_vocab,
        test_queries,
        ind_valid_queries,
    };
    split.validate()?;
    log::info!(
        "loaded split: train {} entities / {} facts / {} valid; inductive {} entities / {} facts / {} test",
        split.train_vocab.n_entities(),
        split.train_queries.len(),
        split.valid_queries.len(),
        split.ind_vocab.n_entities(),
        split.ind_graph.n_triples() / 2,
        split.test_queries.len(),
    );
    Ok(split)
}
