//! Synthetic planted-rule datasets.
//!
//! The generator plants one perfect length-1 rule: `r_head(s, o)` holds iff
//! `r_body(s, o)` does. Training-side facts live over one entity pool and
//! inductive-side facts over a disjoint pool, sharing only relation names, so
//! the split exercises the full inductive protocol. Distractor relations add
//! unrelated structure; optional noise edges add spurious structure whose
//! relation has near-zero confidence toward `r_head`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::seq::SliceRandom;
use qaspr_core::rng::stream;

const SALT_SYNTH: u64 = 0x5A;

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub train_entities: usize,
    pub ind_entities: usize,
    /// Planted rule pairs per side.
    pub rule_pairs: usize,
    /// Fraction of training-side `r_head` facts held out into valid.txt.
    pub valid_fraction: f64,
    /// Fraction of inductive-side `r_head` facts held out into valid.txt
    /// (the rest become test queries).
    pub ind_valid_fraction: f64,
    pub distractor_rels: usize,
    /// Distractor edges per relation per side.
    pub distractor_edges: usize,
    /// Noise edges as a fraction of each side's clean fact count.
    pub noise_fraction: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            train_entities: 100,
            ind_entities: 100,
            rule_pairs: 140,
            valid_fraction: 0.1,
            ind_valid_fraction: 0.1,
            distractor_rels: 2,
            distractor_edges: 60,
            noise_fraction: 0.0,
            seed: 1,
        }
    }
}

type Rows = Vec<(String, String, String)>;

#[derive(Clone, Debug, Default)]
pub struct SynthDataset {
    pub train_facts: Rows,
    pub train_valid: Rows,
    pub train_test: Rows,
    pub ind_facts: Rows,
    pub ind_valid: Rows,
    pub ind_test: Rows,
}

fn sample_pairs(
    rng: &mut impl Rng,
    names: &[String],
    count: usize,
    used: &mut BTreeSet<(usize, usize)>,
) -> Vec<(String, String)> {
    let n = names.len();
    let mut out = Vec::with_capacity(count);
    let mut guard = 0usize;
    while out.len() < count && guard < count * 50 {
        guard += 1;
        let s = rng.random_range(0..n);
        let o = rng.random_range(0..n);
        if s == o || !used.insert((s, o)) {
            continue;
        }
        out.push((names[s].clone(), names[o].clone()));
    }
    out
}

fn side(
    rng: &mut impl Rng,
    names: &[String],
    opts: &SynthOptions,
    held_fraction: f64,
) -> (Rows, Rows, Rows) {
    let mut used = BTreeSet::new();
    let rule = sample_pairs(rng, names, opts.rule_pairs, &mut used);

    let mut facts: Rows = Vec::new();
    let mut heads: Rows = Vec::new();
    for (s, o) in &rule {
        facts.push((s.clone(), "r_body".into(), o.clone()));
        heads.push((s.clone(), "r_head".into(), o.clone()));
    }
    // hold out a deterministic slice of the head facts
    heads.shuffle(rng);
    let held = ((heads.len() as f64) * held_fraction).round() as usize;
    let held_rows: Rows = heads.drain(..held).collect();
    facts.extend(heads);

    for k in 0..opts.distractor_rels {
        let mut dused = BTreeSet::new();
        for (s, o) in sample_pairs(rng, names, opts.distractor_edges, &mut dused) {
            facts.push((s, format!("d{k}"), o));
        }
    }
    if opts.noise_fraction > 0.0 {
        let count = ((facts.len() as f64) * opts.noise_fraction).round() as usize;
        let mut nused = BTreeSet::new();
        for (s, o) in sample_pairs(rng, names, count, &mut nused) {
            facts.push((s, "noise".into(), o));
        }
    }
    facts.shuffle(rng);
    (facts, held_rows, Vec::new())
}

/// Generates both sides of the split deterministically from the seed.
pub fn generate(opts: &SynthOptions) -> SynthDataset {
    let mut rng = stream(&[opts.seed, SALT_SYNTH]);
    let train_names: Vec<String> = (0..opts.train_entities).map(|i| format!("t{i}")).collect();
    let ind_names: Vec<String> = (0..opts.ind_entities).map(|i| format!("i{i}")).collect();

    let (train_facts, train_valid, train_test) =
        side(&mut rng, &train_names, opts, opts.valid_fraction);
    let (ind_facts, ind_held, _) = side(&mut rng, &ind_names, opts, 1.0);
    // the inductive side's held-out head facts split into valid and test
    let n_valid = ((ind_held.len() as f64) * opts.ind_valid_fraction).round() as usize;
    let ind_valid: Rows = ind_held[..n_valid].to_vec();
    let ind_test: Rows = ind_held[n_valid..].to_vec();

    SynthDataset { train_facts, train_valid, train_test, ind_facts, ind_valid, ind_test }
}

fn write_rows(path: &Path, rows: &[(String, String, String)]) -> std::io::Result<()> {
    let mut text = String::new();
    for (h, r, t) in rows {
        text.push_str(h);
        text.push('\t');
        text.push_str(r);
        text.push('\t');
        text.push_str(t);
        text.push('\n');
    }
    fs::write(path, text)
}

impl SynthDataset {
    /// Writes the split under `base/train` and `base/ind` in the standard
    /// directory layout; returns the two directories.
    pub fn write(&self, base: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        let train_dir = base.join("train");
        let ind_dir = base.join("ind");
        fs::create_dir_all(&train_dir)?;
        fs::create_dir_all(&ind_dir)?;
        write_rows(&train_dir.join("train.txt"), &self.train_facts)?;
        write_rows(&train_dir.join("valid.txt"), &self.train_valid)?;
        write_rows(&train_dir.join("test.txt"), &self.train_test)?;
        write_rows(&ind_dir.join("train.txt"), &self.ind_facts)?;
        write_rows(&ind_dir.join("valid.txt"), &self.ind_valid)?;
        write_rows(&ind_dir.join("test.txt"), &self.ind_test)?;
        Ok((train_dir, ind_dir))
    }
}
