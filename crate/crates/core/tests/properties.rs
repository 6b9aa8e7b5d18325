//! Property tests across the whole pipeline: index invariants, the
//! brute-force confidence oracle, masking laws, pruning consistency against
//! a dense reference recursion, and finite-difference checks over the full
//! tape op set.

use std::collections::BTreeSet;

use proptest::prelude::*;

use qaspr_core::graph::{KnowledgeGraph, Triple};
use qaspr_core::mask::{MaskConfig, build_hop_mask, removal_probabilities};
use qaspr_core::metrics::filtered_rank;
use qaspr_core::model::ModelParams;
use qaspr_core::reasoner::{MaskStream, ReasonerConfig, forward, select_topk};
use qaspr_core::rng::{SALT_EVAL_MASK, stream};
use qaspr_core::tape::{PickTarget, Tape};
use qaspr_core::tensor::Tensor;
use qaspr_core::{confidence_row, mine_confidence};

fn arb_graph() -> impl Strategy<Value = KnowledgeGraph> {
    (2usize..20, 1usize..5)
        .prop_flat_map(|(n_e, n_r)| {
            proptest::collection::vec(
                (0..n_e as u32, 0..n_r as u32, 0..n_e as u32),
                0..60,
            )
            .prop_map(move |ts| {
                let triples: Vec<Triple> =
                    ts.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect();
                KnowledgeGraph::from_id_triples(&triples, n_e, 2 * n_r).unwrap()
            })
        })
}

proptest! {
    #[test]
    fn inverse_closure_holds(g in arb_graph()) {
        for t in g.triples() {
            let inv = Triple::new(t.tail, g.inv(t.rel), t.head);
            prop_assert!(g.contains(inv), "missing inverse of {t:?}");
        }
    }

    #[test]
    fn relations_between_mirrors_under_inverse(g in arb_graph()) {
        let n = g.n_entities() as u32;
        for u in 0..n {
            for v in 0..n {
                let fwd: BTreeSet<u32> =
                    g.relations_between(u, v).unwrap().iter().copied().collect();
                let bwd: BTreeSet<u32> = g
                    .relations_between(v, u)
                    .unwrap()
                    .iter()
                    .map(|&r| g.inv(r))
                    .collect();
                prop_assert_eq!(&fwd, &bwd);
            }
        }
    }

    #[test]
    fn rebuild_is_idempotent(g in arb_graph()) {
        let g2 = KnowledgeGraph::from_id_triples(g.triples(), g.n_entities(), g.n_relations())
            .unwrap();
        prop_assert_eq!(g.triples(), g2.triples());
    }

    #[test]
    fn neighbors_sorted_and_unique(g in arb_graph()) {
        for v in 0..g.n_entities() as u32 {
            let nb = g.neighbors(v).unwrap();
            for w in nb.windows(2) {
                prop_assert!(w[0] < w[1], "neighbors of {v} not strictly sorted: {nb:?}");
            }
        }
    }

    /// The mined table must exactly match the naive O(E^2) double loop.
    #[test]
    fn confidence_equals_bruteforce(g in arb_graph()) {
        let table = mine_confidence(&g);
        let n = g.n_relations();
        let mut num = vec![0u64; n * n];
        let mut den = vec![0u64; n];
        for t1 in g.triples() {
            den[t1.rel as usize] += 1;
            for t2 in g.triples() {
                if t2.head == t1.head && t2.tail == t1.tail {
                    num[t1.rel as usize * n + t2.rel as usize] += 1;
                }
            }
        }
        for r in 0..n as u32 {
            prop_assert_eq!(table.support(r), den[r as usize]);
            for rq in 0..n as u32 {
                let want = if den[r as usize] == 0 {
                    0.0
                } else {
                    num[r as usize * n + rq as usize] as f64 / den[r as usize] as f64
                };
                prop_assert_eq!(table.confidence(r, rq), want);
            }
        }
    }

    /// Adding a fact whose endpoints already carry r_q never decreases the
    /// numerator of conf[r][r_q].
    #[test]
    fn support_is_monotone(g in arb_graph(), r in 0u32..4, s in 0u32..16, o in 0u32..16) {
        let n_e = g.n_entities() as u32;
        let n_r = g.n_relations() as u32;
        prop_assume!(s < n_e && o < n_e && r < n_r);
        let table = mine_confidence(&g);
        for &rq in g.relations_between(s, o).unwrap() {
            let mut triples = g.triples().to_vec();
            triples.push(Triple::new(s, r, o));
            let g2 = KnowledgeGraph::from_id_triples(&triples, g.n_entities(), g.n_relations())
                .unwrap();
            let t2 = mine_confidence(&g2);
            let num_before = table.confidence(r, rq) * table.support(r) as f64;
            let num_after = t2.confidence(r, rq) * t2.support(r) as f64;
            prop_assert!(num_after >= num_before - 1e-9);
        }
    }

    #[test]
    fn removal_probabilities_laws(
        confs in proptest::collection::vec(0.0f64..=1.0, 1..12),
        p_e in 0.0f64..=1.0,
        p_tau in 0.0f64..=1.0,
    ) {
        let row: Vec<(u32, f64)> =
            confs.iter().enumerate().map(|(i, &c)| (i as u32, c)).collect();
        let cfg = MaskConfig { p_e, p_tau, ..MaskConfig::default() };
        let probs = removal_probabilities(&row, &cfg).unwrap();
        let c_max = confs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (&(_, c), &(_, p)) in row.iter().zip(&probs) {
            prop_assert!((0.0..=p_tau.max(0.0)).contains(&p), "p={p} outside [0, {p_tau}]");
            if c == c_max {
                prop_assert_eq!(p, 0.0);
            }
        }
        // monotone: lower confidence never gets a lower removal probability
        for i in 0..row.len() {
            for j in 0..row.len() {
                if row[i].1 <= row[j].1 {
                    prop_assert!(probs[i].1 >= probs[j].1 - 1e-12);
                }
            }
        }
    }

    #[test]
    fn hop_mask_laws(g in arb_graph(), r_q in 0u32..8, seed in 0u64..1000) {
        prop_assume!((r_q as usize) < g.n_relations());
        let table = mine_confidence(&g);
        let frontier: Vec<u32> = (0..g.n_entities() as u32).collect();
        let cfg = MaskConfig { p_e: 0.7, p_tau: 0.6, ..MaskConfig::default() };
        let mask = build_hop_mask(&g, &frontier, &table, r_q, &cfg, 1, &mut stream(&[seed]))
            .unwrap();
        // retained is a sorted subset of candidates
        prop_assert!(mask.retained.windows(2).all(|w| w[0] < w[1]));
        for r in &mask.retained {
            prop_assert!(mask.candidates.contains(r));
        }
        // argmax-confidence candidates always survive
        if !mask.candidates.is_empty() {
            let row = confidence_row(&table, &mask.candidates, r_q);
            let best = row.iter().map(|&(_, c)| c).fold(f64::NEG_INFINITY, f64::max);
            for &(r, c) in &row {
                if c == best {
                    prop_assert!(mask.is_retained(r), "argmax relation {r} dropped");
                }
            }
        }
        // same stream, same mask
        let again = build_hop_mask(&g, &frontier, &table, r_q, &cfg, 1, &mut stream(&[seed]))
            .unwrap();
        prop_assert_eq!(mask, again);
    }

    #[test]
    fn topk_laws(scores in proptest::collection::vec(-100.0f64..100.0, 0..30), k in 1usize..8) {
        let pairs: Vec<(u32, f64)> =
            scores.iter().enumerate().map(|(i, &s)| (i as u32, s)).collect();
        let picked = select_topk(&pairs, k);
        prop_assert!(picked.len() == k.min(pairs.len()));
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        if !pairs.is_empty() {
            let best = pairs
                .iter()
                .cloned()
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .unwrap();
            prop_assert!(picked.contains(&best.0), "top-1 {best:?} missing from {picked:?}");
        }
        // nothing outside the selection beats anyone inside it
        let inside_min = picked
            .iter()
            .map(|&v| pairs[v as usize].1)
            .fold(f64::INFINITY, f64::min);
        for &(v, s) in &pairs {
            if !picked.contains(&v) {
                prop_assert!(s <= inside_min + 1e-12);
            }
        }
    }

    #[test]
    fn rank_translation_invariance(
        scores in proptest::collection::vec(-10.0f64..10.0, 2..40),
        shift in -100.0f64..100.0,
        target in 0usize..40,
    ) {
        prop_assume!(target < scores.len());
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let empty = BTreeSet::new();
        let a = filtered_rank(&scores, target as u32, &empty).unwrap();
        let b = filtered_rank(&shifted, target as u32, &empty).unwrap();
        prop_assert_eq!(a, b);
    }
}

// ---------------------------------------------------------------------------
// dense reference recursion (pruning/masking disabled)
// ---------------------------------------------------------------------------

/// Message vector computed straight from the raw parameter buffers, without
/// going through the model or the tape.
fn raw_message(model: &ModelParams, r: u32, r_q: u32) -> Vec<f64> {
    let d = model.d();
    let store = model.store();
    let emb = store.data(store.find("rel_emb").unwrap());
    let h_rq = &emb[r_q as usize * d..][..d];
    let h_r = &emb[r as usize * d..][..d];
    let tr = store.data(store.find("transform").unwrap());
    let block: &[f64] = if model.shared_transform() {
        tr
    } else {
        &tr[r_q as usize * d * 2 * d..][..d * 2 * d]
    };
    (0..d)
        .map(|i| {
            let row = &block[i * 2 * d..][..2 * d];
            (0..d).map(|j| row[j] * h_rq[j] + row[d + j] * h_r[j]).sum()
        })
        .collect()
}

/// Unpruned, unmasked L-step recursion over every edge, kept deliberately
/// naive: per hop, every edge out of an active entity delivers
/// `h_parent + message` into its tail.
fn dense_reference(
    g: &KnowledgeGraph,
    model: &ModelParams,
    source: u32,
    r_q: u32,
    path_len: usize,
) -> Vec<f64> {
    let d = model.d();
    let n = g.n_entities();
    let mut active = vec![false; n];
    let mut h = vec![vec![0.0; d]; n];
    active[source as usize] = true;
    for _ in 0..path_len {
        let mut next_active = vec![false; n];
        let mut next_h = vec![vec![0.0; d]; n];
        for t in g.triples() {
            if active[t.head as usize] {
                let msg = raw_message(model, t.rel, r_q);
                let dst = &mut next_h[t.tail as usize];
                for i in 0..d {
                    dst[i] += h[t.head as usize][i] + msg[i];
                }
                next_active[t.tail as usize] = true;
            }
        }
        active = next_active;
        h = next_h;
    }
    let w = model.score_slice();
    (0..n)
        .map(|v| if active[v] { w.iter().zip(&h[v]).map(|(a, b)| a * b).sum() } else { 0.0 })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// With p_e = 0 and K >= |V| the pruned, masked forward pass must match
    /// the dense reference recursion.
    #[test]
    fn forward_matches_dense_reference(g in arb_graph(), seed in 0u64..500) {
        prop_assume!(g.n_relations() > 0);
        let table = mine_confidence(&g);
        let d = 4;
        let model = ModelParams::init(d, g.n_relations(), false, false, seed);
        let cfg = ReasonerConfig {
            path_len: 3,
            top_k: g.n_entities().max(1),
            dim: d,
            masking_enabled: true,
            scoring_enabled: true,
            relu: false,
        };
        let mcfg = MaskConfig { p_e: 0.0, ..MaskConfig::default() };
        let key = MaskStream { seed: 1, salt: SALT_EVAL_MASK, epoch: 0, query_ordinal: 0 };
        let source = (seed % g.n_entities() as u64) as u32;
        let r_q = (seed % g.n_relations() as u64) as u32;
        let run = forward((source, r_q), &g, &table, &model, &cfg, &mcfg, key).unwrap();
        let want = dense_reference(&g, &model, source, r_q, cfg.path_len);
        for (got, want) in run.final_scores.iter().zip(&want) {
            prop_assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    /// Turning masking off entirely equals running with p_e = 0.
    #[test]
    fn mask_disabled_equals_zero_multiplier(g in arb_graph(), seed in 0u64..500) {
        prop_assume!(g.n_relations() > 0);
        let table = mine_confidence(&g);
        let model = ModelParams::init(3, g.n_relations(), false, false, seed);
        let key = MaskStream { seed, salt: SALT_EVAL_MASK, epoch: 0, query_ordinal: 3 };
        let source = (seed % g.n_entities() as u64) as u32;
        let r_q = (seed % g.n_relations() as u64) as u32;
        let base = ReasonerConfig { path_len: 3, top_k: 4, dim: 3, ..Default::default() };
        let off = ReasonerConfig { masking_enabled: false, ..base };
        let a = forward(
            (source, r_q), &g, &table, &model, &base,
            &MaskConfig { p_e: 0.0, ..MaskConfig::default() }, key,
        ).unwrap();
        let b = forward(
            (source, r_q), &g, &table, &model, &off, &MaskConfig::default(), key,
        ).unwrap();
        prop_assert_eq!(a.final_scores, b.final_scores);
    }

    /// With scoring disabled nothing is pruned: each hop's frontier contains
    /// the previous one.
    #[test]
    fn unscored_frontier_grows_monotonically(g in arb_graph(), seed in 0u64..500) {
        prop_assume!(g.n_relations() > 0);
        let table = mine_confidence(&g);
        let model = ModelParams::init(3, g.n_relations(), false, false, seed);
        let cfg = ReasonerConfig {
            path_len: 4,
            top_k: 1,
            dim: 3,
            masking_enabled: false,
            scoring_enabled: false,
            relu: false,
        };
        let key = MaskStream { seed, salt: SALT_EVAL_MASK, epoch: 0, query_ordinal: 0 };
        let source = (seed % g.n_entities() as u64) as u32;
        let r_q = (seed % g.n_relations() as u64) as u32;
        let run = forward(
            (source, r_q), &g, &table, &model, &cfg, &MaskConfig::default(), key,
        ).unwrap();
        for pair in run.frontiers.windows(2) {
            let prev: BTreeSet<u32> = pair[0].iter().copied().collect();
            let next: BTreeSet<u32> = pair[1].iter().copied().collect();
            prop_assert!(prev.is_subset(&next), "frontier shrank: {prev:?} -> {next:?}");
        }
    }
}

// ---------------------------------------------------------------------------
// finite differences over the whole op set
// ---------------------------------------------------------------------------

/// One composite expression touching every op; checked against central
/// differences for several random parameter draws.
#[test]
fn composite_expression_matches_finite_differences() {
    use qaspr_core::gradcheck::grad_check;
    use qaspr_core::params::ParamStore;
    use rand::Rng;

    for seed in 0..5u64 {
        let mut rng = stream(&[seed, 0xFD]);
        let mut store = ParamStore::new();
        let a = store.add("a", vec![3], (0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
        let b = store.add("b", vec![3], (0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
        let w = store.add("w", vec![3, 6], (0..18).map(|_| rng.random_range(-1.0..1.0)).collect());
        let s = store.add("s", vec![3], (0..3).map(|_| rng.random_range(-1.0..1.0)).collect());

        let run = |st: &ParamStore| -> (Tape, qaspr_core::tape::ValId) {
            let mut tape = Tape::new();
            let av = tape.param(st, st.full_ref(a));
            let bv = tape.param(st, st.full_ref(b));
            let wv = tape.param(st, st.full_ref(w));
            let sv = tape.param(st, st.full_ref(s));
            let cat = tape.concat(av, bv).unwrap();
            let y1 = tape.linear(wv, cat).unwrap();
            let y2 = tape.scale(1.7, y1);
            let y3 = tape.add(y1, y2).unwrap();
            let y4 = tape.relu(y3);
            let y5 = tape.sum_list(&[y1, y3, y4]).unwrap();
            let s1 = tape.dot(sv, y5).unwrap();
            let s2 = tape.dot(sv, y1).unwrap();
            let s3 = tape.dot(av, bv).unwrap();
            let lse = tape.logsumexp(&[s1, s2, s3], 2).unwrap();
            let loss =
                tape.neg_logsoftmax_pick(&[s1, s2, s3, lse], 1, PickTarget::Input(0)).unwrap();
            (tape, loss)
        };

        let mut with_grads = |st: &mut ParamStore| -> Result<f64, std::convert::Infallible> {
            let (mut tape, loss) = run(st);
            let v = tape.value(loss).as_scalar().unwrap();
            let grads = tape.backward(loss).unwrap();
            st.accumulate_scaled(&grads, 1.0);
            Ok(v)
        };
        let mut only = |st: &ParamStore| -> Result<f64, std::convert::Infallible> {
            let (tape, loss) = run(st);
            Ok(tape.value(loss).as_scalar().unwrap())
        };
        let report = grad_check(&mut store, &mut with_grads, &mut only, 1e-5).unwrap();
        assert!(report.max_rel_err() < 1e-6, "seed {seed}: {report:?}");
    }
}

/// Constant-parameter sanity check referenced elsewhere: a zero tape yields
/// no gradient entries at all.
#[test]
fn constants_produce_no_gradients() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let y = tape.constant(Tensor::vector(vec![3.0, 4.0]));
    let d = tape.dot(x, y).unwrap();
    let grads = tape.backward(d).unwrap();
    assert!(grads.is_empty());
}
