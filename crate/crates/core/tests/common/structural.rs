//! Structural checks shared by the property tests and the acceptance run.

use std::collections::VecDeque;

use cgcqg_core::clue::{build_adjacency, ClueParams};
use cgcqg_core::model::Mode;
use cgcqg_core::tensor::{Graph, ParamStore, Tensor};
use cgcqg_core::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{randomize, tiny_config, tiny_corpus};

/// Hop counts from `from` in the undirected tree given by `heads`.
pub fn tree_distances(heads: &[usize], from: usize) -> Vec<usize> {
    let n = heads.len();
    let mut adj = vec![Vec::new(); n];
    for (i, &h) in heads.iter().enumerate() {
        if h != i {
            adj[i].push(h);
            adj[h].push(i);
        }
    }
    let mut dist = vec![usize::MAX; n];
    dist[from] = 0;
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

/// A random tree: node 0 is the root, every other node hangs off an
/// earlier one.
pub fn random_tree(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|i| if i == 0 { 0 } else { rng.gen_range(0..i) }).collect()
}

/// Perturbs the features of one node and checks that every node more than
/// `layers` hops away keeps a bit-identical output.
pub fn gcn_locality(heads: &[usize], layers: usize, seed: u64) -> Result<(), String> {
    let n = heads.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let params = ClueParams::register(&mut store, 3, 4, layers, 0.8, &mut rng).map_err(|e| e.to_string())?;
    for &(_, b) in &params.layers {
        *store.value_mut(b) = Tensor::uniform(&[4], 0.5, &mut rng);
    }
    let x = Tensor::uniform(&[n, 3], 1.0, &mut rng);
    let adj = build_adjacency(heads).normalized();
    let run = |x: &Tensor| {
        let mut g = Graph::new(&store);
        let xv = g.constant(x.clone());
        let a = g.constant(adj.clone());
        let h = params.encode(&mut g, xv, a).unwrap();
        g.value(h).clone()
    };
    let base = run(&x);
    let j = rng.gen_range(0..n);
    let mut moved = x.clone();
    for c in 0..3 {
        moved.data_mut()[j * 3 + c] += 3.0;
    }
    let after = run(&moved);
    let dist = tree_distances(heads, j);
    for (i, &d) in dist.iter().enumerate() {
        if d > layers && base.row(i) != after.row(i) {
            return Err(format!("node {i} changed when node {j} moved, {d} hops away, L = {layers}"));
        }
    }
    Ok(())
}

/// A random small configuration over the tiny corpus.
pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    ModelConfig {
        word_dim: rng.gen_range(2..8),
        tier_dim: rng.gen_range(1..4),
        feat_dim: rng.gen_range(1..4),
        enc_hidden: rng.gen_range(2..8),
        dec_hidden: rng.gen_range(2..8),
        attn_hidden: rng.gen_range(2..8),
        readout_dim: rng.gen_range(1..6),
        gcn_layers: rng.gen_range(1..4),
        gcn_hidden: rng.gen_range(2..8),
        seed: rng.gen(),
        ..tiny_config()
    }
}

/// Runs `configs` random models over the tiny corpus and checks that the
/// attention weights, the id-level mixture and the surface-merged mixture
/// each sum to 1 within `tol` at every decoder step. Returns the number of
/// steps checked.
pub fn mixture_normalization(configs: u64, seed: u64, tol: f64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = tiny_corpus();
    let mut steps = 0;
    for case in 0..configs {
        let (mut model, labeled) = Model::from_corpus(random_config(&mut rng), &corpus, None).map_err(|e| e.to_string())?;
        randomize(&mut model, case, 2.0);
        for l in &labeled {
            let ex = model.prepare(l);
            let mut g = Graph::new(&model.params);
            let f = model.forward(&mut g, &ex, Mode::Eval).map_err(|e| e.to_string())?;
            for step in &f.steps {
                let alpha: f64 = g.value(step.alpha).data().iter().sum();
                let d = step.distribution(&g);
                let surface: f64 = d.surface(&model.reduced, &ex.passage).iter().map(|(_, p)| p).sum();
                for (what, v) in [("attention", alpha), ("mixture", d.total()), ("surface mixture", surface)] {
                    if (v - 1.0).abs() >= tol {
                        return Err(format!("config {case}, {}: {what} sums to {v}", ex.id));
                    }
                }
                if !(d.gate > 0.0 && d.gate < 1.0) {
                    return Err(format!("config {case}: gate {}", d.gate));
                }
                steps += 1;
            }
        }
    }
    Ok(steps)
}
