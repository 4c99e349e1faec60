//! Finite-difference checks shared by the gradient tests and the acceptance
//! run.

use cgcqg_core::clue::{build_adjacency, gcn_layer, gumbel_noise, gumbel_softmax};
use cgcqg_core::encoder::{gru_cell, GruParams};
use cgcqg_core::model::Mode;
use cgcqg_core::tensor::gradcheck::{check_gradients, GradCheck};
use cgcqg_core::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use cgcqg_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TRIALS: usize = 20;

type Inputs = dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>;
type Build = dyn for<'s> Fn(&mut Graph<'s>, &[Var], &[ParamId]) -> Result<Var>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape, 0.1, 2.0);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..=4), rng.gen_range(1..=5))
}

fn same2(lo: f64, hi: f64) -> Box<Inputs> {
    Box::new(move |r| {
        let (a, b) = dims(r);
        vec![uniform(r, &[a, b], lo, hi), uniform(r, &[a, b], lo, hi)]
    })
}

fn one(lo: f64, hi: f64) -> Box<Inputs> {
    Box::new(move |r| {
        let (a, b) = dims(r);
        vec![uniform(r, &[a, b], lo, hi)]
    })
}

/// Worst relative error over `TRIALS` random shapes of one op. The loss is
/// a random weighting of the op output so every output entry matters.
pub fn check_op(name: &str, inputs: &Inputs, build: &Build) -> f64 {
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().fold(trial as u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64)));
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = inputs(&mut rng)
            .into_iter()
            .enumerate()
            .map(|(i, t)| store.add(&format!("x{i}"), t).unwrap())
            .collect();
        let out_shape = {
            let mut g = Graph::new(&store);
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
            let out = build(&mut g, &vars, &ids).unwrap_or_else(|e| panic!("{name}: {e}"));
            g.shape(out).to_vec()
        };
        let weights = uniform(&mut rng, &out_shape, -1.0, 1.0);
        let checks = check_gradients(&mut store, &ids, STEP, |g| -> Result<Var> {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
            let out = build(g, &vars, &ids)?;
            let w = g.constant(weights.clone());
            let prod = g.mul(out, w)?;
            Ok(g.sum(prod)?)
        })
        .unwrap_or_else(|e| panic!("{name}: {e}"));
        for c in checks {
            worst = worst.max(c.relative_error);
        }
    }
    worst
}

/// Every differentiable op of the tensor engine plus the composite layers.
/// The straight-through op has no finite-difference gradient by design and
/// is checked for its pass-through contract elsewhere.
pub fn op_suite() -> Vec<(&'static str, f64)> {
    let mut cases: Vec<(&'static str, Box<Inputs>, Box<Build>)> = vec![
        (
            "matmul",
            Box::new(|r| {
                let (a, b) = dims(r);
                let k = r.gen_range(1..=4);
                vec![uniform(r, &[a, k], -1.0, 1.0), uniform(r, &[k, b], -1.0, 1.0)]
            }),
            Box::new(|g, v, _| Ok(g.matmul(v[0], v[1])?)),
        ),
        (
            "matvec",
            Box::new(|r| {
                let (a, b) = dims(r);
                vec![uniform(r, &[a], -1.0, 1.0), uniform(r, &[a, b], -1.0, 1.0)]
            }),
            Box::new(|g, v, _| Ok(g.matmul(v[0], v[1])?)),
        ),
        ("add", same2(-1.0, 1.0), Box::new(|g, v, _| Ok(g.add(v[0], v[1])?))),
        ("sub", same2(-1.0, 1.0), Box::new(|g, v, _| Ok(g.sub(v[0], v[1])?))),
        ("mul", same2(-1.0, 1.0), Box::new(|g, v, _| Ok(g.mul(v[0], v[1])?))),
        ("tanh", one(-2.0, 2.0), Box::new(|g, v, _| Ok(g.tanh(v[0])?))),
        ("sigmoid", one(-3.0, 3.0), Box::new(|g, v, _| Ok(g.sigmoid(v[0])?))),
        ("exp", one(-2.0, 2.0), Box::new(|g, v, _| Ok(g.exp(v[0])?))),
        ("log", one(0.2, 3.0), Box::new(|g, v, _| Ok(g.log(v[0])?))),
        ("neg", one(-1.0, 1.0), Box::new(|g, v, _| Ok(g.neg(v[0])?))),
        (
            "relu",
            Box::new(|r| {
                let (a, b) = dims(r);
                vec![away_from_zero(r, &[a, b])]
            }),
            Box::new(|g, v, _| Ok(g.relu(v[0])?)),
        ),
        (
            "clamp_min",
            Box::new(|r| {
                let (a, b) = dims(r);
                vec![away_from_zero(r, &[a, b])]
            }),
            Box::new(|g, v, _| Ok(g.clamp_min(v[0], 0.0)?)),
        ),
        (
            "add_rows",
            Box::new(|r| {
                let (a, b) = dims(r);
                vec![uniform(r, &[a, b], -1.0, 1.0), uniform(r, &[b], -1.0, 1.0)]
            }),
            Box::new(|g, v, _| Ok(g.add_rows(v[0], v[1])?)),
        ),
        ("scale", one(-1.0, 1.0), Box::new(|g, v, _| Ok(g.scale(v[0], 1.7)?))),
        ("offset", one(-1.0, 1.0), Box::new(|g, v, _| Ok(g.offset(v[0], 0.3)?))),
        ("one_minus", one(-1.0, 1.0), Box::new(|g, v, _| Ok(g.one_minus(v[0])?))),
        ("softmax", one(-2.0, 2.0), Box::new(|g, v, _| Ok(g.softmax(v[0], None)?))),
        (
            "masked_softmax",
            Box::new(|r| {
                let (a, b) = dims(r);
                vec![uniform(r, &[a, b + 1], -2.0, 2.0)]
            }),
            Box::new(|g, v, _| {
                let n = g.value(v[0]).numel();
                let c = g.value(v[0]).cols();
                // the first column of every row is masked out
                let mask: Vec<bool> = (0..n).map(|i| i % c != 0).collect();
                Ok(g.softmax(v[0], Some(&mask))?)
            }),
        ),
        ("log_softmax", one(-2.0, 2.0), Box::new(|g, v, _| Ok(g.log_softmax(v[0])?))),
        (
            "concat_vectors",
            Box::new(|r| {
                let (a, b) = dims(r);
                vec![uniform(r, &[a], -1.0, 1.0), uniform(r, &[b], -1.0, 1.0)]
            }),
            Box::new(|g, v, _| Ok(g.concat(&[v[0], v[1]], 0)?)),
        ),
        (
            "concat_columns",
            Box::new(|r| {
                let (a, b) = dims(r);
                let c = r.gen_range(1..=3);
                vec![uniform(r, &[a, b], -1.0, 1.0), uniform(r, &[a, c], -1.0, 1.0)]
            }),
            Box::new(|g, v, _| Ok(g.concat(&[v[0], v[1]], 1)?)),
        ),
        (
            "concat_rows",
            Box::new(|r| {
                let (a, b) = dims(r);
                let c = r.gen_range(1..=3);
                vec![uniform(r, &[a, b], -1.0, 1.0), uniform(r, &[c, b], -1.0, 1.0)]
            }),
            Box::new(|g, v, _| Ok(g.concat(&[v[0], v[1]], 0)?)),
        ),
        (
            "slice",
            Box::new(|r| {
                let (a, b) = dims(r);
                vec![uniform(r, &[a, b + 1], -1.0, 1.0)]
            }),
            Box::new(|g, v, _| {
                let c = g.value(v[0]).cols();
                Ok(g.slice(v[0], 1, 1, c)?)
            }),
        ),
        (
            "row",
            one(-1.0, 1.0),
            Box::new(|g, v, _| {
                let r = g.value(v[0]).rows();
                Ok(g.row(v[0], r - 1)?)
            }),
        ),
        (
            "reshape",
            one(-1.0, 1.0),
            Box::new(|g, v, _| {
                let n = g.value(v[0]).numel();
                Ok(g.reshape(v[0], vec![n])?)
            }),
        ),
        (
            "stack",
            Box::new(|r| {
                let (_, b) = dims(r);
                vec![uniform(r, &[b], -1.0, 1.0), uniform(r, &[b], -1.0, 1.0)]
            }),
            Box::new(|g, v, _| Ok(g.stack(&[v[0], v[1], v[0]])?)),
        ),
        (
            "gather",
            one(-1.0, 1.0),
            Box::new(|g, v, _| {
                let r = g.value(v[0]).rows();
                Ok(g.gather(v[0], &[r - 1, 0, r - 1])?)
            }),
        ),
        (
            "gather_param",
            one(-1.0, 1.0),
            Box::new(|g, _, ids| {
                let r = g.store().value(ids[0]).rows();
                Ok(g.gather_param(ids[0], &[0, r - 1, 0])?)
            }),
        ),
        ("sum", one(-1.0, 1.0), Box::new(|g, v, _| Ok(g.sum(v[0])?))),
        ("mean", one(-1.0, 1.0), Box::new(|g, v, _| Ok(g.mean(v[0])?))),
        (
            "dropout",
            one(-1.0, 1.0),
            Box::new(|g, v, _| {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                Ok(g.dropout(v[0], 0.3, true, &mut rng)?)
            }),
        ),
        (
            "maxout",
            Box::new(|r| {
                let (a, b) = dims(r);
                // distinct pair members: second is first plus a gap of at least 0.1
                let mut t = uniform(r, &[a, 2 * b], -1.0, 1.0);
                for pair in t.data_mut().chunks_mut(2) {
                    let gap = r.gen_range(0.1..1.0) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
                    pair[1] = pair[0] + gap;
                }
                vec![t]
            }),
            Box::new(|g, v, _| Ok(g.maxout(v[0])?)),
        ),
        (
            "pick_sum",
            one(-1.0, 1.0),
            Box::new(|g, v, _| {
                let n = g.value(v[0]).numel();
                Ok(g.pick_sum(v[0], &[0, n - 1, n / 2, 0])?)
            }),
        ),
        (
            "gumbel_softmax",
            Box::new(|r| {
                let (a, _) = dims(r);
                vec![uniform(r, &[a, 2], -2.0, 2.0)]
            }),
            Box::new(|g, v, _| {
                let noise = gumbel_noise(g.shape(v[0]), &mut ChaCha8Rng::seed_from_u64(8));
                gumbel_softmax(g, v[0], &noise, 0.7)
            }),
        ),
        (
            "gcn_layer",
            Box::new(|r| {
                let n = r.gen_range(1..=6);
                let (d, h) = (r.gen_range(1..=4), r.gen_range(1..=4));
                vec![
                    uniform(r, &[n, d], -1.0, 1.0),
                    uniform(r, &[d, h], -1.0, 1.0),
                    uniform(r, &[h], -1.0, 1.0),
                ]
            }),
            Box::new(|g, v, _| {
                let n = g.value(v[0]).rows();
                // a chain; the bias shift keeps every pre-activation positive
                let heads: Vec<usize> = (0..n).map(|i| i.saturating_sub(1)).collect();
                let adj = g.constant(build_adjacency(&heads).normalized());
                let b = g.offset(v[2], 5.0)?;
                gcn_layer(g, v[0], adj, v[1], b)
            }),
        ),
    ];
    let mut out: Vec<(&'static str, f64)> = cases
        .drain(..)
        .map(|(name, inputs, build)| (name, check_op(name, &*inputs, &*build)))
        .collect();
    out.push(("gru_cell", check_gru()));
    out
}

fn check_gru() -> f64 {
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + trial as u64);
        let (d, h) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let mut store = ParamStore::new();
        let params = GruParams::register(&mut store, "gru", d, h, 0.8, &mut rng).unwrap();
        let x = store.add("x", uniform(&mut rng, &[d], -1.0, 1.0)).unwrap();
        let hp = store.add("h", uniform(&mut rng, &[h], -1.0, 1.0)).unwrap();
        for name in ["gru.bz", "gru.br", "gru.bc"] {
            let id = store.id(name).unwrap();
            *store.value_mut(id) = uniform(&mut rng, &[h], -0.5, 0.5);
        }
        let weights = uniform(&mut rng, &[h], -1.0, 1.0);
        let ids: Vec<ParamId> = store.ids().collect();
        let checks = check_gradients(&mut store, &ids, STEP, |g| -> Result<Var> {
            let xv = g.param(x);
            let hv = g.param(hp);
            let out = gru_cell(g, xv, hv, &params)?;
            let w = g.constant(weights.clone());
            let p = g.mul(out, w)?;
            Ok(g.sum(p)?)
        })
        .unwrap();
        for c in checks {
            worst = worst.max(c.relative_error);
        }
    }
    worst
}

/// Gradient of the total loss of every tiny-model example with respect to
/// every parameter, in eval mode (deterministic clue decisions), at random
/// parameter values.
pub fn end_to_end() -> Vec<(String, GradCheck)> {
    let (mut model, prepared) = super::tiny_model();
    // Probe at a generic point: the default init leaves biases at exactly
    // zero (ReLU kinks) and many gradients near the rounding floor.
    super::randomize(&mut model, 17, 0.5);
    let mut out = Vec::new();
    for ex in &prepared {
        // The eval-mode clue decision must not flip under the probe step.
        let mut g = Graph::new(&model.params);
        let f = model.forward(&mut g, ex, Mode::Eval).unwrap();
        let margin = g
            .value(f.encoded.clue.logits)
            .data()
            .chunks(2)
            .map(|r| (r[1] - r[0]).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(margin > 1e-6, "clue margin {margin} too small for a finite-difference probe");
        let mut store = model.params.clone();
        let ids: Vec<ParamId> = store.ids().collect();
        let checks = check_gradients(&mut store, &ids, STEP, |g| -> Result<Var> {
            let f = model.forward(g, ex, Mode::Eval)?;
            Ok(f.losses.total)
        })
        .unwrap();
        out.extend(checks.into_iter().map(|c| (ex.id.clone(), c)));
    }
    out
}
