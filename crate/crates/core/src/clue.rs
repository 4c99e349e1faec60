//! Clue word predictor: graph convolution over the undirected dependency
//! tree, a two-class output layer and a straight-through Gumbel-Softmax
//! sample per token.

use rand::distributions::Open01;
use rand::Rng;

use crate::config::ConfigError;
use crate::error::{Error, Result};
use crate::tensor::{argmax, Graph, ParamId, ParamStore, Tensor, Var};

/// `Ã = A + I` of the undirected tree and its row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyAdjacency {
    pub a_tilde: Tensor,
    pub degree: Vec<f64>,
}

impl DependencyAdjacency {
    pub fn len(&self) -> usize {
        self.degree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degree.is_empty()
    }

    /// `D⁻¹ Ã`, the propagation matrix of one layer.
    pub fn normalized(&self) -> Tensor {
        let n = self.len();
        let mut m = self.a_tilde.clone();
        for (i, row) in m.data_mut().chunks_mut(n).enumerate() {
            for v in row {
                *v /= self.degree[i];
            }
        }
        m
    }
}

/// Edges `{i, head(i)}` for every non-root token, plus self-loops.
pub fn build_adjacency(heads: &[usize]) -> DependencyAdjacency {
    let n = heads.len();
    let mut a = Tensor::identity(n);
    for (i, &h) in heads.iter().enumerate() {
        if h != i {
            a.data_mut()[i * n + h] = 1.0;
            a.data_mut()[h * n + i] = 1.0;
        }
    }
    let degree = a.data().chunks(n.max(1)).take(n).map(|r| r.iter().sum()).collect();
    DependencyAdjacency { a_tilde: a, degree }
}

/// `relu(D⁻¹Ã · H W + b)`; `norm_adj` is [`DependencyAdjacency::normalized`].
pub fn gcn_layer(g: &mut Graph<'_>, h: Var, norm_adj: Var, w: Var, b: Var) -> Result<Var> {
    let hw = g.matmul(h, w)?;
    let mixed = g.matmul(norm_adj, hw)?;
    let biased = g.add_rows(mixed, b)?;
    Ok(g.relu(biased)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClueParams {
    pub layers: Vec<(ParamId, ParamId)>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl ClueParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input: usize,
        hidden: usize,
        layers: usize,
        init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut ids = Vec::with_capacity(layers);
        let mut d_in = input;
        for l in 0..layers {
            let w = store.add(&format!("clue.gcn{l}.w"), Tensor::uniform(&[d_in, hidden], init, rng))?;
            let b = store.add(&format!("clue.gcn{l}.b"), Tensor::zeros(&[hidden]))?;
            ids.push((w, b));
            d_in = hidden;
        }
        Ok(ClueParams {
            layers: ids,
            out_w: store.add("clue.out.w", Tensor::uniform(&[hidden, 2], init, rng))?,
            out_b: store.add("clue.out.b", Tensor::zeros(&[2]))?,
        })
    }

    pub fn lookup(store: &ParamStore, layers: usize) -> Result<Self> {
        let get = |n: String| store.id(&n).ok_or_else(|| Error::Invalid(format!("missing parameter `{n}`")));
        Ok(ClueParams {
            layers: (0..layers)
                .map(|l| Ok((get(format!("clue.gcn{l}.w"))?, get(format!("clue.gcn{l}.b"))?)))
                .collect::<Result<_>>()?,
            out_w: get("clue.out.w".into())?,
            out_b: get("clue.out.b".into())?,
        })
    }

    /// Stacked GCN layers over `features` (`n × d`).
    pub fn encode(&self, g: &mut Graph<'_>, features: Var, norm_adj: Var) -> Result<Var> {
        let mut h = features;
        for &(w, b) in &self.layers {
            let (w, b) = (g.param(w), g.param(b));
            h = gcn_layer(g, h, norm_adj, w, b)?;
        }
        Ok(h)
    }

    /// `n × 2` unnormalized scores over (not clue, clue).
    pub fn logits(&self, g: &mut Graph<'_>, hidden: Var) -> Result<Var> {
        let (w, b) = (g.param(self.out_w), g.param(self.out_b));
        let s = g.matmul(hidden, w)?;
        Ok(g.add_rows(s, b)?)
    }
}

/// Standard Gumbel noise `−ln(−ln u)`, `u ~ uniform(0, 1)` exclusive.
pub fn gumbel_noise<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(ConfigError::Field {
            field: "tau",
            reason: format!("temperature must be positive, got {tau}"),
        }
        .into());
    }
    Ok(())
}

/// Relaxed sample `softmax((log_softmax(logits) + noise) / τ)`, row-wise.
pub fn gumbel_softmax(g: &mut Graph<'_>, logits: Var, noise: &Tensor, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let logp = g.log_softmax(logits)?;
    let noise = g.constant(noise.clone());
    let perturbed = g.add(logp, noise)?;
    let scaled = g.scale(perturbed, 1.0 / tau)?;
    Ok(g.softmax(scaled, None)?)
}

/// One-hot of the argmax with an identity backward pass.
pub fn st_discretize(g: &mut Graph<'_>, y: Var) -> Result<Var> {
    Ok(g.straight_through(y)?)
}

/// A single Gumbel-Softmax draw over `k` classes, outside any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    pub u: Vec<f64>,
    pub noise: Vec<f64>,
    pub y: Vec<f64>,
    pub y_st: Vec<f64>,
    pub tau: f64,
}

/// Draws one sample; `zero_noise` replaces the Gumbel draws with 0.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    logits: &[f64],
    tau: f64,
    rng: &mut R,
    zero_noise: bool,
) -> Result<GumbelSample> {
    check_tau(tau)?;
    let k = logits.len();
    let u: Vec<f64> = (0..k).map(|_| rng.sample(Open01)).collect();
    let noise: Vec<f64> = if zero_noise {
        vec![0.0; k]
    } else {
        u.iter().map(|u: &f64| -(-u.ln()).ln()).collect()
    };
    let mut g = Graph::standalone();
    let l = g.constant(Tensor::vector(logits.to_vec()));
    let y = gumbel_softmax(&mut g, l, &Tensor::vector(noise.clone()), tau)?;
    let y_st = st_discretize(&mut g, y)?;
    Ok(GumbelSample {
        u,
        noise,
        y: g.value(y).data().to_vec(),
        y_st: g.value(y_st).data().to_vec(),
        tau,
    })
}

/// How clue indicators are chosen.
pub enum ClueMode<'r, R: Rng + ?Sized> {
    /// Straight-through Gumbel-Softmax sample, differentiable.
    Sample { tau: f64, rng: &'r mut R },
    /// Argmax of the clue probability, no noise.
    Argmax,
}

#[derive(Debug, Clone, Copy)]
pub struct CluePrediction {
    pub logits: Var,
    /// `n × 2` softmax of the logits.
    pub probs: Var,
    /// `n × 2` one-hot indicators fed to the encoder.
    pub one_hot: Var,
}

impl CluePrediction {
    pub fn indicators(&self, g: &Graph<'_>) -> Vec<bool> {
        g.value(self.one_hot).data().chunks(2).map(|r| r[1] == 1.0).collect()
    }

    pub fn clue_probabilities(&self, g: &Graph<'_>) -> Vec<f64> {
        g.value(self.probs).data().chunks(2).map(|r| r[1]).collect()
    }
}

/// Runs the predictor on base features (`n × d`).
pub fn predict_clues<R: Rng + ?Sized>(
    g: &mut Graph<'_>,
    params: &ClueParams,
    features: Var,
    adjacency: &DependencyAdjacency,
    mode: ClueMode<'_, R>,
) -> Result<CluePrediction> {
    let adj = g.constant(adjacency.normalized());
    let hidden = params.encode(g, features, adj)?;
    let logits = params.logits(g, hidden)?;
    let probs = g.softmax(logits, None)?;
    let one_hot = match mode {
        ClueMode::Sample { tau, rng } => {
            let noise = gumbel_noise(g.shape(logits), rng);
            let y = gumbel_softmax(g, logits, &noise, tau)?;
            st_discretize(g, y)?
        }
        ClueMode::Argmax => {
            let n = g.shape(logits)[0];
            let picks: Vec<bool> = g.value(logits).data().chunks(2).map(|r| argmax(r) == 1).collect();
            debug_assert_eq!(picks.len(), n);
            g.constant(crate::features::clue_one_hot(&picks))
        }
    };
    Ok(CluePrediction { logits, probs, one_hot })
}
