//! GRU cells and the bidirectional passage encoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Weights of one GRU direction. Input and recurrent weights are kept
/// separate so input projections can be computed for a whole sequence at
/// once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub wz_x: ParamId,
    pub wz_h: ParamId,
    pub bz: ParamId,
    pub wr_x: ParamId,
    pub wr_h: ParamId,
    pub br: ParamId,
    pub wc_x: ParamId,
    pub wc_h: ParamId,
    pub bc: ParamId,
}

const GRU_SUFFIXES: [&str; 9] = ["wz_x", "wz_h", "bz", "wr_x", "wr_h", "br", "wc_x", "wc_h", "bc"];

impl GruParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut ids = Vec::with_capacity(9);
        for (i, suffix) in GRU_SUFFIXES.iter().enumerate() {
            let value = match i % 3 {
                0 => Tensor::uniform(&[input, hidden], init, rng),
                1 => Tensor::uniform(&[hidden, hidden], init, rng),
                _ => Tensor::zeros(&[hidden]),
            };
            ids.push(store.add(&format!("{prefix}.{suffix}"), value)?);
        }
        Ok(Self::from_ids(&ids))
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let ids = GRU_SUFFIXES
            .iter()
            .map(|s| {
                let name = format!("{prefix}.{s}");
                store.id(&name).ok_or(Error::Invalid(format!("missing parameter `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_ids(&ids))
    }

    fn from_ids(ids: &[ParamId]) -> Self {
        GruParams {
            wz_x: ids[0],
            wz_h: ids[1],
            bz: ids[2],
            wr_x: ids[3],
            wr_h: ids[4],
            br: ids[5],
            wc_x: ids[6],
            wc_h: ids[7],
            bc: ids[8],
        }
    }

    pub fn hidden(&self, store: &ParamStore) -> usize {
        store.value(self.bz).numel()
    }

    /// Input projections `(X W_z + b_z, X W_r + b_r, X W_c + b_c)` for a
    /// matrix or vector of inputs.
    fn project(&self, g: &mut Graph<'_>, x: Var) -> Result<[Var; 3]> {
        let mut out = [x; 3];
        for (slot, (w, b)) in out
            .iter_mut()
            .zip([(self.wz_x, self.bz), (self.wr_x, self.br), (self.wc_x, self.bc)])
        {
            let (w, b) = (g.param(w), g.param(b));
            let p = g.matmul(x, w)?;
            *slot = g.add_rows(p, b)?;
        }
        Ok(out)
    }

    /// One update from already projected inputs.
    fn step(&self, g: &mut Graph<'_>, proj: [Var; 3], h: Var) -> Result<Var> {
        let [xz, xr, xc] = proj;
        let wz = g.param(self.wz_h);
        let hz = g.matmul(h, wz)?;
        let z_in = g.add(xz, hz)?;
        let z = g.sigmoid(z_in)?;
        let wr = g.param(self.wr_h);
        let hr = g.matmul(h, wr)?;
        let r_in = g.add(xr, hr)?;
        let r = g.sigmoid(r_in)?;
        let rh = g.mul(r, h)?;
        let wc = g.param(self.wc_h);
        let hc = g.matmul(rh, wc)?;
        let c_in = g.add(xc, hc)?;
        let cand = g.tanh(c_in)?;
        // h' = (1 - z) h + z ĥ = h + z (ĥ - h)
        let diff = g.sub(cand, h)?;
        let upd = g.mul(z, diff)?;
        Ok(g.add(h, upd)?)
    }
}

/// `z = σ(W_z[x;h] + b_z)`, `r = σ(W_r[x;h] + b_r)`,
/// `ĥ = tanh(W_c[x; r⊙h] + b_c)`, `h' = (1 − z)⊙h + z⊙ĥ`.
pub fn gru_cell(g: &mut Graph<'_>, x: Var, h: Var, params: &GruParams) -> Result<Var> {
    let proj = params.project(g, x)?;
    params.step(g, proj, h)
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `n × 2h`, row `i` is `[→h_i; ←h_i]`.
    pub states: Var,
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
}

impl EncoderOutput {
    /// `←h_1`, the backward state at the first token.
    pub fn last_backward(&self) -> Var {
        self.backward[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiGru {
    pub forward: GruParams,
    pub backward: GruParams,
}

impl BiGru {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(BiGru {
            forward: GruParams::register(store, &format!("{prefix}.fw"), input, hidden, init, rng)?,
            backward: GruParams::register(store, &format!("{prefix}.bw"), input, hidden, init, rng)?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(BiGru {
            forward: GruParams::lookup(store, &format!("{prefix}.fw"))?,
            backward: GruParams::lookup(store, &format!("{prefix}.bw"))?,
        })
    }

    /// Runs both directions over the rows of `inputs` from zero states.
    pub fn encode(&self, g: &mut Graph<'_>, inputs: Var) -> Result<EncoderOutput> {
        let shape = g.shape(inputs).to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::EmptySequence("encode"));
        }
        let n = shape[0];
        let forward = self.run(g, &self.forward, inputs, (0..n).collect())?;
        let mut backward = self.run(g, &self.backward, inputs, (0..n).rev().collect())?;
        backward.reverse();
        let mut rows = Vec::with_capacity(n);
        for (&f, &b) in forward.iter().zip(&backward) {
            rows.push(g.concat(&[f, b], 0)?);
        }
        let states = g.stack(&rows)?;
        Ok(EncoderOutput {
            states,
            forward,
            backward,
        })
    }

    fn run(&self, g: &mut Graph<'_>, p: &GruParams, inputs: Var, order: Vec<usize>) -> Result<Vec<Var>> {
        let hidden = p.hidden(g.store());
        let proj = p.project(g, inputs)?;
        let mut h = g.constant(Tensor::zeros(&[hidden]));
        let mut out = Vec::with_capacity(order.len());
        for i in order {
            let rows = [g.row(proj[0], i)?, g.row(proj[1], i)?, g.row(proj[2], i)?];
            h = p.step(g, rows, h)?;
            out.push(h);
        }
        Ok(out)
    }
}
