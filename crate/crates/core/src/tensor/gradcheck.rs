//! Central finite-difference gradient checks.
//!
//! The numeric side only evaluates forward passes, so it is independent of
//! the backward rules it verifies.

use super::{Graph, ParamId, ParamStore, TensorError, Var};

/// `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

/// Per-parameter comparison of analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub relative_error: f64,
}

/// Compares the backward pass of `loss` against central differences with
/// step `h` for every parameter in `ids`. `loss` must be deterministic.
pub fn check_gradients<F, E>(store: &mut ParamStore, ids: &[ParamId], h: f64, loss: F) -> Result<Vec<GradCheck>, E>
where
    F: for<'s> Fn(&mut Graph<'s>) -> Result<Var, E>,
    E: From<TensorError>,
{
    let grads = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let eval = |store: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let analytic = grads
            .get(store, id)
            .unwrap_or_else(|| vec![0.0; store.value(id).numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let up = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - h;
            let down = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        out.push(GradCheck {
            name: store.name(id).to_string(),
            relative_error: relative_error(&analytic, &numeric),
            analytic,
            numeric,
        });
    }
    Ok(out)
}
