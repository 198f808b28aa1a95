//! Finite-difference verification of tape gradients.

use crate::diffcore::params::ParamStore;
use crate::diffcore::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.params
            .iter()
            .filter(|p| p.max_rel_error >= self.tolerance)
            .collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&ParamCheck> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(store: &ParamStore, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    Ok(tape.value(loss).item())
}

/// Gradients from one reverse pass, flattened per parameter.
pub fn analytic_gradients<F>(store: &mut ParamStore, mut f: F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;
    let grads = store.iter().map(|p| p.grad.clone()).collect();
    store.zero_grad();
    Ok(grads)
}

/// Central differences `(f(θ+h) - f(θ-h)) / 2h` for every scalar of every
/// unfrozen parameter. Frozen parameters report zeros.
pub fn numeric_gradients<F>(store: &mut ParamStore, mut f: F, h: f64) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).grad.len();
        let mut g = vec![0.0; n];
        if !store.get(id).frozen {
            for (k, gk) in g.iter_mut().enumerate() {
                let orig = store.get(id).value.flat()[k];
                store.get_mut(id).value.flat_mut()[k] = orig + h;
                let plus = evaluate(store, &mut f)?;
                store.get_mut(id).value.flat_mut()[k] = orig - h;
                let minus = evaluate(store, &mut f)?;
                store.get_mut(id).value.flat_mut()[k] = orig;
                *gk = (plus - minus) / (2.0 * h);
            }
        }
        out.push(g);
    }
    Ok(out)
}

pub fn compare(
    store: &ParamStore,
    analytic: &[Vec<f64>],
    numeric: &[Vec<f64>],
    tolerance: f64,
) -> GradCheckReport {
    let params = store
        .iter()
        .zip(analytic.iter().zip(numeric))
        .map(|(p, (a, n))| {
            let mut worst = ParamCheck {
                name: p.name.clone(),
                max_rel_error: 0.0,
                worst_index: 0,
                analytic: a.first().copied().unwrap_or(0.0),
                numeric: n.first().copied().unwrap_or(0.0),
            };
            for (k, (&av, &nv)) in a.iter().zip(n).enumerate() {
                let e = relative_error(av, nv);
                if e > worst.max_rel_error {
                    worst.max_rel_error = e;
                    worst.worst_index = k;
                    worst.analytic = av;
                    worst.numeric = nv;
                }
            }
            worst
        })
        .collect();
    GradCheckReport { tolerance, params }
}

/// Runs the reverse pass and central differences and compares them.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut f: F,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &mut f)?;
    let numeric = numeric_gradients(store, &mut f, h)?;
    Ok(compare(store, &analytic, &numeric, tolerance))
}
