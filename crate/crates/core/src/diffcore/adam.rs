use crate::diffcore::params::ParamStore;
use crate::error::{Error, Result};

/// Moment estimates for a single parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let states = store
            .iter()
            .map(|p| AdamState {
                m: vec![0.0; p.grad.len()],
                v: vec![0.0; p.grad.len()],
                t: 0,
            })
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            states,
        }
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Applies one update to every unfrozen parameter and zeroes all gradients.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter() {
            if let Some(pos) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at entry {pos}",
                    p.name
                )));
            }
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, state) in ids.into_iter().zip(self.states.iter_mut()) {
            let p = store.get_mut(id);
            if p.frozen {
                continue;
            }
            state.t += 1;
            let bc1 = 1.0 - self.beta1.powi(state.t as i32);
            let bc2 = 1.0 - self.beta2.powi(state.t as i32);
            let grad = std::mem::take(&mut p.grad);
            let values = p.value.flat_mut();
            for (k, &g) in grad.iter().enumerate() {
                state.m[k] = self.beta1 * state.m[k] + (1.0 - self.beta1) * g;
                state.v[k] = self.beta2 * state.v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = state.m[k] / bc1;
                let v_hat = state.v[k] / bc2;
                values[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.grad = grad;
        }
        store.zero_grad();
        Ok(())
    }
}
