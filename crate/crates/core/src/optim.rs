//! Optimizer machinery: elementwise gradient clipping, Adam with bias
//! correction, and new-bob learning-rate annealing.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Loss is treated as "not decreased" when it fails to drop by more than
/// this tolerance, absorbing float noise in the comparison.
pub const NEWBOB_TOLERANCE: f64 = 1e-6;

/// Clamp every gradient elementwise to [lo, hi]. Applies to raw
/// gradients, before the optimizer sees them.
pub fn clip_gradients(store: &mut ParamStore, lo: f64, hi: f64) -> Result<()> {
    if lo >= hi {
        return Err(Error::Config(format!("clip bounds [{lo}, {hi}] are empty")));
    }
    for (_, entry) in store.iter_mut() {
        for g in entry.grad.data_mut() {
            *g = g.clamp(lo, hi);
        }
    }
    Ok(())
}

/// Per-parameter first and second moment accumulators plus the step
/// counter for bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub moments: IndexMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let moments = store
            .iter()
            .map(|(name, e)| {
                let z = Tensor::zeros(e.value.rows(), e.value.cols());
                (name.to_string(), (z.clone(), z))
            })
            .collect();
        AdamState { step: 0, moments }
    }

    /// One bias-corrected Adam update from the gradients currently in the
    /// store, applied in place.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (name, entry) in store.iter_mut() {
            let (m, v) = self
                .moments
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("no Adam state for `{name}`")))?;
            if m.shape() != entry.grad.shape() {
                return Err(Error::dim(
                    format!("Adam moment for `{name}`"),
                    &m.shape(),
                    &entry.grad.shape(),
                ));
            }
            let grads = entry.grad.data();
            let values = entry.value.data_mut();
            for i in 0..grads.len() {
                let g = grads[i];
                let mi = ADAM_BETA1 * m.data()[i] + (1.0 - ADAM_BETA1) * g;
                let vi = ADAM_BETA2 * v.data()[i] + (1.0 - ADAM_BETA2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// New-bob annealing: halve the learning rate whenever held-out loss
/// fails to decrease; never raise it.
#[derive(Clone, Debug)]
pub struct NewBobState {
    pub current_lr: f64,
    pub prev_loss: Option<f64>,
    pub halvings: usize,
}

impl NewBobState {
    pub fn new(lr_init: f64) -> Self {
        NewBobState {
            current_lr: lr_init,
            prev_loss: None,
            halvings: 0,
        }
    }

    /// Feed one epoch's held-out loss; returns true when training should
    /// stop (learning rate annealed below `min_lr`).
    pub fn update(&mut self, heldout_loss: f64, min_lr: f64) -> bool {
        if let Some(prev) = self.prev_loss {
            if heldout_loss >= prev - NEWBOB_TOLERANCE {
                self.current_lr /= 2.0;
                self.halvings += 1;
            }
        }
        self.prev_loss = Some(heldout_loss);
        self.current_lr < min_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(name: &str, value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::row_vec(vec![value]));
        s
    }

    #[test]
    fn clip_hand_values() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::row_vec(vec![0.0, 0.0, 0.0]));
        store.get_mut("w").unwrap().grad = Tensor::row_vec(vec![15.0, -12.0, 3.5]);
        clip_gradients(&mut store, -10.0, 10.0).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[10.0, -10.0, 3.5]);
        // already inside → unchanged; zeros stay zero
        clip_gradients(&mut store, -10.0, 10.0).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[10.0, -10.0, 3.5]);
        assert!(clip_gradients(&mut store, 5.0, 5.0).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias correction makes the first step ≈ -lr·sign(g)
        let lr = 5e-4;
        for g in [3.0, -0.25] {
            let mut store = scalar_store("w", 1.0);
            store.get_mut("w").unwrap().grad = Tensor::row_vec(vec![g]);
            let mut state = AdamState::new(&store);
            state.step(&mut store, lr).unwrap();
            let delta = store.value("w").unwrap().at(0, 0) - 1.0;
            assert!((delta.abs() - lr).abs() < 1e-6 * lr, "g={g} delta={delta}");
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut store = scalar_store("w", 2.5);
        let mut state = AdamState::new(&store);
        state.step(&mut store, 0.1).unwrap();
        assert_eq!(store.value("w").unwrap().at(0, 0), 2.5);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_matches_hand_computed_trace() {
        // Independent scalar re-derivation of three updates on f(w)=w²/2.
        let lr = 0.1;
        let mut w_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut trace = Vec::new();
        for t in 1..=3 {
            let g = w_ref; // d(w²/2)/dw
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            w_ref -= lr * m_hat / (v_hat.sqrt() + 1e-8);
            trace.push(w_ref);
        }

        let mut store = scalar_store("w", 1.0);
        let mut state = AdamState::new(&store);
        for expected in trace {
            let w = store.value("w").unwrap().at(0, 0);
            store.get_mut("w").unwrap().grad = Tensor::row_vec(vec![w]);
            state.step(&mut store, lr).unwrap();
            let got = store.value("w").unwrap().at(0, 0);
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn newbob_halves_on_non_decrease() {
        let mut nb = NewBobState::new(8.0);
        assert!(!nb.update(5.0, 1e-9));
        assert_eq!(nb.current_lr, 8.0);
        assert!(!nb.update(4.0, 1e-9));
        assert_eq!(nb.current_lr, 8.0);
        assert!(!nb.update(4.1, 1e-9));
        assert_eq!(nb.current_lr, 4.0);
        assert_eq!(nb.halvings, 1);
    }

    #[test]
    fn newbob_never_raises_and_counts_halvings() {
        let mut nb = NewBobState::new(1.0);
        let losses = [3.0, 2.0, 2.0, 1.5, 1.6, 1.4];
        let mut last_lr = nb.current_lr;
        let mut non_decreasing = 0;
        for (i, &l) in losses.iter().enumerate() {
            if i > 0 && l >= losses[i - 1] - NEWBOB_TOLERANCE {
                non_decreasing += 1;
            }
            nb.update(l, 1e-12);
            assert!(nb.current_lr <= last_lr);
            last_lr = nb.current_lr;
        }
        assert_eq!(nb.halvings, non_decreasing);
    }

    #[test]
    fn newbob_equal_losses_trigger_halving_and_stop() {
        let mut nb = NewBobState::new(1.0);
        nb.update(2.0, 0.3);
        assert!(!nb.update(2.0, 0.3));
        assert_eq!(nb.current_lr, 0.5);
        assert!(nb.update(2.0, 0.3)); // 0.25 < 0.3 → stop
    }
}
