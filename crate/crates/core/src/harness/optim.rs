//! Adam with bias-corrected moments.

use indexmap::IndexMap;

use crate::autodiff::{ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Optimiser state keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Adam<T> {
    step: u64,
    state: IndexMap<String, Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new() -> Self {
        Adam {
            step: 0,
            state: IndexMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every weight that has a gradient. Buffers are never
    /// touched. A non-finite gradient aborts before any parameter changes.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &IndexMap<String, Tensor<T>>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient for `{name}` at element {i} (value {}, step {})",
                    g.data()[i],
                    self.step + 1
                )));
            }
            match params.entry(name) {
                Some(e) if e.tensor.shape() != g.shape() => {
                    return Err(Error::Shape(format!(
                        "gradient for `{name}` has shape {}, parameter {}",
                        g.shape(),
                        e.tensor.shape()
                    )))
                }
                None => return Err(Error::Config(format!("gradient for unknown `{name}`"))),
                _ => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64(BETA1), T::from_f64(BETA2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - BETA1), T::from_f64(1.0 - BETA2));
        let c1 = T::from_f64(1.0 - BETA1.powi(t));
        let c2 = T::from_f64(1.0 - BETA2.powi(t));
        let lr = T::from_f64(lr);
        let eps = T::from_f64(EPSILON);
        for (name, g) in grads {
            let Some(entry) = params.entry(name) else { continue };
            if entry.kind != ParamKind::Weight {
                continue;
            }
            let n = g.len();
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![T::ZERO; n],
                v: vec![T::ZERO; n],
            });
            let p = params.get_mut(name).expect("checked above");
            for (((w, &gi), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                *m = b1 * *m + one_b1 * gi;
                *v = b2 * *v + one_b2 * gi * gi;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
