//! Adam with bias correction and the linear learning-rate schedule.

use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) -> Result<()> {
        if grads.0.len() != store.len()
            || grads
                .0
                .iter()
                .zip(store.iter())
                .any(|(g, p)| g.len() != p.data.len())
        {
            return Err(Error::State(
                "gradients do not match the parameter store".into(),
            ));
        }
        if self.m.len() != store.len() {
            return Err(Error::State(
                "optimizer state built for another store".into(),
            ));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in store
            .iter_mut()
            .zip(&grads.0)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p.data[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment tensors, for checkpointing optimizer state.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub fn set_moments(&mut self, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, step: u64) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::State("moment count mismatch".into()));
        }
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }
}

/// Linear decay from `lr0` at iteration 0 to `lr1` at iteration `iterations - 1`.
pub fn lr_schedule(i: usize, iterations: usize, lr0: f64, lr1: f64) -> f64 {
    if iterations <= 1 {
        return lr0;
    }
    lr0 + (lr1 - lr0) * i.min(iterations - 1) as f64 / (iterations - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Init};
    use crate::rng::rng_for;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(0, 1000, 1e-4, 1e-5), 1e-4);
        assert!((lr_schedule(999, 1000, 1e-4, 1e-5) - 1e-5).abs() < 1e-20);
        assert!((lr_schedule(500, 1001, 1e-4, 1e-5) - 5.5e-5).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut rng = rng_for(0, &[]);
        let mut s = ParamStore::new();
        s.add("w", &[3, 3], Init::Normal(1.0), &mut rng).unwrap();
        let before = s.clone();
        let mut adam = Adam::new(&s);
        let g = s.zero_grads();
        adam.update(&mut s, &g, 1e-3).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn minimizes_scalar_quadratic() {
        let mut rng = rng_for(0, &[]);
        let mut s = ParamStore::new();
        let id = s.add("x", &[1], Init::Constant(3.0), &mut rng).unwrap();
        let mut adam = Adam::new(&s);
        for _ in 0..2000 {
            let grads = {
                let mut g = Graph::new(&s);
                let x = g.param(id);
                let x2 = g.mul(x, x).unwrap();
                let l = g.sum(x2);
                g.backward(l).unwrap()
            };
            adam.update(&mut s, &grads, 0.05).unwrap();
        }
        let x = s.get(id).data[0];
        assert!(x * x < 1e-6, "{x}");
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut rng = rng_for(0, &[]);
        let mut s = ParamStore::new();
        s.add("w", &[2], Init::Zeros, &mut rng).unwrap();
        let mut adam = Adam::new(&s);
        assert!(adam.update(&mut s, &Grads(vec![]), 1e-3).is_err());
    }
}
