//! Central finite-difference checks of analytic gradients.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::Result;
use crate::rng::Rng;
use rand::seq::index::sample;

/// Worst relative discrepancy between analytic and central-difference
/// gradients over the checked entries. Each entry's error is scaled by the
/// larger of the two magnitudes, floored at `1e-3` of the tensor's largest
/// numeric gradient so that entries near zero compare on the tensor's scale.
///
/// `max_entries` bounds the entries probed per tensor (sampled with `rng`).
pub fn gradient_check(
    store: &ParamStore,
    f: impl Fn(&mut Graph) -> Result<Var>,
    h: f64,
    max_entries: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let mut work = store.clone();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let l = f(&mut g)?;
        Ok(g.scalar(l))
    };
    let mut worst: f64 = 0.0;
    for pi in 0..store.len() {
        let n = store.get(ParamId(pi)).data.len();
        let entries: Vec<usize> = if n <= max_entries {
            (0..n).collect()
        } else {
            sample(rng, n, max_entries).into_vec()
        };
        let mut numeric = Vec::with_capacity(entries.len());
        for &j in &entries {
            let x0 = store.get(ParamId(pi)).data[j];
            work.get_mut(ParamId(pi)).data[j] = x0 + h;
            let fp = eval(&work)?;
            work.get_mut(ParamId(pi)).data[j] = x0 - h;
            let fm = eval(&work)?;
            work.get_mut(ParamId(pi)).data[j] = x0;
            numeric.push((fp - fm) / (2.0 * h));
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (&j, &num) in entries.iter().zip(&numeric) {
            let ana = analytic.0[pi][j];
            let denom = ana.abs().max(num.abs()).max(1e-3 * scale).max(1e-12);
            worst = worst.max((ana - num).abs() / denom);
        }
    }
    Ok(worst)
}
