use std::collections::VecDeque;

use crate::error::{arg, Result};

/// The last `tau` policy states of one episode, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    tau: usize,
    width: usize,
    states: VecDeque<Vec<f64>>,
}

impl Memory {
    pub fn new(tau: usize, width: usize) -> Self {
        Self {
            tau,
            width,
            states: VecDeque::with_capacity(tau + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.iter().map(Vec::as_slice)
    }

    pub fn push(&mut self, state: Vec<f64>) -> Result<()> {
        if state.len() != self.width {
            return arg(format!(
                "policy state of length {} for memory width {}",
                state.len(),
                self.width
            ));
        }
        if self.tau == 0 {
            return Ok(());
        }
        if self.states.len() == self.tau {
            self.states.pop_front();
        }
        self.states.push_back(state);
        Ok(())
    }

    /// Appends the `tau × width` right-aligned buffer (zeros before the
    /// oldest state) to `out`.
    pub fn write_padded(&self, out: &mut Vec<f64>) {
        out.resize(out.len() + (self.tau - self.states.len()) * self.width, 0.0);
        for s in &self.states {
            out.extend_from_slice(s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_newest_tau_states_in_order() {
        let mut m = Memory::new(3, 2);
        for t in 0..5 {
            m.push(vec![t as f64; 2]).unwrap();
        }
        let firsts: Vec<f64> = m.states().map(|s| s[0]).collect();
        assert_eq!(firsts, vec![2.0, 3.0, 4.0]);
        assert!(m.push(vec![0.0; 3]).is_err());
    }

    #[test]
    fn padding_is_right_aligned() {
        let mut m = Memory::new(3, 1);
        m.push(vec![7.0]).unwrap();
        let mut buf = vec![9.0];
        m.write_padded(&mut buf);
        assert_eq!(buf, vec![9.0, 0.0, 0.0, 7.0]);
    }
}
