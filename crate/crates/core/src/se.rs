//! Excitation-only squeeze-and-excitation gate.
//!
//! The pooled classification vector `z` is already channel-wise, so there
//! is no squeeze step. The gate is a two-layer bottleneck
//!
//! ```text
//! s = sigmoid(W2 · relu(W1 · z + b1) + b2)
//! out = s ⊙ z
//! ```
//!
//! Every `s_i` lies strictly in (0, 1), so the gate can only shrink a
//! channel and never flips its sign.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::swin::layers::Linear;
use crate::tensor::{Real, Var};

#[derive(Debug, Clone)]
pub struct SeGate {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dim: usize,
    pub reduction: usize,
}

impl SeGate {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        if reduction == 0 || dim % reduction != 0 {
            return Err(Error::Config(format!("dim {dim} not divisible by reduction {reduction}")));
        }
        let hidden = dim / reduction;
        Ok(SeGate {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, true, rng)?,
            dim,
            reduction,
        })
    }

    /// Per-channel gate values `s` for `z: [dim]`.
    pub fn gate<'t, T: Real>(&self, p: &Bound<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        if z.shape() != [self.dim] {
            return Err(Error::dim("excite", format!("expected [{}], got {:?}", self.dim, z.shape())));
        }
        let row = z.reshape(&[1, self.dim])?;
        let hidden = self.fc1.forward(p, row)?.relu()?;
        self.fc2.forward(p, hidden)?.sigmoid()?.reshape(&[self.dim])
    }

    /// `s ⊙ z`.
    pub fn excite<'t, T: Real>(&self, p: &Bound<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = self.gate(p, z)?;
        s.mul(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gate(zero: bool) -> (ParamStore<f64>, SeGate) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let se = SeGate::new(&mut store, "se", 8, 4, &mut rng).unwrap();
        if zero {
            for p in store.iter_mut() {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        } else {
            for p in store.iter_mut() {
                p.value = p.value.map(|v| v * 100.0 + 0.3);
            }
        }
        (store, se)
    }

    #[test]
    fn zero_weights_halve_the_input() {
        let (store, se) = gate(true);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let z = tape.constant(Tensor::from_f64(&[8], &[1., -2., 3., 0., 5., 6., -7., 8.]).unwrap());
        let out = se.excite(&p, z).unwrap().value();
        assert_eq!(out.data(), &[0.5, -1., 1.5, 0., 2.5, 3., -3.5, 4.]);
    }

    #[test]
    fn zero_input_gives_zero() {
        let (store, se) = gate(false);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let out = se.excite(&p, tape.constant(Tensor::zeros(&[8]))).unwrap().value();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gate_bounds_output() {
        let (store, se) = gate(false);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let z = Tensor::from_f64(&[8], &[0.4, -2., 3., 0.1, -5., 6., -0.7, 8.]).unwrap();
        let out = se.excite(&p, tape.constant(z.clone())).unwrap().value();
        for (o, i) in out.data().iter().zip(z.data()) {
            assert!(o.abs() <= i.abs());
            assert!(o * i >= 0.0);
        }
    }

    #[test]
    fn indivisible_reduction_rejected() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(SeGate::new(&mut store, "se", 10, 4, &mut rng).is_err());
    }
}
