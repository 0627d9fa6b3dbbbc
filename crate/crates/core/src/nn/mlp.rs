use rand::Rng;

use super::{silu, silu_grad};
use crate::real::Real;

/// Fully connected network with SiLU between layers and a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
}

pub struct MlpTape<T> {
    /// Layer inputs; `acts[0]` is the network input.
    acts: Vec<Vec<T>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<T>>,
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self { widths }
    }

    pub fn input_len(&self) -> usize {
        self.widths[0]
    }

    pub fn output_len(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut params = Vec::with_capacity(self.num_params());
        for w in self.widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                params.push(T::of(rng.gen_range(-bound..bound)));
            }
            params.extend(std::iter::repeat_n(T::zero(), w[1]));
        }
        params
    }

    pub fn forward<T: Real>(&self, params: &[T], input: Vec<T>) -> (Vec<T>, MlpTape<T>) {
        debug_assert_eq!(input.len(), self.input_len());
        let layers = self.widths.len() - 1;
        let mut acts = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut a = input;
        let mut offset = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[offset..offset + fan_in * fan_out];
            let bias = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let z: Vec<T> = (0..fan_out)
                .map(|o| {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    row.iter().zip(&a).map(|(p, q)| *p * *q).sum::<T>() + bias[o]
                })
                .collect();
            acts.push(a);
            if l + 1 < layers {
                a = z.iter().map(|&v| silu(v)).collect();
                pre.push(z);
            } else {
                a = z;
            }
        }
        (a, MlpTape { acts, pre })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        tape: &MlpTape<T>,
        grad_out: &[T],
        grads: &mut [T],
    ) -> Vec<T> {
        let layers = self.widths.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in self.widths.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut g = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let off = offsets[l];
            let a = &tape.acts[l];
            for o in 0..fan_out {
                let go = g[o];
                let row = &mut grads[off + o * fan_in..off + (o + 1) * fan_in];
                for (gw, &ai) in row.iter_mut().zip(a) {
                    *gw += go * ai;
                }
                grads[off + fan_in * fan_out + o] += go;
            }
            let weights = &params[off..off + fan_in * fan_out];
            let mut g_in = vec![T::zero(); fan_in];
            for o in 0..fan_out {
                let go = g[o];
                for (gi, &w) in g_in.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                    *gi += go * w;
                }
            }
            if l > 0 {
                for (gi, &z) in g_in.iter_mut().zip(&tape.pre[l - 1]) {
                    *gi *= silu_grad(z);
                }
            }
            g = g_in;
        }
        g
    }
}
