//! Hand-differentiated networks used as the denoiser backbone.

mod conv;
mod mlp;

pub use conv::{ConvNet, ConvTape};
pub use mlp::{Mlp, MlpTape};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::real::Real;
use crate::volume::PHASES;

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

pub(crate) fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s + x * s * (T::one() - s)
}

/// Backbone descriptor stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// For flat vector data: `[c_in·x̂, c, c_noise]` → hidden layers → `x̂`-sized output.
    Mlp { hidden: Vec<usize> },
    /// For `L×W×3` volumes: noisy phases and condition phases stacked as six
    /// input channels.
    ConvNet { width: usize },
}

/// Data layout the backbone is instantiated for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataLayout {
    /// Flat vectors of length `data` with a condition of length `cond`.
    Vector { data: usize, cond: usize },
    /// `rows×cols×3` joint volumes conditioned on a same-shaped volume.
    Volume { rows: usize, cols: usize },
}

impl DataLayout {
    pub fn data_len(&self) -> usize {
        match *self {
            DataLayout::Vector { data, .. } => data,
            DataLayout::Volume { rows, cols } => rows * cols * PHASES,
        }
    }

    pub fn cond_len(&self) -> usize {
        match *self {
            DataLayout::Vector { cond, .. } => cond,
            DataLayout::Volume { rows, cols } => rows * cols * PHASES,
        }
    }
}

pub enum Tape<T> {
    Mlp(MlpTape<T>),
    Conv(ConvTape<T>),
}

/// An instantiated backbone.
#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Mlp(Mlp),
    Conv(ConvNet),
}

impl Network {
    pub fn build(arch: &Architecture, layout: DataLayout) -> Result<Self, String> {
        match (arch, layout) {
            (Architecture::Mlp { hidden }, layout) => {
                if hidden.contains(&0) {
                    return Err("hidden widths must be positive".into());
                }
                let n = layout.data_len();
                Ok(Network::Mlp(Mlp::new(n + layout.cond_len() + 1, hidden, n)))
            }
            (Architecture::ConvNet { width }, DataLayout::Volume { rows, cols }) => {
                if *width == 0 {
                    return Err("convolution width must be positive".into());
                }
                if rows < 2 || cols < 2 || rows % 2 != 0 || cols % 2 != 0 {
                    return Err(format!("convolutional backbone needs even spatial dims, got {rows}x{cols}"));
                }
                Ok(Network::Conv(ConvNet::new(2 * PHASES, PHASES, *width, rows, cols)))
            }
            (Architecture::ConvNet { .. }, DataLayout::Vector { .. }) => {
                Err("convolutional backbone needs volume-shaped data".into())
            }
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Network::Mlp(m) => m.num_params(),
            Network::Conv(c) => c.num_params(),
        }
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        match self {
            Network::Mlp(m) => m.init_params(rng),
            Network::Conv(c) => c.init_params(rng),
        }
    }

    /// Evaluates the backbone on scaled noisy data `x`, condition `cond` and
    /// noise embedding `noise`. Volume data is interleaved `L×W×3` on both
    /// input and output.
    pub fn forward<T: Real>(&self, params: &[T], x: &[T], cond: &[T], noise: T) -> (Vec<T>, Tape<T>) {
        match self {
            Network::Mlp(m) => {
                let mut input = Vec::with_capacity(m.input_len());
                input.extend_from_slice(x);
                input.extend_from_slice(cond);
                input.push(noise);
                let (out, tape) = m.forward(params, input);
                (out, Tape::Mlp(tape))
            }
            Network::Conv(c) => {
                let hw = c.rows * c.cols;
                let mut input = vec![T::zero(); 2 * PHASES * hw];
                for p in 0..hw {
                    for k in 0..PHASES {
                        input[k * hw + p] = x[p * PHASES + k];
                        input[(PHASES + k) * hw + p] = cond[p * PHASES + k];
                    }
                }
                let (planar, tape) = c.forward(params, input, noise);
                let mut out = vec![T::zero(); PHASES * hw];
                for p in 0..hw {
                    for k in 0..PHASES {
                        out[p * PHASES + k] = planar[k * hw + p];
                    }
                }
                (out, Tape::Conv(tape))
            }
        }
    }

    /// Accumulates `∂(grad_out · output)/∂params` into `grads`.
    pub fn backward<T: Real>(&self, params: &[T], tape: &Tape<T>, grad_out: &[T], grads: &mut [T]) {
        match (self, tape) {
            (Network::Mlp(m), Tape::Mlp(t)) => {
                m.backward(params, t, grad_out, grads);
            }
            (Network::Conv(c), Tape::Conv(t)) => {
                let hw = c.rows * c.cols;
                let mut planar = vec![T::zero(); PHASES * hw];
                for p in 0..hw {
                    for k in 0..PHASES {
                        planar[k * hw + p] = grad_out[p * PHASES + k];
                    }
                }
                c.backward(params, t, &planar, grads);
            }
            _ => panic!("tape does not belong to this network"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn silu_derivative() {
        for x in [-4.0f64, -0.3, 0.0, 0.7, 5.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let arch = Architecture::Mlp { hidden: vec![6, 5] };
        let net = Network::build(&arch, DataLayout::Vector { data: 3, cond: 2 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params: Vec<f64> = net.init_params(&mut rng);
        let x = [0.3, -0.8, 1.1];
        let c = [0.5, -0.2];
        let probe = [0.7, -1.3, 0.2];
        let objective = |p: &[f64]| -> f64 {
            net.forward(p, &x, &c, 0.4).0.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = net.forward(&params, &x, &c, 0.4);
        let mut grads = vec![0.0; params.len()];
        net.backward(&params, &tape, &probe, &mut grads);
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += 1e-6;
            let up = objective(&p);
            p[i] -= 2e-6;
            let down = objective(&p);
            assert!(((up - down) / 2e-6 - grads[i]).abs() < 1e-7, "param {i}");
        }
    }

    #[test]
    fn conv_rejects_odd_or_vector_layouts() {
        let arch = Architecture::ConvNet { width: 4 };
        assert!(Network::build(&arch, DataLayout::Volume { rows: 7, cols: 8 }).is_err());
        assert!(Network::build(&arch, DataLayout::Vector { data: 4, cond: 0 }).is_err());
        assert!(Network::build(&arch, DataLayout::Volume { rows: 8, cols: 8 }).is_ok());
    }

    #[test]
    fn conv_output_shape_matches_volume() {
        let net = Network::build(&Architecture::ConvNet { width: 4 }, DataLayout::Volume { rows: 8, cols: 6 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params: Vec<f32> = net.init_params(&mut rng);
        let x = vec![0.1f32; 8 * 6 * 3];
        let (out, _) = net.forward(&params, &x, &x, 0.0);
        assert_eq!(out.len(), 8 * 6 * 3);
    }
}
