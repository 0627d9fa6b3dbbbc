//! Two-level convolutional encoder–decoder with one skip connection.
//!
//! ```text
//! in(6) ─conv3─silu─conv3─silu─┬───────────────────────────┐ skip (C)
//!  (+ noise embedding)         └avgpool─conv3─silu─conv3─silu─upsample (2C)
//!                                       (+ noise embedding)        │
//!                                          concat(2C + C) ─conv3─silu─conv1─ out(3)
//! ```
//!
//! Tensors are channel-major (`C×H×W`); the noise level enters as a learned
//! per-channel offset scaled by `c_noise`.

use rand::Rng;

use super::{silu, silu_grad};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    k: usize,
}

impl ConvSpec {
    fn weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn params(&self) -> usize {
        self.weights() + self.cout
    }
}

/// `out[co] = b[co] + Σ_ci w[co,ci] ⋆ in[ci]` with zero "same" padding.
fn conv_forward<T: Real>(spec: ConvSpec, params: &[T], inp: &[T], h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let (weights, bias) = params.split_at(spec.weights());
    let pad = (spec.k / 2) as isize;
    let mut out = vec![T::zero(); spec.cout * hw];
    for co in 0..spec.cout {
        let out_c = &mut out[co * hw..(co + 1) * hw];
        out_c.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..spec.cin {
            let in_c = &inp[ci * hw..(ci + 1) * hw];
            for ky in 0..spec.k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(dy, h);
                for kx in 0..spec.k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(dx, w);
                    let wv = weights[((co * spec.cin + ci) * spec.k + ky) * spec.k + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let orow = &mut out_c[y * w + x0..y * w + x1];
                        let irow = &in_c[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (o, &i) in orow.iter_mut().zip(irow) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and, when requested, the input gradient.
fn conv_backward<T: Real>(
    spec: ConvSpec,
    params: &[T],
    inp: &[T],
    h: usize,
    w: usize,
    gout: &[T],
    grads: &mut [T],
    mut gin: Option<&mut [T]>,
) {
    let hw = h * w;
    let weights = &params[..spec.weights()];
    let (gw, gb) = grads.split_at_mut(spec.weights());
    let pad = (spec.k / 2) as isize;
    for co in 0..spec.cout {
        let g_c = &gout[co * hw..(co + 1) * hw];
        gb[co] += g_c.iter().copied().sum::<T>();
        for ci in 0..spec.cin {
            let in_c = &inp[ci * hw..(ci + 1) * hw];
            for ky in 0..spec.k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(dy, h);
                for kx in 0..spec.k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(dx, w);
                    let widx = ((co * spec.cin + ci) * spec.k + ky) * spec.k + kx;
                    let wv = weights[widx];
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let grow = &g_c[y * w + x0..y * w + x1];
                        let irow = &in_c[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        acc += dot(grow, irow);
                        if let Some(gin) = gin.as_deref_mut() {
                            let gi_row = &mut gin[ci * hw + sy * w + sx0..ci * hw + sy * w + sx0 + (x1 - x0)];
                            for (gi, &g) in gi_row.iter_mut().zip(grow) {
                                *gi += wv * g;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
}

fn valid_range(offset: isize, len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).min(len as isize).max(0) as usize;
    (lo.min(hi), hi)
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            lanes[l] += a[c * 8 + l] * b[c * 8 + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    lanes.iter().copied().sum::<T>() + tail
}

fn avg_pool2<T: Real>(inp: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let base = ch * h * w;
                let s = inp[base + 2 * y * w + 2 * x]
                    + inp[base + 2 * y * w + 2 * x + 1]
                    + inp[base + (2 * y + 1) * w + 2 * x]
                    + inp[base + (2 * y + 1) * w + 2 * x + 1];
                out[ch * h2 * w2 + y * w2 + x] = s * quarter;
            }
        }
    }
    out
}

fn avg_pool2_backward<T: Real>(gout: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut gin = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                gin[ch * h * w + y * w + x] = gout[ch * h2 * w2 + (y / 2) * w2 + x / 2] * quarter;
            }
        }
    }
    gin
}

fn upsample2<T: Real>(inp: &[T], c: usize, h2: usize, w2: usize) -> Vec<T> {
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[ch * h * w + y * w + x] = inp[ch * h2 * w2 + (y / 2) * w2 + x / 2];
            }
        }
    }
    out
}

fn upsample2_backward<T: Real>(gout: &[T], c: usize, h2: usize, w2: usize) -> Vec<T> {
    let (h, w) = (2 * h2, 2 * w2);
    let mut gin = vec![T::zero(); c * h2 * w2];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                gin[ch * h2 * w2 + (y / 2) * w2 + x / 2] += gout[ch * h * w + y * w + x];
            }
        }
    }
    gin
}

fn add_embedding<T: Real>(z: &mut [T], emb: &[T], noise: T, hw: usize) {
    for (ch, e) in emb.iter().enumerate() {
        let shift = *e * noise;
        z[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v += shift);
    }
}

fn embedding_grad<T: Real>(gz: &[T], noise: T, hw: usize, gemb: &mut [T]) {
    for (ch, g) in gemb.iter_mut().enumerate() {
        *g += gz[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>() * noise;
    }
}

fn activate<T: Real>(z: &[T]) -> Vec<T> {
    z.iter().map(|&v| silu(v)).collect()
}

fn through_silu<T: Real>(g: &mut [T], z: &[T]) {
    for (gi, &zi) in g.iter_mut().zip(z) {
        *gi *= silu_grad(zi);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
}

pub struct ConvTape<T> {
    noise: T,
    input: Vec<T>,
    z1: Vec<T>,
    a1: Vec<T>,
    z2: Vec<T>,
    pooled: Vec<T>,
    z3: Vec<T>,
    a3: Vec<T>,
    z4: Vec<T>,
    cat: Vec<T>,
    z5: Vec<T>,
    a5: Vec<T>,
}

struct Layout {
    convs: [ConvSpec; 6],
    conv_off: [usize; 6],
    emb1: usize,
    emb3: usize,
    total: usize,
}

impl ConvNet {
    pub fn new(in_channels: usize, out_channels: usize, width: usize, rows: usize, cols: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            width,
            rows,
            cols,
        }
    }

    fn layout(&self) -> Layout {
        let c = self.width;
        let convs = [
            ConvSpec { cin: self.in_channels, cout: c, k: 3 },
            ConvSpec { cin: c, cout: c, k: 3 },
            ConvSpec { cin: c, cout: 2 * c, k: 3 },
            ConvSpec { cin: 2 * c, cout: 2 * c, k: 3 },
            ConvSpec { cin: 3 * c, cout: c, k: 3 },
            ConvSpec { cin: c, cout: self.out_channels, k: 1 },
        ];
        let mut conv_off = [0; 6];
        let mut off = 0;
        for (i, s) in convs.iter().enumerate() {
            conv_off[i] = off;
            off += s.params();
        }
        let emb1 = off;
        let emb3 = emb1 + c;
        Layout {
            convs,
            conv_off,
            emb1,
            emb3,
            total: emb3 + 2 * c,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().total
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let lay = self.layout();
        let mut params = vec![T::zero(); lay.total];
        for (i, s) in lay.convs.iter().enumerate() {
            let fan_in = (s.cin * s.k * s.k) as f64;
            // The 1×1 head starts small so early outputs stay near zero.
            let gain = if i == 5 { 0.1 } else { 1.0 };
            let bound = gain * (3.0 / fan_in).sqrt();
            for p in &mut params[lay.conv_off[i]..lay.conv_off[i] + s.weights()] {
                *p = T::of(rng.gen_range(-bound..bound));
            }
        }
        for p in &mut params[lay.emb1..lay.total] {
            *p = T::of(rng.gen_range(-0.1..0.1));
        }
        params
    }

    fn conv_params<'a, T>(&self, lay: &Layout, params: &'a [T], i: usize) -> &'a [T] {
        &params[lay.conv_off[i]..lay.conv_off[i] + lay.convs[i].params()]
    }

    /// `input` is channel-major `in_channels×rows×cols`; output is
    /// `out_channels×rows×cols`.
    pub fn forward<T: Real>(&self, params: &[T], input: Vec<T>, noise: T) -> (Vec<T>, ConvTape<T>) {
        let lay = self.layout();
        let (h, w) = (self.rows, self.cols);
        let (h2, w2) = (h / 2, w / 2);
        let c = self.width;

        let mut z1 = conv_forward(lay.convs[0], self.conv_params(&lay, params, 0), &input, h, w);
        add_embedding(&mut z1, &params[lay.emb1..lay.emb1 + c], noise, h * w);
        let a1 = activate(&z1);
        let z2 = conv_forward(lay.convs[1], self.conv_params(&lay, params, 1), &a1, h, w);
        let a2 = activate(&z2);

        let pooled = avg_pool2(&a2, c, h, w);
        let mut z3 = conv_forward(lay.convs[2], self.conv_params(&lay, params, 2), &pooled, h2, w2);
        add_embedding(&mut z3, &params[lay.emb3..lay.emb3 + 2 * c], noise, h2 * w2);
        let a3 = activate(&z3);
        let z4 = conv_forward(lay.convs[3], self.conv_params(&lay, params, 3), &a3, h2, w2);
        let a4 = activate(&z4);

        let mut cat = upsample2(&a4, 2 * c, h2, w2);
        cat.extend_from_slice(&a2);
        let z5 = conv_forward(lay.convs[4], self.conv_params(&lay, params, 4), &cat, h, w);
        let a5 = activate(&z5);
        let out = conv_forward(lay.convs[5], self.conv_params(&lay, params, 5), &a5, h, w);
        let tape = ConvTape {
            noise,
            input,
            z1,
            a1,
            z2,
            pooled,
            z3,
            a3,
            z4,
            cat,
            z5,
            a5,
        };
        (out, tape)
    }

    /// Accumulates parameter gradients. The input gradient is not needed by
    /// training and is not computed.
    pub fn backward<T: Real>(&self, params: &[T], tape: &ConvTape<T>, grad_out: &[T], grads: &mut [T]) {
        let lay = self.layout();
        let (h, w) = (self.rows, self.cols);
        let (h2, w2) = (h / 2, w / 2);
        let c = self.width;
        let hw = h * w;
        let range = |i: usize| lay.conv_off[i]..lay.conv_off[i] + lay.convs[i].params();

        // head
        let mut g_a5 = vec![T::zero(); c * hw];
        conv_backward(lay.convs[5], self.conv_params(&lay, params, 5), &tape.a5, h, w, grad_out, &mut grads[range(5)], Some(&mut g_a5));
        through_silu(&mut g_a5, &tape.z5);

        let mut g_cat = vec![T::zero(); 3 * c * hw];
        conv_backward(lay.convs[4], self.conv_params(&lay, params, 4), &tape.cat, h, w, &g_a5, &mut grads[range(4)], Some(&mut g_cat));
        let (g_up, g_skip) = g_cat.split_at(2 * c * hw);

        // bottleneck
        let mut g_a4 = upsample2_backward(g_up, 2 * c, h2, w2);
        through_silu(&mut g_a4, &tape.z4);
        let mut g_a3 = vec![T::zero(); 2 * c * h2 * w2];
        conv_backward(lay.convs[3], self.conv_params(&lay, params, 3), &tape.a3, h2, w2, &g_a4, &mut grads[range(3)], Some(&mut g_a3));
        through_silu(&mut g_a3, &tape.z3);
        embedding_grad(&g_a3, tape.noise, h2 * w2, &mut grads[lay.emb3..lay.emb3 + 2 * c]);
        let mut g_pooled = vec![T::zero(); c * h2 * w2];
        conv_backward(lay.convs[2], self.conv_params(&lay, params, 2), &tape.pooled, h2, w2, &g_a3, &mut grads[range(2)], Some(&mut g_pooled));

        // encoder
        let mut g_a2 = avg_pool2_backward(&g_pooled, c, h, w);
        for (g, s) in g_a2.iter_mut().zip(g_skip) {
            *g += *s;
        }
        through_silu(&mut g_a2, &tape.z2);
        let mut g_a1 = vec![T::zero(); c * hw];
        conv_backward(lay.convs[1], self.conv_params(&lay, params, 1), &tape.a1, h, w, &g_a2, &mut grads[range(1)], Some(&mut g_a1));
        through_silu(&mut g_a1, &tape.z1);
        embedding_grad(&g_a1, tape.noise, hw, &mut grads[lay.emb1..lay.emb1 + c]);
        conv_backward(lay.convs[0], self.conv_params(&lay, params, 0), &tape.input, h, w, &g_a1, &mut grads[range(0)], None);
    }
}
