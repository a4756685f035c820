//! Compact convolutional network: two 3x3 same-padded convolutions with ReLU
//! and 2x2 max-pooling, then a dense layer to a single logit.
//!
//! Activations are stored row-major HWC. Convolution weights are laid out
//! `[ky][kx][in][out]` so the innermost loop runs over output channels.
//! Everything is generic over the float type so gradients can be checked in
//! f64 while training runs in f32.

use std::ops::{AddAssign, MulAssign};

use num_traits::Float;

pub trait Scalar: Float + AddAssign + MulAssign + Send + Sync + 'static {}
impl<T: Float + AddAssign + MulAssign + Send + Sync + 'static> Scalar for T {}

pub const INPUT_CHANNELS: usize = 3;
const K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub input_size: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
}

impl Architecture {
    pub fn compact(input_size: usize) -> Self {
        Self {
            input_size,
            conv1_channels: 8,
            conv2_channels: 16,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.input_size >= 4 && self.conv1_channels >= 1 && self.conv2_channels >= 1
    }

    pub fn pooled1(&self) -> usize {
        self.input_size / 2
    }

    pub fn pooled2(&self) -> usize {
        self.pooled1() / 2
    }

    pub fn input_len(&self) -> usize {
        self.input_size * self.input_size * INPUT_CHANNELS
    }

    pub fn features(&self) -> usize {
        self.pooled2() * self.pooled2() * self.conv2_channels
    }

    pub(crate) fn layout(&self) -> Layout {
        let (c0, c1, c2) = (INPUT_CHANNELS, self.conv1_channels, self.conv2_channels);
        let w1 = 0;
        let b1 = w1 + K * K * c0 * c1;
        let w2 = b1 + c1;
        let b2 = w2 + K * K * c1 * c2;
        let wf = b2 + c2;
        let bf = wf + self.features();
        Layout {
            w1,
            b1,
            w2,
            b2,
            wf,
            bf,
            total: bf + 1,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().total
    }

    /// Fan-in of each weight block: (conv1, conv2, dense).
    pub(crate) fn fan_ins(&self) -> (usize, usize, usize) {
        (
            K * K * INPUT_CHANNELS,
            K * K * self.conv1_channels,
            self.features(),
        )
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub wf: usize,
    pub bf: usize,
    pub total: usize,
}

/// Per-sample activation buffers, reusable across calls.
#[derive(Debug, Clone)]
pub struct Workspace<F> {
    a1: Vec<F>,
    p1: Vec<F>,
    arg1: Vec<u32>,
    a2: Vec<F>,
    p2: Vec<F>,
    arg2: Vec<u32>,
    d_p1: Vec<F>,
    d_a1: Vec<F>,
    d_a2: Vec<F>,
}

impl<F: Scalar> Workspace<F> {
    pub fn new(arch: &Architecture) -> Self {
        let s = arch.input_size;
        let (h1, h2) = (arch.pooled1(), arch.pooled2());
        let (c1, c2) = (arch.conv1_channels, arch.conv2_channels);
        Self {
            a1: vec![F::zero(); s * s * c1],
            p1: vec![F::zero(); h1 * h1 * c1],
            arg1: vec![0; h1 * h1 * c1],
            a2: vec![F::zero(); h1 * h1 * c2],
            p2: vec![F::zero(); h2 * h2 * c2],
            arg2: vec![0; h2 * h2 * c2],
            d_p1: vec![F::zero(); h1 * h1 * c1],
            d_a1: vec![F::zero(); s * s * c1],
            d_a2: vec![F::zero(); h1 * h1 * c2],
        }
    }
}

/// Same-padded 3x3 convolution followed by ReLU.
fn conv3x3_relu<F: Scalar>(
    input: &[F],
    size: usize,
    cin: usize,
    weights: &[F],
    bias: &[F],
    out: &mut [F],
) {
    let cout = bias.len();
    for y in 0..size {
        for x in 0..size {
            let o = &mut out[(y * size + x) * cout..(y * size + x + 1) * cout];
            o.copy_from_slice(bias);
            for ky in 0..K {
                let iy = y + ky;
                if iy < 1 || iy > size {
                    continue;
                }
                let iy = iy - 1;
                for kx in 0..K {
                    let ix = x + kx;
                    if ix < 1 || ix > size {
                        continue;
                    }
                    let ix = ix - 1;
                    let px = &input[(iy * size + ix) * cin..(iy * size + ix + 1) * cin];
                    let wk = &weights[(ky * K + kx) * cin * cout..(ky * K + kx + 1) * cin * cout];
                    for (ci, &v) in px.iter().enumerate() {
                        if v == F::zero() {
                            continue;
                        }
                        let wrow = &wk[ci * cout..(ci + 1) * cout];
                        for (acc, &w) in o.iter_mut().zip(wrow) {
                            *acc += v * w;
                        }
                    }
                }
            }
            for v in o.iter_mut() {
                if *v < F::zero() {
                    *v = F::zero();
                }
            }
        }
    }
}

/// 2x2 stride-2 max-pool (floor). Records the flat source index of each max;
/// the first maximum in scan order wins ties.
fn maxpool2<F: Scalar>(input: &[F], size: usize, ch: usize, out: &mut [F], arg: &mut [u32]) {
    let half = size / 2;
    for y in 0..half {
        for x in 0..half {
            for c in 0..ch {
                let mut best = F::neg_infinity();
                let mut best_i = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = ((2 * y + dy) * size + 2 * x + dx) * ch + c;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                let o = (y * half + x) * ch + c;
                out[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
}

/// Forward pass; returns the logit and leaves activations in `ws`.
pub fn forward<F: Scalar>(arch: &Architecture, params: &[F], input: &[F], ws: &mut Workspace<F>) -> F {
    debug_assert_eq!(input.len(), arch.input_len());
    let l = arch.layout();
    let s = arch.input_size;
    let (h1, h2) = (arch.pooled1(), arch.pooled2());
    let (c1, c2) = (arch.conv1_channels, arch.conv2_channels);

    conv3x3_relu(input, s, INPUT_CHANNELS, &params[l.w1..l.b1], &params[l.b1..l.w2], &mut ws.a1);
    maxpool2(&ws.a1, s, c1, &mut ws.p1, &mut ws.arg1);
    conv3x3_relu(&ws.p1, h1, c1, &params[l.w2..l.b2], &params[l.b2..l.wf], &mut ws.a2);
    maxpool2(&ws.a2, h1, c2, &mut ws.p2, &mut ws.arg2);
    debug_assert_eq!(ws.p2.len(), h2 * h2 * c2);

    let mut logit = params[l.bf];
    for (&f, &w) in ws.p2.iter().zip(&params[l.wf..l.bf]) {
        logit += f * w;
    }
    logit
}

/// Backward pass for the most recent `forward` on `input`. Adds
/// `d_logit * dlogit/dθ` into `grad`.
pub fn backward<F: Scalar>(
    arch: &Architecture,
    params: &[F],
    input: &[F],
    ws: &mut Workspace<F>,
    d_logit: F,
    grad: &mut [F],
) {
    let l = arch.layout();
    let s = arch.input_size;
    let h1 = arch.pooled1();
    let (c0, c1, c2) = (INPUT_CHANNELS, arch.conv1_channels, arch.conv2_channels);

    // Dense layer.
    grad[l.bf] += d_logit;
    for (g, &f) in grad[l.wf..l.bf].iter_mut().zip(&ws.p2) {
        *g += d_logit * f;
    }

    // Through pool 2 and ReLU 2 (pooled maxima of ReLU outputs are >= 0; a
    // zero maximum means the unit was inactive).
    ws.d_a2.iter_mut().for_each(|v| *v = F::zero());
    for (k, &src) in ws.arg2.iter().enumerate() {
        if ws.p2[k] > F::zero() {
            ws.d_a2[src as usize] += d_logit * params[l.wf + k];
        }
    }

    // Conv 2: weight/bias grads and grad w.r.t. pooled conv-1 output.
    ws.d_p1.iter_mut().for_each(|v| *v = F::zero());
    conv3x3_backward(
        &ws.p1,
        h1,
        c1,
        c2,
        &params[l.w2..l.b2],
        &ws.d_a2,
        &mut grad[l.w2..l.wf],
        Some(&mut ws.d_p1),
    );

    // Through pool 1 and ReLU 1.
    ws.d_a1.iter_mut().for_each(|v| *v = F::zero());
    for (k, &src) in ws.arg1.iter().enumerate() {
        if ws.p1[k] > F::zero() {
            ws.d_a1[src as usize] += ws.d_p1[k];
        }
    }

    conv3x3_backward(input, s, c0, c1, &params[l.w1..l.b1], &ws.d_a1, &mut grad[l.w1..l.w2], None);
}

/// Gradients of a same-padded 3x3 convolution given the gradient `d_out` at
/// its (post-ReLU, already masked) output. `grad` covers weights then bias.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<F: Scalar>(
    input: &[F],
    size: usize,
    cin: usize,
    cout: usize,
    weights: &[F],
    d_out: &[F],
    grad: &mut [F],
    mut d_input: Option<&mut Vec<F>>,
) {
    let (gw, gb) = grad.split_at_mut(K * K * cin * cout);
    for y in 0..size {
        for x in 0..size {
            let d = &d_out[(y * size + x) * cout..(y * size + x + 1) * cout];
            if d.iter().all(|&v| v == F::zero()) {
                continue;
            }
            for (b, &v) in gb.iter_mut().zip(d) {
                *b += v;
            }
            for ky in 0..K {
                let iy = y + ky;
                if iy < 1 || iy > size {
                    continue;
                }
                let iy = iy - 1;
                for kx in 0..K {
                    let ix = x + kx;
                    if ix < 1 || ix > size {
                        continue;
                    }
                    let ix = ix - 1;
                    let base = (iy * size + ix) * cin;
                    let wofs = (ky * K + kx) * cin * cout;
                    for ci in 0..cin {
                        let v = input[base + ci];
                        let gw_row = &mut gw[wofs + ci * cout..wofs + (ci + 1) * cout];
                        if v != F::zero() {
                            for (g, &dv) in gw_row.iter_mut().zip(d) {
                                *g += v * dv;
                            }
                        }
                        if let Some(di) = d_input.as_deref_mut() {
                            let wrow = &weights[wofs + ci * cout..wofs + (ci + 1) * cout];
                            let mut acc = F::zero();
                            for (&w, &dv) in wrow.iter().zip(d) {
                                acc += w * dv;
                            }
                            di[base + ci] += acc;
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}
