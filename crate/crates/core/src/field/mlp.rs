//! Fully connected decoder with ReLU hidden layers and a linear output.

use crate::scalar::Real;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    /// Layer widths including input and output.
    pub sizes: Vec<usize>,
    /// Per layer: weights stored input-major (`w[i * out + o]`), then biases.
    pub params: Vec<T>,
}

/// Reusable buffers for [`Mlp::backward`].
#[derive(Clone, Debug, Default)]
pub struct MlpScratch<T> {
    a: Vec<T>,
    b: Vec<T>,
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    let mut tail = T::zero();
    for k in chunks * 8..n {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

impl<T: Real> Mlp<T> {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(
            (2..=16).contains(&sizes.len()),
            "an MLP needs input and output widths and at most 14 hidden layers"
        );
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            sizes: sizes.to_vec(),
            params: vec![T::zero(); n],
        }
    }

    /// Uniform fan-in initialization, `U(-1/√in, 1/√in)` for weights and biases.
    pub fn init_uniform<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let mut mlp = Self::zeros(sizes);
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut mlp.params[off..off + w[0] * w[1] + w[1]] {
                *p = T::lit(rng.gen_range(-bound..bound));
            }
            off += w[0] * w[1] + w[1];
        }
        mlp
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Length of the activation record written by [`forward`](Self::forward).
    pub fn activations_len(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// `(weight offset, bias offset)` of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    /// Index of the last layer's bias block.
    pub fn output_bias_offset(&self) -> usize {
        self.layer_offsets(self.num_layers() - 1).1
    }

    /// Runs the network. `acts` receives the input, every post-ReLU hidden
    /// layer and the linear output, concatenated. Returns the output slice.
    pub fn forward<'a>(&self, input: &[T], acts: &'a mut [T]) -> &'a [T] {
        acts[..self.sizes[0]].copy_from_slice(&input[..self.sizes[0]]);
        self.forward_in_place(acts)
    }

    /// Like [`forward`](Self::forward) with the input already stored at the
    /// head of `acts`.
    pub fn forward_in_place<'a>(&self, acts: &'a mut [T]) -> &'a [T] {
        let n_layers = self.num_layers();
        let mut in_off = 0;
        let mut poff = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let out_off = in_off + n_in;
            let (head, tail) = acts.split_at_mut(out_off);
            let x = &head[in_off..];
            let y = &mut tail[..n_out];
            let w = &self.params[poff..poff + n_in * n_out];
            let b = &self.params[poff + n_in * n_out..poff + n_in * n_out + n_out];
            y.copy_from_slice(b);
            for (i, &xi) in x.iter().enumerate() {
                if xi == T::zero() {
                    continue;
                }
                let row = &w[i * n_out..(i + 1) * n_out];
                for (yo, &wo) in y.iter_mut().zip(row) {
                    *yo += xi * wo;
                }
            }
            if l + 1 < n_layers {
                for v in y.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            in_off = out_off;
            poff += n_in * n_out + n_out;
        }
        &acts[in_off..in_off + self.output_len()]
    }

    /// Convenience forward pass allocating its own buffers.
    pub fn eval(&self, input: &[T]) -> Vec<T> {
        let mut acts = vec![T::zero(); self.activations_len()];
        self.forward(input, &mut acts).to_vec()
    }

    /// Accumulates parameter gradients into `grad` (same layout as
    /// `params`) given the output gradient. Writes the input gradient into
    /// `dinput` when requested.
    pub fn backward(
        &self,
        acts: &[T],
        dout: &[T],
        grad: &mut [T],
        dinput: Option<&mut [T]>,
        scratch: &mut MlpScratch<T>,
    ) {
        let n_layers = self.num_layers();
        let max_w = *self.sizes.iter().max().unwrap();
        scratch.a.resize(max_w, T::zero());
        scratch.b.resize(max_w, T::zero());
        let (mut delta, mut next) = (&mut scratch.a, &mut scratch.b);
        delta[..self.output_len()].copy_from_slice(dout);

        let mut act_offsets = [0usize; 16];
        let mut off = 0;
        for (o, &s) in act_offsets.iter_mut().zip(&self.sizes) {
            *o = off;
            off += s;
        }
        let want_input = dinput.is_some();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (woff, boff) = self.layer_offsets(l);
            let x = &acts[act_offsets[l]..act_offsets[l] + n_in];
            let d = &delta[..n_out];
            for (g, &dv) in grad[boff..boff + n_out].iter_mut().zip(d) {
                *g += dv;
            }
            let gw = &mut grad[woff..woff + n_in * n_out];
            for (i, &xi) in x.iter().enumerate() {
                if xi == T::zero() {
                    continue;
                }
                for (g, &dv) in gw[i * n_out..(i + 1) * n_out].iter_mut().zip(d) {
                    *g += xi * dv;
                }
            }
            if l == 0 && !want_input {
                break;
            }
            let w = &self.params[woff..woff + n_in * n_out];
            for i in 0..n_in {
                // ReLU gate: a zero post-activation blocks the gradient.
                next[i] = if l > 0 && x[i] == T::zero() {
                    T::zero()
                } else {
                    dot(&w[i * n_out..(i + 1) * n_out], d)
                };
            }
            std::mem::swap(&mut delta, &mut next);
        }
        if let Some(di) = dinput {
            di[..self.sizes[0]].copy_from_slice(&delta[..self.sizes[0]]);
        }
    }
}
