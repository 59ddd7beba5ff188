//! The three trainable layer kinds. Each `backward` accumulates
//! parameter gradients into a same-shaped gradient container and returns
//! the gradient with respect to its input.

use ndarray::{Array1, Array2, Array3};

/// Temporal convolution: weight[out][tap][in] applied over a symmetric
/// zero-padded window, so the output has the same number of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dParams {
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

impl Conv1dParams {
    pub fn zeros(out_dim: usize, kernel: usize, in_dim: usize) -> Self {
        Self {
            weight: Array3::zeros((out_dim, kernel, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Pre-activation output, T x out_dim.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let (t_len, in_dim) = x.dim();
        debug_assert_eq!(in_dim, self.in_dim());
        let pad = self.kernel() / 2;
        let mut out = Array2::zeros((t_len, self.out_dim()));
        for t in 0..t_len {
            for o in 0..self.out_dim() {
                let mut acc = self.bias[o];
                for tap in 0..self.kernel() {
                    let src = t as i64 + tap as i64 - pad as i64;
                    if src < 0 || src >= t_len as i64 {
                        continue;
                    }
                    let src = src as usize;
                    for i in 0..in_dim {
                        acc += self.weight[[o, tap, i]] * x[[src, i]];
                    }
                }
                out[[t, o]] = acc;
            }
        }
        out
    }

    /// Backward from the pre-activation gradient; returns dx.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        grad_pre: &Array2<f64>,
        grads: &mut Conv1dParams,
    ) -> Array2<f64> {
        let (t_len, in_dim) = x.dim();
        let pad = self.kernel() / 2;
        let mut dx = Array2::zeros((t_len, in_dim));
        for t in 0..t_len {
            for o in 0..self.out_dim() {
                let g = grad_pre[[t, o]];
                if g == 0.0 {
                    continue;
                }
                grads.bias[o] += g;
                for tap in 0..self.kernel() {
                    let src = t as i64 + tap as i64 - pad as i64;
                    if src < 0 || src >= t_len as i64 {
                        continue;
                    }
                    let src = src as usize;
                    for i in 0..in_dim {
                        grads.weight[[o, tap, i]] += g * x[[src, i]];
                        dx[[src, i]] += g * self.weight[[o, tap, i]];
                    }
                }
            }
        }
        dx
    }
}

/// Unidirectional GRU with reset gate r, update gate z, and candidate
/// state n:
///
/// ```text
/// r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
/// z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
/// n_t = tanh(W_n x_t + U_n (r_t * h_{t-1}) + b_n)
/// h_t = (1 - z_t) * n_t + z_t * h_{t-1}
/// ```
///
/// The initial state is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_reset: Array2<f64>,
    pub u_reset: Array2<f64>,
    pub b_reset: Array1<f64>,
    pub w_update: Array2<f64>,
    pub u_update: Array2<f64>,
    pub b_update: Array1<f64>,
    pub w_cand: Array2<f64>,
    pub u_cand: Array2<f64>,
    pub b_cand: Array1<f64>,
}

/// Everything the backward pass needs: inputs, hidden states, and gate
/// activations for every timestep.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Array2<f64>,
    pub h: Array2<f64>,
    pub r: Array2<f64>,
    pub z: Array2<f64>,
    pub n: Array2<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl GruParams {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        Self {
            w_reset: Array2::zeros((hidden, in_dim)),
            u_reset: Array2::zeros((hidden, hidden)),
            b_reset: Array1::zeros(hidden),
            w_update: Array2::zeros((hidden, in_dim)),
            u_update: Array2::zeros((hidden, hidden)),
            b_update: Array1::zeros(hidden),
            w_cand: Array2::zeros((hidden, in_dim)),
            u_cand: Array2::zeros((hidden, hidden)),
            b_cand: Array1::zeros(hidden),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_reset.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_reset.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> GruCache {
        let (t_len, _) = x.dim();
        let hidden = self.hidden_dim();
        let mut h = Array2::zeros((t_len, hidden));
        let mut r_all = Array2::zeros((t_len, hidden));
        let mut z_all = Array2::zeros((t_len, hidden));
        let mut n_all = Array2::zeros((t_len, hidden));
        let mut h_prev = Array1::<f64>::zeros(hidden);
        for t in 0..t_len {
            let x_t = x.row(t);
            let r =
                (self.w_reset.dot(&x_t) + self.u_reset.dot(&h_prev) + &self.b_reset).mapv(sigmoid);
            let z = (self.w_update.dot(&x_t) + self.u_update.dot(&h_prev) + &self.b_update)
                .mapv(sigmoid);
            let gated = &r * &h_prev;
            let n =
                (self.w_cand.dot(&x_t) + self.u_cand.dot(&gated) + &self.b_cand).mapv(f64::tanh);
            let h_t: Array1<f64> = (1.0 - &z) * &n + &z * &h_prev;
            r_all.row_mut(t).assign(&r);
            z_all.row_mut(t).assign(&z);
            n_all.row_mut(t).assign(&n);
            h.row_mut(t).assign(&h_t);
            h_prev = h_t;
        }
        GruCache {
            x: x.clone(),
            h,
            r: r_all,
            z: z_all,
            n: n_all,
        }
    }

    /// Full backpropagation through time; returns dx.
    pub fn backward(
        &self,
        cache: &GruCache,
        grad_h: &Array2<f64>,
        grads: &mut GruParams,
    ) -> Array2<f64> {
        let (t_len, in_dim) = cache.x.dim();
        let hidden = self.hidden_dim();
        let mut dx = Array2::zeros((t_len, in_dim));
        let mut dh_next = Array1::<f64>::zeros(hidden);
        for t in (0..t_len).rev() {
            let h_prev = if t > 0 {
                cache.h.row(t - 1).to_owned()
            } else {
                Array1::zeros(hidden)
            };
            let r = cache.r.row(t);
            let z = cache.z.row(t);
            let n = cache.n.row(t);

            let dh = &grad_h.row(t) + &dh_next;
            // h = (1 - z) * n + z * h_prev
            let dz = &dh * (&h_prev - &n);
            let dn = &dh * &(1.0 - &z);
            let mut dh_prev = &dh * &z;

            // n = tanh(a_n), a_n = W_n x + U_n (r * h_prev) + b_n
            let da_n = &dn * &n.mapv(|v| 1.0 - v * v);
            let dgated = self.u_cand.t().dot(&da_n);
            let dr = &dgated * &h_prev;
            dh_prev = dh_prev + &dgated * &r;

            let da_z = &dz * &z.mapv(|v| v * (1.0 - v));
            let da_r = &dr * &r.mapv(|v| v * (1.0 - v));

            let x_t = cache.x.row(t);
            let gated = &r * &h_prev;
            accumulate_outer(&mut grads.w_cand, &da_n, &x_t.to_owned());
            accumulate_outer(&mut grads.u_cand, &da_n, &gated);
            grads.b_cand += &da_n;
            accumulate_outer(&mut grads.w_update, &da_z, &x_t.to_owned());
            accumulate_outer(&mut grads.u_update, &da_z, &h_prev);
            grads.b_update += &da_z;
            accumulate_outer(&mut grads.w_reset, &da_r, &x_t.to_owned());
            accumulate_outer(&mut grads.u_reset, &da_r, &h_prev);
            grads.b_reset += &da_r;

            let dx_t = self.w_cand.t().dot(&da_n)
                + self.w_update.t().dot(&da_z)
                + self.w_reset.t().dot(&da_r);
            dx.row_mut(t).assign(&dx_t);

            dh_prev = dh_prev + self.u_update.t().dot(&da_z) + self.u_reset.t().dot(&da_r);
            dh_next = dh_prev;
        }
        dx
    }
}

fn accumulate_outer(acc: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            acc[[i, j]] += ai * bj;
        }
    }
}

/// Dense layer: y = x W^T + b with weight[out][in].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    // Hand-rolled loops keep the summation order independent of the
    // frame count, so zero-padded rows change nothing bitwise.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let (t_len, in_dim) = x.dim();
        let mut out = Array2::zeros((t_len, self.out_dim()));
        for t in 0..t_len {
            for o in 0..self.out_dim() {
                let mut acc = self.bias[o];
                for i in 0..in_dim {
                    acc += x[[t, i]] * self.weight[[o, i]];
                }
                out[[t, o]] = acc;
            }
        }
        out
    }

    /// Returns dx.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        grad_out: &Array2<f64>,
        grads: &mut LinearParams,
    ) -> Array2<f64> {
        let (t_len, in_dim) = x.dim();
        let mut dx = Array2::zeros((t_len, in_dim));
        for t in 0..t_len {
            for o in 0..self.out_dim() {
                let g = grad_out[[t, o]];
                if g == 0.0 {
                    continue;
                }
                grads.bias[o] += g;
                for i in 0..in_dim {
                    grads.weight[[o, i]] += g * x[[t, i]];
                    dx[[t, i]] += g * self.weight[[o, i]];
                }
            }
        }
        dx
    }
}
