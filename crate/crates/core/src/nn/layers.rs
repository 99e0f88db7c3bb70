use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Grads, ParamId, ParamStore, Tensor};

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
    /// Uniform in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`.
    FanInUniform,
}

fn init_tensor<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, init: Init, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match init {
        Init::Normal(std) => {
            let d = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Init::FanInUniform => {
            let bound = (6.0 / fan_in.max(1) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        }
    };
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

/// Affine map `y = W x + b`, `W` stored row-major as `[out, in]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            init_tensor(&[out_dim, in_dim], in_dim, init, rng),
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let w = &p.get(self.w).data;
        let b = &p.get(self.b).data;
        (0..self.out_dim)
            .map(|o| {
                let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, p: &ParamStore, x: &[f64], grad_out: &[f64], grads: &mut Grads) -> Vec<f64> {
        {
            let gw = grads.get_mut(self.w);
            for (o, &go) in grad_out.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += go * xi;
                }
            }
        }
        for (g, &go) in grads.get_mut(self.b).iter_mut().zip(grad_out) {
            *g += go;
        }
        let w = &p.get(self.w).data;
        let mut gx = vec![0.0; self.in_dim];
        for (o, &go) in grad_out.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            for (g, &wi) in gx.iter_mut().zip(row) {
                *g += go * wi;
            }
        }
        gx
    }

    /// Parameter-only backward, when the input gradient is not needed.
    pub fn backward_params(&self, x: &[f64], grad_out: &[f64], grads: &mut Grads) {
        let gw = grads.get_mut(self.w);
        for (o, &go) in grad_out.iter().enumerate() {
            let row = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            for (g, &xi) in row.iter_mut().zip(x) {
                *g += go * xi;
            }
        }
        for (g, &go) in grads.get_mut(self.b).iter_mut().zip(grad_out) {
            *g += go;
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_c: usize,
    pub out_c: usize,
}

const K: usize = 3;

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, rng: &mut R) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            init_tensor(&[out_c, in_c, K, K], in_c * K * K, Init::FanInUniform, rng),
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_c]));
        Self { w, b, in_c, out_c }
    }

    /// Valid output rows/cols for a kernel offset `d` in `-1..=1` over extent `n`.
    #[inline]
    fn range(d: isize, n: usize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (n as isize - d).min(n as isize) as usize;
        (lo, hi)
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let wt = &p.get(self.w).data;
        let bias = &p.get(self.b).data;
        let hw = h * w;
        let mut out = vec![0.0; self.out_c * hw];
        for o in 0..self.out_c {
            let dst = &mut out[o * hw..(o + 1) * hw];
            dst.fill(bias[o]);
            for i in 0..self.in_c {
                let src = &x[i * hw..(i + 1) * hw];
                for ky in 0..K {
                    let dy = ky as isize - 1;
                    let (y0, y1) = Self::range(dy, h);
                    for kx in 0..K {
                        let dx = kx as isize - 1;
                        let (x0, x1) = Self::range(dx, w);
                        let k = wt[((o * self.in_c + i) * K + ky) * K + kx];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let drow = &mut dst[y * w + x0..y * w + x1];
                            let srow = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                            for (d, s) in drow.iter_mut().zip(srow) {
                                *d += k * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &ParamStore,
        x: &[f64],
        h: usize,
        w: usize,
        grad_out: &[f64],
        grads: &mut Grads,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let hw = h * w;
        {
            let gb = grads.get_mut(self.b);
            for o in 0..self.out_c {
                gb[o] += grad_out[o * hw..(o + 1) * hw].iter().sum::<f64>();
            }
        }
        let wt = &p.get(self.w).data;
        let mut gx = if need_input_grad {
            vec![0.0; self.in_c * hw]
        } else {
            Vec::new()
        };
        let gw = grads.get_mut(self.w);
        for o in 0..self.out_c {
            let go = &grad_out[o * hw..(o + 1) * hw];
            for i in 0..self.in_c {
                let src = &x[i * hw..(i + 1) * hw];
                for ky in 0..K {
                    let dy = ky as isize - 1;
                    let (y0, y1) = Self::range(dy, h);
                    for kx in 0..K {
                        let dx = kx as isize - 1;
                        let (x0, x1) = Self::range(dx, w);
                        let widx = ((o * self.in_c + i) * K + ky) * K + kx;
                        let k = wt[widx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let sx1 = (x1 as isize + dx) as usize;
                            let grow = &go[y * w + x0..y * w + x1];
                            let srow = &src[sy * w + sx0..sy * w + sx1];
                            acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                            if need_input_grad {
                                let xrow = &mut gx[i * hw + sy * w + sx0..i * hw + sy * w + sx1];
                                for (g, &gv) in xrow.iter_mut().zip(grow) {
                                    *g += k * gv;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
        need_input_grad.then_some(gx)
    }
}

/// 2x2 max pooling with stride 2 (odd trailing row/column dropped).
/// Returns the pooled map and the flat source index of each maximum.
pub fn maxpool2(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(grad_out: &[f64], arg: &[usize], input_len: usize) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (&go, &i) in grad_out.iter().zip(arg) {
        g[i] += go;
    }
    g
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the gradient wherever the forward ReLU output was zero.
pub fn relu_backward_inplace(grad: &mut [f64], output: &[f64]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Lookup table `[vocab, dim]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut R) -> Self {
        let table = store.add(
            format!("{name}.table"),
            init_tensor(&[vocab, dim], 1, Init::Normal(0.1), rng),
        );
        Self { table, vocab, dim }
    }

    pub fn forward<'a>(&self, p: &'a ParamStore, index: usize) -> &'a [f64] {
        &p.get(self.table).data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn backward(&self, index: usize, grad_out: &[f64], grads: &mut Grads) {
        let g = &mut grads.get_mut(self.table)[index * self.dim..(index + 1) * self.dim];
        for (a, b) in g.iter_mut().zip(grad_out) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn fd_check<F: Fn(&ParamStore) -> f64>(store: &mut ParamStore, grads: &Grads, f: F) {
        let h = 1e-5;
        for t in 0..store.len() {
            let id = ParamId(t);
            for j in 0..store.get(id).len() {
                let orig = store.get(id).data[j];
                store.get_mut(id).data[j] = orig + h;
                let up = f(store);
                store.get_mut(id).data[j] = orig - h;
                let down = f(store);
                store.get_mut(id).data[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id)[j];
                let scale = numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (numeric - analytic).abs() / scale < 1e-4,
                    "param {} [{j}]: numeric {numeric} analytic {analytic}",
                    store.names()[t]
                );
            }
        }
    }

    #[test]
    fn dense_gradients() {
        let mut r = rng::stream(1, "t", 0);
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 4, 3, Init::Normal(0.5), &mut r);
        let x = vec![0.3, -1.2, 0.7, 2.0];
        let c = vec![1.0, -2.0, 0.5];
        let loss = |s: &ParamStore| d.forward(s, &x).iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let mut g = store.zero_grads();
        let gx = d.backward(&store, &x, &c, &mut g);
        fd_check(&mut store, &g, loss);
        // Input gradient is W^T c.
        let w = &store.get(d.w).data;
        for i in 0..4 {
            let expect: f64 = (0..3).map(|o| w[o * 4 + i] * c[o]).sum();
            assert!((gx[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_pool_gradients() {
        let mut r = rng::stream(2, "t", 0);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 2, 3, &mut r);
        let (h, w) = (5, 6);
        let x: Vec<f64> = (0..2 * h * w).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let coef: Vec<f64> = (0..3 * (h / 2) * (w / 2))
            .map(|i| ((i * 13 % 7) as f64 - 3.0) / 3.0)
            .collect();
        let loss = |s: &ParamStore, x: &[f64]| {
            let mut y = conv.forward(s, x, h, w);
            relu_inplace(&mut y);
            let (p, _) = maxpool2(&y, 3, h, w);
            p.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut y = conv.forward(&store, &x, h, w);
        relu_inplace(&mut y);
        let (_, arg) = maxpool2(&y, 3, h, w);
        let mut gy = maxpool2_backward(&coef, &arg, y.len());
        relu_backward_inplace(&mut gy, &y);
        let mut g = store.zero_grads();
        let gx = conv.backward(&store, &x, h, w, &gy, &mut g, true).unwrap();
        fd_check(&mut store, &g, |s| loss(s, &x));
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += 1e-5;
            let mut xm = x.clone();
            xm[j] -= 1e-5;
            let numeric = (loss(&store, &xp) - loss(&store, &xm)) / 2e-5;
            assert!((numeric - gx[j]).abs() < 1e-4, "input {j}: {numeric} vs {}", gx[j]);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(-800.0) >= 0.0);
    }
}
