//! Layers with hand-written backward passes.
//!
//! A [`Sequential`] stack runs on `ndarray` tensors. The cached forward pass
//! keeps what each layer needs for its gradient; `backward` accumulates
//! parameter gradients into a zero-initialized stack of identical shape.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix2, Ix4, IxDyn};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::parallel;
use crate::seeding::Rng;

fn he_normal(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive fan-in");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

/// Fully connected layer, `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            weight: he_normal(inputs, outputs, inputs, rng),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates into `grad` and returns `dL/dx` when `want_input` is set.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Dense, want_input: bool) -> Option<Array2<f64>> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        want_input.then(|| dy.dot(&self.weight.t()))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1, via im2col.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    /// `out_channels x (in_channels * 9)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub in_channels: usize,
}

const K: usize = 3;

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut Rng) -> Self {
        let fan_in = in_channels * K * K;
        Self {
            weight: he_normal(out_channels, fan_in, fan_in, rng),
            bias: Array1::zeros(out_channels),
            in_channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    fn im2col(x: &Array4<f64>) -> Array2<f64> {
        let (n, c, h, w) = x.dim();
        let row = c * K * K;
        let mut cols = vec![0.0; n * h * w * row];
        parallel::for_each_chunk_mut(&mut cols, h * w * row, |s, chunk| {
            for y in 0..h {
                for xx in 0..w {
                    let base = (y * w + xx) * row;
                    for ch in 0..c {
                        for ky in 0..K {
                            for kx in 0..K {
                                let sy = y as i64 + ky as i64 - 1;
                                let sx = xx as i64 + kx as i64 - 1;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    chunk[base + ch * K * K + ky * K + kx] = x[[s, ch, sy as usize, sx as usize]];
                                }
                            }
                        }
                    }
                }
            }
        });
        Array2::from_shape_vec((n * h * w, row), cols).expect("im2col shape")
    }

    fn col2im(dcols: &Array2<f64>, shape: (usize, usize, usize, usize)) -> Array4<f64> {
        let (n, c, h, w) = shape;
        let row = c * K * K;
        let mut out = vec![0.0; n * c * h * w];
        let src = dcols.as_standard_layout();
        let src = src.as_slice().expect("contiguous");
        parallel::for_each_chunk_mut(&mut out, c * h * w, |s, img| {
            for y in 0..h {
                for xx in 0..w {
                    let base = ((s * h + y) * w + xx) * row;
                    for ch in 0..c {
                        for ky in 0..K {
                            for kx in 0..K {
                                let sy = y as i64 + ky as i64 - 1;
                                let sx = xx as i64 + kx as i64 - 1;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    img[(ch * h + sy as usize) * w + sx as usize] += src[base + ch * K * K + ky * K + kx];
                                }
                            }
                        }
                    }
                }
            }
        });
        Array4::from_shape_vec((n, c, h, w), out).expect("col2im shape")
    }

    fn forward_cols(&self, x: &Array4<f64>) -> (Array4<f64>, Array2<f64>) {
        let (n, _, h, w) = x.dim();
        let cols = Self::im2col(x);
        let out = cols.dot(&self.weight.t()) + &self.bias;
        let out = out
            .into_shape_with_order((n, h, w, self.out_channels()))
            .expect("conv output shape")
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .into_owned();
        (out, cols)
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        self.forward_cols(x).0
    }

    fn backward(
        &self,
        cols: &Array2<f64>,
        in_shape: (usize, usize, usize, usize),
        dy: &Array4<f64>,
        grad: &mut Conv2d,
        want_input: bool,
    ) -> Option<Array4<f64>> {
        let (n, _, h, w) = in_shape;
        let dmat = dy
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n * h * w, self.out_channels()))
            .expect("conv grad shape");
        grad.weight += &dmat.t().dot(cols);
        grad.bias += &dmat.sum_axis(Axis(0));
        want_input.then(|| Self::col2im(&dmat.dot(&self.weight), in_shape))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            in_channels: self.in_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(Dense),
    Conv(Conv2d),
    Relu,
    /// 2x2 max pooling, stride 2.
    MaxPool2,
    /// `k x k` average pooling, stride `k`.
    AvgPool(usize),
    Flatten,
}

#[derive(Debug, Clone)]
pub enum Cache {
    Dense(Array2<f64>),
    Conv { cols: Array2<f64>, in_shape: (usize, usize, usize, usize) },
    Relu(ArrayD<f64>),
    MaxPool { argmax: Vec<usize>, in_shape: Vec<usize> },
    AvgPool(Vec<usize>),
    Flatten(Vec<usize>),
}

fn to2(x: ArrayD<f64>) -> Array2<f64> {
    x.into_dimensionality::<Ix2>().expect("rank-2 activation")
}

fn to4(x: ArrayD<f64>) -> Array4<f64> {
    x.into_dimensionality::<Ix4>().expect("rank-4 activation")
}

fn max_pool(x: &Array4<f64>) -> (Array4<f64>, Vec<usize>) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::zeros((n, c, oh, ow));
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for s in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = (2 * y, 2 * xx);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        if x[[s, ch, 2 * y + dy, 2 * xx + dx]] > x[[s, ch, best.0, best.1]] {
                            best = (2 * y + dy, 2 * xx + dx);
                        }
                    }
                    out[[s, ch, y, xx]] = x[[s, ch, best.0, best.1]];
                    argmax.push(((s * c + ch) * h + best.0) * w + best.1);
                }
            }
        }
    }
    (out, argmax)
}

fn avg_pool(x: &Array4<f64>, k: usize) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f64;
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * c * oh * ow];
    for (plane, dst) in src.chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        for y in 0..oh * k {
            let row = &plane[y * w..y * w + ow * k];
            let dst_row = &mut dst[(y / k) * ow..(y / k + 1) * ow];
            for (o, cell) in dst_row.iter_mut().zip(row.chunks_exact(k)) {
                *o += cell.iter().sum::<f64>();
            }
        }
        dst.iter_mut().for_each(|v| *v *= scale);
    }
    Array4::from_shape_vec((n, c, oh, ow), out).expect("pool shape")
}

fn avg_unpool(dy: &Array4<f64>, in_shape: &[usize], k: usize) -> Array4<f64> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
    let scale = 1.0 / (k * k) as f64;
    let dy = dy.as_standard_layout();
    let src = dy.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * c * h * w];
    for (plane, dst) in src.chunks_exact(oh * ow).zip(out.chunks_exact_mut(h * w)) {
        for y in 0..oh * k {
            let g_row = &plane[(y / k) * ow..(y / k + 1) * ow];
            let row = &mut dst[y * w..y * w + ow * k];
            for (cell, &g) in row.chunks_exact_mut(k).zip(g_row) {
                cell.iter_mut().for_each(|v| *v = g * scale);
            }
        }
    }
    Array4::from_shape_vec((n, c, h, w), out).expect("unpool shape")
}

impl Layer {
    fn forward(&self, x: ArrayD<f64>, keep: bool) -> (ArrayD<f64>, Option<Cache>) {
        match self {
            Layer::Dense(d) => {
                let x = to2(x);
                let y = d.forward(&x).into_dyn();
                (y, keep.then_some(Cache::Dense(x)))
            }
            Layer::Conv(c) => {
                let x = to4(x);
                let in_shape = x.dim();
                if keep {
                    let (y, cols) = c.forward_cols(&x);
                    (y.into_dyn(), Some(Cache::Conv { cols, in_shape }))
                } else {
                    (c.forward(&x).into_dyn(), None)
                }
            }
            Layer::Relu => {
                let y = x.mapv_into(|v| v.max(0.0));
                let cache = keep.then(|| Cache::Relu(y.clone()));
                (y, cache)
            }
            Layer::MaxPool2 => {
                let shape = x.shape().to_vec();
                let (y, argmax) = max_pool(&to4(x));
                (y.into_dyn(), keep.then_some(Cache::MaxPool { argmax, in_shape: shape }))
            }
            Layer::AvgPool(k) => {
                let shape = x.shape().to_vec();
                (avg_pool(&to4(x), *k).into_dyn(), keep.then_some(Cache::AvgPool(shape)))
            }
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                let n = shape[0];
                let rest: usize = shape[1..].iter().product();
                let y = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&[n, rest]))
                    .expect("flatten");
                (y, keep.then_some(Cache::Flatten(shape)))
            }
        }
    }

    fn backward(&self, cache: &Cache, dy: ArrayD<f64>, grad: &mut Layer, want_input: bool) -> Option<ArrayD<f64>> {
        match (self, cache, grad) {
            (Layer::Dense(d), Cache::Dense(x), Layer::Dense(g)) => {
                d.backward(x, &to2(dy), g, want_input).map(|a| a.into_dyn())
            }
            (Layer::Conv(c), Cache::Conv { cols, in_shape }, Layer::Conv(g)) => {
                c.backward(cols, *in_shape, &to4(dy), g, want_input).map(|a| a.into_dyn())
            }
            (Layer::Relu, Cache::Relu(y), _) => {
                let mut dx = dy;
                dx.zip_mut_with(y, |d, &out| {
                    if out <= 0.0 {
                        *d = 0.0
                    }
                });
                Some(dx)
            }
            (Layer::MaxPool2, Cache::MaxPool { argmax, in_shape }, _) => {
                let mut dx = ArrayD::zeros(IxDyn(in_shape));
                let flat = dx.as_slice_mut().expect("contiguous");
                for (&src, &g) in argmax.iter().zip(dy.as_standard_layout().iter()) {
                    flat[src] += g;
                }
                Some(dx)
            }
            (Layer::AvgPool(k), Cache::AvgPool(in_shape), _) => Some(avg_unpool(&to4(dy), in_shape, *k).into_dyn()),
            (Layer::Flatten, Cache::Flatten(shape), _) => Some(
                dy.as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(shape))
                    .expect("unflatten"),
            ),
            _ => unreachable!("cache does not belong to this layer"),
        }
    }

    fn zeros_like(&self) -> Layer {
        match self {
            Layer::Dense(d) => Layer::Dense(d.zeros_like()),
            Layer::Conv(c) => Layer::Conv(c.zeros_like()),
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: ArrayD<f64>) -> ArrayD<f64> {
        self.layers.iter().fold(x, |acc, l| l.forward(acc, false).0)
    }

    pub fn forward_cached(&self, x: ArrayD<f64>) -> (ArrayD<f64>, Vec<Cache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut acc = x;
        for l in &self.layers {
            let (y, c) = l.forward(acc, true);
            caches.push(c.expect("cached forward"));
            acc = y;
        }
        (acc, caches)
    }

    /// Backpropagates `dy` through the stack. The gradient with respect to
    /// the stack's input is not needed and never computed.
    pub fn backward(&self, caches: &[Cache], dy: ArrayD<f64>, grad: &mut Sequential) {
        let mut d = dy;
        for (i, ((layer, cache), g)) in self
            .layers
            .iter()
            .zip(caches)
            .zip(grad.layers.iter_mut())
            .enumerate()
            .rev()
        {
            match layer.backward(cache, d, g, i > 0) {
                Some(next) => d = next,
                None => return,
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Dense(d) => {
                    out.push(d.weight.as_slice().expect("contiguous"));
                    out.push(d.bias.as_slice().expect("contiguous"));
                }
                Layer::Conv(c) => {
                    out.push(c.weight.as_slice().expect("contiguous"));
                    out.push(c.bias.as_slice().expect("contiguous"));
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => {
                    out.push(d.weight.as_slice_mut().expect("contiguous"));
                    out.push(d.bias.as_slice_mut().expect("contiguous"));
                }
                Layer::Conv(c) => {
                    out.push(c.weight.as_slice_mut().expect("contiguous"));
                    out.push(c.bias.as_slice_mut().expect("contiguous"));
                }
                _ => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::derive_rng;
    use ndarray::Array;

    /// Scalar objective `sum(out * probe)` and its gradient by central differences.
    fn check_layer_stack(net: Sequential, x: ArrayD<f64>) {
        let (out, caches) = net.forward_cached(x.clone());
        let mut rng = derive_rng(99, &[]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let probe = Array::from_shape_simple_fn(out.raw_dim(), || normal.sample(&mut rng));
        let mut grad = net.zeros_like();
        net.backward(&caches, probe.clone(), &mut grad);
        let analytic: Vec<f64> = grad.param_slices().concat();

        let objective = |n: &Sequential| (n.forward(x.clone()) * &probe).sum();
        let mut numeric = Vec::new();
        let mut probe_net = net.clone();
        let total: usize = net.param_slices().iter().map(|s| s.len()).sum();
        for k in 0..total {
            let h = 1e-6;
            let orig = probe_net.param_slices()[..].concat()[k];
            let set = |n: &mut Sequential, v: f64| {
                let mut idx = k;
                for s in n.param_slices_mut() {
                    if idx < s.len() {
                        s[idx] = v;
                        return;
                    }
                    idx -= s.len();
                }
            };
            set(&mut probe_net, orig + h);
            let up = objective(&probe_net);
            set(&mut probe_net, orig - h);
            let down = objective(&probe_net);
            set(&mut probe_net, orig);
            numeric.push((up - down) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        assert!(diff / norm < 1e-6, "relative gradient error {}", diff / norm);
    }

    #[test]
    fn dense_relu_gradients() {
        let mut rng = derive_rng(1, &[]);
        let net = Sequential::new(vec![
            Layer::Dense(Dense::new(5, 7, &mut rng)),
            Layer::Relu,
            Layer::Dense(Dense::new(7, 3, &mut rng)),
        ]);
        let x = Array::from_shape_fn((4, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin()).into_dyn();
        check_layer_stack(net, x);
    }

    #[test]
    fn conv_pool_gradients() {
        let mut rng = derive_rng(2, &[]);
        let net = Sequential::new(vec![
            Layer::AvgPool(2),
            Layer::Conv(Conv2d::new(2, 3, &mut rng)),
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Flatten,
            Layer::Dense(Dense::new(3 * 2 * 2, 2, &mut rng)),
        ]);
        let x = Array::from_shape_fn((2, 2, 8, 8), |(a, b, c, d)| ((a * 97 + b * 31 + c * 7 + d) as f64 * 0.71).cos()).into_dyn();
        check_layer_stack(net, x);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = derive_rng(3, &[]);
        let conv = Conv2d::new(2, 2, &mut rng);
        let x = Array::from_shape_fn((1, 2, 4, 4), |(_, c, y, xx)| (c * 16 + y * 4 + xx) as f64 / 10.0);
        let y = conv.forward(&x);
        for o in 0..2 {
            for (py, px) in [(0usize, 0usize), (1, 2), (3, 3)] {
                let mut acc = conv.bias[o];
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = py as i64 + ky as i64 - 1;
                            let sx = px as i64 + kx as i64 - 1;
                            if (0..4).contains(&sy) && (0..4).contains(&sx) {
                                acc += conv.weight[[o, c * 9 + ky * 3 + kx]] * x[[0, c, sy as usize, sx as usize]];
                            }
                        }
                    }
                }
                assert!((y[[0, o, py, px]] - acc).abs() < 1e-12);
            }
        }
    }
}
