//! Per-axis feature networks with batched forward-mode input derivatives and
//! layer-level reverse mode for parameter gradients.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{gelu_jet, Real, Scalar};

/// Affine layer `y = x W + b`, `W` stored as `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Dense<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| {
            T::lit(rng.random_range(-limit..limit))
        });
        Dense {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// MLP `ℝ → ℝᵐ`: GELU on every hidden layer, identity on the output layer.
///
/// Inputs are mapped affinely from `[lo, hi]` onto `[-1, 1]` before the first
/// layer; the map is fixed, not trained.
#[derive(Debug)]
pub struct FeatureNet<T> {
    layers: Vec<Dense<T>>,
    input_range: (T, T),
    passes: AtomicUsize,
}

impl<T: Real> Clone for FeatureNet<T> {
    fn clone(&self) -> Self {
        FeatureNet {
            layers: self.layers.clone(),
            input_range: self.input_range,
            passes: AtomicUsize::new(self.passes.load(Ordering::Relaxed)),
        }
    }
}

impl<T: Real> PartialEq for FeatureNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.input_range == other.input_range
    }
}

/// Everything the backward sweep needs from one batched forward pass.
///
/// Channel `k` of a stacked matrix (rows `k·n .. (k+1)·n`) holds the `k`-th
/// derivative with respect to the scalar input.
#[derive(Debug, Clone)]
pub struct NetTrace<T> {
    pub points: usize,
    pub order: usize,
    /// Stacked input of each layer.
    inputs: Vec<Array2<T>>,
    /// Stacked pre-activations of each hidden layer.
    pre: Vec<Array2<T>>,
    /// Stacked network output, `(order+1)·n × m`.
    pub output: Array2<T>,
}

impl<T: Real> NetTrace<T> {
    /// Output channel `k`: the `k`-th input derivative of every feature.
    pub fn channel(&self, k: usize) -> ArrayView2<'_, T> {
        let n = self.points;
        self.output.slice(s![k * n..(k + 1) * n, ..])
    }
}

impl<T: Real> FeatureNet<T> {
    /// `widths = [1, hidden…, m]`.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        input_range: (T, T),
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths[0] != 1 || widths.contains(&0) {
            return Err(Error::config(format!(
                "feature net widths must start at 1 and be positive, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        FeatureNet::from_layers(layers, input_range)
    }

    pub fn from_layers(layers: Vec<Dense<T>>, input_range: (T, T)) -> Result<Self> {
        if layers.is_empty() || layers[0].fan_in() != 1 {
            return Err(Error::config(
                "feature net needs at least one layer with fan-in 1",
            ));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].fan_out() != w[1].fan_in() || w[0].bias.len() != w[0].fan_out() {
                return Err(Error::config(format!(
                    "layer {i} does not chain into layer {}",
                    i + 1
                )));
            }
        }
        if !(input_range.1 > input_range.0) {
            return Err(Error::config("feature net input range is empty"));
        }
        Ok(FeatureNet {
            layers,
            input_range,
            passes: AtomicUsize::new(0),
        })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn input_range(&self) -> (T, T) {
        self.input_range
    }

    /// `[1, hidden…, m]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(1)
            .chain(self.layers.iter().map(Dense::fan_out))
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::fan_out).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// Number of single-point forward evaluations performed so far.
    pub fn forward_passes(&self) -> usize {
        self.passes.load(Ordering::Relaxed)
    }

    pub fn reset_forward_passes(&self) {
        self.passes.store(0, Ordering::Relaxed);
    }

    fn input_scale(&self) -> T {
        T::lit(2.0) / (self.input_range.1 - self.input_range.0)
    }

    /// Copies parameters out in declaration order: per layer, `W` row-major
    /// then `b`.
    pub fn write_params(&self, out: &mut [T]) {
        let mut k = 0;
        for l in &self.layers {
            for &w in l.weight.iter() {
                out[k] = w;
                k += 1;
            }
            for &b in l.bias.iter() {
                out[k] = b;
                k += 1;
            }
        }
    }

    pub fn read_params(&mut self, src: &[T]) {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = src[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = src[k];
                k += 1;
            }
        }
    }

    /// Feature values `n × m` at the given coordinates.
    pub fn forward(&self, xs: &[T]) -> Array2<T> {
        self.forward_jet(xs, 0).output
    }

    /// Batched forward pass carrying input derivatives up to `order` (≤ 2).
    pub fn forward_jet(&self, xs: &[T], order: usize) -> NetTrace<T> {
        assert!(order <= 2, "jets above second order are not supported");
        let n = xs.len();
        let c = order + 1;
        self.passes.fetch_add(n, Ordering::Relaxed);

        let scale = self.input_scale();
        let lo = self.input_range.0;
        let mut h = Array2::<T>::zeros((c * n, 1));
        for (i, &x) in xs.iter().enumerate() {
            h[[i, 0]] = (x - lo) * scale - T::one();
            if order >= 1 {
                h[[n + i, 0]] = scale;
            }
        }

        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z.slice_mut(s![0..n, ..])
                .axis_iter_mut(Axis(0))
                .for_each(|mut row| row += &layer.bias);
            inputs.push(h);
            if li == last {
                return NetTrace {
                    points: n,
                    order,
                    inputs,
                    pre,
                    output: z,
                };
            }
            h = activate(&z, n, order);
            pre.push(z);
        }
        unreachable!("loop returns at the output layer")
    }

    /// Reverse sweep through a trace. `seed` is the stacked adjoint of the
    /// output (same shape as `trace.output`); the result is the gradient in
    /// [`write_params`](Self::write_params) order.
    pub fn backward(&self, trace: &NetTrace<T>, seed: Array2<T>, grad: &mut [T]) {
        let n = trace.points;
        let order = trace.order;
        assert_eq!(
            seed.dim(),
            trace.output.dim(),
            "seed shape must match the trace output"
        );
        let offsets = self.param_offsets();
        let mut zbar = seed;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &trace.inputs[li];
            let wbar = input.t().dot(&zbar);
            let bbar = zbar.slice(s![0..n, ..]).sum_axis(Axis(0));
            let off = offsets[li];
            for (g, w) in grad[off..off + wbar.len()].iter_mut().zip(wbar.iter()) {
                *g += *w;
            }
            let boff = off + wbar.len();
            for (g, b) in grad[boff..boff + bbar.len()].iter_mut().zip(bbar.iter()) {
                *g += *b;
            }
            if li == 0 {
                break;
            }
            let abar = zbar.dot(&layer.weight.t());
            zbar = activate_backward(&trace.pre[li - 1], &abar, n, order);
        }
    }

    fn param_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut k = 0;
        for l in &self.layers {
            offs.push(k);
            k += l.num_params();
        }
        offs
    }

    /// Scalar reference evaluation of feature `j` at `x`, generic over the
    /// scalar type so it can run on duals or tape variables alike.
    pub fn feature_scalar<S: Scalar>(&self, x: S, j: usize) -> S {
        self.features_scalar(x)[j]
    }

    pub fn features_scalar<S: Scalar>(&self, x: S) -> Vec<S> {
        let scale = S::from_f64(self.input_scale().primal());
        let lo = S::from_f64(self.input_range.0.primal());
        let mut h = vec![(x - lo) * scale - S::one()];
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z: Vec<S> = layer.bias.iter().map(|b| S::from_f64(b.primal())).collect();
            for (i, hi) in h.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += *hi * S::from_f64(layer.weight[[i, j]].primal());
                }
            }
            h = if li == last {
                z
            } else {
                z.into_iter().map(Scalar::gelu).collect()
            };
        }
        h
    }
}

/// GELU applied to a stacked jet of pre-activations.
fn activate<T: Real>(z: &Array2<T>, n: usize, order: usize) -> Array2<T> {
    let mut out = Array2::<T>::zeros(z.raw_dim());
    let z0 = z.slice(s![0..n, ..]);
    match order {
        0 => Zip::from(out.slice_mut(s![0..n, ..]))
            .and(&z0)
            .for_each(|o, &v| *o = v.gelu()),
        1 => {
            let (mut o0, mut o1) = out.view_mut().split_at(Axis(0), n);
            let z1 = z.slice(s![n..2 * n, ..]);
            Zip::from(&mut o0)
                .and(&mut o1)
                .and(&z0)
                .and(&z1)
                .for_each(|a0, a1, &v, &t| {
                    let (g, d1, _, _) = gelu_jet(v);
                    *a0 = g;
                    *a1 = d1 * t;
                });
        }
        _ => {
            let (mut o0, mut rest) = out.view_mut().split_at(Axis(0), n);
            let (mut o1, mut o2) = rest.view_mut().split_at(Axis(0), n);
            let z1 = z.slice(s![n..2 * n, ..]);
            let z2 = z.slice(s![2 * n..3 * n, ..]);
            Zip::from(&mut o0)
                .and(&mut o1)
                .and(&mut o2)
                .and(&z0)
                .and(&z1)
                .and(&z2)
                .for_each(|a0, a1, a2, &v, &t, &u| {
                    let (g, d1, d2, _) = gelu_jet(v);
                    *a0 = g;
                    *a1 = d1 * t;
                    *a2 = d2 * t * t + d1 * u;
                });
        }
    }
    out
}

/// Adjoint of [`activate`]: maps the stacked adjoint of the activations to
/// the stacked adjoint of the pre-activations.
fn activate_backward<T: Real>(
    z: &Array2<T>,
    abar: &Array2<T>,
    n: usize,
    order: usize,
) -> Array2<T> {
    let mut zbar = Array2::<T>::zeros(z.raw_dim());
    let z0 = z.slice(s![0..n, ..]);
    let a0 = abar.slice(s![0..n, ..]);
    match order {
        0 => Zip::from(zbar.slice_mut(s![0..n, ..]))
            .and(&z0)
            .and(&a0)
            .for_each(|zb, &v, &ab| *zb = ab * gelu_jet(v).1),
        1 => {
            let (mut b0, mut b1) = zbar.view_mut().split_at(Axis(0), n);
            let z1 = z.slice(s![n..2 * n, ..]);
            let a1 = abar.slice(s![n..2 * n, ..]);
            Zip::from(&mut b0)
                .and(&mut b1)
                .and(&z0)
                .and(&z1)
                .and(&a0)
                .and(&a1)
                .for_each(|zb0, zb1, &v, &t, &ab0, &ab1| {
                    let (_, d1, d2, _) = gelu_jet(v);
                    *zb0 = ab0 * d1 + ab1 * d2 * t;
                    *zb1 = ab1 * d1;
                });
        }
        _ => {
            let z1 = z.slice(s![n..2 * n, ..]);
            let z2 = z.slice(s![2 * n..3 * n, ..]);
            let a1 = abar.slice(s![n..2 * n, ..]);
            let a2 = abar.slice(s![2 * n..3 * n, ..]);
            let two = T::lit(2.0);
            for i in 0..n {
                for j in 0..z.ncols() {
                    let (v, t, u) = (z0[[i, j]], z1[[i, j]], z2[[i, j]]);
                    let (_, d1, d2, d3) = gelu_jet(v);
                    let (ab0, ab1, ab2) = (a0[[i, j]], a1[[i, j]], a2[[i, j]]);
                    zbar[[i, j]] = ab0 * d1 + ab1 * d2 * t + ab2 * (d3 * t * t + d2 * u);
                    zbar[[n + i, j]] = ab1 * d1 + ab2 * two * d2 * t;
                    zbar[[2 * n + i, j]] = ab2 * d1;
                }
            }
        }
    }
    zbar
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64, widths: &[usize]) -> FeatureNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = FeatureNet::new(widths, (-0.5, 1.5), &mut rng).unwrap();
        // non-zero biases so their gradients are exercised
        let mut p = vec![0.0; net.num_params()];
        net.write_params(&mut p);
        for (i, v) in p.iter_mut().enumerate() {
            *v += 0.05 * ((i as f64) * 0.37).sin();
        }
        net.read_params(&p);
        net
    }

    #[test]
    fn batched_forward_matches_scalar_path() {
        let net = small_net(1, &[1, 6, 5, 3]);
        let xs = [-0.3, 0.2, 1.1];
        let tr = net.forward_jet(&xs, 2);
        for (i, &x) in xs.iter().enumerate() {
            let dd = Dual::new(Dual::variable(x), Dual::constant(1.0));
            let f = net.features_scalar(dd);
            for j in 0..3 {
                assert!((tr.channel(0)[[i, j]] - f[j].primal.primal).abs() < 1e-14);
                assert!((tr.channel(1)[[i, j]] - f[j].primal.tangent).abs() < 1e-13);
                assert!((tr.channel(2)[[i, j]] - f[j].tangent.tangent).abs() < 1e-12);
            }
        }
        assert_eq!(net.forward_passes(), 3);
    }

    /// Weighted sum of every output channel, the scalar whose parameter
    /// gradient `backward` computes for a given seed.
    fn seeded_sum(net: &FeatureNet<f64>, xs: &[f64], order: usize, seed: &Array2<f64>) -> f64 {
        let tr = net.forward_jet(xs, order);
        (&tr.output * seed).sum()
    }

    #[test]
    fn backward_matches_central_differences() {
        let net = small_net(2, &[1, 4, 4, 2]);
        let xs = [0.1, 0.9, 1.4];
        for order in 0..=2 {
            let tr = net.forward_jet(&xs, order);
            let seed = Array2::from_shape_fn(tr.output.raw_dim(), |(i, j)| {
                0.3 + 0.1 * i as f64 - 0.2 * j as f64
            });
            let mut grad = vec![0.0; net.num_params()];
            net.backward(&tr, seed.clone(), &mut grad);

            let mut params = vec![0.0; net.num_params()];
            net.write_params(&mut params);
            let mut probe = net.clone();
            let h = 1e-6;
            for k in 0..params.len() {
                let mut p = params.clone();
                p[k] += h;
                probe.read_params(&p);
                let up = seeded_sum(&probe, &xs, order, &seed);
                p[k] -= 2.0 * h;
                probe.read_params(&p);
                let dn = seeded_sum(&probe, &xs, order, &seed);
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (grad[k] - fd).abs() < 1e-7 * (1.0 + fd.abs()),
                    "order {order} param {k}: {} vs {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn params_round_trip_and_widths() {
        let net = small_net(3, &[1, 3, 2]);
        assert_eq!(net.widths(), vec![1, 3, 2]);
        assert_eq!(net.num_params(), 3 + 3 + 6 + 2);
        let mut p = vec![0.0; net.num_params()];
        net.write_params(&mut p);
        let mut other = small_net(4, &[1, 3, 2]);
        assert_ne!(other, net);
        other.read_params(&p);
        assert_eq!(other, net);
    }

    #[test]
    fn bad_widths_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(FeatureNet::<f64>::new(&[2, 3], (0.0, 1.0), &mut rng).is_err());
        assert!(FeatureNet::<f64>::new(&[1], (0.0, 1.0), &mut rng).is_err());
        assert!(FeatureNet::<f64>::new(&[1, 3], (1.0, 1.0), &mut rng).is_err());
    }

    #[test]
    fn runs_in_single_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = FeatureNet::<f32>::new(&[1, 8, 4], (0.0, 1.0), &mut rng).unwrap();
        let out = net.forward(&[0.0, 0.5, 1.0]);
        assert_eq!(out.dim(), (3, 4));
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
