//! Product-sum combination of per-axis features on tensor grids.

use ndarray::{Array2, ArrayD, ArrayView2, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{FeatureNet, NetTrace};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Output map applied to the raw product-sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Tanh,
}

impl Transform {
    /// Tanh output is clamped to the largest float below 1 in magnitude,
    /// since `tanh` rounds to ±1 once the argument passes about 19.
    pub fn apply<T: Real>(self, v: T) -> T {
        match self {
            Transform::Identity => v,
            Transform::Tanh => {
                let top = T::one() - T::EPSILON / T::lit(2.0);
                v.tanh().max(-top).min(top)
            }
        }
    }

    /// Derivative of the map given its output value.
    fn slope_from_output<T: Real>(self, out: T) -> T {
        match self {
            Transform::Identity => T::one(),
            Transform::Tanh => T::one() - out * out,
        }
    }
}

/// `Σⱼ Πᵢ gⱼ⁽ⁱ⁾(xᵢ)` followed by a [`Transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableField<T: Real> {
    nets: Vec<FeatureNet<T>>,
    transform: Transform,
}

/// Per-axis jets of one grid evaluation.
#[derive(Debug, Clone)]
pub struct GridEval<T> {
    traces: Vec<NetTrace<T>>,
}

/// Field values, spatial gradients and the raw product-sum on a grid, kept
/// for the reverse sweep.
#[derive(Debug, Clone)]
pub struct GradEval<T> {
    pub values: ArrayD<T>,
    pub gradients: Vec<ArrayD<T>>,
    raw_gradients: Vec<ArrayD<T>>,
    eval: GridEval<T>,
}

impl<T: Real> GridEval<T> {
    pub fn dim(&self) -> usize {
        self.traces.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.traces.iter().map(|t| t.points).collect()
    }

    pub fn trace(&self, axis: usize) -> &NetTrace<T> {
        &self.traces[axis]
    }

    /// Product-sum with axis `i` taken at input-derivative order `orders[i]`.
    pub fn contract(&self, orders: &[usize]) -> ArrayD<T> {
        let factors: Vec<ArrayView2<'_, T>> = self
            .traces
            .iter()
            .zip(orders)
            .map(|(t, &k)| t.channel(k))
            .collect();
        contract(&factors)
    }

    /// Adjoint of [`contract`](Self::contract): adds `∂⟨adj, out⟩/∂F_i` into
    /// channel `orders[i]` of each axis seed.
    pub fn contract_adjoint(&self, orders: &[usize], adj: &ArrayD<T>, seeds: &mut [Array2<T>]) {
        let d = self.dim();
        for i in 0..d {
            let others: Vec<ArrayView2<'_, T>> = (0..d)
                .filter(|&k| k != i)
                .map(|k| self.traces[k].channel(orders[k]))
                .collect();
            let kr = khatri_rao(&others, self.traces[i].output.ncols());
            let n = self.traces[i].points;
            let unfolded = unfold(adj, i);
            let contrib = unfolded.dot(&kr);
            let k = orders[i];
            let mut block = seeds[i].slice_mut(ndarray::s![k * n..(k + 1) * n, ..]);
            block += &contrib;
        }
    }

    pub fn zero_seeds(&self) -> Vec<Array2<T>> {
        self.traces
            .iter()
            .map(|t| Array2::zeros(t.output.raw_dim()))
            .collect()
    }
}

/// Row-wise Khatri–Rao product of `factors` in order (first factor slowest);
/// an empty list gives a single row of ones.
fn khatri_rao<T: Real>(factors: &[ArrayView2<'_, T>], m: usize) -> Array2<T> {
    let mut acc = Array2::<T>::ones((1, m));
    for f in factors {
        let (r, n) = (acc.nrows(), f.nrows());
        let mut next = Array2::<T>::zeros((r * n, m));
        for a in 0..r {
            for b in 0..n {
                let mut row = next.row_mut(a * n + b);
                row.assign(&acc.row(a));
                row *= &f.row(b);
            }
        }
        acc = next;
    }
    acc
}

/// Mode-`i` unfolding: axis `i` becomes rows, remaining axes in order
/// become columns.
fn unfold<T: Real>(a: &ArrayD<T>, i: usize) -> Array2<T> {
    let n = a.shape()[i];
    let rest = a.len() / n.max(1);
    let mut perm: Vec<usize> = vec![i];
    perm.extend((0..a.ndim()).filter(|&k| k != i));
    let p = a.view().permuted_axes(IxDyn(&perm));
    let std = p.as_standard_layout();
    std.into_owned()
        .into_shape_with_order((n, rest))
        .expect("contiguous after standard layout")
}

fn contract<T: Real>(factors: &[ArrayView2<'_, T>]) -> ArrayD<T> {
    let shape: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
    let m = factors[0].ncols();
    let first = &factors[0];
    let kr = khatri_rao(&factors[1..], m);
    let flat = first.dot(&kr.t()).as_standard_layout().into_owned();
    flat.into_shape_with_order(IxDyn(&shape))
        .expect("product of axis lengths")
}

impl<T: Real> SeparableField<T> {
    /// One feature net per axis, each `1 → hidden… → rank`, seeded
    /// deterministically.
    pub fn new(
        bounds: &[(T, T)],
        hidden: &[usize],
        rank: usize,
        transform: Transform,
        seed: u64,
    ) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::config("a separable field needs at least one axis"));
        }
        if rank == 0 {
            return Err(Error::config("rank must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![1];
        widths.extend_from_slice(hidden);
        widths.push(rank);
        let nets = bounds
            .iter()
            .map(|&b| FeatureNet::new(&widths, b, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        SeparableField::from_nets(nets, transform)
    }

    pub fn from_nets(nets: Vec<FeatureNet<T>>, transform: Transform) -> Result<Self> {
        let Some(first) = nets.first() else {
            return Err(Error::config("a separable field needs at least one axis"));
        };
        let m = first.output_dim();
        if nets.iter().any(|n| n.output_dim() != m) {
            return Err(Error::config(
                "all feature nets must share the output width",
            ));
        }
        Ok(SeparableField { nets, transform })
    }

    pub fn dim(&self) -> usize {
        self.nets.len()
    }

    pub fn rank(&self) -> usize {
        self.nets[0].output_dim()
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn set_transform(&mut self, transform: Transform) {
        self.transform = transform;
    }

    pub fn nets(&self) -> &[FeatureNet<T>] {
        &self.nets
    }

    pub fn bounds(&self) -> Vec<(T, T)> {
        self.nets.iter().map(FeatureNet::input_range).collect()
    }

    pub fn num_params(&self) -> usize {
        self.nets.iter().map(FeatureNet::num_params).sum()
    }

    /// Parameters of every net, in axis order.
    pub fn params(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.num_params()];
        let mut k = 0;
        for n in &self.nets {
            let len = n.num_params();
            n.write_params(&mut out[k..k + len]);
            k += len;
        }
        out
    }

    pub fn set_params(&mut self, p: &[T]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                p.len()
            )));
        }
        let mut k = 0;
        for n in &mut self.nets {
            let len = n.num_params();
            n.read_params(&p[k..k + len]);
            k += len;
        }
        Ok(())
    }

    /// Single-point feature-net evaluations summed over all axes.
    pub fn forward_passes(&self) -> usize {
        self.nets.iter().map(FeatureNet::forward_passes).sum()
    }

    pub fn reset_forward_passes(&self) {
        self.nets.iter().for_each(FeatureNet::reset_forward_passes);
    }

    fn check_axes(&self, axes: &[Vec<T>]) -> Result<()> {
        if axes.len() != self.dim() {
            return Err(Error::shape(format!(
                "{} coordinate axes for a {}-dimensional field",
                axes.len(),
                self.dim()
            )));
        }
        if let Some(i) = axes.iter().position(Vec::is_empty) {
            return Err(Error::EmptyInput(format!(
                "evaluation axis {i} has no points"
            )));
        }
        Ok(())
    }

    /// Runs every feature net once per coordinate, carrying input
    /// derivatives up to `order`.
    pub fn trace_grid(&self, axes: &[Vec<T>], order: usize) -> Result<GridEval<T>> {
        self.check_axes(axes)?;
        Ok(GridEval {
            traces: self
                .nets
                .iter()
                .zip(axes)
                .map(|(net, xs)| net.forward_jet(xs, order))
                .collect(),
        })
    }

    /// Transformed field on the tensor grid of `axes`.
    pub fn evaluate_grid(&self, axes: &[Vec<T>]) -> Result<ArrayD<T>> {
        let eval = self.trace_grid(axes, 0)?;
        let mut raw = eval.contract(&vec![0; self.dim()]);
        let t = self.transform;
        raw.mapv_inplace(|v| t.apply(v));
        Ok(raw)
    }

    /// Untransformed product-sum on the grid.
    pub fn evaluate_raw(&self, axes: &[Vec<T>]) -> Result<ArrayD<T>> {
        let eval = self.trace_grid(axes, 0)?;
        Ok(eval.contract(&vec![0; self.dim()]))
    }

    /// Transformed values and `∂φ/∂xᵢ` on the grid. Each gradient swaps one
    /// axis factor for its forward-mode tangent.
    pub fn evaluate_with_spatial_gradient(&self, axes: &[Vec<T>]) -> Result<GradEval<T>> {
        let d = self.dim();
        let eval = self.trace_grid(axes, 1)?;
        let mut orders = vec![0; d];
        let mut values = eval.contract(&orders);
        let t = self.transform;
        values.mapv_inplace(|v| t.apply(v));
        let mut raw_gradients = Vec::with_capacity(d);
        let mut gradients = Vec::with_capacity(d);
        for i in 0..d {
            orders[i] = 1;
            let raw = eval.contract(&orders);
            orders[i] = 0;
            let mut g = raw.clone();
            ndarray::Zip::from(&mut g)
                .and(&values)
                .for_each(|gv, &v| *gv = *gv * t.slope_from_output(v));
            raw_gradients.push(raw);
            gradients.push(g);
        }
        Ok(GradEval {
            values,
            gradients,
            raw_gradients,
            eval,
        })
    }

    /// Parameter gradient of `Σ value_adj·φ + Σᵢ Σ grad_adj[i]·∂ᵢφ` through
    /// a cached evaluation.
    pub fn backward(
        &self,
        cache: &GradEval<T>,
        value_adj: &ArrayD<T>,
        grad_adj: &[ArrayD<T>],
    ) -> Result<Vec<T>> {
        let d = self.dim();
        if grad_adj.len() != d
            || value_adj.shape() != cache.values.shape()
            || grad_adj.iter().any(|g| g.shape() != cache.values.shape())
        {
            return Err(Error::shape(
                "adjoint arrays do not match the cached evaluation",
            ));
        }
        let mut raw_value_adj = value_adj.clone();
        let mut raw_grad_adj: Vec<ArrayD<T>> = grad_adj.to_vec();
        if self.transform == Transform::Tanh {
            // φ = tanh(u), ∂φ = s ∂u with s = 1 - φ²; ∂s/∂u = -2 φ s.
            let two = T::lit(2.0);
            let mut extra = ArrayD::<T>::zeros(cache.values.raw_dim());
            for i in 0..d {
                ndarray::Zip::from(&mut extra)
                    .and(&grad_adj[i])
                    .and(&cache.raw_gradients[i])
                    .and(&cache.values)
                    .for_each(|e, &gb, &du, &phi| {
                        let s = T::one() - phi * phi;
                        *e += gb * du * (-two * phi * s);
                    });
                ndarray::Zip::from(&mut raw_grad_adj[i])
                    .and(&cache.values)
                    .for_each(|gb, &phi| *gb = *gb * (T::one() - phi * phi));
            }
            ndarray::Zip::from(&mut raw_value_adj)
                .and(&cache.values)
                .and(&extra)
                .for_each(|vb, &phi, &e| *vb = *vb * (T::one() - phi * phi) + e);
        }
        let mut seeds = cache.eval.zero_seeds();
        let mut orders = vec![0; d];
        cache
            .eval
            .contract_adjoint(&orders, &raw_value_adj, &mut seeds);
        for i in 0..d {
            orders[i] = 1;
            cache
                .eval
                .contract_adjoint(&orders, &raw_grad_adj[i], &mut seeds);
            orders[i] = 0;
        }
        Ok(self.backward_seeds(&cache.eval, seeds))
    }

    /// Parameter gradient from per-axis stacked output seeds.
    pub fn backward_seeds(&self, eval: &GridEval<T>, seeds: Vec<Array2<T>>) -> Vec<T> {
        let mut grad = vec![T::zero(); self.num_params()];
        let mut k = 0;
        for ((net, trace), seed) in self.nets.iter().zip(&eval.traces).zip(seeds) {
            let len = net.num_params();
            net.backward(trace, seed, &mut grad[k..k + len]);
            k += len;
        }
        grad
    }
}

impl<T: Real> GradEval<T> {
    pub fn eval(&self) -> &GridEval<T> {
        &self.eval
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::mlp::Dense;
    use super::*;
    use ndarray::arr1;

    /// One-layer net whose output is exactly `x W + b` after the input map
    /// from `[-1, 1]` (identity), so features are chosen by hand.
    fn linear_net(w: &[f64], b: &[f64]) -> FeatureNet<f64> {
        let layer = Dense {
            weight: Array2::from_shape_vec((1, w.len()), w.to_vec()).unwrap(),
            bias: arr1(b),
        };
        FeatureNet::from_layers(vec![layer], (-1.0, 1.0)).unwrap()
    }

    fn grid(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn rank_one_constants() {
        let f = SeparableField::from_nets(
            vec![linear_net(&[0.0], &[2.0]), linear_net(&[0.0], &[-1.5])],
            Transform::Identity,
        )
        .unwrap();
        let v = f.evaluate_grid(&[grid(3), grid(4)]).unwrap();
        assert_eq!(v.shape(), &[3, 4]);
        assert!(v.iter().all(|&x| x == -3.0));
    }

    #[test]
    fn separable_sum_as_rank_two() {
        // net₁ features (x, 1), net₂ features (1, y)
        let f = SeparableField::from_nets(
            vec![
                linear_net(&[1.0, 0.0], &[0.0, 1.0]),
                linear_net(&[0.0, 1.0], &[1.0, 0.0]),
            ],
            Transform::Identity,
        )
        .unwrap();
        let (xs, ys) = (grid(5), grid(3));
        let v = f.evaluate_grid(&[xs.clone(), ys.clone()]).unwrap();
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                assert!((v[[i, j]] - (x + y)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rank_one_product_gradients() {
        let f = SeparableField::from_nets(
            vec![linear_net(&[1.0], &[0.0]), linear_net(&[1.0], &[0.0])],
            Transform::Identity,
        )
        .unwrap();
        let (xs, ys) = (grid(4), grid(6));
        let e = f
            .evaluate_with_spatial_gradient(&[xs.clone(), ys.clone()])
            .unwrap();
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                assert!((e.gradients[0][[i, j]] - y).abs() < 1e-15);
                assert!((e.gradients[1][[i, j]] - x).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn three_dimensional_contraction() {
        let f =
            SeparableField::<f64>::new(&[(0.0, 1.0); 3], &[5], 3, Transform::Identity, 9).unwrap();
        let axes = vec![vec![0.1, 0.7], vec![0.2, 0.4, 0.9], vec![0.5]];
        let v = f.evaluate_grid(&axes).unwrap();
        let feats: Vec<Vec<Vec<f64>>> = f
            .nets()
            .iter()
            .zip(&axes)
            .map(|(n, a)| a.iter().map(|&x| n.features_scalar(x)).collect())
            .collect();
        for i in 0..2 {
            for j in 0..3 {
                let expect: f64 = (0..3)
                    .map(|r| feats[0][i][r] * feats[1][j][r] * feats[2][0][r])
                    .sum();
                assert!((v[[i, j, 0]] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn empty_axis_is_rejected() {
        let f = SeparableField::<f64>::new(&[(0.0, 1.0); 2], &[4], 2, Transform::Tanh, 0).unwrap();
        assert!(matches!(
            f.evaluate_grid(&[vec![0.5], vec![]]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn pass_count_is_sum_of_axis_lengths() {
        let f =
            SeparableField::<f64>::new(&[(0.0, 1.0); 2], &[8, 8], 4, Transform::Tanh, 1).unwrap();
        f.reset_forward_passes();
        let n = 37;
        let axis: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        f.evaluate_grid(&[axis.clone(), axis]).unwrap();
        assert_eq!(f.forward_passes(), 2 * n);
    }
}
