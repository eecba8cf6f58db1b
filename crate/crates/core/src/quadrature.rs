//! Structured meshes and Gauss–Legendre integration.
//!
//! A [`QuadMesh`] tiles an axis-aligned box with equal elements. Because the
//! elements are aligned, the Gauss points of all elements form a tensor
//! product of per-axis abscissa lists, which is exactly the grid a separable
//! field evaluates cheaply on.

use ndarray::{ArrayViewD, Axis, Dimension};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Gauss–Legendre abscissas and weights on `[-1, 1]`, `q = 1..=10`.
const GAUSS_LEGENDRE: [&[(f64, f64)]; 10] = [
    &[(0.0, 2.0)],
    &[
        (-0.577350269189625764509, 1.0),
        (0.577350269189625764509, 1.0),
    ],
    &[
        (-0.774596669241483377036, 0.555555555555555555556),
        (0.0, 0.888888888888888888889),
        (0.774596669241483377036, 0.555555555555555555556),
    ],
    &[
        (-0.861136311594052575224, 0.347854845137453857373),
        (-0.339981043584856264803, 0.652145154862546142627),
        (0.339981043584856264803, 0.652145154862546142627),
        (0.861136311594052575224, 0.347854845137453857373),
    ],
    &[
        (-0.906179845938663992798, 0.236926885056189087514),
        (-0.538469310105683091036, 0.478628670499366468041),
        (0.0, 0.568888888888888888889),
        (0.538469310105683091036, 0.478628670499366468041),
        (0.906179845938663992798, 0.236926885056189087514),
    ],
    &[
        (-0.932469514203152027812, 0.17132449237917034504),
        (-0.661209386466264513661, 0.36076157304813860757),
        (-0.238619186083196908631, 0.46791393457269104739),
        (0.238619186083196908631, 0.46791393457269104739),
        (0.661209386466264513661, 0.36076157304813860757),
        (0.932469514203152027812, 0.17132449237917034504),
    ],
    &[
        (-0.949107912342758524526, 0.129484966168869693271),
        (-0.741531185599394439864, 0.279705391489276667901),
        (-0.405845151377397166907, 0.38183005050511894495),
        (0.0, 0.417959183673469387755),
        (0.405845151377397166907, 0.38183005050511894495),
        (0.741531185599394439864, 0.279705391489276667901),
        (0.949107912342758524526, 0.129484966168869693271),
    ],
    &[
        (-0.960289856497536231684, 0.101228536290376259153),
        (-0.796666477413626739592, 0.222381034453374470544),
        (-0.525532409916328985818, 0.313706645877887287338),
        (-0.183434642495649804939, 0.362683783378361982965),
        (0.183434642495649804939, 0.362683783378361982965),
        (0.525532409916328985818, 0.313706645877887287338),
        (0.796666477413626739592, 0.222381034453374470544),
        (0.960289856497536231684, 0.101228536290376259153),
    ],
    &[
        (-0.968160239507626089836, 0.0812743883615744119719),
        (-0.836031107326635794299, 0.180648160694857404058),
        (-0.613371432700590397309, 0.260610696402935462319),
        (-0.324253423403808929039, 0.312347077040002840069),
        (0.0, 0.330239355001259763165),
        (0.324253423403808929039, 0.312347077040002840069),
        (0.613371432700590397309, 0.260610696402935462319),
        (0.836031107326635794299, 0.180648160694857404058),
        (0.968160239507626089836, 0.0812743883615744119719),
    ],
    &[
        (-0.973906528517171720078, 0.0666713443086881375936),
        (-0.865063366688984510732, 0.149451349150580593146),
        (-0.679409568299024406234, 0.219086362515982043996),
        (-0.433395394129247190799, 0.269266719309996355091),
        (-0.148874338981631210885, 0.295524224714752870174),
        (0.148874338981631210885, 0.295524224714752870174),
        (0.433395394129247190799, 0.269266719309996355091),
        (0.679409568299024406234, 0.219086362515982043996),
        (0.865063366688984510732, 0.149451349150580593146),
        (0.973906528517171720078, 0.0666713443086881375936),
    ],
];

pub const MAX_GAUSS_POINTS: usize = GAUSS_LEGENDRE.len();

/// A 1D rule on the reference interval `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule<T> {
    pub abscissas: Vec<T>,
    pub weights: Vec<T>,
}

/// Tabulated `q`-point rule; exact for polynomials of degree `2q - 1`.
pub fn gauss_rule<T: Real>(q: usize) -> Result<GaussRule<T>> {
    if !(1..=MAX_GAUSS_POINTS).contains(&q) {
        return Err(Error::config(format!(
            "Gauss points per axis must be in 1..={MAX_GAUSS_POINTS}, got {q}"
        )));
    }
    let table = GAUSS_LEGENDRE[q - 1];
    Ok(GaussRule {
        abscissas: table.iter().map(|&(x, _)| T::lit(x)).collect(),
        weights: table.iter().map(|&(_, w)| T::lit(w)).collect(),
    })
}

/// One coordinate direction of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshAxis<T> {
    pub lo: T,
    pub hi: T,
    pub elements: usize,
    /// Global Gauss abscissas, sorted, `elements * q` of them.
    pub points: Vec<T>,
    /// Physical weights `(h/2)·w_j`, aligned with `points`.
    pub weights: Vec<T>,
}

impl<T: Real> MeshAxis<T> {
    pub fn width(&self) -> T {
        (self.hi - self.lo) / T::from_count(self.elements)
    }

    /// Element vertices, `elements + 1` of them.
    pub fn nodes(&self) -> Vec<T> {
        let h = self.width();
        (0..=self.elements)
            .map(|i| {
                if i == self.elements {
                    self.hi
                } else {
                    self.lo + h * T::from_count(i)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadMesh<T> {
    axes: Vec<MeshAxis<T>>,
    q: usize,
    rule: GaussRule<T>,
}

impl<T: Real> QuadMesh<T> {
    /// `bounds[i] = (lo, hi)` and `elements[i]` elements along axis `i`, with
    /// `q` Gauss points per axis per element.
    pub fn new(bounds: &[(T, T)], elements: &[usize], q: usize) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != elements.len() {
            return Err(Error::config(format!(
                "mesh needs one element count per axis ({} bounds, {} counts)",
                bounds.len(),
                elements.len()
            )));
        }
        let rule = gauss_rule::<T>(q)?;
        let two = T::lit(2.0);
        let mut axes = Vec::with_capacity(bounds.len());
        for (i, (&(lo, hi), &n)) in bounds.iter().zip(elements).enumerate() {
            if n == 0 {
                return Err(Error::config(format!("axis {i} has no elements")));
            }
            if !(hi > lo) {
                return Err(Error::config(format!(
                    "axis {i} has empty extent [{lo}, {hi}]"
                )));
            }
            let h = (hi - lo) / T::from_count(n);
            let half = h / two;
            let mut points = Vec::with_capacity(n * q);
            let mut weights = Vec::with_capacity(n * q);
            for e in 0..n {
                let centre = lo + h * (T::from_count(e) + T::lit(0.5));
                for (&xi, &w) in rule.abscissas.iter().zip(&rule.weights) {
                    points.push(centre + half * xi);
                    weights.push(half * w);
                }
            }
            axes.push(MeshAxis {
                lo,
                hi,
                elements: n,
                points,
                weights,
            });
        }
        Ok(QuadMesh { axes, q, rule })
    }

    /// Same bounds and element count on every axis.
    pub fn uniform(dim: usize, lo: T, hi: T, elements: usize, q: usize) -> Result<Self> {
        QuadMesh::new(&vec![(lo, hi); dim], &vec![elements; dim], q)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn points_per_axis(&self) -> usize {
        self.q
    }

    pub fn axes(&self) -> &[MeshAxis<T>] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> &MeshAxis<T> {
        &self.axes[i]
    }

    pub fn rule(&self) -> &GaussRule<T> {
        &self.rule
    }

    /// Per-axis Gauss abscissa lists; their tensor product is the full set
    /// of quadrature points.
    pub fn gauss_axes(&self) -> Vec<Vec<T>> {
        self.axes.iter().map(|a| a.points.clone()).collect()
    }

    pub fn node_axes(&self) -> Vec<Vec<T>> {
        self.axes.iter().map(|a| a.nodes()).collect()
    }

    pub fn gauss_shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points.len()).collect()
    }

    pub fn total_points(&self) -> usize {
        self.gauss_shape().iter().product()
    }

    /// Tensor-product quadrature weight of every Gauss point.
    pub fn weight_grid(&self) -> ndarray::ArrayD<T> {
        let shape = self.gauss_shape();
        ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&shape), |idx| {
            self.axes
                .iter()
                .enumerate()
                .fold(T::one(), |acc, (i, a)| acc * a.weights[idx[i]])
        })
    }

    /// `|J| = Π h_i / 2` of the (identical) element maps.
    pub fn jacobian_det(&self) -> T {
        self.axes
            .iter()
            .fold(T::one(), |acc, a| acc * a.width() / T::lit(2.0))
    }

    pub fn measure(&self) -> T {
        self.axes
            .iter()
            .fold(T::one(), |acc, a| acc * (a.hi - a.lo))
    }

    /// `Σ_e |J| Σ_j w_j h(x_j)` for integrand values sampled on the Gauss
    /// grid.
    pub fn integrate(&self, values: ArrayViewD<'_, T>) -> Result<T> {
        let weights: Vec<&[T]> = self.axes.iter().map(|a| a.weights.as_slice()).collect();
        let value = tensor_quadrature(values.view(), &weights)?;
        if !value.is_finite() {
            let coords = first_non_finite(values).expect("non-finite sum has a non-finite term");
            let location: Vec<String> = coords
                .iter()
                .zip(&self.axes)
                .map(|(&k, a)| format!("{}", a.points[k]))
                .collect();
            return Err(Error::NonFinite {
                what: "integrand".into(),
                index: format!("Gauss point {coords:?} at ({})", location.join(", ")),
            });
        }
        Ok(value)
    }

    /// Integrates a pointwise function by sampling it on the Gauss grid.
    pub fn integrate_fn(&self, f: impl Fn(&[T]) -> T) -> Result<T> {
        let shape = self.gauss_shape();
        let mut values = ndarray::ArrayD::<T>::zeros(ndarray::IxDyn(&shape));
        let mut point = vec![T::zero(); self.dim()];
        for (idx, v) in values.indexed_iter_mut() {
            for (i, p) in point.iter_mut().enumerate() {
                *p = self.axes[i].points[idx[i]];
            }
            *v = f(&point);
        }
        self.integrate(values.view())
    }
}

/// Composite trapezoid weights for a sorted list of nodes.
pub fn trapezoid_weights<T: Real>(nodes: &[T]) -> Vec<T> {
    let n = nodes.len();
    let mut w = vec![T::zero(); n];
    let half = T::lit(0.5);
    for i in 0..n.saturating_sub(1) {
        let h = (nodes[i + 1] - nodes[i]) * half;
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// `Σ_k Π_i w_i[k_i] v[k]`, contracted one axis at a time from the last, in
/// a fixed order so that results are reproducible bit for bit.
pub fn tensor_quadrature<T: Real>(values: ArrayViewD<'_, T>, weights: &[&[T]]) -> Result<T> {
    if values.ndim() != weights.len() {
        return Err(Error::shape(format!(
            "{}-dimensional values against {} weight lists",
            values.ndim(),
            weights.len()
        )));
    }
    for (i, w) in weights.iter().enumerate() {
        if values.len_of(Axis(i)) != w.len() {
            return Err(Error::shape(format!(
                "axis {i}: {} values against {} weights",
                values.len_of(Axis(i)),
                w.len()
            )));
        }
    }
    let mut current = values.to_owned();
    for axis in (0..weights.len()).rev() {
        let w = weights[axis];
        current = current.map_axis(Axis(axis), |lane| {
            let mut s = T::zero();
            for (v, &wk) in lane.iter().zip(w) {
                s += *v * wk;
            }
            s
        });
    }
    Ok(current.into_iter().next().unwrap_or_else(T::zero))
}

fn first_non_finite<T: Real>(values: ArrayViewD<'_, T>) -> Option<Vec<usize>> {
    values
        .indexed_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(idx, _)| idx.slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    #[test]
    fn one_and_two_point_rules() {
        let r1 = gauss_rule::<f64>(1).unwrap();
        assert_eq!(r1.abscissas, vec![0.0]);
        assert_eq!(r1.weights, vec![2.0]);
        let r2 = gauss_rule::<f64>(2).unwrap();
        let g = 1.0 / 3f64.sqrt();
        assert!((r2.abscissas[0] + g).abs() < 1e-15 && (r2.abscissas[1] - g).abs() < 1e-15);
        assert_eq!(r2.weights, vec![1.0, 1.0]);
        let cube: f64 = r2
            .abscissas
            .iter()
            .zip(&r2.weights)
            .map(|(x, w)| w * x.powi(3))
            .sum();
        assert_eq!(cube, 0.0);
    }

    #[test]
    fn rule_range_is_checked() {
        assert!(gauss_rule::<f64>(0).is_err());
        assert!(gauss_rule::<f64>(11).is_err());
    }

    #[test]
    fn every_rule_is_exact_to_degree_2q_minus_1() {
        for q in 1..=MAX_GAUSS_POINTS {
            let r = gauss_rule::<f64>(q).unwrap();
            for deg in 0..(2 * q) {
                let got: f64 = r
                    .abscissas
                    .iter()
                    .zip(&r.weights)
                    .map(|(x, w)| w * x.powi(deg as i32))
                    .sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!(
                    (got - exact).abs() < 1e-14,
                    "q={q} deg={deg}: {got} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn unit_square_measure_and_linear_exactness() {
        for &n in &[1usize, 3, 8] {
            let mesh = QuadMesh::<f64>::uniform(2, 0.0, 1.0, n, 2).unwrap();
            assert!((mesh.integrate_fn(|_| 1.0).unwrap() - 1.0).abs() < 1e-14);
            assert!((mesh.integrate_fn(|p| p[0]).unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn double_well_of_identity_in_1d() {
        let mesh = QuadMesh::<f64>::uniform(1, 0.0, 1.0, 4, 2).unwrap();
        let v = mesh
            .integrate_fn(|p| (p[0] * p[0] - 1.0).powi(2) / 4.0)
            .unwrap();
        // two-point Gauss remainder per element: h⁵ f⁗ / 4320, f⁗ = 6
        let h: f64 = 0.25;
        let remainder = 4.0 * h.powi(5) * 6.0 / 4320.0;
        assert!((2.0 / 15.0 - v - remainder).abs() < 1e-15, "{v}");
        let fine = QuadMesh::<f64>::uniform(1, 0.0, 1.0, 8, 2).unwrap();
        let w = fine
            .integrate_fn(|p| (p[0] * p[0] - 1.0).powi(2) / 4.0)
            .unwrap();
        assert!((w - 2.0 / 15.0).abs() < 1e-6, "{w}");
    }

    #[test]
    fn mesh_bookkeeping() {
        let mesh = QuadMesh::<f64>::new(&[(0.0, 2.0), (-1.0, 1.0)], &[4, 5], 3).unwrap();
        assert_eq!(mesh.gauss_shape(), vec![12, 15]);
        assert_eq!(mesh.total_points(), 180);
        assert!((mesh.jacobian_det() - 0.25 * 0.2).abs() < 1e-16);
        for a in mesh.axes() {
            assert!(a.points.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(a.nodes().len(), a.elements + 1);
        }
        assert!(QuadMesh::<f64>::uniform(2, 1.0, 0.0, 4, 2).is_err());
        assert!(QuadMesh::<f64>::uniform(2, 0.0, 1.0, 0, 2).is_err());
    }

    #[test]
    fn nan_is_located() {
        let mesh = QuadMesh::<f64>::uniform(2, 0.0, 1.0, 2, 2).unwrap();
        let mut v = ArrayD::from_elem(ndarray::IxDyn(&[4, 4]), 1.0);
        v[[2, 1]] = f64::NAN;
        match mesh.integrate(v.view()) {
            Err(Error::NonFinite { index, .. }) => assert!(index.contains("[2, 1]"), "{index}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let nodes: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let w = trapezoid_weights(&nodes);
        let s: f64 = nodes.iter().zip(&w).map(|(x, w)| x * w).sum();
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_precision_mesh() {
        let mesh = QuadMesh::<f32>::uniform(2, 0.0, 1.0, 4, 2).unwrap();
        assert!((mesh.integrate_fn(|p| p[0] * p[1]).unwrap() - 0.25).abs() < 1e-6);
    }
}
