//! Tensor-product grids of field values.

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Field values on the tensor product of `axes` at one instant.
///
/// `values` has shape `(axes[0].len(), …, axes[d-1].len())`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot<T> {
    pub axes: Vec<Vec<T>>,
    pub values: ArrayD<T>,
    pub time: T,
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linspace<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / T::from_count(n - 1);
            (0..n)
                .map(|i| {
                    if i + 1 == n {
                        hi
                    } else {
                        lo + step * T::from_count(i)
                    }
                })
                .collect()
        }
    }
}

impl<T: Real> FieldSnapshot<T> {
    pub fn new(axes: Vec<Vec<T>>, values: ArrayD<T>, time: T) -> Result<Self> {
        let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
        if values.shape() != shape.as_slice() {
            return Err(Error::shape(format!(
                "values of shape {:?} on axes of lengths {shape:?}",
                values.shape()
            )));
        }
        Ok(FieldSnapshot { axes, values, time })
    }

    /// Samples `f` on the tensor grid.
    pub fn from_fn(axes: Vec<Vec<T>>, time: T, f: impl Fn(&[T]) -> T) -> Self {
        let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
        let mut point = vec![T::zero(); axes.len()];
        let values = ArrayD::from_shape_fn(IxDyn(&shape), |idx| {
            for (i, p) in point.iter_mut().enumerate() {
                *p = axes[i][idx[i]];
            }
            f(&point)
        });
        FieldSnapshot { axes, values, time }
    }

    /// A uniform node grid with `counts[i]` nodes spanning `bounds[i]`.
    pub fn uniform_axes(bounds: &[(T, T)], counts: &[usize]) -> Vec<Vec<T>> {
        bounds
            .iter()
            .zip(counts)
            .map(|(&(lo, hi), &n)| linspace(lo, hi, n))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn bounds(&self) -> Vec<(T, T)> {
        self.axes
            .iter()
            .map(|a| (a[0], *a.last().expect("axes are non-empty")))
            .collect()
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// True when every axis is equally spaced to within a few ulps of its
    /// extent.
    pub fn is_uniform(&self) -> bool {
        self.axes.iter().all(|a| {
            if a.len() < 2 {
                return true;
            }
            let expected = linspace(a[0], a[a.len() - 1], a.len());
            let tol = T::lit(64.0) * T::EPSILON * (a[a.len() - 1] - a[0]).abs().max(T::one());
            a.iter().zip(&expected).all(|(x, y)| (*x - *y).abs() <= tol)
        })
    }

    /// Keeps every `stride[i]`-th node along axis `i`, starting at 0.
    pub fn downsample(&self, stride: &[usize]) -> Result<Self> {
        if stride.len() != self.dim() || stride.contains(&0) {
            return Err(Error::shape(format!(
                "bad stride {stride:?} for {}-d snapshot",
                self.dim()
            )));
        }
        for (i, (a, &s)) in self.axes.iter().zip(stride).enumerate() {
            if (a.len() - 1) % s != 0 {
                return Err(Error::shape(format!(
                    "axis {i}: {} intervals not divisible by stride {s}",
                    a.len() - 1
                )));
            }
        }
        let axes: Vec<Vec<T>> = self
            .axes
            .iter()
            .zip(stride)
            .map(|(a, &s)| a.iter().step_by(s).copied().collect())
            .collect();
        let mut view = self.values.view();
        for (i, &s) in stride.iter().enumerate() {
            view.slice_axis_inplace(ndarray::Axis(i), ndarray::Slice::new(0, None, s as isize));
        }
        FieldSnapshot::new(axes, view.to_owned(), self.time)
    }

    /// Downsamples onto a coarser grid that shares its end points, deriving
    /// the stride from the node counts.
    pub fn restrict_to(&self, counts: &[usize]) -> Result<Self> {
        let stride: Result<Vec<usize>> = self
            .shape()
            .iter()
            .zip(counts)
            .map(|(&fine, &coarse)| {
                if coarse >= 2 && (fine - 1) % (coarse - 1) == 0 {
                    Ok((fine - 1) / (coarse - 1))
                } else {
                    Err(Error::shape(format!(
                        "cannot restrict {fine} nodes to {coarse} by striding"
                    )))
                }
            })
            .collect();
        self.downsample(&stride?)
    }
}
