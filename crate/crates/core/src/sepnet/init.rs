//! Low-rank initialization: regress each feature net onto the leading
//! singular vectors of the sampled target.

use nalgebra::DMatrix;
use ndarray::Array2;

use super::field::{SeparableField, Transform};
use super::mlp::FeatureNet;
use crate::error::{Error, Result};
use crate::optim::{lbfgs_minimize, LbfgsConfig};
use crate::scalar::Real;
use crate::snapshot::FieldSnapshot;

/// Largest |φ| kept before inverting the tanh transform.
const SATURATION: f64 = 1.0 - 1e-12;

/// Value the raw product-sum should take for the transformed field to hit
/// `phi`.
pub fn raw_target(transform: Transform, phi: f64) -> f64 {
    match transform {
        Transform::Identity => phi,
        Transform::Tanh => phi.clamp(-SATURATION, SATURATION).atanh(),
    }
}

/// Per-axis feature targets `n_i × m` whose product-sum is the best rank-`r`
/// approximation of the raw target, `r = min(rank, m)`.
pub fn feature_targets<T: Real>(
    target: &FieldSnapshot<T>,
    transform: Transform,
    m: usize,
    rank: usize,
) -> Result<Vec<Array2<f64>>> {
    let raw = target
        .values
        .mapv(|v| raw_target(transform, v.to_f64().unwrap_or(f64::NAN)));
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "initial-condition target".into(),
            index: "grid".into(),
        });
    }
    match target.dim() {
        1 => {
            let mut t = Array2::zeros((raw.len(), m));
            for (i, &v) in raw.iter().enumerate() {
                t[[i, 0]] = v;
            }
            Ok(vec![t])
        }
        2 => {
            let (n0, n1) = (target.axes[0].len(), target.axes[1].len());
            let mat = DMatrix::from_fn(n0, n1, |i, j| raw[[i, j]]);
            let svd = mat.svd(true, true);
            let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
                return Err(Error::Unsupported(
                    "singular value decomposition failed".into(),
                ));
            };
            let r = rank.min(m).min(svd.singular_values.len());
            let mut a = Array2::zeros((n0, m));
            let mut b = Array2::zeros((n1, m));
            for k in 0..r {
                let sq = svd.singular_values[k].sqrt();
                for i in 0..n0 {
                    a[[i, k]] = u[(i, k)] * sq;
                }
                for j in 0..n1 {
                    b[[j, k]] = vt[(k, j)] * sq;
                }
            }
            Ok(vec![a, b])
        }
        d => Err(Error::Unsupported(format!(
            "low-rank initialization in {d} dimensions"
        ))),
    }
}

/// Least-squares fit of one net's outputs to `target` (`xs.len() × m`);
/// returns the final mean squared misfit.
pub fn fit_features<T: Real>(
    net: &mut FeatureNet<T>,
    xs: &[T],
    target: &Array2<f64>,
    iters: usize,
) -> Result<f64> {
    if target.dim() != (xs.len(), net.output_dim()) {
        return Err(Error::shape(format!(
            "feature target {:?} for {} points and {} outputs",
            target.dim(),
            xs.len(),
            net.output_dim()
        )));
    }
    let tgt = target.mapv(T::lit);
    let mut params = vec![T::zero(); net.num_params()];
    net.write_params(&mut params);
    let mut probe = net.clone();
    let n = T::from_count(tgt.len());
    let two = T::lit(2.0);
    let cfg = LbfgsConfig {
        memory: 20,
        max_iters: iters,
        grad_tol: 0.0,
        ..LbfgsConfig::default()
    };
    let report = lbfgs_minimize(
        |p, g| {
            probe.read_params(p);
            let trace = probe.forward_jet(xs, 0);
            let diff = &trace.output - &tgt;
            let loss = diff.iter().fold(T::zero(), |s, &v| s + v * v) / n;
            g.iter_mut().for_each(|v| *v = T::zero());
            probe.backward(&trace, diff.mapv(|v| two * v / n), g);
            Ok(loss)
        },
        &mut params,
        &cfg,
    )?;
    net.read_params(&params);
    Ok(report.loss.to_f64().unwrap_or(f64::NAN))
}

/// Replaces the field's nets by nets regressed onto the rank-`rank`
/// factors of the target.
pub fn low_rank_initialize<T: Real>(
    field: &mut SeparableField<T>,
    target: &FieldSnapshot<T>,
    rank: usize,
    iters: usize,
) -> Result<()> {
    let targets = feature_targets(target, field.transform(), field.rank(), rank)?;
    let mut nets = field.nets().to_vec();
    for ((net, xs), t) in nets.iter_mut().zip(&target.axes).zip(&targets) {
        fit_features(net, xs, t, iters)?;
    }
    *field = SeparableField::from_nets(nets, field.transform())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snapshot::linspace;

    #[test]
    fn factors_reproduce_a_rank_two_target() {
        let axes = vec![linspace(0.0, 1.0, 7), linspace(0.0, 1.0, 5)];
        let t = FieldSnapshot::from_fn(axes, 0.0, |p: &[f64]| {
            p[0] * p[1] + (p[0] - p[1]).powi(2) * 0.1
        });
        // (x - y)² adds rank 3, so four factors are exact
        let f = feature_targets(&t, Transform::Identity, 6, 4).unwrap();
        let prod = f[0].dot(&f[1].t());
        for ((i, j), v) in prod.indexed_iter() {
            assert!((v - t.values[[i, j]]).abs() < 1e-12);
        }
        assert!(f[0].column(5).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tanh_targets_invert_the_transform() {
        assert_eq!(
            raw_target(Transform::Tanh, 0.5_f64.tanh()),
            0.5_f64.tanh().atanh()
        );
        assert!(raw_target(Transform::Tanh, 1.0).is_finite());
        assert_eq!(raw_target(Transform::Identity, 1.5), 1.5);
    }

    #[test]
    fn initialization_lowers_the_misfit() {
        let axes = vec![linspace(0.0, 1.0, 17), linspace(0.0, 1.0, 17)];
        let t = FieldSnapshot::from_fn(axes, 0.0, |p: &[f64]| {
            (((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt() - 0.3).tanh() * -0.9
        });
        let mut f =
            SeparableField::<f64>::new(&[(0.0, 1.0); 2], &[16], 8, Transform::Tanh, 1).unwrap();
        let before = super::super::fit_loss(&f, &t).unwrap().0;
        low_rank_initialize(&mut f, &t, 8, 300).unwrap();
        let after = super::super::fit_loss(&f, &t).unwrap().0;
        assert!(after < 0.1 * before, "{before} -> {after}");
    }
}
