//! Pointwise frame and `g` norms, and the Lebesgue/Sobolev norms built from them.
//!
//! Integrals use the flat measure `dx` on the unit torus; on the grid this is
//! the mean over grid points.

use crate::error::{Error, Result};
use crate::field::{TensorField, MAX_DERIVATIVE_ORDER};
use crate::linalg;

/// Which pointwise norm a Sobolev or Lebesgue norm is built from.
#[derive(Debug, Clone, Copy)]
pub enum NormMetric<'a> {
    Frame,
    /// Contract with `g` on upper indices and `g^{-1}` on lower ones.
    G { g: &'a TensorField, ginv: &'a TensorField },
}

/// Whether a Sobolev sum runs over `|I| <= M` or only `|I| = M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SobolevKind {
    Full,
    Homogeneous,
}

/// `|T|_Frame`: square root of the sum of squared components.
pub fn frame_norm(t: &TensorField) -> TensorField {
    let mut out = TensorField::zeros(t.grid(), (0, 0));
    for p in 0..t.npts() {
        out.at_mut(p)[0] = t.at(p).iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    out
}

/// `|T|^2_g` at one point.
pub fn g_norm_sq_at(comps: &[f64], valence: (usize, usize), g: &[f64], ginv: &[f64], d: usize) -> f64 {
    let (l, m) = valence;
    let rank = l + m;
    match (l, m) {
        (0, 0) => comps[0] * comps[0],
        (1, 0) | (0, 1) => {
            let metric = if l == 1 { g } else { ginv };
            let mut s = 0.0;
            for i in 0..d {
                let row = &metric[i * d..(i + 1) * d];
                s += comps[i] * row.iter().zip(comps).map(|(a, b)| a * b).sum::<f64>();
            }
            s
        }
        (2, 0) => linalg::frobenius_dot(comps, &linalg::matmul3(g, comps, g, d)),
        (0, 2) => linalg::frobenius_dot(comps, &linalg::matmul3(ginv, comps, ginv, d)),
        (1, 1) => linalg::frobenius_dot(comps, &linalg::matmul3(g, comps, ginv, d)),
        _ => {
            let mut lowered = comps.to_vec();
            for axis in 0..rank {
                let metric = if axis < l { g } else { ginv };
                lowered = linalg::mode_product(&lowered, metric, d, rank, axis);
            }
            linalg::frobenius_dot(comps, &lowered)
        }
    }
}

/// `|T|_g` at every grid point.
pub fn g_norm(t: &TensorField, g: &TensorField, ginv: &TensorField) -> Result<TensorField> {
    check_metric(t, g, ginv)?;
    let d = t.dim();
    let mut out = TensorField::zeros(t.grid(), (0, 0));
    for p in 0..t.npts() {
        let comps = t.at(p);
        let v = if comps.iter().all(|&c| c == 0.0) {
            0.0
        } else {
            g_norm_sq_at(comps, t.valence(), g.at(p), ginv.at(p), d).max(0.0).sqrt()
        };
        out.at_mut(p)[0] = v;
    }
    Ok(out)
}

fn check_metric(t: &TensorField, g: &TensorField, ginv: &TensorField) -> Result<()> {
    if g.valence() != (0, 2) || ginv.valence() != (2, 0) {
        return Err(Error::Domain("g-norm needs a (0,2) metric and a (2,0) inverse".into()));
    }
    if !t.grid().compatible(g.grid()) || !t.grid().compatible(ginv.grid()) {
        return Err(Error::Domain("tensor and metric live on different grids".into()));
    }
    Ok(())
}

/// Pointwise norm selected by `metric`.
pub fn pointwise_norm(t: &TensorField, metric: NormMetric<'_>) -> Result<TensorField> {
    match metric {
        NormMetric::Frame => Ok(frame_norm(t)),
        NormMetric::G { g, ginv } => g_norm(t, g, ginv),
    }
}

/// `ess sup |f|` of a scalar field.
pub fn linf(f: &TensorField) -> f64 {
    debug_assert_eq!(f.rank(), 0);
    f.max_abs()
}

/// Flat-measure `L^2` norm of a scalar field.
pub fn l2(f: &TensorField) -> f64 {
    debug_assert_eq!(f.rank(), 0);
    (f.data().iter().map(|v| v * v).sum::<f64>() / f.npts() as f64).sqrt()
}

/// All derivative-count vectors over `n_slots` active directions with total order `order`.
pub fn multi_indices(n_slots: usize, order: u32) -> Vec<Vec<u32>> {
    fn rec(slots: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in (0..=remaining).rev() {
            prefix.push(c);
            rec(slots - 1, remaining - c, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n_slots == 0 {
        if order == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(n_slots, order, &mut Vec::new(), &mut out);
    out
}

fn orders(m: u32, kind: SobolevKind) -> std::ops::RangeInclusive<u32> {
    match kind {
        SobolevKind::Full => 0..=m,
        SobolevKind::Homogeneous => m..=m,
    }
}

fn check_order(m: u32) -> Result<()> {
    if m > MAX_DERIVATIVE_ORDER {
        return Err(Error::Config(format!(
            "Sobolev order {m} exceeds the derivative cap {MAX_DERIVATIVE_ORDER}"
        )));
    }
    Ok(())
}

/// `H^M` (or `Ḣ^M`) norm: square root of the summed squared `L^2` norms of
/// `|∂_I T|` over multi-indices in the active directions.
pub fn sobolev_norm(f: &TensorField, m: u32, kind: SobolevKind, metric: NormMetric<'_>) -> Result<f64> {
    check_order(m)?;
    let mut total = 0.0;
    for order in orders(m, kind) {
        for counts in multi_indices(f.grid().n_active(), order) {
            let d = f.partial(&counts);
            total += l2(&pointwise_norm(&d, metric)?).powi(2);
        }
    }
    Ok(total.sqrt())
}

/// `W^{M,∞}` (or `Ẇ^{M,∞}`) norm: sum over multi-indices of `sup |∂_I T|`.
pub fn w_inf_norm(f: &TensorField, m: u32, kind: SobolevKind, metric: NormMetric<'_>) -> Result<f64> {
    check_order(m)?;
    let mut total = 0.0;
    for order in orders(m, kind) {
        for counts in multi_indices(f.grid().n_active(), order) {
            total += linf(&pointwise_norm(&f.partial(&counts), metric)?);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, Scheme};
    use crate::kasner::{construct_exponents, kasner_state, Root};
    use std::f64::consts::PI;

    fn identity(d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d * d];
        (0..d).for_each(|i| v[i * d + i] = 1.0);
        v
    }

    #[test]
    fn frame_norm_of_identity_and_zero() {
        let grid = GridSpec::homogeneous(38);
        let id = TensorField::constant(&grid, (1, 1), &identity(38));
        assert!((frame_norm(&id).value(0) - 38f64.sqrt()).abs() < 1e-14);
        assert_eq!(frame_norm(&TensorField::zeros(&grid, (1, 1))).value(0), 0.0);
    }

    #[test]
    fn frame_norm_of_kasner_metric() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let s = kasner_state(&q, 0.5, &GridSpec::homogeneous(38)).unwrap();
        let direct: f64 = q.as_slice().iter().map(|qi| 0.5f64.powf(4.0 * qi)).sum::<f64>().sqrt();
        assert!((frame_norm(&s.g).value(0) - direct).abs() < 1e-13);
    }

    #[test]
    fn g_norm_identities_on_kasner() {
        let q = construct_exponents(38, 0.001, Root::Plus).unwrap();
        let s = kasner_state(&q, 0.3, &GridSpec::homogeneous(38)).unwrap();
        let sqrt_d = 38f64.sqrt();
        assert!((g_norm(&s.g, &s.g, &s.ginv).unwrap().value(0) - sqrt_d).abs() < 1e-12);
        assert!((g_norm(&s.ginv, &s.g, &s.ginv).unwrap().value(0) - sqrt_d).abs() < 1e-12);
        let id = TensorField::constant(s.grid(), (1, 1), &identity(38));
        assert!((g_norm(&id, &s.g, &s.ginv).unwrap().value(0) - sqrt_d).abs() < 1e-12);
        assert!((g_norm(&s.kappa(), &s.g, &s.ginv).unwrap().value(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_three_g_norm_uses_mode_products() {
        let grid = GridSpec::homogeneous(2);
        let g = TensorField::constant(&grid, (0, 2), &[2.0, 0.0, 0.0, 3.0]);
        let ginv = TensorField::constant(&grid, (2, 0), &[0.5, 0.0, 0.0, 1.0 / 3.0]);
        let mut t = TensorField::zeros(&grid, (0, 3));
        t.at_mut(0)[7] = 1.0; // T_{111}
        let v = g_norm(&t, &g, &ginv).unwrap().value(0);
        assert!((v * v - 1.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(1, 3), vec![vec![3]]);
        assert_eq!(multi_indices(2, 2).len(), 3);
        assert_eq!(multi_indices(3, 2).len(), 6);
        assert_eq!(multi_indices(0, 0), vec![Vec::<u32>::new()]);
        assert!(multi_indices(0, 1).is_empty());
    }

    #[test]
    fn sobolev_of_sine() {
        let grid = GridSpec::new(3, vec![0], vec![32], Scheme::Spectral).unwrap();
        let f = TensorField::scalar_from_fn(&grid, |x| (2.0 * PI * x[0]).sin());
        let v = sobolev_norm(&f, 1, SobolevKind::Full, NormMetric::Frame).unwrap();
        let exact = (0.5 + 2.0 * PI * PI).sqrt();
        assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
        assert!((v - 4.49880).abs() < 1e-5);
        let c = TensorField::scalar_from_fn(&grid, |_| 3.0);
        assert_eq!(sobolev_norm(&c, 1, SobolevKind::Homogeneous, NormMetric::Frame).unwrap(), 0.0);
        assert!(sobolev_norm(&c, 7, SobolevKind::Full, NormMetric::Frame).is_err());
    }
}
