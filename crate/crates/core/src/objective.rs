//! Masked multi-positive contrastive losses and their gradients.
//!
//! For a row `i` with positives `P(i)` and similarities `s_ij = z_i . z_j`:
//!
//! ```text
//! L_i = -(1/|P(i)|) sum_{p in P(i)} log( exp(s_ip/tau) / sum_{j != i} exp(s_ij/tau) )
//! ```
//!
//! averaged over rows with a nonempty `P(i)`. With `literal_eq1` the log is
//! dropped (the softmax fraction itself is averaged and negated).

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::views::PositiveMasks;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub literal_eq1: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.1,
            literal_eq1: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::param("temperature", format!("{} must be > 0", self.temperature)));
        }
        Ok(())
    }
}

/// Value, gradient w.r.t. `z`, and number of contributing rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedLoss<T> {
    pub value: f64,
    pub grad: Array2<T>,
    pub contributing: usize,
}

/// Loss of one space. Rows without positives are skipped; an all-empty mask
/// is a [`Error::DegenerateBatch`].
pub fn contrastive_loss<T: Scalar>(z: &Array2<T>, positives: &Array2<bool>, config: &LossConfig) -> Result<MaskedLoss<T>> {
    config.validate()?;
    let n = z.nrows();
    if positives.dim() != (n, n) {
        return Err(Error::Shape {
            expected: format!("({n}, {n}) mask"),
            actual: format!("{:?}", positives.dim()),
        });
    }
    let rows: Vec<usize> = (0..n).filter(|&i| positives.row(i).iter().any(|&b| b)).collect();
    if rows.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let inv_tau = 1.0 / config.temperature;
    let sim = z.dot(&z.t());
    let c = rows.len() as f64;
    // g[i][j] = dL/ds_ij
    let mut g = Array2::<f64>::zeros((n, n));
    let mut total = 0.0;
    for &i in &rows {
        let logits: Vec<f64> = (0..n).map(|j| sim[[i, j]].to_f64().unwrap() * inv_tau).collect();
        let max = (0..n).filter(|&j| j != i).map(|j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&j| j != i).map(|j| (logits[j] - max).exp()).sum();
        let lse = max + denom.ln();
        let q: Vec<f64> = (0..n).map(|j| if j == i { 0.0 } else { (logits[j] - lse).exp() }).collect();
        let pos: Vec<usize> = (0..n).filter(|&j| positives[[i, j]]).collect();
        let np = pos.len() as f64;
        if config.literal_eq1 {
            let qp: f64 = pos.iter().map(|&p| q[p]).sum();
            total += -qp / np;
            for j in (0..n).filter(|&j| j != i) {
                let ind = if positives[[i, j]] { q[j] } else { 0.0 };
                g[[i, j]] = -(ind - q[j] * qp) / np * inv_tau / c;
            }
        } else {
            let mean_pos: f64 = pos.iter().map(|&p| logits[p]).sum::<f64>() / np;
            total += lse - mean_pos;
            for j in (0..n).filter(|&j| j != i) {
                let ind = if positives[[i, j]] { 1.0 / np } else { 0.0 };
                g[[i, j]] = (q[j] - ind) * inv_tau / c;
            }
        }
    }
    let g = g.mapv(T::of);
    let grad = g.dot(z) + g.t().dot(z);
    Ok(MaskedLoss {
        value: total / c,
        grad,
        contributing: rows.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub all_invariant: f64,
    pub per_subspace: Vec<f64>,
    pub total: f64,
    /// Rows with a nonempty positive set: all-invariant first, then each subspace.
    pub contributing_counts: Vec<usize>,
    /// d total / d z for each space, in `[Z^i, Z^k..]` order.
    pub grads: Vec<Array2<T>>,
}

/// Averaged total over the all-invariant space and every variant subspace.
/// `spaces[0]` pairs with `masks.all_invariant`, `spaces[1 + k]` with
/// `masks.per_subspace[k]`. An entirely empty subspace contributes 0.
pub fn loev_loss<T: Scalar>(spaces: &[Array2<T>], masks: &PositiveMasks, config: &LossConfig) -> Result<LossBreakdown<T>> {
    let k = masks.k();
    if spaces.len() != k + 1 {
        return Err(Error::param(
            "spaces",
            format!("{} projection spaces for {} variant masks (need {})", spaces.len(), k, k + 1),
        ));
    }
    let scale = T::of(1.0 / (k + 1) as f64);
    let all = contrastive_loss(&spaces[0], &masks.all_invariant, config)?;
    let mut total = all.value;
    let mut counts = vec![all.contributing];
    let mut grads = vec![all.grad * scale];
    let mut per_subspace = Vec::with_capacity(k);
    for (j, mask) in masks.per_subspace.iter().enumerate() {
        match contrastive_loss(&spaces[j + 1], mask, config) {
            Ok(l) => {
                total += l.value;
                per_subspace.push(l.value);
                counts.push(l.contributing);
                grads.push(l.grad * scale);
            }
            Err(Error::DegenerateBatch) => {
                log::warn!("subspace {} has no positive pairs in this batch; contributing 0", j + 1);
                per_subspace.push(0.0);
                counts.push(0);
                grads.push(Array2::zeros(spaces[j + 1].raw_dim()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(LossBreakdown {
        all_invariant: all.value,
        per_subspace,
        total: total / (k + 1) as f64,
        contributing_counts: counts,
        grads,
    })
}

/// Row-normalize (helper for callers holding raw vectors).
pub fn normalize_rows<T: Scalar>(z: &Array2<T>) -> Array2<T> {
    let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(T::of(1e-12)));
    z / &norms.insert_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::views::positive_masks;
    use rand::Rng as _;

    fn rand_z(n: usize, d: usize, s: u64) -> Array2<f64> {
        let mut rng = seed::rng(s);
        normalize_rows(&Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0)))
    }

    fn cfg(t: f64) -> LossConfig {
        LossConfig { temperature: t, literal_eq1: false }
    }

    #[test]
    fn two_identical_views_have_zero_loss() {
        let z = ndarray::arr2(&[[1.0, 0.0], [1.0, 0.0]]);
        let l = contrastive_loss(&z, &positive_masks(&[0, 0], &Array2::zeros((2, 0))).all_invariant, &cfg(1.0)).unwrap();
        assert!(l.value.abs() < 1e-15);
    }

    #[test]
    fn orthogonal_pairs_give_log_three() {
        let z = Array2::<f64>::eye(4);
        let m = positive_masks(&[0, 0, 1, 1], &Array2::zeros((4, 0)));
        let l = contrastive_loss(&z, &m.all_invariant, &cfg(0.5)).unwrap();
        assert!((l.value - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let z = Array2::<f64>::eye(2);
        let m = positive_masks(&[0, 0], &Array2::zeros((2, 0)));
        assert!(matches!(contrastive_loss(&z, &m.all_invariant, &cfg(0.0)), Err(Error::Parameter { .. })));
        let empty = Array2::from_elem((2, 2), false);
        assert!(matches!(contrastive_loss(&z, &empty, &cfg(0.1)), Err(Error::DegenerateBatch)));
        assert!(loev_loss(&[z.clone()], &positive_masks(&[0, 0], &Array2::zeros((2, 1))), &cfg(0.1)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for literal in [false, true] {
            let c = LossConfig { temperature: 0.3, literal_eq1: literal };
            let z = rand_z(6, 3, 4);
            let t = ndarray::arr2(&[[1u8], [0], [0], [1], [0], [0]]);
            let m = positive_masks(&[0, 0, 0, 1, 1, 1], &t);
            let l = contrastive_loss(&z, &m.per_subspace[0], &c).unwrap();
            let h = 1e-6;
            for i in 0..6 {
                for d in 0..3 {
                    let mut zp = z.clone();
                    zp[[i, d]] += h;
                    let mut zm = z.clone();
                    zm[[i, d]] -= h;
                    let num = (contrastive_loss(&zp, &m.per_subspace[0], &c).unwrap().value
                        - contrastive_loss(&zm, &m.per_subspace[0], &c).unwrap().value)
                        / (2.0 * h);
                    assert!((num - l.grad[[i, d]]).abs() < 1e-7, "{literal} {i} {d}");
                }
            }
        }
    }

    #[test]
    fn k_zero_reduces_to_single_space() {
        let z = rand_z(8, 4, 1);
        let m = positive_masks(&[0, 0, 0, 0, 1, 1, 1, 1], &Array2::zeros((8, 0)));
        let b = loev_loss(&[z.clone()], &m, &cfg(0.1)).unwrap();
        let single = contrastive_loss(&z, &m.all_invariant, &cfg(0.1)).unwrap();
        assert_eq!(b.total, single.value);
        assert_eq!(b.grads[0], single.grad);
    }

    #[test]
    fn unaugmented_subspace_equals_all_invariant_mask() {
        let m = positive_masks(&[0, 0, 1, 1], &Array2::zeros((4, 2)));
        let zs = [rand_z(4, 3, 1), rand_z(4, 3, 2), rand_z(4, 3, 3)];
        let b = loev_loss(&zs, &m, &cfg(0.2)).unwrap();
        let direct = contrastive_loss(&zs[2], &m.all_invariant, &cfg(0.2)).unwrap();
        assert!((b.per_subspace[1] - direct.value).abs() < 1e-15);
    }

    #[test]
    fn empty_subspace_contributes_zero() {
        let t = ndarray::arr2(&[[1u8], [1], [1], [1]]);
        let m = positive_masks(&[0, 0, 1, 1], &t);
        let zs = [rand_z(4, 3, 1), rand_z(4, 3, 2)];
        let b = loev_loss(&zs, &m, &cfg(0.2)).unwrap();
        assert_eq!(b.per_subspace, vec![0.0]);
        assert_eq!(b.contributing_counts, vec![4, 0]);
        assert!((b.total - b.all_invariant / 2.0).abs() < 1e-15);
        assert!(b.grads[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rotation_and_permutation_invariance() {
        let z = rand_z(6, 3, 7);
        let m = positive_masks(&[0, 0, 1, 1, 2, 2], &Array2::zeros((6, 0)));
        let base = contrastive_loss(&z, &m.all_invariant, &cfg(0.1)).unwrap().value;
        let (a, b) = (0.7f64, -1.3f64);
        let rz = ndarray::arr2(&[[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]]);
        let rx = ndarray::arr2(&[[1.0, 0.0, 0.0], [0.0, b.cos(), -b.sin()], [0.0, b.sin(), b.cos()]]);
        let rotated = z.dot(&rz.dot(&rx));
        let l = contrastive_loss(&rotated, &m.all_invariant, &cfg(0.1)).unwrap();
        assert!((l.value - base).abs() < 1e-12);
        let col_sum = l.grad.t().dot(&rotated) - rotated.t().dot(&l.grad);
        assert!(col_sum.iter().all(|v| v.abs() < 1e-10));

        let perm = [3usize, 0, 5, 1, 4, 2];
        let zp = Array2::from_shape_fn((6, 3), |(i, d)| z[[perm[i], d]]);
        let ids: Vec<usize> = perm.iter().map(|&p| p / 2).collect();
        let mp = positive_masks(&ids, &Array2::zeros((6, 0)));
        let lp = contrastive_loss(&zp, &mp.all_invariant, &cfg(0.1)).unwrap().value;
        assert!((lp - base).abs() < 1e-12);
    }

    #[test]
    fn wider_gap_means_lower_loss() {
        let mask = positive_masks(&[0, 0, 1, 1], &Array2::zeros((4, 0))).all_invariant;
        let mut last = f64::INFINITY;
        for angle in [1.2f64, 0.9, 0.6, 0.3, 0.1] {
            // pairs separated by `angle`, the two pairs orthogonal
            let z = ndarray::arr2(&[
                [1.0, 0.0, 0.0],
                [angle.cos(), angle.sin(), 0.0],
                [0.0, 0.0, 1.0],
                [0.0, angle.sin(), angle.cos()],
            ]);
            let l = contrastive_loss(&z, &mask, &cfg(0.1)).unwrap().value;
            assert!(l < last);
            last = l;
        }
    }
}
