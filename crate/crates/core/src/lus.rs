//! Local update sparsification.
//!
//! Coordinates of the local update are ranked per layer by the first-order
//! utility cost `|gradient * update|` of zeroing them; the per-layer top
//! `s_j = max(1, ceil((1 - c) * d_j))` survive and the rest are zeroed by a
//! Hadamard mask. Zeroing never grows the l2 norm, which is the whole point:
//! the masked update sits closer to the clipping ball.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Fraction of update coordinates to zero out, per layer.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SparsityConfig {
    /// Sparsity c in [0, 1): c = 0 keeps everything.
    pub sparsity: f64,
}

impl SparsityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::config("sparsity must be in [0, 1)"));
        }
        Ok(())
    }

    /// Per-layer keep count `s_j = max(1, ceil((1 - c) * d_j))`.
    pub fn keep_count(&self, layer_dim: usize) -> usize {
        let kept = ((1.0 - self.sparsity) * layer_dim as f64).ceil() as usize;
        kept.max(1).min(layer_dim)
    }
}

/// 0-1 mask with the same layout as the update it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMask {
    layers: Vec<(u32, Vec<bool>)>,
}

impl UpdateMask {
    pub fn all_ones(template: &ParamVector) -> Self {
        UpdateMask {
            layers: template
                .layers()
                .iter()
                .map(|l| (l.id, alloc::vec![true; l.values.len()]))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[(u32, Vec<bool>)] {
        &self.layers
    }

    pub fn matches_layout(&self, v: &ParamVector) -> bool {
        self.layers.len() == v.layers().len()
            && self
                .layers
                .iter()
                .zip(v.layers())
                .all(|((id, bits), l)| *id == l.id && bits.len() == l.values.len())
    }

    /// Number of kept coordinates in layer `j`.
    pub fn kept_in_layer(&self, j: usize) -> usize {
        self.layers[j].1.iter().filter(|&&b| b).count()
    }
}

/// Elementwise first-order utility cost `|grad * update|` of zeroing each
/// update coordinate.
pub fn utility_cost(grad: &ParamVector, update: &ParamVector) -> Result<ParamVector> {
    grad.check_layout(update, "utility_cost")?;
    grad.hadamard(update).map(|p| {
        let mut p = p;
        for layer in p.layers_mut() {
            for v in &mut layer.values {
                *v = v.abs();
            }
        }
        p
    })
}

/// Per layer, marks exactly `s_j` coordinates with the largest costs.
/// Ties break toward the lower flat index.
pub fn build_mask(costs: &ParamVector, cfg: &SparsityConfig) -> Result<UpdateMask> {
    cfg.validate()?;
    let mut layers = Vec::with_capacity(costs.layers().len());
    for layer in costs.layers() {
        let d = layer.values.len();
        let keep = cfg.keep_count(d);
        let mut order: Vec<usize> = (0..d).collect();
        // Total order: cost descending, then flat index ascending. The
        // selection only partitions around the keep boundary; it never fully
        // sorts the layer.
        if keep < d {
            order.select_nth_unstable_by(keep - 1, |&a, &b| {
                layer.values[b].total_cmp(&layer.values[a]).then(a.cmp(&b))
            });
        }
        let mut bits = alloc::vec![false; d];
        for &idx in &order[..keep] {
            bits[idx] = true;
        }
        layers.push((layer.id, bits));
    }
    Ok(UpdateMask { layers })
}

/// Hadamard product of the update with a 0-1 mask. Kept coordinates pass
/// through bit for bit; dropped ones become +0.0.
pub fn sparsify(update: &ParamVector, mask: &UpdateMask) -> Result<ParamVector> {
    if !mask.matches_layout(update) {
        return Err(Error::layout("sparsify: mask layout differs from update"));
    }
    let mut out = update.clone();
    for (layer, (_, bits)) in out.layers_mut().iter_mut().zip(&mask.layers) {
        for (v, &keep) in layer.values.iter_mut().zip(bits) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{next_f64, next_index, next_standard_normal, substream, STREAM_DATA};
    use alloc::vec;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::single(values.to_vec())
    }

    /// Brute-force oracle: full sort by (cost desc, index asc), keep first s_j.
    fn oracle_mask(costs: &ParamVector, cfg: &SparsityConfig) -> Vec<Vec<bool>> {
        costs
            .layers()
            .iter()
            .map(|layer| {
                let d = layer.values.len();
                let keep = cfg.keep_count(d);
                let mut order: Vec<usize> = (0..d).collect();
                order.sort_by(|&a, &b| layer.values[b].total_cmp(&layer.values[a]).then(a.cmp(&b)));
                let mut bits = vec![false; d];
                for &i in &order[..keep] {
                    bits[i] = true;
                }
                bits
            })
            .collect()
    }

    #[test]
    fn utility_cost_is_absolute_product() {
        let grad = pv(&[0.5, -2.0, 0.1]);
        let update = pv(&[2.0, 0.1, 3.0]);
        let costs = utility_cost(&grad, &update).unwrap();
        let want = [1.0, 0.2, 0.3];
        for (c, w) in costs.iter_values().zip(want) {
            assert!((c - w).abs() < 1e-15);
        }
    }

    #[test]
    fn utility_cost_ignores_sign_flips() {
        let grad = pv(&[0.5, -2.0, 0.1]);
        let update = pv(&[2.0, 0.1, -3.0]);
        let a = utility_cost(&grad, &update).unwrap();
        let b = utility_cost(&grad.scale(-1.0), &update).unwrap();
        let c = utility_cost(&grad, &update.scale(-1.0)).unwrap();
        for ((x, y), z) in a.iter_values().zip(b.iter_values()).zip(c.iter_values()) {
            assert_eq!(x, y);
            assert_eq!(x, z);
        }
    }

    #[test]
    fn utility_cost_zero_update_is_zero() {
        let grad = pv(&[1.0, -2.0]);
        let update = pv(&[0.0, 0.0]);
        assert!(utility_cost(&grad, &update)
            .unwrap()
            .iter_values()
            .all(|v| v == 0.0));
    }

    #[test]
    fn utility_cost_scales_with_update() {
        let grad = pv(&[0.5, -2.0, 0.1]);
        let update = pv(&[2.0, 0.1, 3.0]);
        let a = 3.5;
        let t1 = utility_cost(&grad, &update.scale(a)).unwrap();
        let t0 = utility_cost(&grad, &update).unwrap();
        for (x, y) in t1.iter_values().zip(t0.iter_values()) {
            assert!((x - a * y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_sparsity_keeps_everything() {
        let costs = pv(&[1.0, 0.2, 0.3]);
        let mask = build_mask(&costs, &SparsityConfig { sparsity: 0.0 }).unwrap();
        assert_eq!(mask.kept_in_layer(0), 3);
    }

    #[test]
    fn single_keep_picks_largest_cost() {
        let costs = pv(&[1.0, 0.2, 0.3]);
        // c = 0.7 on d = 3 gives s_j = max(1, ceil(0.9)) = 1.
        let mask = build_mask(&costs, &SparsityConfig { sparsity: 0.7 }).unwrap();
        assert_eq!(mask.layers()[0].1, vec![true, false, false]);
    }

    #[test]
    fn mask_matches_full_sort_oracle_on_random_layers() {
        let mut rng = substream(101, &[STREAM_DATA]);
        for case in 0..500 {
            let d = 1 + next_index(&mut rng, 96);
            let mut values: Vec<f64> = (0..d)
                .map(|_| next_standard_normal(&mut rng).abs())
                .collect();
            // Inject duplicated costs to exercise the tie-break.
            if d >= 4 && case % 3 == 0 {
                let v = values[0];
                values[d / 2] = v;
                values[d - 1] = v;
            }
            let costs = ParamVector::from_layers(vec![(0, values)]);
            let cfg = SparsityConfig {
                sparsity: next_f64(&mut rng) * 0.99,
            };
            let mask = build_mask(&costs, &cfg).unwrap();
            let want = oracle_mask(&costs, &cfg);
            assert_eq!(mask.layers()[0].1, want[0], "case {case} d {d}");
        }
    }

    #[test]
    fn mask_popcount_is_exact_per_layer() {
        let mut rng = substream(102, &[STREAM_DATA]);
        let costs = ParamVector::from_layers(vec![
            (0, (0..17).map(|_| next_f64(&mut rng)).collect()),
            (1, (0..5).map(|_| next_f64(&mut rng)).collect()),
            (2, vec![0.0; 9]),
        ]);
        for sparsity in [0.0, 0.3, 0.7, 0.95] {
            let cfg = SparsityConfig { sparsity };
            let mask = build_mask(&costs, &cfg).unwrap();
            for (j, layer) in costs.layers().iter().enumerate() {
                assert_eq!(mask.kept_in_layer(j), cfg.keep_count(layer.values.len()));
            }
        }
    }

    #[test]
    fn chosen_mask_maximizes_kept_cost_exhaustively() {
        // Every equal-cardinality mask on layers with d <= 12.
        let mut rng = substream(103, &[STREAM_DATA]);
        for _ in 0..30 {
            let d = 3 + next_index(&mut rng, 10);
            let values: Vec<f64> = (0..d).map(|_| next_f64(&mut rng)).collect();
            let costs = ParamVector::from_layers(vec![(0, values.clone())]);
            let cfg = SparsityConfig {
                sparsity: next_f64(&mut rng) * 0.9,
            };
            let keep = cfg.keep_count(d);
            let mask = build_mask(&costs, &cfg).unwrap();
            let kept_sum: f64 = mask.layers()[0]
                .1
                .iter()
                .zip(&values)
                .filter_map(|(&b, &v)| b.then_some(v))
                .sum();
            let mut best = 0.0f64;
            for subset in 0u32..(1 << d) {
                if subset.count_ones() as usize != keep {
                    continue;
                }
                let sum: f64 = (0..d)
                    .filter(|i| subset & (1 << i) != 0)
                    .map(|i| values[i])
                    .sum();
                best = best.max(sum);
            }
            assert!(kept_sum >= best - 1e-12, "kept {kept_sum} best {best}");
        }
    }

    #[test]
    fn sparsify_with_all_ones_is_bitwise_identity() {
        let update = pv(&[-1.5, 0.0, 2.25, -0.0]);
        let mask = UpdateMask::all_ones(&update);
        let out = sparsify(&update, &mask).unwrap();
        for (a, b) in out.iter_values().zip(update.iter_values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sparsify_keeps_single_coordinate() {
        let update = pv(&[3.0, 4.0]);
        let costs = pv(&[0.1, 9.0]);
        let mask = build_mask(&costs, &SparsityConfig { sparsity: 0.5 }).unwrap();
        let out = sparsify(&update, &mask).unwrap();
        let vals: Vec<f64> = out.iter_values().collect();
        assert_eq!(vals, vec![0.0, 4.0]);
        assert!(out.l2_norm() <= update.l2_norm());
    }

    #[test]
    fn pythagorean_split_holds() {
        let mut rng = substream(104, &[STREAM_DATA]);
        for _ in 0..200 {
            let d = 2 + next_index(&mut rng, 40);
            let update =
                ParamVector::single((0..d).map(|_| next_standard_normal(&mut rng)).collect());
            let costs = ParamVector::single((0..d).map(|_| next_f64(&mut rng)).collect());
            let cfg = SparsityConfig {
                sparsity: next_f64(&mut rng) * 0.99,
            };
            let mask = build_mask(&costs, &cfg).unwrap();
            let kept = sparsify(&update, &mask).unwrap();
            let dropped = update.sub(&kept).unwrap();
            let total = update.l2_norm().powi(2);
            let split = kept.l2_norm().powi(2) + dropped.l2_norm().powi(2);
            assert!((total - split).abs() <= 1e-12 * total.max(1.0));
            assert!(kept.l2_norm() <= update.l2_norm() * (1.0 + 1e-15));
        }
    }

    #[test]
    fn higher_sparsity_never_grows_the_norm() {
        let mut rng = substream(105, &[STREAM_DATA]);
        for _ in 0..50 {
            let d = 4 + next_index(&mut rng, 60);
            let update =
                ParamVector::single((0..d).map(|_| next_standard_normal(&mut rng)).collect());
            let costs = ParamVector::single((0..d).map(|_| next_f64(&mut rng)).collect());
            let mut last = f64::INFINITY;
            for sparsity in [0.0, 0.2, 0.4, 0.6, 0.8, 0.95] {
                let mask = build_mask(&costs, &SparsityConfig { sparsity }).unwrap();
                let norm = sparsify(&update, &mask).unwrap().l2_norm();
                assert!(norm <= last * (1.0 + 1e-15), "norm {norm} last {last}");
                last = norm;
            }
        }
    }

    #[test]
    fn sparsify_rejects_foreign_mask() {
        let update = pv(&[1.0, 2.0]);
        let mask = UpdateMask::all_ones(&pv(&[1.0, 2.0, 3.0]));
        assert!(matches!(
            sparsify(&update, &mask),
            Err(Error::LayoutMismatch(_))
        ));
    }
}
