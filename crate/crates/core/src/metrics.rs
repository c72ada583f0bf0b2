//! Consistency losses over root chains and latent codes, plus overlap scores.
//!
//! Field norms follow the crate-wide convention: the squared norm of a
//! displacement field is the mean over pixels of `|u(x)|^2`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::{compose, DisplacementField, LabelImage};
use crate::latent::LatentCode;
use crate::lie::RootChain;

/// Weights of the reconstruction, inverse-consistency and latent terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedaWeights {
    pub alpha_rec: f64,
    pub alpha_inv: f64,
    pub alpha_linv: f64,
}

impl Default for LedaWeights {
    fn default() -> Self {
        Self {
            alpha_rec: 1.0,
            alpha_inv: 1.0,
            alpha_linv: 1.0,
        }
    }
}

/// Squared reconstruction residual of each chain against its field, summed over
/// levels and over both directions.
pub fn rec_loss(
    chain_ab: &RootChain,
    phi_ab: &DisplacementField,
    chain_ba: &RootChain,
    phi_ba: &DisplacementField,
) -> Result<f64> {
    let ab = chain_ab.reconstruction_residuals(phi_ab)?;
    let ba = chain_ba.reconstruction_residuals(phi_ba)?;
    Ok(ab.iter().chain(&ba).map(|r| r * r).sum())
}

/// Sum over levels of the mean squared displacement of `roots_ab[n] ∘ roots_ba[n]`.
pub fn inv_loss(chain_ab: &RootChain, chain_ba: &RootChain) -> Result<f64> {
    if chain_ab.depth() != chain_ba.depth() {
        return Err(Error::Shape(format!(
            "chain depths differ: {} vs {}",
            chain_ab.depth(),
            chain_ba.depth()
        )));
    }
    chain_ab
        .roots
        .iter()
        .zip(&chain_ba.roots)
        .map(|(ab, ba)| Ok(compose(ab, ba)?.mean_square_norm()))
        .sum()
}

/// `(1 + cos)/2 + |z_ab + z_ba|^2`. A pair with a zero vector has cosine -1 by convention.
pub fn latent_inv_loss(z_ab: &LatentCode, z_ba: &LatentCode) -> Result<f64> {
    if z_ab.len() != z_ba.len() {
        return Err(Error::Shape(format!(
            "latent codes have lengths {} and {}",
            z_ab.len(),
            z_ba.len()
        )));
    }
    let (a, b) = (z_ab.values(), z_ba.values());
    let (na, nb) = (z_ab.norm(), z_ba.norm());
    let cos = if na == 0.0 || nb == 0.0 {
        -1.0
    } else {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        (d / (na * nb)).clamp(-1.0, 1.0)
    };
    let sum_sq: f64 = a.iter().zip(b).map(|(x, y)| (x + y) * (x + y)).sum();
    Ok((1.0 + cos) / 2.0 + sum_sq)
}

pub fn secondary_loss(weights: &LedaWeights, rec: f64, inv: f64, linv: f64) -> Result<f64> {
    let w = [weights.alpha_rec, weights.alpha_inv, weights.alpha_linv];
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Domain("loss weights must be finite and non-negative".into()));
    }
    Ok(w[0] * rec + w[1] * inv + w[2] * linv)
}

/// `2|X ∩ Y| / (|X| + |Y|)` for the pixels carrying `label`; 1.0 when both are empty.
pub fn dice(a: &LabelImage, b: &LabelImage, label: u32) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(Error::Shape("label images have different grids".into()));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        let (in_a, in_b) = (x == label, y == label);
        inter += (in_a && in_b) as usize;
        total += in_a as usize + in_b as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    pub per_label: BTreeMap<u32, f64>,
    /// Unweighted mean over `per_label`; 1.0 when neither image has a nonzero label.
    pub mean: f64,
}

/// Dice for every nonzero label present in either image.
pub fn dice_report(warped: &LabelImage, target: &LabelImage) -> Result<DiceReport> {
    if warped.grid() != target.grid() {
        return Err(Error::Shape("label images have different grids".into()));
    }
    let mut labels: Vec<u32> = warped.distinct();
    labels.extend(target.distinct());
    labels.sort_unstable();
    labels.dedup();
    labels.retain(|&l| l != 0);
    let mut per_label = BTreeMap::new();
    for l in labels {
        per_label.insert(l, dice(warped, target, l)?);
    }
    let mean = if per_label.is_empty() {
        1.0
    } else {
        per_label.values().sum::<f64>() / per_label.len() as f64
    };
    Ok(DiceReport { per_label, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::lie::{root_chain, SolverConfig};
    use proptest::prelude::*;

    fn translation_chain(grid: Grid, t: [f64; 2], depth: usize) -> RootChain {
        let roots = (1..=depth)
            .map(|n| {
                let s = 1.0 / (1u64 << n) as f64;
                DisplacementField::constant(grid, [t[0] * s, t[1] * s])
            })
            .collect();
        RootChain {
            roots,
            residuals: vec![0.0; depth],
        }
    }

    #[test]
    fn rec_loss_of_exact_translation_chain_is_zero() {
        let grid = Grid::new(8, 8).unwrap();
        let phi = DisplacementField::constant(grid, [8.0, -4.0]);
        let chain = translation_chain(grid, [8.0, -4.0], 3);
        assert!(rec_loss(&chain, &phi, &chain, &phi).unwrap() < 1e-12);
    }

    #[test]
    fn rec_loss_single_level_matches_definition() {
        let grid = Grid::new(10, 10).unwrap();
        let phi = DisplacementField::from_fn(grid, |r, c| {
            let (x, y) = (r as f64 - 4.5, c as f64 - 4.5);
            [0.4 * (-(x * x + y * y) / 8.0).exp(), 0.0]
        });
        let chain = root_chain(&phi, 1, &SolverConfig::default()).unwrap();
        let rebuilt = compose(&chain.roots[0], &chain.roots[0]).unwrap();
        let expected = crate::field::field_rms_diff(&rebuilt, &phi).unwrap().powi(2);
        let id = DisplacementField::identity(grid);
        let id_chain = translation_chain(grid, [0.0, 0.0], 1);
        assert_eq!(rec_loss(&chain, &phi, &id_chain, &id).unwrap(), expected);
    }

    #[test]
    fn inv_loss_translation_cases() {
        let grid = Grid::new(5, 5).unwrap();
        let ab = translation_chain(grid, [8.0, 0.0], 3);
        let inverse = translation_chain(grid, [-8.0, 0.0], 3);
        assert_eq!(inv_loss(&ab, &inverse).unwrap(), 0.0);
        let id = translation_chain(grid, [0.0, 0.0], 3);
        assert_eq!(inv_loss(&ab, &id).unwrap(), 21.0);
        let short = translation_chain(grid, [0.0, 0.0], 2);
        assert!(matches!(inv_loss(&ab, &short), Err(Error::Shape(_))));
    }

    fn code(z: &[f64]) -> LatentCode {
        LatentCode::new(z.to_vec()).unwrap()
    }

    #[test]
    fn latent_inv_loss_values() {
        let z = code(&[1.0, -2.0, 0.5]);
        assert_eq!(latent_inv_loss(&z, &z.negated()).unwrap(), 0.0);
        let norm_sq = 1.0 + 4.0 + 0.25;
        assert_eq!(latent_inv_loss(&z, &z).unwrap(), 1.0 + 4.0 * norm_sq);
        let zero = LatentCode::zeros(3);
        assert_eq!(latent_inv_loss(&zero, &zero).unwrap(), 0.0);
        assert!(matches!(latent_inv_loss(&z, &code(&[0.0, 1.0])), Err(Error::Shape(_))));
    }

    #[test]
    fn secondary_loss_values() {
        let w = LedaWeights::default();
        assert_eq!(secondary_loss(&w, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(secondary_loss(&w, 1.0, 2.0, 3.0).unwrap(), 6.0);
        let no_linv = LedaWeights { alpha_linv: 0.0, ..w };
        assert_eq!(
            secondary_loss(&w, 1.0, 2.0, 3.0).unwrap() - secondary_loss(&no_linv, 1.0, 2.0, 3.0).unwrap(),
            3.0
        );
        let bad = LedaWeights { alpha_inv: -1.0, ..w };
        assert!(matches!(secondary_loss(&bad, 1.0, 2.0, 3.0), Err(Error::Domain(_))));
    }

    fn square(grid: Grid, r0: usize, c0: usize) -> LabelImage {
        LabelImage::from_fn(grid, |r, c| {
            ((r0..r0 + 2).contains(&r) && (c0..c0 + 2).contains(&c)) as u32
        })
    }

    #[test]
    fn dice_hand_counts() {
        let grid = Grid::new(5, 5).unwrap();
        let a = square(grid, 1, 1);
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
        assert_eq!(dice(&a, &square(grid, 3, 3), 1).unwrap(), 0.0);
        assert_eq!(dice(&a, &square(grid, 1, 2), 1).unwrap(), 0.5);
        assert_eq!(dice(&a, &a, 7).unwrap(), 1.0);
        let other = LabelImage::from_fn(Grid::new(4, 4).unwrap(), |_, _| 0);
        assert!(matches!(dice(&a, &other, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn dice_report_averages_labels() {
        let grid = Grid::new(4, 4).unwrap();
        let target = LabelImage::from_fn(grid, |r, _| {
            if r == 0 {
                1
            } else if r == 3 {
                2
            } else {
                0
            }
        });
        let same = dice_report(&target, &target).unwrap();
        assert_eq!(same.mean, 1.0);
        assert!(same.per_label.values().all(|&d| d == 1.0));

        let warped = LabelImage::from_fn(grid, |r, _| {
            if r == 0 {
                1
            } else if r == 2 {
                2
            } else {
                0
            }
        });
        let report = dice_report(&warped, &target).unwrap();
        assert_eq!(report.per_label.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(report.mean, 0.5);
    }

    proptest! {
        #[test]
        fn dice_is_symmetric_and_bounded(
            a in proptest::collection::vec(0u32..3, 16),
            b in proptest::collection::vec(0u32..3, 16),
            label in 0u32..3,
        ) {
            let grid = Grid::new(4, 4).unwrap();
            let a = LabelImage::new(grid, a).unwrap();
            let b = LabelImage::new(grid, b).unwrap();
            let ab = dice(&a, &b, label).unwrap();
            prop_assert_eq!(ab, dice(&b, &a, label).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn latent_inv_loss_is_non_negative(
            a in proptest::collection::vec(-3.0f64..3.0, 4),
            b in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            prop_assert!(latent_inv_loss(&code(&a), &code(&b)).unwrap() >= 0.0);
        }
    }
}
