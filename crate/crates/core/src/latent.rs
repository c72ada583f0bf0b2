//! Linear latent space over log fields.
//!
//! Log fields live in a vector space, so a population of them is summarized by
//! ordinary PCA: a mean, an orthonormal set of components and per-mode standard
//! deviations. Codes are coordinates in that basis; decoding a scaled code and
//! exponentiating gives roots of the decoded deformation.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{DisplacementField, Grid};
use crate::lie::{exp_field, LogField};

/// Components must be orthonormal to this tolerance under the flattened dot product.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-8;

/// Mean, orthonormal components and per-mode standard deviations of a set of log fields.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEuclideanBasis {
    grid: Grid,
    mean: LogField,
    components: Vec<LogField>,
    singular_values: Vec<f64>,
    total_variance: f64,
    symmetrized: bool,
}

impl LogEuclideanBasis {
    /// Assemble a basis from stored parts, re-checking every invariant.
    pub fn from_parts(
        mean: LogField,
        components: Vec<LogField>,
        singular_values: Vec<f64>,
        total_variance: f64,
        symmetrized: bool,
    ) -> Result<Self> {
        let grid = mean.grid();
        if components.is_empty() {
            return Err(Error::Domain("a basis needs at least one component".into()));
        }
        if components.len() != singular_values.len() {
            return Err(Error::Shape(format!(
                "{} components but {} singular values",
                components.len(),
                singular_values.len()
            )));
        }
        if components.iter().any(|c| c.grid() != grid) {
            return Err(Error::Shape("basis component grid differs from the mean".into()));
        }
        if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) || singular_values.windows(2).any(|w| w[1] > w[0])
        {
            return Err(Error::Domain(
                "singular values must be finite, non-negative and descending".into(),
            ));
        }
        let captured: f64 = singular_values.iter().map(|s| s * s).sum();
        if !total_variance.is_finite() || total_variance < captured * (1.0 - 1e-9) {
            return Err(Error::Domain("total variance is below the captured variance".into()));
        }
        let basis = Self {
            grid,
            mean,
            components,
            singular_values,
            total_variance,
            symmetrized,
        };
        let err = basis.orthonormality_error();
        if err > ORTHONORMAL_TOLERANCE {
            return Err(Error::Domain(format!(
                "components are not orthonormal (max deviation {err:.3e})"
            )));
        }
        Ok(basis)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mean(&self) -> &LogField {
        &self.mean
    }

    pub fn components(&self) -> &[LogField] {
        &self.components
    }

    /// Per-mode standard deviations, descending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Total per-sample variance of the fitted population, all modes included.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn symmetrized(&self) -> bool {
        self.symmetrized
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Largest deviation of the component Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.components.iter().enumerate() {
            for b in &self.components[i..] {
                let target = if std::ptr::eq(a, b) { 1.0 } else { 0.0 };
                worst = worst.max((dot(a.data(), b.data()) - target).abs());
            }
        }
        worst
    }

    fn check_grid(&self, v: &LogField) -> Result<()> {
        if v.grid() != self.grid {
            return Err(Error::Shape(format!(
                "log field is {}x{}, basis is {}x{}",
                v.grid().height(),
                v.grid().width(),
                self.grid.height(),
                self.grid.width()
            )));
        }
        Ok(())
    }
}

/// Coordinates of a log field in a [`LogEuclideanBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if let Some(i) = z.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(z))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|x| -x).collect())
    }

    /// Element-wise mean of equally sized codes, summed in index order.
    pub fn mean(codes: &[LatentCode]) -> Result<Self> {
        let first = codes
            .first()
            .ok_or_else(|| Error::Domain("mean of an empty code list".into()))?;
        let mut acc = vec![0.0; first.len()];
        for z in codes {
            if z.len() != acc.len() {
                return Err(Error::Shape("latent codes have different lengths".into()));
            }
            for (a, x) in acc.iter_mut().zip(&z.0) {
                *a += x;
            }
        }
        let n = codes.len() as f64;
        Ok(Self(acc.into_iter().map(|a| a / n).collect()))
    }
}

fn dot(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x[0] * y[0] + x[1] * y[1]).sum()
}

/// PCA over log fields.
///
/// With `symmetrize`, every sample is paired with its negation, so the mean is
/// exactly zero and `encode(-v) = -encode(v)`. Components come from the
/// eigendecomposition of the sample Gram matrix and are re-orthonormalized; each
/// one is signed so that its largest-magnitude entry is positive.
pub fn fit_basis(logs: &[LogField], d: usize, symmetrize: bool) -> Result<LogEuclideanBasis> {
    let first = logs
        .first()
        .ok_or_else(|| Error::Domain("fit_basis needs at least one log field".into()))?;
    let grid = first.grid();
    if logs.iter().any(|v| v.grid() != grid) {
        return Err(Error::Shape("log fields for fit_basis have different grids".into()));
    }
    if d == 0 {
        return Err(Error::Domain("latent dimension must be positive".into()));
    }
    let n = if symmetrize { 2 * logs.len() } else { logs.len() };
    if d > n {
        return Err(Error::Domain(format!(
            "latent dimension {d} exceeds the {n} available samples"
        )));
    }

    let mean = if symmetrize {
        LogField::zeros(grid)
    } else {
        let mut acc = vec![[0.0; 2]; grid.len()];
        for v in logs {
            for (a, x) in acc.iter_mut().zip(v.data()) {
                a[0] += x[0];
                a[1] += x[1];
            }
        }
        let k = logs.len() as f64;
        LogField::from_raw(grid, acc.into_iter().map(|a| [a[0] / k, a[1] / k]).collect())
    };
    let centered: Vec<Vec<[f64; 2]>> = logs
        .iter()
        .map(|v| {
            v.data()
                .iter()
                .zip(mean.data())
                .map(|(x, m)| [x[0] - m[0], x[1] - m[1]])
                .collect()
        })
        .collect();

    // Gram matrix of the (possibly augmented) sample set. Negated samples only
    // flip signs, so the augmented Gram matrix is built from the base one.
    let base = centered.len();
    let pairs: Vec<(usize, usize)> = (0..base).flat_map(|i| (i..base).map(move |j| (i, j))).collect();
    let dots: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| dot(&centered[i], &centered[j]))
        .collect();
    let mut base_gram = DMatrix::zeros(base, base);
    for (&(i, j), &g) in pairs.iter().zip(&dots) {
        base_gram[(i, j)] = g;
        base_gram[(j, i)] = g;
    }
    let sample = |k: usize| (k % base, if k < base { 1.0 } else { -1.0 });
    let gram = DMatrix::from_fn(n, n, |i, j| {
        let (bi, si) = sample(i);
        let (bj, sj) = sample(j);
        si * sj * base_gram[(bi, bj)]
    });

    let eigen = SymmetricEigen::new(gram.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));
    let total_energy = gram.trace();
    let largest = eigen.eigenvalues[order[0]].max(0.0);
    let threshold = largest * 1e-10 + f64::MIN_POSITIVE;
    let achieved = order
        .iter()
        .take_while(|&&k| eigen.eigenvalues[k] > threshold && largest > 0.0)
        .count();
    if achieved < d {
        return Err(Error::Rank { requested: d, achieved });
    }

    let mut components: Vec<Vec<[f64; 2]>> = Vec::with_capacity(d);
    for &k in order.iter().take(d) {
        let coeffs = eigen.eigenvectors.column(k);
        let mut u = vec![[0.0; 2]; grid.len()];
        for s in 0..n {
            let (b, sign) = sample(s);
            let w = sign * coeffs[s];
            for (acc, x) in u.iter_mut().zip(&centered[b]) {
                acc[0] += w * x[0];
                acc[1] += w * x[1];
            }
        }
        // Two passes of Gram-Schmidt against the earlier components.
        for _ in 0..2 {
            for prev in &components {
                let p = dot(&u, prev);
                for (a, q) in u.iter_mut().zip(prev) {
                    a[0] -= p * q[0];
                    a[1] -= p * q[1];
                }
            }
            let norm = dot(&u, &u).sqrt();
            if norm == 0.0 {
                return Err(Error::Rank {
                    requested: d,
                    achieved: components.len(),
                });
            }
            u.iter_mut().for_each(|a| {
                a[0] /= norm;
                a[1] /= norm;
            });
        }
        apply_sign_convention(&mut u);
        components.push(u);
    }

    let samples = n as f64;
    let singular_values: Vec<f64> = order
        .iter()
        .take(d)
        .map(|&k| (eigen.eigenvalues[k].max(0.0) / samples).sqrt())
        .collect();
    let captured: f64 = singular_values.iter().map(|s| s * s).sum();
    let total_variance = (total_energy / samples).max(captured);
    LogEuclideanBasis::from_parts(
        mean,
        components.into_iter().map(|u| LogField::from_raw(grid, u)).collect(),
        singular_values,
        total_variance,
        symmetrize,
    )
}

/// Flip `u` so that its entry of largest magnitude (first one on ties) is positive.
fn apply_sign_convention(u: &mut [[f64; 2]]) {
    let mut best: f64 = 0.0;
    for x in u.iter().flat_map(|p| p.iter()) {
        if x.abs() > best.abs() {
            best = *x;
        }
    }
    if best < 0.0 {
        u.iter_mut().for_each(|a| {
            a[0] = -a[0];
            a[1] = -a[1];
        });
    }
}

/// `z_k = <v - mean, U_k>`.
pub fn encode(basis: &LogEuclideanBasis, v: &LogField) -> Result<LatentCode> {
    basis.check_grid(v)?;
    let centered: Vec<[f64; 2]> = v
        .data()
        .iter()
        .zip(basis.mean.data())
        .map(|(x, m)| [x[0] - m[0], x[1] - m[1]])
        .collect();
    LatentCode::new(basis.components.iter().map(|u| dot(&centered, u.data())).collect())
}

/// `mean + sum_k z_k U_k`.
pub fn decode(basis: &LogEuclideanBasis, z: &LatentCode) -> Result<LogField> {
    if z.len() != basis.dim() {
        return Err(Error::Shape(format!(
            "code has {} entries, basis has {} components",
            z.len(),
            basis.dim()
        )));
    }
    let mut out = basis.mean.data().to_vec();
    for (u, &zk) in basis.components.iter().zip(z.values()) {
        for (a, x) in out.iter_mut().zip(u.data()) {
            a[0] += zk * x[0];
            a[1] += zk * x[1];
        }
    }
    Ok(LogField::from_raw(basis.grid, out))
}

/// The `m`-th root of the deformation encoded by `z`: `exp(decode(z) / m)`.
pub fn decode_root(basis: &LogEuclideanBasis, z: &LatentCode, m: u64, exp_depth: usize) -> Result<DisplacementField> {
    if !m.is_power_of_two() {
        return Err(Error::Domain(format!("root order {m} is not a power of two")));
    }
    let v = decode(basis, z)?;
    exp_field(&v.scaled(1.0 / m as f64), exp_depth)
}

/// Deformation `c` standard deviations along mode `k` (1-based).
pub fn pca_mode_field(basis: &LogEuclideanBasis, k: usize, c: f64, exp_depth: usize) -> Result<DisplacementField> {
    if k == 0 || k > basis.dim() {
        return Err(Error::Domain(format!("mode {k} outside 1..={}", basis.dim())));
    }
    if !c.is_finite() {
        return Err(Error::Domain("mode coefficient must be finite".into()));
    }
    let mut z = LatentCode::zeros(basis.dim());
    z.0[k - 1] = c * basis.singular_values[k - 1];
    exp_field(&decode(basis, &z)?, exp_depth)
}

/// Fraction of the population variance carried by each mode.
pub fn explained_variance(basis: &LogEuclideanBasis) -> Vec<f64> {
    if basis.total_variance == 0.0 {
        return vec![0.0; basis.dim()];
    }
    basis
        .singular_values
        .iter()
        .map(|s| s * s / basis.total_variance)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::new(6, 5).unwrap()
    }

    fn bump(grid: Grid, r0: f64, c0: f64, dir: [f64; 2]) -> LogField {
        LogField::from_fn(grid, |r, c| {
            let d2 = (r as f64 - r0).powi(2) + (c as f64 - c0).powi(2);
            let g = (-d2 / 4.0).exp();
            [dir[0] * g, dir[1] * g]
        })
    }

    fn normalized(v: &LogField) -> Vec<f64> {
        let f = v.flatten();
        let n = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        f.iter().map(|x| x / n).collect()
    }

    #[test]
    fn symmetric_pair_gives_one_full_mode() {
        let v = bump(grid(), 2.0, 2.0, [1.0, -0.5]);
        let basis = fit_basis(&[v.clone(), v.negated()], 1, false).unwrap();
        assert!(basis
            .mean()
            .data()
            .iter()
            .all(|m| m[0].abs() < 1e-15 && m[1].abs() < 1e-15));
        let u = basis.components()[0].flatten();
        let cos: f64 = u.iter().zip(normalized(&v)).map(|(a, b)| a * b).sum();
        assert!((cos.abs() - 1.0).abs() < 1e-12);
        assert!((explained_variance(&basis)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_unsymmetrized_sample_has_no_variance() {
        let v = bump(grid(), 2.0, 2.0, [1.0, 0.0]);
        match fit_basis(&[v], 1, false) {
            Err(Error::Rank {
                requested: 1,
                achieved: 0,
            }) => {}
            other => panic!("expected a rank error, got {other:?}"),
        }
    }

    #[test]
    fn bad_dimensions_are_rejected() {
        let v = bump(grid(), 2.0, 2.0, [1.0, 0.0]);
        assert!(matches!(
            fit_basis(std::slice::from_ref(&v), 3, true),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            fit_basis(std::slice::from_ref(&v), 0, true),
            Err(Error::Domain(_))
        ));
        assert!(matches!(fit_basis(&[], 1, true), Err(Error::Domain(_))));
        let other = LogField::zeros(Grid::new(3, 3).unwrap());
        assert!(matches!(fit_basis(&[v, other], 1, true), Err(Error::Shape(_))));
    }

    #[test]
    fn all_equal_samples_report_rank() {
        let v = bump(grid(), 2.0, 2.0, [1.0, 0.0]);
        assert!(matches!(
            fit_basis(&[v.clone(), v.clone(), v], 2, false),
            Err(Error::Rank {
                requested: 2,
                achieved: 0
            })
        ));
    }

    fn two_mode_basis() -> (LogEuclideanBasis, Vec<LogField>) {
        let g = grid();
        let logs = vec![
            bump(g, 1.0, 1.0, [1.0, 0.0]),
            bump(g, 4.0, 3.0, [0.0, 2.0]),
            bump(g, 2.0, 4.0, [0.5, 0.5]),
        ];
        (fit_basis(&logs, 3, true).unwrap(), logs)
    }

    #[test]
    fn encode_and_decode_are_consistent() {
        let (basis, logs) = two_mode_basis();
        assert!(basis.orthonormality_error() < 1e-12);
        assert_eq!(encode(&basis, basis.mean()).unwrap(), LatentCode::zeros(3));

        let shifted = LogField::from_fn(basis.grid(), |r, c| {
            let i = basis.grid().index(r, c);
            let (m, u) = (basis.mean().data()[i], basis.components()[0].data()[i]);
            [m[0] + 3.0 * u[0], m[1] + 3.0 * u[1]]
        });
        let z = encode(&basis, &shifted).unwrap();
        assert!((z.values()[0] - 3.0).abs() < 1e-12);
        assert!(z.values()[1..].iter().all(|x| x.abs() < 1e-12));

        for v in &logs {
            let a = encode(&basis, v).unwrap();
            let b = encode(&basis, &v.negated()).unwrap();
            assert!(a.values().iter().zip(b.values()).all(|(x, y)| x + y == 0.0));
            let back = decode(&basis, &a).unwrap();
            assert!(back.rms_diff(v).unwrap() < 1e-12);
        }
        assert_eq!(&decode(&basis, &LatentCode::zeros(3)).unwrap(), basis.mean());
        assert!(matches!(decode(&basis, &LatentCode::zeros(2)), Err(Error::Shape(_))));
    }

    #[test]
    fn projection_does_not_expand() {
        let (basis, _) = two_mode_basis();
        let v = bump(basis.grid(), 3.0, 0.0, [-1.0, 1.0]);
        let back = decode(&basis, &encode(&basis, &v).unwrap()).unwrap();
        assert!(back.rms_diff(&v).unwrap() <= v.rms_diff(basis.mean()).unwrap() + 1e-15);
    }

    #[test]
    fn explained_variance_sorted_and_bounded() {
        let (basis, _) = two_mode_basis();
        let ev = explained_variance(&basis);
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
        assert!(ev.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn equal_variance_modes_split_evenly() {
        let g = grid();
        let e1 = LogField::from_fn(g, |r, c| if (r, c) == (1, 1) { [1.0, 0.0] } else { [0.0, 0.0] });
        let e2 = LogField::from_fn(g, |r, c| if (r, c) == (4, 2) { [0.0, 1.0] } else { [0.0, 0.0] });
        let basis = fit_basis(&[e1, e2], 2, true).unwrap();
        for x in explained_variance(&basis) {
            assert!((x - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn sign_convention_is_applied() {
        let v = bump(grid(), 2.0, 2.0, [-1.0, 0.0]);
        let basis = fit_basis(&[v.negated(), v], 1, true).unwrap();
        let flat = basis.components()[0].flatten();
        let peak = flat
            .iter()
            .cloned()
            .fold(0.0, |a: f64, x| if x.abs() > a.abs() { x } else { a });
        assert!(peak > 0.0);
    }

    #[test]
    fn roots_and_modes_check_arguments() {
        let (basis, _) = two_mode_basis();
        let zero = LatentCode::zeros(3);
        for m in [1, 2, 8] {
            let id = decode_root(&basis, &zero, m, 6).unwrap();
            assert!(id.data().iter().all(|u| *u == [0.0, 0.0]));
        }
        assert!(matches!(decode_root(&basis, &zero, 3, 6), Err(Error::Domain(_))));
        assert!(matches!(decode_root(&basis, &zero, 0, 6), Err(Error::Domain(_))));
        let id = pca_mode_field(&basis, 1, 0.0, 6).unwrap();
        assert!(id.data().iter().all(|u| *u == [0.0, 0.0]));
        assert!(matches!(pca_mode_field(&basis, 0, 1.0, 6), Err(Error::Domain(_))));
        assert!(matches!(pca_mode_field(&basis, 4, 1.0, 6), Err(Error::Domain(_))));
    }

    #[test]
    fn from_parts_rejects_non_orthonormal() {
        let (basis, _) = two_mode_basis();
        let mut comps = basis.components().to_vec();
        comps[1] = comps[0].clone();
        let r = LogEuclideanBasis::from_parts(
            basis.mean().clone(),
            comps,
            basis.singular_values().to_vec(),
            basis.total_variance(),
            true,
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn encode_inverts_decode(z in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let (basis, _) = two_mode_basis();
            let code = LatentCode::new(z.clone()).unwrap();
            let back = encode(&basis, &decode(&basis, &code).unwrap()).unwrap();
            for (a, b) in back.values().iter().zip(&z) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
