//! Group operations on displacement fields beyond composition: fixed-point
//! inversion, square roots, root chains, and the log/exp maps.
//!
//! The logarithm is computed by inverse scaling and squaring: take `N` successive
//! square roots, so that `phi^(1/2^N)` is close to the identity, treat its
//! displacement as its logarithm, and scale back up by `2^N`. The exponential is
//! the matching scaling-and-squaring scheme.

use crate::error::{Error, Result};
use crate::field::{
    compose_unchecked, neg_jacobian_fraction, rms_diff_slices, self_compose_m, DisplacementField, Grid,
};

/// Settings for the damped fixed-point solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop once the RMS update falls below this many pixels.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Relaxation factor in `(0, 1]` for both fixed-point iterations.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 200,
            damping: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Domain("solver tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Domain("solver needs at least one iteration".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Domain("solver damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Solver output with its achieved residual.
#[derive(Debug, Clone)]
pub struct Solved {
    pub field: DisplacementField,
    /// RMS residual of the defining equation, in pixels.
    pub residual: f64,
    pub iterations: usize,
    /// Set when the input already had non-positive Jacobian determinants, in which
    /// case the result carries no diffeomorphism guarantee.
    pub folded_input: bool,
}

/// Tangent vector field `v`; `exp(v)` is a deformation.
#[derive(Debug, Clone, PartialEq)]
pub struct LogField {
    grid: Grid,
    data: Vec<[f64; 2]>,
}

impl LogField {
    pub fn new(grid: Grid, data: Vec<[f64; 2]>) -> Result<Self> {
        DisplacementField::new(grid, data).map(Self::from_displacement_data)
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![[0.0; 2]; grid.len()],
        }
    }

    pub fn constant(grid: Grid, v: [f64; 2]) -> Self {
        Self {
            grid,
            data: vec![v; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize, usize) -> [f64; 2]) -> Self {
        Self::from_displacement_data(DisplacementField::from_fn(grid, f))
    }

    /// Reinterpret a displacement array as a tangent field (same storage).
    pub fn from_displacement_data(field: DisplacementField) -> Self {
        let grid = field.grid();
        Self {
            grid,
            data: field.into_data(),
        }
    }

    pub(crate) fn from_raw(grid: Grid, data: Vec<[f64; 2]>) -> Self {
        debug_assert_eq!(grid.len(), data.len());
        Self { grid, data }
    }

    /// The same array viewed as a displacement field.
    pub fn as_displacement(&self) -> DisplacementField {
        DisplacementField::from_raw(self.grid, self.data.clone())
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.data
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            data: self.data.iter().map(|v| [v[0] * factor, v[1] * factor]).collect(),
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max)
    }

    /// Flattened view `[r0, c0, r1, c1, ...]` used by the latent model.
    pub fn flatten(&self) -> Vec<f64> {
        self.data.iter().flat_map(|v| [v[0], v[1]]).collect()
    }

    pub fn from_flat(grid: Grid, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * grid.len() {
            return Err(Error::Shape(format!(
                "flat vector of length {} does not fit a {}x{} field",
                flat.len(),
                grid.height(),
                grid.width()
            )));
        }
        Ok(Self {
            grid,
            data: flat.chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
        })
    }

    /// RMS difference with the same convention as [`crate::field::field_rms_diff`].
    pub fn rms_diff(&self, other: &LogField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::Shape("log field grids differ".into()));
        }
        Ok(rms_diff_slices(&self.data, &other.data))
    }
}

/// Successive square roots `phi^(1/2), phi^(1/4), ..., phi^(1/2^N)`.
#[derive(Debug, Clone)]
pub struct RootChain {
    /// `roots[n]` holds `phi^(1/2^(n+1))`.
    pub roots: Vec<DisplacementField>,
    /// Square-root residual of each level, `rms(roots[n] ∘ roots[n] - roots[n-1])`.
    pub residuals: Vec<f64>,
}

impl RootChain {
    pub fn depth(&self) -> usize {
        self.roots.len()
    }

    pub fn grid(&self) -> Option<Grid> {
        self.roots.first().map(|r| r.grid())
    }

    /// `rms(self_compose(roots[n], 2^(n+1)) - phi)` for every level.
    pub fn reconstruction_residuals(&self, field: &DisplacementField) -> Result<Vec<f64>> {
        self.roots
            .iter()
            .enumerate()
            .map(|(n, root)| {
                let rebuilt = self_compose_m(root, 1 << (n + 1))?;
                crate::field::field_rms_diff(&rebuilt, field)
            })
            .collect()
    }
}

fn add_scaled(into: &mut [[f64; 2]], from: &[[f64; 2]], factor: f64) {
    for (a, b) in into.iter_mut().zip(from) {
        a[0] += factor * b[0];
        a[1] += factor * b[1];
    }
}

/// Inverse by the fixed point `w(x) = -u(x + w(x))`, starting from `w = -u`.
///
/// Each sweep relaxes toward the fixed point by `damping`:
/// `w <- w - damping * (w + u(x + w))`. The reported residual is
/// `rms(compose(field, w))`, i.e. `phi ∘ phi^-1 - id`.
pub fn invert(field: &DisplacementField, cfg: &SolverConfig) -> Result<Solved> {
    cfg.validate()?;
    let folded_input = neg_jacobian_fraction(field) > 0.0;
    let mut w = field.negated();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let residual = compose_unchecked(field, &w);
        let update = cfg.damping * rms_diff_slices(residual.data(), &vec![[0.0; 2]; residual.data().len()]);
        add_scaled(w.data_mut(), residual.data(), -cfg.damping);
        if !update.is_finite() {
            return Err(Error::Convergence {
                solver: "invert",
                iterations,
                residual: f64::NAN,
            });
        }
        if update < cfg.tolerance {
            break;
        }
        if iterations >= cfg.max_iterations {
            return Err(Error::Convergence {
                solver: "invert",
                iterations,
                residual: inverse_residual(field, &w),
            });
        }
    }
    let residual = inverse_residual(field, &w);
    Ok(Solved {
        field: w,
        residual,
        iterations,
        folded_input,
    })
}

fn inverse_residual(field: &DisplacementField, inverse: &DisplacementField) -> f64 {
    let c = compose_unchecked(field, inverse);
    rms_diff_slices(c.data(), &vec![[0.0; 2]; c.data().len()])
}

/// Square root `psi` with `psi ∘ psi ≈ phi`, by the damped iteration
/// `w <- w + damping * (u - w ∘ w)` from `w = u / 2`.
pub fn sqrt_field(field: &DisplacementField, cfg: &SolverConfig) -> Result<Solved> {
    cfg.validate()?;
    let folded_input = neg_jacobian_fraction(field) > 0.0;
    let mut w = field.scaled(0.5);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let square = compose_unchecked(&w, &w);
        let residual: Vec<[f64; 2]> = field
            .data()
            .iter()
            .zip(square.data())
            .map(|(u, s)| [u[0] - s[0], u[1] - s[1]])
            .collect();
        let update = cfg.damping * rms_diff_slices(&residual, &vec![[0.0; 2]; residual.len()]);
        add_scaled(w.data_mut(), &residual, cfg.damping);
        if !update.is_finite() {
            return Err(Error::Convergence {
                solver: "sqrt",
                iterations,
                residual: f64::NAN,
            });
        }
        if update < cfg.tolerance {
            break;
        }
        if iterations >= cfg.max_iterations {
            return Err(Error::Convergence {
                solver: "sqrt",
                iterations,
                residual: square_residual(field, &w),
            });
        }
    }
    let residual = square_residual(field, &w);
    Ok(Solved {
        field: w,
        residual,
        iterations,
        folded_input,
    })
}

fn square_residual(field: &DisplacementField, root: &DisplacementField) -> f64 {
    rms_diff_slices(compose_unchecked(root, root).data(), field.data())
}

/// `N` successive square roots; errors carry the failing level (0-based).
pub fn root_chain(field: &DisplacementField, depth: usize, cfg: &SolverConfig) -> Result<RootChain> {
    if depth == 0 {
        return Err(Error::Domain("root chain depth must be at least 1".into()));
    }
    let mut roots = Vec::with_capacity(depth);
    let mut residuals = Vec::with_capacity(depth);
    let mut current = field.clone();
    for level in 0..depth {
        let solved = sqrt_field(&current, cfg).map_err(|e| Error::ChainLevel {
            level,
            source: Box::new(e),
        })?;
        residuals.push(solved.residual);
        current = solved.field;
        roots.push(current.clone());
    }
    Ok(RootChain { roots, residuals })
}

/// `log(phi) = 2^N (phi^(1/2^N) - id)`.
pub fn log_field(field: &DisplacementField, depth: usize, cfg: &SolverConfig) -> Result<LogField> {
    let chain = root_chain(field, depth, cfg)?;
    Ok(log_from_chain(&chain))
}

/// Logarithm read off the deepest root of an existing chain.
pub fn log_from_chain(chain: &RootChain) -> LogField {
    let last = chain.roots.last().expect("chain depth >= 1");
    let scale = (1u64 << chain.depth()) as f64;
    LogField::from_displacement_data(last.scaled(scale))
}

/// Scaling and squaring: `u = v / 2^N`, then square `N` times.
pub fn exp_field(v: &LogField, depth: usize) -> Result<DisplacementField> {
    if depth == 0 {
        return Err(Error::Domain("exp depth must be at least 1".into()));
    }
    let scale = 1.0 / (1u64 << depth) as f64;
    let mut u = DisplacementField::from_raw(v.grid, v.data.iter().map(|x| [x[0] * scale, x[1] * scale]).collect());
    for _ in 0..depth {
        u = compose_unchecked(&u, &u);
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{compose, field_rms_diff, identity_field};

    fn grid() -> Grid {
        Grid::new(16, 16).unwrap()
    }

    fn bump(grid: Grid, amp: f64) -> DisplacementField {
        let (h, w) = (grid.height() as f64, grid.width() as f64);
        DisplacementField::from_fn(grid, |r, c| {
            let y = r as f64 / (h - 1.0) * std::f64::consts::PI;
            let x = c as f64 / (w - 1.0) * std::f64::consts::PI;
            [amp * y.sin() * x.sin(), 0.5 * amp * (2.0 * y).sin() * x.sin()]
        })
    }

    #[test]
    fn invert_translation_and_identity() {
        let cfg = SolverConfig::default();
        let t = DisplacementField::constant(grid(), [1.0, 2.0]);
        let inv = invert(&t, &cfg).unwrap();
        assert!(inv.field.data().iter().all(|v| *v == [-1.0, -2.0]));
        assert_eq!(inv.residual, 0.0);
        let id = invert(&identity_field(grid()), &cfg).unwrap();
        assert_eq!(id.field, identity_field(grid()));
    }

    #[test]
    fn invert_smooth_field() {
        let f = bump(grid(), 1.5);
        let inv = invert(&f, &SolverConfig::default()).unwrap();
        assert!(inv.residual < 1e-5, "{}", inv.residual);
        let check = field_rms_diff(&compose(&f, &inv.field).unwrap(), &identity_field(grid())).unwrap();
        assert_eq!(check, inv.residual);
        assert!(!inv.folded_input);
    }

    #[test]
    fn invert_reports_non_convergence() {
        let cfg = SolverConfig {
            max_iterations: 2,
            ..SolverConfig::default()
        };
        let err = invert(&bump(grid(), 3.0), &cfg).unwrap_err();
        match err {
            Error::Convergence {
                residual, iterations, ..
            } => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0 && residual.is_finite());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sqrt_translation_identity_and_smooth() {
        let cfg = SolverConfig::default();
        let t = DisplacementField::constant(grid(), [2.0, 0.0]);
        let s = sqrt_field(&t, &cfg).unwrap();
        assert!(s.field.data().iter().all(|v| *v == [1.0, 0.0]));
        let id = sqrt_field(&identity_field(grid()), &cfg).unwrap();
        assert_eq!(id.field, identity_field(grid()));
        let f = bump(grid(), 2.0);
        let s = sqrt_field(&f, &cfg).unwrap();
        assert!(s.residual < 1e-5);
    }

    #[test]
    fn sqrt_flags_folded_input() {
        let fold = DisplacementField::from_fn(grid(), |r, _| [-2.5 * r as f64, 0.0]);
        assert!(neg_jacobian_fraction(&fold) > 0.0);
        // Linear maps with det < 0 have no real square root here; either a flagged
        // result or a convergence error is acceptable, never a silent success.
        match sqrt_field(&fold, &SolverConfig::default()) {
            Ok(s) => assert!(s.folded_input),
            Err(e) => assert!(matches!(e, Error::Convergence { .. })),
        }
    }

    #[test]
    fn root_chain_of_translation_halves() {
        let t = DisplacementField::constant(grid(), [8.0, 0.0]);
        let chain = root_chain(&t, 3, &SolverConfig::default()).unwrap();
        let firsts: Vec<_> = chain.roots.iter().map(|r| r.get(3, 3)).collect();
        assert_eq!(firsts, vec![[4.0, 0.0], [2.0, 0.0], [1.0, 0.0]]);
        let one = root_chain(&t, 1, &SolverConfig::default()).unwrap();
        assert_eq!(one.roots[0], sqrt_field(&t, &SolverConfig::default()).unwrap().field);
    }

    #[test]
    fn chain_error_names_level() {
        let cfg = SolverConfig {
            max_iterations: 1,
            ..SolverConfig::default()
        };
        let err = root_chain(&bump(grid(), 2.0), 3, &cfg).unwrap_err();
        assert!(matches!(err, Error::ChainLevel { level: 0, .. }));
        assert!(err.is_numerical());
    }

    #[test]
    fn log_and_exp_of_translations() {
        let cfg = SolverConfig::default();
        assert_eq!(
            log_field(&identity_field(grid()), 6, &cfg).unwrap(),
            LogField::zeros(grid())
        );
        let t = DisplacementField::constant(grid(), [1.5, -0.5]);
        for n in [1, 3, 6] {
            let v = log_field(&t, n, &cfg).unwrap();
            assert!(v.data().iter().all(|x| *x == [1.5, -0.5]));
        }
        let v = LogField::constant(grid(), [1.0, 2.0]);
        for n in [1, 4, 6] {
            assert!(exp_field(&v, n).unwrap().data().iter().all(|x| *x == [1.0, 2.0]));
        }
        assert_eq!(exp_field(&LogField::zeros(grid()), 6).unwrap(), identity_field(grid()));
        assert!(exp_field(&v, 0).is_err());
    }

    #[test]
    fn log_exp_round_trip_smooth() {
        let f = bump(grid(), 1.5);
        let v = log_field(&f, 6, &SolverConfig::default()).unwrap();
        let back = exp_field(&v, 6).unwrap();
        assert!(field_rms_diff(&back, &f).unwrap() < 1e-3);
    }

    #[test]
    fn flat_round_trip() {
        let v = LogField::from_fn(grid(), |r, c| [r as f64, -(c as f64)]);
        let flat = v.flatten();
        assert_eq!(LogField::from_flat(grid(), &flat).unwrap(), v);
        assert!(LogField::from_flat(grid(), &flat[1..]).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig {
            damping: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            tolerance: -1.0,
            ..SolverConfig::default()
        };
        assert!(sqrt_field(&identity_field(grid()), &bad).is_err());
    }
}
