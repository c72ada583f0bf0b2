//! Inverse-consistent pairwise registration.
//!
//! Both directions are estimated together by minimizing
//!
//! ```text
//! L_P = lambda_sim * (mse(A, B∘phi_ab) + mse(B, A∘phi_ba))
//!     + lambda_reg * (ms(phi_ab·phi_ba - id) + ms(phi_ba·phi_ab - id))
//! ```
//!
//! where `B∘phi_ab` is the backward warp `warp_image(B, phi_ab)` and `ms` is the
//! mean over pixels of the squared displacement norm.
//!
//! The optimizer is coarse-to-fine gradient descent with Gaussian-smoothed
//! updates and fields. Each pixel's gradient is divided by a Gauss-Newton
//! curvature estimate, which keeps one step size usable on every pyramid level.
//! Intensities live in `[0, 1]`, so the default `lambda_sim` is 100 to put the
//! similarity curvature on the same scale as the consistency term. Each field is stepped with its partner frozen; the
//! partner's own interpolation is not differentiated (see [`FrozenObjective`]).

use crate::error::{Error, Result};
use crate::field::{
    bilinear_weights, compose, compose_unchecked, sample_with_gradient, warp_image, DisplacementField, Grid,
    ScalarImage,
};
use crate::smooth::{pyramid, smooth_field, smooth_vectors, upsample_field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    /// Mean squared intensity difference.
    #[default]
    Ssd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub lambda_sim: f64,
    pub lambda_reg: f64,
    pub pyramid_levels: usize,
    pub iterations_per_level: usize,
    /// Step applied to the curvature-scaled per-pixel gradient; values near 1 are a Newton-like step.
    pub step_size: f64,
    /// Gaussian sigma (px) applied to each update.
    pub update_smoothing_sigma: f64,
    /// Gaussian sigma (px) applied to the field after each update.
    pub field_smoothing_sigma: f64,
    pub similarity: Similarity,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            lambda_sim: 100.0,
            lambda_reg: 1.0,
            pyramid_levels: 3,
            iterations_per_level: 100,
            step_size: 1.5,
            update_smoothing_sigma: 1.5,
            field_smoothing_sigma: 0.5,
            similarity: Similarity::Ssd,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.lambda_sim) || !finite_nonneg(self.lambda_reg) {
            return Err(Error::Domain("loss weights must be finite and non-negative".into()));
        }
        if self.pyramid_levels == 0 || self.iterations_per_level == 0 {
            return Err(Error::Domain("need at least one level and one iteration".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Domain("step size must be positive".into()));
        }
        if !finite_nonneg(self.update_smoothing_sigma) || !finite_nonneg(self.field_smoothing_sigma) {
            return Err(Error::Domain("smoothing sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// Pyramid level, 0 = full resolution.
    pub level: usize,
    /// Global iteration counter across levels.
    pub iteration: usize,
    pub sim: f64,
    pub reg: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub phi_ab: DisplacementField,
    pub phi_ba: DisplacementField,
    pub loss_history: Vec<LossRecord>,
    /// `sqrt(icon_loss / 2)`: RMS norm of the composition residual averaged over both orders, px.
    pub final_inverse_consistency: f64,
}

fn check_images(a: &ScalarImage, b: &ScalarImage) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::Shape("registration images have different grids".into()));
    }
    Ok(())
}

/// `mse(A, warp(B, phi_ab)) + mse(B, warp(A, phi_ba))`.
pub fn sim_loss(
    a: &ScalarImage,
    b: &ScalarImage,
    phi_ab: &DisplacementField,
    phi_ba: &DisplacementField,
) -> Result<f64> {
    check_images(a, b)?;
    let wb = warp_image(b, phi_ab)?;
    let wa = warp_image(a, phi_ba)?;
    Ok(a.mean_squared_diff(&wb)? + b.mean_squared_diff(&wa)?)
}

/// Mean squared displacement of `phi_ab ∘ phi_ba` plus that of `phi_ba ∘ phi_ab`.
pub fn icon_loss(phi_ab: &DisplacementField, phi_ba: &DisplacementField) -> Result<f64> {
    let forward = compose(phi_ab, phi_ba)?;
    let backward = compose(phi_ba, phi_ab)?;
    Ok(forward.mean_square_norm() + backward.mean_square_norm())
}

pub fn primary_loss(
    a: &ScalarImage,
    b: &ScalarImage,
    phi_ab: &DisplacementField,
    phi_ba: &DisplacementField,
    cfg: &RegistrationConfig,
) -> Result<f64> {
    Ok(cfg.lambda_sim * sim_loss(a, b, phi_ab, phi_ba)? + cfg.lambda_reg * icon_loss(phi_ab, phi_ba)?)
}

/// The primary loss as a function of one field with its partner held fixed.
///
/// For the `phi_ab` direction, with `u = u_ab` and `p = u_ba`:
///
/// ```text
/// J(u) = lambda_sim * (mean (B(x + u(x)) - A(x))^2 + S_other)
///      + lambda_reg * (mean |p(x) + u(x + p(x))|^2 + mean |u(x) + c(x)|^2)
/// ```
///
/// where `c(x) = p(x + u0(x))` is frozen at the linearization point `u0` and
/// `S_other` is the constant similarity term of the other direction. `J(u0)`
/// equals the primary loss, and [`FrozenObjective::gradient`] is the exact
/// gradient of `J`.
#[derive(Debug, Clone)]
pub struct FrozenObjective<'a> {
    fixed: &'a ScalarImage,
    moving: &'a ScalarImage,
    partner: &'a DisplacementField,
    /// Bilinear scatter weights of `x + p(x)`, one set per pixel.
    partner_weights: Vec<[(usize, f64); 4]>,
    frozen_partner_samples: Vec<[f64; 2]>,
    other_sim: f64,
    lambda_sim: f64,
    lambda_reg: f64,
}

impl<'a> FrozenObjective<'a> {
    /// Objective in `phi_ab`, with `phi_ba` frozen.
    pub fn for_ab(
        a: &'a ScalarImage,
        b: &'a ScalarImage,
        phi_ab: &DisplacementField,
        phi_ba: &'a DisplacementField,
        cfg: &RegistrationConfig,
    ) -> Result<Self> {
        Self::build(a, b, phi_ab, phi_ba, cfg)
    }

    /// Objective in `phi_ba`, with `phi_ab` frozen.
    pub fn for_ba(
        a: &'a ScalarImage,
        b: &'a ScalarImage,
        phi_ab: &'a DisplacementField,
        phi_ba: &DisplacementField,
        cfg: &RegistrationConfig,
    ) -> Result<Self> {
        Self::build(b, a, phi_ba, phi_ab, cfg)
    }

    fn build(
        fixed: &'a ScalarImage,
        moving: &'a ScalarImage,
        field: &DisplacementField,
        partner: &'a DisplacementField,
        cfg: &RegistrationConfig,
    ) -> Result<Self> {
        check_images(fixed, moving)?;
        let grid = fixed.grid();
        field.check_grid(&grid, "frozen objective field")?;
        partner.check_grid(&grid, "frozen objective partner")?;
        let other_sim = moving.mean_squared_diff(&warp_image(fixed, partner)?)?;
        let partner_weights = pixel_points(grid)
            .map(|(i, r, c)| {
                let p = partner.data()[i];
                bilinear_weights(&grid, r + p[0], c + p[1])
            })
            .collect();
        let frozen_partner_samples = pixel_points(grid)
            .map(|(i, r, c)| {
                let u = field.data()[i];
                partner.sample(r + u[0], c + u[1])
            })
            .collect();
        Ok(Self {
            fixed,
            moving,
            partner,
            partner_weights,
            frozen_partner_samples,
            other_sim,
            lambda_sim: cfg.lambda_sim,
            lambda_reg: cfg.lambda_reg,
        })
    }

    pub fn value(&self, field: &DisplacementField) -> f64 {
        let grid = self.fixed.grid();
        let n = grid.len() as f64;
        let mut sim = 0.0;
        let mut reg = 0.0;
        for (i, r, c) in pixel_points(grid) {
            let u = field.data()[i];
            let warped = self.moving.sample(r + u[0], c + u[1]);
            let d = warped - self.fixed.values()[i];
            sim += d * d;

            let p = self.partner.data()[i];
            let s = field.sample(r + p[0], c + p[1]);
            let r1 = [p[0] + s[0], p[1] + s[1]];
            let q = self.frozen_partner_samples[i];
            let r2 = [u[0] + q[0], u[1] + q[1]];
            reg += r1[0] * r1[0] + r1[1] * r1[1] + r2[0] * r2[0] + r2[1] * r2[1];
        }
        self.lambda_sim * (sim / n + self.other_sim) + self.lambda_reg * reg / n
    }

    /// Exact gradient of [`FrozenObjective::value`] with respect to every field component.
    pub fn gradient(&self, field: &DisplacementField) -> DisplacementField {
        let grid = self.fixed.grid();
        let n = grid.len() as f64;
        let mut grad = self.pointwise_gradient(field);
        let scale = 2.0 / n;
        for g in grad.iter_mut() {
            g[0] *= scale;
            g[1] *= scale;
        }
        DisplacementField::from_raw(grid, grad)
    }

    /// `(n / 2) * gradient`: the per-pixel force used by the descent loop, free of
    /// the `1/n` factor so step sizes do not depend on the grid size.
    fn pointwise_gradient(&self, field: &DisplacementField) -> Vec<[f64; 2]> {
        self.pointwise_gradient_and_curvature(field).0
    }

    /// Pointwise gradient plus a per-pixel Gauss-Newton curvature estimate
    /// `lambda_sim * (|∇B|^2 + floor) + lambda_reg * (1 + sum of squared scatter weights)`.
    fn pointwise_gradient_and_curvature(&self, field: &DisplacementField) -> (Vec<[f64; 2]>, Vec<f64>) {
        let grid = self.fixed.grid();
        let mut grad = vec![[0.0; 2]; grid.len()];
        let mut curvature = vec![self.lambda_reg; grid.len()];
        for (i, r, c) in pixel_points(grid) {
            let u = field.data()[i];
            let (warped, dm) = sample_with_gradient(&grid, self.moving.values(), r + u[0], c + u[1]);
            let d = self.lambda_sim * (warped - self.fixed.values()[i]);
            grad[i][0] += d * dm[0];
            grad[i][1] += d * dm[1];
            curvature[i] += self.lambda_sim * (dm[0] * dm[0] + dm[1] * dm[1] + CURVATURE_FLOOR);

            let q = self.frozen_partner_samples[i];
            grad[i][0] += self.lambda_reg * (u[0] + q[0]);
            grad[i][1] += self.lambda_reg * (u[1] + q[1]);
        }
        if self.lambda_reg != 0.0 {
            for (i, _, _) in pixel_points(grid) {
                let p = self.partner.data()[i];
                let weights = &self.partner_weights[i];
                let mut s = [0.0; 2];
                for &(j, w) in weights {
                    s[0] += w * field.data()[j][0];
                    s[1] += w * field.data()[j][1];
                }
                let r1 = [self.lambda_reg * (p[0] + s[0]), self.lambda_reg * (p[1] + s[1])];
                for &(j, w) in weights {
                    grad[j][0] += w * r1[0];
                    grad[j][1] += w * r1[1];
                    curvature[j] += self.lambda_reg * w * w;
                }
            }
        }
        (grad, curvature)
    }
}

/// Keeps the preconditioner bounded where the moving image is flat.
const CURVATURE_FLOOR: f64 = 1e-2;

fn pixel_points(grid: Grid) -> impl Iterator<Item = (usize, f64, f64)> {
    let w = grid.width();
    (0..grid.len()).map(move |i| (i, (i / w) as f64, (i % w) as f64))
}

fn record(
    a: &ScalarImage,
    b: &ScalarImage,
    phi_ab: &DisplacementField,
    phi_ba: &DisplacementField,
    cfg: &RegistrationConfig,
    level: usize,
    iteration: usize,
) -> Result<LossRecord> {
    let sim = sim_loss(a, b, phi_ab, phi_ba)?;
    let reg = icon_loss(phi_ab, phi_ba)?;
    let total = cfg.lambda_sim * sim + cfg.lambda_reg * reg;
    if !total.is_finite() {
        return Err(Error::Divergence { level, iteration });
    }
    Ok(LossRecord {
        level,
        iteration,
        sim,
        reg,
        total,
    })
}

/// One smoothed descent step on `field` with `partner` frozen.
fn descend(
    fixed: &ScalarImage,
    moving: &ScalarImage,
    field: &DisplacementField,
    partner: &DisplacementField,
    cfg: &RegistrationConfig,
) -> Result<DisplacementField> {
    let objective = FrozenObjective::build(fixed, moving, field, partner, cfg)?;
    let grid = fixed.grid();
    let (mut force, curvature) = objective.pointwise_gradient_and_curvature(field);
    for (g, h) in force.iter_mut().zip(&curvature) {
        g[0] /= h;
        g[1] /= h;
    }
    let update = smooth_vectors(grid, &force, cfg.update_smoothing_sigma);
    let mut next = field.clone();
    for (u, g) in next.data_mut().iter_mut().zip(&update) {
        u[0] -= cfg.step_size * g[0];
        u[1] -= cfg.step_size * g[1];
    }
    Ok(smooth_field(&next, cfg.field_smoothing_sigma))
}

/// Jointly estimate `phi_ab` (so that `warp_image(b, phi_ab) ≈ a`) and `phi_ba`.
pub fn register_pair(a: &ScalarImage, b: &ScalarImage, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    check_images(a, b)?;
    let pyr_a = pyramid(a, cfg.pyramid_levels)?;
    let pyr_b = pyramid(b, cfg.pyramid_levels)?;
    let coarsest = pyr_a.len() - 1;

    let mut phi_ab = DisplacementField::identity(pyr_a[coarsest].grid());
    let mut phi_ba = phi_ab.clone();
    let mut history = Vec::new();
    let mut iteration = 0;

    for level in (0..=coarsest).rev() {
        let (la, lb) = (&pyr_a[level], &pyr_b[level]);
        if phi_ab.grid() != la.grid() {
            phi_ab = upsample_field(&phi_ab, la.grid());
            phi_ba = upsample_field(&phi_ba, la.grid());
        }
        for _ in 0..cfg.iterations_per_level {
            history.push(record(la, lb, &phi_ab, &phi_ba, cfg, level, iteration)?);
            phi_ab = descend(la, lb, &phi_ab, &phi_ba, cfg)?;
            phi_ba = descend(lb, la, &phi_ba, &phi_ab, cfg)?;
            iteration += 1;
        }
        history.push(record(la, lb, &phi_ab, &phi_ba, cfg, level, iteration)?);
    }

    let icon = icon_loss(&phi_ab, &phi_ba)?;
    Ok(RegistrationResult {
        phi_ab,
        phi_ba,
        loss_history: history,
        final_inverse_consistency: (icon / 2.0).sqrt(),
    })
}

/// Per-pixel endpoint error `|u_est(x) - u_ref(x)|`.
pub fn endpoint_errors(estimate: &DisplacementField, reference: &DisplacementField) -> Result<Vec<f64>> {
    estimate.check_grid(&reference.grid(), "endpoint_errors")?;
    Ok(estimate
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
        .collect())
}

/// Median of a non-empty slice (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Composition residual of a pair in the `phi_ab ∘ phi_ba` order.
pub fn consistency_residual(phi_ab: &DisplacementField, phi_ba: &DisplacementField) -> Result<DisplacementField> {
    phi_ab.check_grid(&phi_ba.grid(), "consistency_residual")?;
    Ok(compose_unchecked(phi_ab, phi_ba))
}
