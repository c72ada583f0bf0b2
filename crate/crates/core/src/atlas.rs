//! Iterative atlas estimation in the latent space of log fields.
//!
//! One step registers the current atlas to every image, takes logs of all
//! transforms, fits (or reuses) a symmetrized basis, averages the codes of the
//! atlas-to-image logs, and backward-warps the atlas by the deformation decoded
//! from the negated mean. Iteration stops once the relative change of the atlas
//! drops below `epsilon`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{warp_image, DisplacementField, ScalarImage};
use crate::latent::{decode, encode, fit_basis, LatentCode, LogEuclideanBasis};
use crate::lie::{exp_field, log_field, LogField, SolverConfig};
use crate::registration::{register_pair, RegistrationConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtlasConfig {
    /// Converged once the relative atlas change falls below this.
    pub epsilon: f64,
    pub max_outer_iterations: usize,
    pub reg_config: RegistrationConfig,
    /// Requested latent dimension; lowered to the achieved rank when the
    /// population spans fewer modes.
    pub basis_dim: usize,
    /// Root depth for logs and exponentials.
    pub root_depth: usize,
    pub refit_basis_each_iter: bool,
    pub solver: SolverConfig,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_outer_iterations: 20,
            reg_config: RegistrationConfig::default(),
            basis_dim: 8,
            root_depth: 6,
            refit_basis_each_iter: true,
            solver: SolverConfig::default(),
        }
    }
}

impl AtlasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Domain("epsilon must be positive".into()));
        }
        if self.max_outer_iterations == 0 || self.basis_dim == 0 || self.root_depth == 0 {
            return Err(Error::Domain(
                "iterations, basis dimension and root depth must be positive".into(),
            ));
        }
        self.reg_config.validate()?;
        self.solver.validate()
    }
}

#[derive(Debug, Clone)]
pub struct AtlasState {
    pub atlas: ScalarImage,
    /// Number of completed steps.
    pub iteration: usize,
    /// Mean code of the atlas-to-image logs used by the last step.
    pub mean_latent: LatentCode,
    /// Mean code of the image-to-atlas logs of the last step.
    pub mean_latent_reverse: LatentCode,
    /// `exp(decode(mean_latent))` and `exp(decode(-mean_latent))` of the last step.
    pub mean_field: DisplacementField,
    pub mean_inverse: DisplacementField,
    pub delta_history: Vec<f64>,
    pub converged: bool,
    pub basis: Option<LogEuclideanBasis>,
}

impl AtlasState {
    pub fn initial(atlas: ScalarImage) -> Self {
        let grid = atlas.grid();
        Self {
            atlas,
            iteration: 0,
            mean_latent: LatentCode::zeros(0),
            mean_latent_reverse: LatentCode::zeros(0),
            mean_field: DisplacementField::identity(grid),
            mean_inverse: DisplacementField::identity(grid),
            delta_history: Vec::new(),
            converged: false,
            basis: None,
        }
    }

    pub fn last_delta(&self) -> Option<f64> {
        self.delta_history.last().copied()
    }
}

/// `|new - old|_F / |old|_F`.
pub fn relative_change(new: &ScalarImage, old: &ScalarImage) -> Result<f64> {
    if new.grid() != old.grid() {
        return Err(Error::Shape("atlas images have different grids".into()));
    }
    let norm = old.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("atlas has zero norm".into()));
    }
    let diff: f64 = new
        .values()
        .iter()
        .zip(old.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff.sqrt() / norm)
}

fn check_population(images: &[ScalarImage], atlas: &ScalarImage) -> Result<()> {
    if images.len() < 2 {
        return Err(Error::Domain("atlas estimation needs at least two images".into()));
    }
    if images.iter().any(|i| i.grid() != atlas.grid()) {
        return Err(Error::Shape("atlas population images have different grids".into()));
    }
    Ok(())
}

/// Logs of `phi_{A I}` and `phi_{I A}` for one image.
fn register_and_log(atlas: &ScalarImage, image: &ScalarImage, cfg: &AtlasConfig) -> Result<(LogField, LogField)> {
    let res = register_pair(atlas, image, &cfg.reg_config)?;
    let forward = log_field(&res.phi_ab, cfg.root_depth, &cfg.solver)?;
    let backward = log_field(&res.phi_ba, cfg.root_depth, &cfg.solver)?;
    Ok((forward, backward))
}

/// Fit a symmetrized basis, lowering the dimension to the achieved rank.
/// Returns `None` when every log is zero.
fn fit_population_basis(logs: &[LogField], cfg: &AtlasConfig) -> Result<Option<LogEuclideanBasis>> {
    let d = cfg.basis_dim.min(2 * logs.len());
    match fit_basis(logs, d, true) {
        Ok(b) => Ok(Some(b)),
        Err(Error::Rank { achieved: 0, .. }) => Ok(None),
        Err(Error::Rank { achieved, .. }) => fit_basis(logs, achieved, true).map(Some),
        Err(e) => Err(e),
    }
}

fn mean_code(basis: Option<&LogEuclideanBasis>, logs: &[&LogField]) -> Result<LatentCode> {
    match basis {
        None => Ok(LatentCode::zeros(0)),
        Some(b) => {
            let codes = logs.iter().map(|v| encode(b, v)).collect::<Result<Vec<_>>>()?;
            LatentCode::mean(&codes)
        }
    }
}

pub fn atlas_step(state: &AtlasState, images: &[ScalarImage], cfg: &AtlasConfig) -> Result<AtlasState> {
    cfg.validate()?;
    let atlas = &state.atlas;
    check_population(images, atlas)?;
    if atlas.frobenius_norm() == 0.0 {
        return Err(Error::Degenerate("atlas has zero norm".into()));
    }

    let per_image: Vec<Result<(LogField, LogField)>> = images
        .par_iter()
        .map(|image| register_and_log(atlas, image, cfg))
        .collect();
    let mut forward = Vec::with_capacity(images.len());
    let mut backward = Vec::with_capacity(images.len());
    for (index, r) in per_image.into_iter().enumerate() {
        let (f, b) = r.map_err(|e| Error::AtlasImage {
            index,
            source: Box::new(e),
        })?;
        forward.push(f);
        backward.push(b);
    }

    let basis = match (&state.basis, cfg.refit_basis_each_iter) {
        (Some(b), false) => Some(b.clone()),
        _ => {
            let all: Vec<LogField> = forward.iter().chain(&backward).cloned().collect();
            fit_population_basis(&all, cfg)?
        }
    };
    let mean_latent = mean_code(basis.as_ref(), &forward.iter().collect::<Vec<_>>())?;
    let mean_latent_reverse = mean_code(basis.as_ref(), &backward.iter().collect::<Vec<_>>())?;

    let grid = atlas.grid();
    let (mean_field, mean_inverse) = match &basis {
        None => (DisplacementField::identity(grid), DisplacementField::identity(grid)),
        Some(b) => (
            exp_field(&decode(b, &mean_latent)?, cfg.root_depth)?,
            exp_field(&decode(b, &mean_latent.negated())?, cfg.root_depth)?,
        ),
    };
    let next = warp_image(atlas, &mean_inverse)?;
    let delta = relative_change(&next, atlas)?;
    let mut delta_history = state.delta_history.clone();
    delta_history.push(delta);

    Ok(AtlasState {
        atlas: next,
        iteration: state.iteration + 1,
        mean_latent,
        mean_latent_reverse,
        mean_field,
        mean_inverse,
        delta_history,
        converged: delta < cfg.epsilon,
        basis,
    })
}

/// Index of the starting image drawn from `seed`.
pub fn random_init_index(count: usize, seed: u64) -> Result<usize> {
    if count == 0 {
        return Err(Error::Domain("no images to choose from".into()));
    }
    Ok(ChaCha8Rng::seed_from_u64(seed).random_range(0..count))
}

/// Iterate [`atlas_step`] from `images[init_index]`.
///
/// Returns the final atlas and the state after every step. Without
/// convergence, the atlas of the step with the smallest change is returned.
pub fn estimate_atlas(
    images: &[ScalarImage],
    init_index: usize,
    cfg: &AtlasConfig,
) -> Result<(ScalarImage, Vec<AtlasState>)> {
    cfg.validate()?;
    let start = images
        .get(init_index)
        .ok_or_else(|| Error::Domain(format!("init index {init_index} outside 0..{}", images.len())))?;
    let mut state = AtlasState::initial(start.clone());
    let mut history = Vec::new();
    for _ in 0..cfg.max_outer_iterations {
        state = atlas_step(&state, images, cfg)?;
        history.push(state.clone());
        if state.converged {
            return Ok((state.atlas, history));
        }
    }
    let best = history
        .iter()
        .min_by(|a, b| {
            a.last_delta()
                .unwrap_or(f64::INFINITY)
                .total_cmp(&b.last_delta().unwrap_or(f64::INFINITY))
        })
        .expect("at least one step");
    Ok((best.atlas.clone(), history))
}

/// Per-pixel arithmetic mean.
pub fn pixelwise_mean_atlas(images: &[ScalarImage]) -> Result<ScalarImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::Domain("mean of an empty image list".into()))?;
    let grid = first.grid();
    if images.iter().any(|i| i.grid() != grid) {
        return Err(Error::Shape("images have different grids".into()));
    }
    let mut acc = vec![0.0; grid.len()];
    for image in images {
        for (a, v) in acc.iter_mut().zip(image.values()) {
            *a += v;
        }
    }
    let n = images.len() as f64;
    ScalarImage::new(grid, acc.into_iter().map(|a| a / n).collect())
}
