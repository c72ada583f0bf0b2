//! Ground-truth generators: phantom images with labels, and random deformations
//! built as `exp(v)` so their logarithm is known exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{warp_image, warp_labels, DisplacementField, Grid, LabelImage, ScalarImage};
use crate::lie::{exp_field, LogField};
use crate::smooth::smooth_vectors;

/// Minimum distance (px) between phantom geometry and the grid border.
pub const PHANTOM_MARGIN: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    RingWithBump,
    FourLabelPhantom,
    GaussianBlobs,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring_with_bump" => Ok(Self::RingWithBump),
            "four_label_phantom" => Ok(Self::FourLabelPhantom),
            "gaussian_blobs" => Ok(Self::GaussianBlobs),
            other => Err(Error::Domain(format!("unknown phantom kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::RingWithBump => "ring_with_bump",
            Self::FourLabelPhantom => "four_label_phantom",
            Self::GaussianBlobs => "gaussian_blobs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub center: [f64; 2],
    pub sigma: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub grid: Grid,
    /// Shape center (row, col).
    pub center: [f64; 2],
    /// Ring: `[inner, outer]`. Four-label: half-axes `[r_row, r_col]` of the outer
    /// ellipse; inner ellipses are fixed fractions of it.
    pub radii: Vec<f64>,
    /// Bump direction in radians, measured from the +col axis toward +row.
    pub bump_angle: f64,
    /// Outward bulge of the ring's outer edge, px.
    pub bump_amplitude: f64,
    /// Angular half-width of the bump, radians.
    pub bump_width: f64,
    /// Gaussian blobs; when empty for `GaussianBlobs`, blobs are drawn from `seed`.
    pub blobs: Vec<Blob>,
    /// Amplitude of the smooth intensity texture (four-label phantom only).
    pub texture: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Default ring geometry, shrunk on small grids to keep the border margin.
    pub fn ring_with_bump(grid: Grid) -> Self {
        let half = grid.height().min(grid.width()) as f64 / 2.0;
        let room = (grid.height().min(grid.width()) - 1) as f64 / 2.0 - PHANTOM_MARGIN - 1.0;
        let half = half.min(room / 0.82 - 1e-9);
        Self {
            kind: PhantomKind::RingWithBump,
            grid,
            center: centre_of(grid),
            radii: vec![0.35 * half, 0.62 * half],
            bump_angle: -std::f64::consts::FRAC_PI_4,
            bump_amplitude: 0.2 * half,
            bump_width: 0.4,
            blobs: Vec::new(),
            texture: 0.0,
            seed: 0,
        }
    }

    /// Default ellipse geometry, shrunk on small grids to keep the border margin.
    pub fn four_label(grid: Grid) -> Self {
        let (h, w) = (grid.height() as f64, grid.width() as f64);
        let room = |n: f64| (n - 1.0) / 2.0 - PHANTOM_MARGIN - 1.0;
        Self {
            kind: PhantomKind::FourLabelPhantom,
            grid,
            center: centre_of(grid),
            radii: vec![(0.40 * h).min(room(h)), (0.36 * w).min(room(w))],
            bump_angle: 0.0,
            bump_amplitude: 0.0,
            bump_width: 0.0,
            blobs: Vec::new(),
            texture: 0.08,
            seed: 0,
        }
    }

    pub fn gaussian_blobs(grid: Grid, seed: u64) -> Self {
        Self {
            kind: PhantomKind::GaussianBlobs,
            grid,
            center: centre_of(grid),
            radii: Vec::new(),
            bump_angle: 0.0,
            bump_amplitude: 0.0,
            bump_width: 0.0,
            blobs: Vec::new(),
            texture: 0.0,
            seed,
        }
    }

    pub fn with_kind(kind: PhantomKind, grid: Grid, seed: u64) -> Self {
        let mut spec = match kind {
            PhantomKind::RingWithBump => Self::ring_with_bump(grid),
            PhantomKind::FourLabelPhantom => Self::four_label(grid),
            PhantomKind::GaussianBlobs => Self::gaussian_blobs(grid, seed),
        };
        spec.seed = seed;
        spec
    }

    /// Row/col half-extent of the geometry around `center`, px.
    fn extent(&self) -> Result<[f64; 2]> {
        match self.kind {
            PhantomKind::RingWithBump => {
                let [inner, outer] = two(&self.radii, "ring radii")?;
                if !(inner > 0.0 && outer > inner) {
                    return Err(Error::Domain("ring radii must satisfy 0 < inner < outer".into()));
                }
                let r = outer + self.bump_amplitude.max(0.0) + 1.0;
                Ok([r, r])
            }
            PhantomKind::FourLabelPhantom => {
                let [rr, rc] = two(&self.radii, "ellipse half-axes")?;
                if !(rr > 0.0 && rc > 0.0) {
                    return Err(Error::Domain("ellipse half-axes must be positive".into()));
                }
                Ok([rr + 1.0, rc + 1.0])
            }
            PhantomKind::GaussianBlobs => Ok([0.0, 0.0]),
        }
    }
}

fn centre_of(grid: Grid) -> [f64; 2] {
    [(grid.height() - 1) as f64 / 2.0, (grid.width() - 1) as f64 / 2.0]
}

fn two(v: &[f64], what: &str) -> Result<[f64; 2]> {
    match v {
        [a, b] => Ok([*a, *b]),
        _ => Err(Error::Domain(format!("{what}: expected 2 values, got {}", v.len()))),
    }
}

/// Smooth 0..1 edge across a signed distance (negative inside), ~1 px wide.
fn soft_inside(signed_distance: f64) -> f64 {
    1.0 / (1.0 + (signed_distance / 0.4).exp())
}

fn check_margin(spec: &PhantomSpec, extent: [f64; 2]) -> Result<()> {
    let [cr, cc] = spec.center;
    let (h, w) = ((spec.grid.height() - 1) as f64, (spec.grid.width() - 1) as f64);
    let ok = cr - extent[0] >= PHANTOM_MARGIN
        && cc - extent[1] >= PHANTOM_MARGIN
        && cr + extent[0] <= h - PHANTOM_MARGIN
        && cc + extent[1] <= w - PHANTOM_MARGIN;
    if !ok {
        return Err(Error::Domain(format!(
            "phantom geometry does not keep a {PHANTOM_MARGIN} px margin inside a {}x{} grid",
            spec.grid.height(),
            spec.grid.width()
        )));
    }
    Ok(())
}

/// Deterministic phantom image in `[0, 1]` with matching labels.
///
/// * ring with bump: 0 background, 1 ring, 2 bump (the part of the ring beyond its base outer radius);
/// * four-label phantom: 0 background and four nested ellipses labelled 1 (outermost) to 4;
/// * gaussian blobs: label `k + 1` where blob `k` dominates and exceeds half its peak.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(ScalarImage, LabelImage)> {
    let extent = spec.extent()?;
    match spec.kind {
        PhantomKind::RingWithBump => {
            check_margin(spec, extent)?;
            Ok(ring_with_bump(spec))
        }
        PhantomKind::FourLabelPhantom => {
            check_margin(spec, extent)?;
            Ok(four_label(spec))
        }
        PhantomKind::GaussianBlobs => gaussian_blobs(spec),
    }
}

fn ring_with_bump(spec: &PhantomSpec) -> (ScalarImage, LabelImage) {
    let [inner, outer] = [spec.radii[0], spec.radii[1]];
    let [cr, cc] = spec.center;
    let geometry = |r: usize, c: usize| {
        let (dy, dx) = (r as f64 - cr, c as f64 - cc);
        let rho = dy.hypot(dx);
        let theta = dy.atan2(dx);
        let mut dtheta = (theta - spec.bump_angle).rem_euclid(std::f64::consts::TAU);
        if dtheta > std::f64::consts::PI {
            dtheta -= std::f64::consts::TAU;
        }
        let bulge = if spec.bump_width > 0.0 {
            spec.bump_amplitude * (-(dtheta * dtheta) / (2.0 * spec.bump_width * spec.bump_width)).exp()
        } else {
            0.0
        };
        (rho, outer + bulge)
    };
    let image = ScalarImage::from_fn(spec.grid, |r, c| {
        let (rho, edge) = geometry(r, c);
        let ring = soft_inside(rho - edge) * (1.0 - soft_inside(rho - inner));
        0.8 * ring
    });
    let labels = LabelImage::from_fn(spec.grid, |r, c| {
        let (rho, edge) = geometry(r, c);
        if rho < inner || rho > edge {
            0
        } else if rho > outer {
            2
        } else {
            1
        }
    });
    (image, labels)
}

/// Nested ellipses as (center offset as a fraction of the outer half-axes, scale of the half-axes, intensity).
const FOUR_LABEL_LAYERS: [([f64; 2], f64, f64); 4] = [
    ([0.0, 0.0], 1.0, 0.35),
    ([-0.06, 0.03], 0.74, 0.75),
    ([0.08, -0.05], 0.48, 0.5),
    ([-0.02, 0.12], 0.22, 0.95),
];

fn four_label(spec: &PhantomSpec) -> (ScalarImage, LabelImage) {
    let [rr, rc] = [spec.radii[0], spec.radii[1]];
    let [cr, cc] = spec.center;
    // Signed distance approximation to each ellipse, negative inside.
    let dist = |layer: usize, r: f64, c: f64| {
        let (off, scale, _) = FOUR_LABEL_LAYERS[layer];
        let (ar, ac) = (rr * scale, rc * scale);
        let dy = (r - cr - off[0] * rr) / ar;
        let dx = (c - cc - off[1] * rc) / ac;
        (dy.hypot(dx) - 1.0) * ar.min(ac)
    };
    let texture = texture_field(spec);
    let image = ScalarImage::from_fn(spec.grid, |r, c| {
        let (rf, cf) = (r as f64, c as f64);
        let mut value = 0.1;
        for (layer, &(_, _, intensity)) in FOUR_LABEL_LAYERS.iter().enumerate() {
            let t = soft_inside(dist(layer, rf, cf));
            value = value * (1.0 - t) + intensity * t;
        }
        (value + spec.texture * texture[spec.grid.index(r, c)]).clamp(0.0, 1.0)
    });
    let labels = LabelImage::from_fn(spec.grid, |r, c| {
        let (rf, cf) = (r as f64, c as f64);
        (0..4)
            .rev()
            .find(|&l| dist(l, rf, cf) < 0.0)
            .map_or(0, |l| l as u32 + 1)
    });
    (image, labels)
}

/// Low-frequency texture in `[-1, 1]`: a few seeded plane waves.
fn texture_field(spec: &PhantomSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7e57_u64);
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            let period = 6.0 + 6.0 * rng.random::<f64>();
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            let k = std::f64::consts::TAU / period;
            (k * angle.sin(), k * angle.cos(), phase)
        })
        .collect();
    (0..spec.grid.len())
        .map(|i| {
            let (r, c) = ((i / spec.grid.width()) as f64, (i % spec.grid.width()) as f64);
            waves
                .iter()
                .map(|&(kr, kc, ph)| (kr * r + kc * c + ph).sin())
                .sum::<f64>()
                / waves.len() as f64
        })
        .collect()
}

fn gaussian_blobs(spec: &PhantomSpec) -> Result<(ScalarImage, LabelImage)> {
    let grid = spec.grid;
    let blobs = if spec.blobs.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let min_dim = grid.height().min(grid.width()) as f64;
        let lo = PHANTOM_MARGIN + 0.1 * min_dim;
        (0..6)
            .map(|_| {
                let sigma = (0.05 + 0.05 * rng.random::<f64>()) * min_dim;
                let span_r = (grid.height() - 1) as f64 - 2.0 * lo;
                let span_c = (grid.width() - 1) as f64 - 2.0 * lo;
                Blob {
                    center: [lo + span_r * rng.random::<f64>(), lo + span_c * rng.random::<f64>()],
                    sigma,
                    amplitude: 0.5 + 0.5 * rng.random::<f64>(),
                }
            })
            .collect()
    } else {
        spec.blobs.clone()
    };
    let (h, w) = ((grid.height() - 1) as f64, (grid.width() - 1) as f64);
    for b in &blobs {
        let [r, c] = b.center;
        if !(b.sigma > 0.0)
            || r < PHANTOM_MARGIN
            || c < PHANTOM_MARGIN
            || r > h - PHANTOM_MARGIN
            || c > w - PHANTOM_MARGIN
        {
            return Err(Error::Domain(format!("blob {b:?} violates the phantom margin")));
        }
    }
    let contributions = |r: usize, c: usize| -> Vec<f64> {
        blobs
            .iter()
            .map(|b| {
                let d2 = (r as f64 - b.center[0]).powi(2) + (c as f64 - b.center[1]).powi(2);
                b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
            })
            .collect()
    };
    let raw = ScalarImage::from_fn(grid, |r, c| contributions(r, c).iter().sum());
    let peak = raw.values().iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let image = ScalarImage::from_fn(grid, |r, c| raw.get(r, c) / peak);
    let labels = LabelImage::from_fn(grid, |r, c| {
        let contrib = contributions(r, c);
        let (k, v) = contrib
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
        if v > 0.5 * blobs[k].amplitude {
            k as u32 + 1
        } else {
            0
        }
    });
    Ok((image, labels))
}

/// Parameters of a random stationary velocity field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomFieldSpec {
    pub grid: Grid,
    pub seed: u64,
    /// Gaussian smoothing applied to white noise, px.
    pub smoothing_sigma: f64,
    /// Max-norm of the resulting field, px.
    pub amplitude: f64,
    /// Scaling-and-squaring depth used when the field is exponentiated.
    pub exp_depth: usize,
}

/// Pixels within this distance of the border are forced to zero.
pub const TAPER_ZERO: f64 = 2.0;
/// Width of the cosine ramp from zero to full strength inside the border band.
pub const TAPER_RAMP: f64 = 6.0;

impl RandomFieldSpec {
    /// Defaults for the synthetic suite: sigma 6 px, depth 6.
    pub fn new(grid: Grid, seed: u64, amplitude: f64) -> Self {
        Self {
            grid,
            seed,
            smoothing_sigma: 6.0,
            amplitude,
            exp_depth: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let limit = self.grid.height().min(self.grid.width()) as f64 / 8.0;
        if !(self.smoothing_sigma > 0.0) {
            return Err(Error::Domain("smoothing sigma must be positive".into()));
        }
        if !(self.amplitude >= 0.0) || self.amplitude > limit {
            return Err(Error::Domain(format!(
                "amplitude {} outside [0, {limit}] (grid min dim / 8)",
                self.amplitude
            )));
        }
        if self.exp_depth == 0 {
            return Err(Error::Domain("exp depth must be at least 1".into()));
        }
        Ok(())
    }
}

fn taper(grid: Grid, r: usize, c: usize) -> f64 {
    let d = r.min(c).min(grid.height() - 1 - r).min(grid.width() - 1 - c) as f64;
    if d <= TAPER_ZERO {
        0.0
    } else if d >= TAPER_ZERO + TAPER_RAMP {
        1.0
    } else {
        0.5 - 0.5 * (std::f64::consts::PI * (d - TAPER_ZERO) / TAPER_RAMP).cos()
    }
}

/// Smoothed seeded white noise, tapered at the border and rescaled to `amplitude`.
pub fn random_log_field(spec: &RandomFieldSpec) -> Result<LogField> {
    spec.validate()?;
    let grid = spec.grid;
    if spec.amplitude == 0.0 {
        return Ok(LogField::zeros(grid));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise: Vec<[f64; 2]> = (0..grid.len())
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    let mut smooth = smooth_vectors(grid, &noise, spec.smoothing_sigma);
    for (i, v) in smooth.iter_mut().enumerate() {
        let t = taper(grid, i / grid.width(), i % grid.width());
        v[0] *= t;
        v[1] *= t;
    }
    let peak = smooth.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
    let scale = if peak > 0.0 { spec.amplitude / peak } else { 0.0 };
    for v in smooth.iter_mut() {
        v[0] *= scale;
        v[1] *= scale;
    }
    Ok(LogField::from_raw(grid, smooth))
}

/// A ground-truth subject: the phantom warped by `exp(v)`.
#[derive(Debug, Clone)]
pub struct Subject {
    pub image: ScalarImage,
    pub labels: LabelImage,
    /// `phi_gt = exp(v)`, so `image = warp_image(template, phi_gt)`.
    pub field: DisplacementField,
    pub log: LogField,
}

pub fn make_subject(phantom: &(ScalarImage, LabelImage), v: &LogField, depth: usize) -> Result<Subject> {
    let (image, labels) = phantom;
    if image.grid() != labels.grid() || image.grid() != v.grid() {
        return Err(Error::Shape("phantom and log field grids differ".into()));
    }
    let field = exp_field(v, depth)?;
    Ok(Subject {
        image: warp_image(image, &field)?,
        labels: warp_labels(labels, &field)?,
        field,
        log: v.clone(),
    })
}
